"""Command-line entry point: ``scarcity <command> [options]``.

Every command writes its tables to ``--output-dir`` as both CSV and JSON
and prints a short summary. Failures print one JSON object to stderr and
exit with 2 (usage), 3 (invalid data or config), 4 (missing input) or 5
(computation failed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import accounting, growth, rpc, specsearch
from .config import ConfigError, RunConfig, load_config
from .dataset import ConversionTables, DataError, ingest, prepare, serialize, summarize
from .design import DesignError, build_design
from .estimators import fit_spec, hausman_on_design
from .synth import generate, recovery_experiment

EXIT_USAGE, EXIT_INVALID, EXIT_MISSING, EXIT_COMPUTE = 2, 3, 4, 5
ESTIMATOR_ALIASES = {"ols": "ols", "fe": "fixed_effects", "re": "random_effects"}

logger = logging.getLogger("scarcity")


class CliError(Exception):
    def __init__(self, message, code, kind="error"):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE, "usage")


def toolkit_version():
    try:
        return metadata.version("scarcity")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


# --------------------------------------------------------------------------
# output helpers

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def rows_to_csv(rows, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_table(outdir, stem, rows, columns=None, extra=None):
    """Write ``stem.csv`` and ``stem.json``; returns the two paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = outdir / (stem + ".csv"), outdir / (stem + ".json")
    csv_path.write_text(rows_to_csv(rows, columns), encoding="utf-8")
    payload = {"rows": rows}
    if extra:
        payload.update(extra)
    json_path.write_text(dumps(payload), encoding="utf-8")
    return csv_path, json_path


# --------------------------------------------------------------------------
# shared loading

def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if getattr(args, "estimator", None):
        overrides["estimator"] = ESTIMATOR_ALIASES[args.estimator]
    if getattr(args, "weights", None):
        overrides["weight_scheme"] = args.weights
    if overrides:
        cfg.model = cfg.model.replace(**overrides)
    if getattr(args, "seed", None) is not None:
        cfg.search["seed"] = args.seed
        cfg.generator = cfg.generator.replace(seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg.search["workers"] = args.workers
    if getattr(args, "compounding", None):
        comp = "discrete_annual" if args.compounding == "discrete" else "continuous"
        cfg.discounting = accounting.DiscountingConfig(cfg.discounting.rate,
                                                       cfg.discounting.horizon, comp)
    return cfg


def _require(path, what="input"):
    if path is None:
        raise CliError("--%s is required" % what, EXIT_USAGE, "usage")
    if not Path(path).exists():
        raise CliError("%s file not found: %s" % (what, path), EXIT_MISSING, "missing_input")
    return path


def _tables(cfg, args):
    cpi = getattr(args, "cpi", None) or cfg.data.get("cpi")
    ppp = getattr(args, "ppp", None) or cfg.data.get("ppp")
    if cpi and ppp:
        return ConversionTables.from_files(_require(cpi, "cpi"), _require(ppp, "ppp"))
    return None


def load_prepared(args, cfg, low_mult=None, high_mult=None):
    raw = ingest(_require(args.input))
    if raw.errors:
        for e in raw.errors[:5]:
            logger.warning("row %d rejected: %s", e.row, e.reason)
    if not len(raw):
        raise CliError("no valid observations in %s" % args.input, EXIT_INVALID, "validation")
    return prepare(raw, _tables(cfg, args), cfg.data["level_mode"],
                   cfg.data["low_mult"] if low_mult is None else low_mult,
                   cfg.data["high_mult"] if high_mult is None else high_mult,
                   cfg.data["study_lag"])


def _fmt_pct(x):
    return "%.2f%%" % (100 * x)


def table3_row(res):
    return {"estimator": res.estimator, "weights": res.meta.get("weight_scheme", ""),
            "xi": res.xi, "se": res.xi_se, "r2_overall": res.r_squared_overall,
            "n_obs": res.n_obs, "n_studies": res.n_clusters}


# --------------------------------------------------------------------------
# commands

def cmd_ingest(args, cfg):
    raw = ingest(_require(args.input))
    prepared = prepare(raw, _tables(cfg, args), cfg.data["level_mode"], cfg.data["low_mult"],
                       cfg.data["high_mult"], cfg.data["study_lag"])
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    serialize(prepared, out / "prepared.csv")
    errors = [{"row": e.row, "reason": e.reason} for e in raw.errors]
    write_table(out, "ingest_errors", errors, ["row", "reason"],
                {"accepted": len(prepared), "rejected": len(errors)})
    print("accepted %d rows, rejected %d" % (len(prepared), len(errors)))
    return 0


def cmd_summarize(args, cfg):
    ds = load_prepared(args, cfg)
    s = summarize(ds)
    rows = []
    for key in ("study_year", "income", "wtp", "sample_size", "respondent_age", "household_size"):
        rows.append({"variable": key, **s[key]})
    write_table(args.output_dir, "summary", rows, ["variable", "mean", "sd", "n"], {"summary": s})
    print(rows_to_csv(rows, ["variable", "mean", "sd", "n"]), end="")
    return 0


def cmd_fit(args, cfg):
    ds = load_prepared(args, cfg)
    spec = cfg.model
    res = fit_spec(ds, spec, cfg.cov_type)
    row = table3_row(res)
    extra = {"fit": res.to_dict(), "spec": spec.fingerprint()}
    if args.hausman:
        h, _, _ = hausman_on_design(build_design(ds, spec, warn=False))
        extra["hausman"] = {"statistic": h.statistic, "dof": h.dof, "p_value": h.p_value,
                            "pinv_used": h.pinv_used}
    write_table(args.output_dir, "fit", [row], list(row), extra)
    coef_rows = [{"name": n, "estimate": b, "se": s, "t": t, "p": p}
                 for n, b, s, t, p in res.table()]
    write_table(args.output_dir, "fit_coefficients", coef_rows)
    print(rows_to_csv([row], list(row)), end="")
    return 0


def cmd_hetero(args, cfg):
    ds = load_prepared(args, cfg)
    fits = specsearch.subgroup_fit(ds, args.partition, cfg.model)
    rows = [{"cell": r.meta["cell"], "xi": r.xi, "se": r.xi_se, "n_obs": r.n_obs,
             "n_studies": r.n_clusters} for r in fits]
    skipped = [{"cell": c, "reason": why} for c, why in fits.skipped]
    write_table(args.output_dir, "hetero_%s" % args.partition, rows,
                ["cell", "xi", "se", "n_obs", "n_studies"], {"skipped": skipped})
    print(rows_to_csv(rows, ["cell", "xi", "se", "n_obs", "n_studies"]), end="")
    return 0


def cmd_specchart(args, cfg):
    ds = load_prepared(args, cfg)
    n = args.toggles or int(cfg.search["toggles"])
    toggles = specsearch.DEFAULT_TOGGLES[:n]
    base = cfg.model.replace(covariates=(), es_group_included=False)
    universe = specsearch.SpecUniverse(toggles, base)
    specs = specsearch.enumerate_specs(universe)
    main = universe.spec_for(universe.main_bits(min(specsearch.MAIN_TOGGLE_COUNT, n)))
    curve = specsearch.run_spec_curve(ds, specs, main, workers=int(cfg.search["workers"]))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "speccurve.csv")
    report = curve.report()
    report["toggles"] = [t.name for t in toggles]
    (out / "speccurve.json").write_text(dumps(report), encoding="utf-8")
    print("specs %d, failures %d, main percentile %.4f"
          % (report["specs"], report["failures"], report["main_percentile"]))
    return 0


def _fractions(cfg):
    step = float(cfg.search["fraction_step"])
    top = float(cfg.search["fraction_max"])
    return [round(step * i, 10) for i in range(1, int(round(top / step)) + 1)]


def cmd_sensitivity(args, cfg):
    out = args.output_dir
    if args.kind == "brackets":
        raw = ingest(_require(args.input))
        rows, worst = specsearch.bracket_sensitivity(raw, cfg.model, tables=_tables(cfg, args))
        write_table(out, "sensitivity_brackets", rows, extra={"max_relative_change": worst})
        print("max relative change in xi: %.4f" % worst)
        return 0
    ds = load_prepared(args, cfg)
    if args.kind in ("top", "bottom"):
        sweep = specsearch.drop_extremes(ds, args.kind, _fractions(cfg), cfg.model)
        rows = specsearch.sweep_rows(sweep, args.kind)
        write_table(out, "sensitivity_%s" % args.kind, rows, extra={"notice": sweep.notice})
    elif args.kind == "random":
        rows = specsearch.drop_random(ds, _fractions(cfg), int(cfg.search["draws"]),
                                      int(cfg.search["seed"]), cfg.model)
        write_table(out, "sensitivity_random", rows)
    else:
        rows = specsearch.alternatives(ds, cfg.model)
        write_table(out, "sensitivity_alternatives", rows)
    print("%d rows" % len(rows))
    return 0


def _growth_table(args):
    path = args.series or growth.bundled_series_path()
    series = growth.read_series(_require(str(path), "series"), cap=args.cap)
    window = tuple(args.window) if args.window else growth.DEFAULT_WINDOW
    return growth.growth_table(series, window)


def cmd_growth(args, cfg):
    table = _growth_table(args)
    rows = [{"indicator": e.name, "g": e.g, "se": e.se, "g_pct": round(100 * e.g, 2),
             "se_pct": round(100 * e.se, 2), "start": e.window[0], "end": e.window[1]}
            for e in table["rows"]]
    gaps = [{"indicator": k, "g": v.g, "se": v.se} for k, v in table["gaps"].items() if v]
    write_table(args.output_dir, "growth", rows, extra={"gaps": gaps, "notes": table["notes"]})
    for r in rows:
        print("%-12s %7.2f%% (%.2f)" % (r["indicator"], r["g_pct"], r["se_pct"]))
    for note in table["notes"]:
        print("note: %s" % note)
    return 0


def cmd_rpc(args, cfg):
    rows = []
    if args.gap is not None:
        gaps = {"custom": growth.GrowthEstimate(args.gap, args.gap_se, (0, 0), 0, "custom")}
    else:
        gaps = {k: v for k, v in _growth_table(args)["gaps"].items() if v}
    xi = rpc.Elasticity(args.xi, args.xi_se)
    for sample, gap in gaps.items():
        res = rpc.rpc_ci(xi, gap, args.method)
        rows.append({"sample": sample, "xi": xi.xi, "xi_se": xi.se, "gap": gap.g,
                     "gap_se": gap.se, **res.to_dict()})
    write_table(args.output_dir, "rpc", rows)
    for r in rows:
        print("%-12s rpc %s  CI (%s, %s)" % (r["sample"], _fmt_pct(r["rpc"]),
                                              _fmt_pct(r["ci_low"]), _fmt_pct(r["ci_high"])))
    return 0


def cmd_uplift(args, cfg):
    disc = cfg.discounting
    rate = disc.rate if args.rate is None else args.rate
    horizon = disc.horizon if args.horizon is None else args.horizon
    config = accounting.DiscountingConfig(rate, horizon, disc.compounding)
    gap = growth.GrowthEstimate(args.gap, args.gap_se, (0, 0), 0, "gap")
    res = accounting.uplift_factor(rpc.rpc_point(args.xi, gap), config)
    grid = [round(0.1 * i, 10) for i in range(0, 31)] if args.grid is None else args.grid
    configs = [config] + [accounting.DiscountingConfig(r, horizon, disc.compounding)
                          for r in args.extra_rates or []]
    curve = accounting.uplift_curve(sorted(set(grid)), args.xi_se, gap, configs)
    write_table(args.output_dir, "uplift_curve", curve,
                ["xi", "rpc", "uplift", "ci_low", "ci_high", "rate", "horizon"],
                {"point": res.to_dict()})
    print("uplift %.4f (%s convention)" % (res.uplift, config.compounding))
    return 0


def cmd_simulate(args, cfg):
    gen = cfg.generator
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate(gen)
    serialize(ds, out / "synthetic.csv")
    if args.reps:
        rep = recovery_experiment(gen, cfg.model, args.reps, cfg.cov_type,
                                  workers=int(cfg.search["workers"]))
        (out / "recovery.json").write_text(dumps(rep.to_dict()), encoding="utf-8")
        write_table(out, "recovery", [rep.to_dict()])
        print("bias %.4f rmse %.4f coverage %.3f" % (rep.bias, rep.rmse, rep.coverage))
    else:
        print("wrote %d observations from %d studies" % (len(ds), len(ds.study_ids)))
    return 0


def cmd_report(args, cfg):
    """Run fit, hetero, growth, rpc and uplift into one directory with a manifest."""
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_fingerprint": cfg.fingerprint(), "config": cfg.to_dict(),
                "version": toolkit_version(), "outputs": []}
    ds = load_prepared(args, cfg)
    res = fit_spec(ds, cfg.model, cfg.cov_type, warn=False)
    write_table(out, "fit", [table3_row(res)], extra={"fit": res.to_dict()})
    for partition in ("service_type", "continent"):
        fits = specsearch.subgroup_fit(ds, partition, cfg.model)
        write_table(out, "hetero_%s" % partition,
                    [{"cell": r.meta["cell"], "xi": r.xi, "se": r.xi_se, "n_obs": r.n_obs}
                     for r in fits], ["cell", "xi", "se", "n_obs"])
    table = growth.growth_table(growth.read_series(args.series or growth.bundled_series_path()))
    write_table(out, "growth", [e.to_dict() for e in table["rows"]],
                ["indicator", "g", "se", "window", "n_points"])
    xi = rpc.Elasticity(res.xi, res.xi_se)
    rpc_rows = []
    for sample, gap in table["gaps"].items():
        r = rpc.rpc_ci(xi, gap)
        u = accounting.uplift_factor(r.rpc, cfg.discounting)
        rpc_rows.append({"sample": sample, "xi": xi.xi, "gap": gap.g, **r.to_dict(),
                         "uplift": u.uplift})
    write_table(out, "rpc", rpc_rows)
    manifest["outputs"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    manifest["spec_fingerprint"] = cfg.model.fingerprint()
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    print("report written to %s (config %s)" % (out, manifest["config_fingerprint"]))
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "summarize": cmd_summarize, "fit": cmd_fit, "hetero": cmd_hetero,
    "specchart": cmd_specchart, "sensitivity": cmd_sensitivity, "growth": cmd_growth,
    "rpc": cmd_rpc, "uplift": cmd_uplift, "simulate": cmd_simulate, "report": cmd_report,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--input")
    common.add_argument("--config")
    common.add_argument("--output-dir", default=".")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--weights", choices=("none", "sqrt_n", "n", "inv_n", "inv_sqrt_n"))
    common.add_argument("--estimator", choices=tuple(ESTIMATOR_ALIASES))
    common.add_argument("--compounding", choices=("continuous", "discrete"))
    common.add_argument("--cpi", help="CPI table (country, year, cpi)")
    common.add_argument("--ppp", help="PPP table (country, ppp_to_usd)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="scarcity", description="Income elasticity of WTP meta-analysis "
                     "and relative price change toolkit.")
    parser.add_argument("--version", action="version", version=toolkit_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("ingest", "summarize", "report"):
        p = sub.add_parser(name, parents=[common])
        if name == "report":
            p.add_argument("--series")
    p = sub.add_parser("fit", parents=[common])
    p.add_argument("--hausman", action="store_true")
    p = sub.add_parser("hetero", parents=[common])
    p.add_argument("--partition", choices=specsearch.PARTITIONS, default="service_type")
    p = sub.add_parser("specchart", parents=[common])
    p.add_argument("--toggles", type=int, help="use only the first N toggles")
    p = sub.add_parser("sensitivity", parents=[common])
    p.add_argument("--kind", choices=("top", "bottom", "random", "brackets", "alternatives"),
                   default="top")
    for name in ("growth", "rpc"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--series", help="name,year,value file (default: bundled series)")
        p.add_argument("--window", type=int, nargs=2, metavar=("START", "END"))
        p.add_argument("--cap", type=float, default=growth.CLIMATE_CAP)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--xi-se", type=float, default=0.0)
    p.add_argument("--gap", type=float)
    p.add_argument("--gap-se", type=float, default=0.0)
    p.add_argument("--method", choices=("delta_product", "paper_literal"),
                   default="delta_product")
    p = sub.add_parser("uplift", parents=[common])
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--xi-se", type=float, default=0.0)
    p.add_argument("--gap", type=float, required=True)
    p.add_argument("--gap-se", type=float, default=0.0)
    p.add_argument("--rate", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--extra-rates", type=float, nargs="+")
    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--reps", type=int, default=0)
    return parser


def _fail(message, code, kind):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(str(exc), exc.code, exc.kind)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not Path(args.config).exists():
            raise CliError("config file not found: %s" % args.config, EXIT_MISSING,
                           "missing_input")
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _fail(str(exc), exc.code, exc.kind)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_MISSING, "missing_input")
    except (ConfigError, DataError) as exc:
        return _fail(str(exc), EXIT_INVALID, "validation")
    except (DesignError, growth.GrowthError, rpc.RpcError, specsearch.CurveError,
            RuntimeError, np.linalg.LinAlgError) as exc:
        return _fail(str(exc), EXIT_COMPUTE, "computation")
    except ValueError as exc:
        return _fail(str(exc), EXIT_INVALID, "validation")


if __name__ == "__main__":
    sys.exit(main())
