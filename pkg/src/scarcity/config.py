"""INI configuration mirroring ModelSpec, GeneratorConfig and DiscountingConfig."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .accounting import DiscountingConfig
from .design import ModelSpec
from .synth import GeneratorConfig


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {f.name for f in fields(ModelSpec)} | {"cov_type"}
_GEN_KEYS = {f.name for f in fields(GeneratorConfig)}
_DISC_KEYS = {f.name for f in fields(DiscountingConfig)}
_SEARCH_KEYS = {"workers", "draws", "seed", "toggles", "fraction_max", "fraction_step"}
_DATA_KEYS = {"cpi", "ppp", "level_mode", "low_mult", "high_mult", "study_lag"}
SECTIONS = {"model": _MODEL_KEYS, "generator": _GEN_KEYS, "discounting": _DISC_KEYS,
            "specsearch": _SEARCH_KEYS, "data": _DATA_KEYS}


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    cov_type: str = "cluster"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discounting: DiscountingConfig = field(default_factory=DiscountingConfig)
    search: dict = field(default_factory=lambda: {"workers": 1, "draws": 25, "seed": 0,
                                                  "toggles": 15, "fraction_max": 0.9,
                                                  "fraction_step": 0.01})
    data: dict = field(default_factory=lambda: {"cpi": None, "ppp": None,
                                                "level_mode": "most_marginal",
                                                "low_mult": 0.75, "high_mult": 1.5,
                                                "study_lag": None})

    def to_dict(self):
        return {"model": asdict(self.model), "cov_type": self.cov_type,
                "generator": asdict(self.generator), "discounting": asdict(self.discounting),
                "specsearch": dict(self.search), "data": dict(self.data)}

    def fingerprint(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _parse_value(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if raw.startswith("{") or raw.startswith("["):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError("bad JSON value %r: %s" % (raw, exc)) from None
    return raw


def _as_tuple(value):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def load_config(path=None, text=None):
    """Read an INI file (or string) into a :class:`RunConfig`.

    Unknown sections or keys raise :class:`ConfigError`, as do values the
    underlying dataclasses reject.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("malformed config: %s" % exc) from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown config section [%s]" % section)
        items = {}
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError("unknown key %r in [%s]" % (key, section))
            items[key] = _parse_value(raw)
        values[section] = items
    return build_config(values)


def build_config(values):
    cfg = RunConfig()
    try:
        model = dict(values.get("model", {}))
        if "cov_type" in model:
            cfg.cov_type = model.pop("cov_type")
        # "none" is a weight scheme name, not a missing value
        if "weight_scheme" in model and model["weight_scheme"] is None:
            model["weight_scheme"] = "none"
        if "covariates" in model:
            model["covariates"] = _as_tuple(model["covariates"])
        if model:
            cfg.model = cfg.model.replace(**model)
        gen = dict(values.get("generator", {}))
        if "obs_per_study" in gen and isinstance(gen["obs_per_study"], list):
            gen["obs_per_study"] = tuple(gen["obs_per_study"])
        if gen:
            cfg.generator = cfg.generator.replace(**gen)
        disc = dict(values.get("discounting", {}))
        if disc:
            params = asdict(cfg.discounting)
            params.update(disc)
            cfg.discounting = DiscountingConfig(**params)
        cfg.search.update(values.get("specsearch", {}))
        cfg.data.update(values.get("data", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.cov_type not in ("cluster", "robust", "unadjusted"):
        raise ConfigError("cov_type must be cluster, robust or unadjusted")
    return cfg
