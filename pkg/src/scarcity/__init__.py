"""Income elasticity of willingness to pay for ecosystem services and the
relative price changes, present values and natural-capital adjustments
that follow from it."""

from .accounting import DiscountingConfig, present_value, uplift_factor
from .dataset import Dataset, ingest, prepare, serialize, summarize
from .design import ModelSpec, build_design
from .estimators import (
    FitResult, FixedEffectsRegressor, RandomEffectsRegressor, WLSRegressor,
    fit_fixed_effects, fit_random_effects, fit_wls, hausman_test,
)
from .growth import aggregate_category, fit_exponential_growth, growth_gap
from .rpc import CesPreferences, Elasticity, rpc_ci, rpc_point
from .synth import GeneratorConfig, generate, recovery_experiment

__version__ = "0.1.0"
