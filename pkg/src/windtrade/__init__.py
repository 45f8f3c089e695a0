"""Wind-power production modelling, forecast calibration and optimal forward selling."""
from .dist import LatentParams, PowerCurve, TruncatedLogNormal, f_prod, from_latent, to_latent
from .forecast import ParametricTheta, TabulatedTheta, constant_vol_schedule, simulate_paths
from .frictionless import DriftCurve, QuadraticPenalty, CustomPenalty, TradePlan
from .impact import ImpactParams, solve_hjb, pontryagin_plan

__all__ = [
    "LatentParams", "PowerCurve", "TruncatedLogNormal", "f_prod", "from_latent", "to_latent",
    "ParametricTheta", "TabulatedTheta", "constant_vol_schedule", "simulate_paths",
    "DriftCurve", "QuadraticPenalty", "CustomPenalty", "TradePlan",
    "ImpactParams", "solve_hjb", "pontryagin_plan",
]
