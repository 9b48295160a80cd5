"""taylorcast: continuous-time frame forecasting with learned Taylor expansions.

A trained network infers the coefficients of a truncated Taylor expansion of
the latent dynamics from one observation window; evaluating that polynomial at
any real future offset and decoding gives the predicted frame — one encoder
pass no matter how many offsets are requested.
"""

from .analytic import (
    AnalyticFamily,
    DerivativeSeriesEstimator,
    FieldSeriesEstimator,
    analytic_derivatives,
    compare_euler_taylor,
    fit_derivative_estimator,
    sample_window,
)
from .baselines import PointEstimateForecaster, PointEstimateModel, euler_rollout, euler_step
from .data import (
    ScalarFieldSpec,
    ShapeSceneSpec,
    VideoClip,
    fractional_ground_truth,
    generate_moving_shapes,
    generate_scalar_field,
    load_clip,
    save_clip,
    subsample,
)
from .forecast import RolloutPlan, predict_continuous, rollout
from .metrics import MetricReport, mae, mse, psnr, sequence_report, ssim
from .model import (
    LatentWindow,
    ModelConfig,
    TaylorCoefficients,
    TaylorForecaster,
    TaylorModel,
    load_checkpoint,
    save_checkpoint,
    taylor_evaluate,
)
from .nn import AdamState, ConvSpec, PlateauScheduler, adam_init, adam_step
from .tensor import Tape, Tensor, backward, check_gradients, load_tensor, save_tensor

__all__ = [
    "AdamState",
    "AnalyticFamily",
    "ConvSpec",
    "DerivativeSeriesEstimator",
    "FieldSeriesEstimator",
    "LatentWindow",
    "MetricReport",
    "ModelConfig",
    "PlateauScheduler",
    "PointEstimateForecaster",
    "PointEstimateModel",
    "RolloutPlan",
    "ScalarFieldSpec",
    "ShapeSceneSpec",
    "Tape",
    "TaylorCoefficients",
    "TaylorForecaster",
    "TaylorModel",
    "Tensor",
    "VideoClip",
    "adam_init",
    "adam_step",
    "analytic_derivatives",
    "backward",
    "check_gradients",
    "compare_euler_taylor",
    "euler_rollout",
    "euler_step",
    "fit_derivative_estimator",
    "fractional_ground_truth",
    "generate_moving_shapes",
    "generate_scalar_field",
    "load_checkpoint",
    "load_clip",
    "load_tensor",
    "mae",
    "mse",
    "predict_continuous",
    "psnr",
    "rollout",
    "sample_window",
    "save_checkpoint",
    "save_clip",
    "save_tensor",
    "sequence_report",
    "ssim",
    "subsample",
    "taylor_evaluate",
]

__version__ = "0.1.0"
