from .kernel import Matern32Kernel, kernel_d1, kernel_d2, kernel_eval
from .surrogate import (
    GE_NS_GP,
    KINDS,
    NS_GP,
    S_GP,
    FittedSurrogate,
    OptimizerConfig,
    build_surrogate,
    cross_cov_block,
    fit,
    predict_plugin,
    predict_sampled,
)
from .warping import AxialWarping, warp, warp_deriv

__all__ = [
    "AxialWarping",
    "FittedSurrogate",
    "GE_NS_GP",
    "KINDS",
    "Matern32Kernel",
    "NS_GP",
    "OptimizerConfig",
    "S_GP",
    "build_surrogate",
    "cross_cov_block",
    "fit",
    "kernel_d1",
    "kernel_d2",
    "kernel_eval",
    "predict_plugin",
    "predict_sampled",
    "warp",
    "warp_deriv",
]
