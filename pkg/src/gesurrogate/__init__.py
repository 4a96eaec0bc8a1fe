"""Gaussian-process surrogates for doubly intractable lattice-model likelihoods."""

from .errors import (
    DegeneratePosteriorError,
    EnumerationRefusedError,
    FitFailedError,
    IllConditionedError,
    InvalidInputError,
    SurrogateError,
    UnsupportedRegimeError,
)
from .lattice import LabelImage, ModelSpec

__version__ = "0.1.0"

__all__ = [
    "DegeneratePosteriorError",
    "EnumerationRefusedError",
    "FitFailedError",
    "IllConditionedError",
    "InvalidInputError",
    "LabelImage",
    "ModelSpec",
    "SurrogateError",
    "UnsupportedRegimeError",
]
