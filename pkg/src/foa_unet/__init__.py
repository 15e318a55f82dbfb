"""Mask-based speech enhancement for first-order Ambisonics (FOA) recordings.

The processing chain is::

    FOA mixture --STFT--> pseudo-inverse beamformers --> U-net ratio mask
        --> masked covariances --> rank-1 GEVD multichannel Wiener filter

Every stage is importable on its own; see the submodules.
"""

from foa_unet.errors import (
    ConfigError,
    DataError,
    FoaError,
    IllConditionedError,
    NotPositiveDefiniteError,
    NumericalError,
    ShapeError,
    SignalError,
)
from foa_unet.stft import Spectrogram, StftConfig, analyze, synthesize

__all__ = [
    "ConfigError",
    "DataError",
    "FoaError",
    "IllConditionedError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "ShapeError",
    "SignalError",
    "Spectrogram",
    "StftConfig",
    "analyze",
    "synthesize",
]

__version__ = "0.1.0"
