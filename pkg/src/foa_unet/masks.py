"""Real-valued time-frequency ratio masks.

Masks are float32 arrays of shape ``(frames, bins)`` with values in [0, 1].
"""

import numpy as np

from foa_unet.errors import ShapeError
from foa_unet.stft import Spectrogram

MASK_DTYPE = np.float32


def _single_channel(x, name):
    if isinstance(x, Spectrogram):
        if x.n_channels != 1:
            raise ShapeError(f"{name} must be single-channel, got {x.n_channels} channels")
        return x.data[0]
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be (frames, bins), got {x.shape}")
    return x


def ideal_mask(target_w, noise_w):
    """Instantaneous energy-ratio mask ``|s|^2 / (|s|^2 + |n|^2)`` of the W channel.

    Bins where both target and noise are exactly zero get 0.5.
    """
    s = _single_channel(target_w, "target_w")
    n = _single_channel(noise_w, "noise_w")
    if s.shape != n.shape:
        raise ShapeError(f"target {s.shape} and noise {n.shape} shapes differ")
    ps = np.abs(s.astype(np.complex128)) ** 2
    pn = np.abs(n.astype(np.complex128)) ** 2
    total = ps + pn
    silent = total == 0
    mask = np.where(silent, 0.5, ps / np.where(silent, 1.0, total))
    return np.clip(mask, 0.0, 1.0).astype(MASK_DTYPE)


def complement(mask):
    """Noise mask ``1 - mask``."""
    return (MASK_DTYPE(1.0) - np.asarray(mask, dtype=MASK_DTYPE)).astype(MASK_DTYPE)


def validate_mask(mask, shape=None):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be (frames, bins), got {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match spectrogram {tuple(shape)}")
    if not np.all(np.isfinite(m)) or m.min(initial=0.0) < 0 or m.max(initial=0.0) > 1:
        raise ValueError("mask values must be finite and within [0, 1]")
    return m


def apply_mask(spec, mask):
    """Scale every channel of ``spec`` bin-wise by the real ``mask``."""
    m = validate_mask(mask, spec.data.shape[1:])
    return Spectrogram((spec.data * m[None]).astype(spec.data.dtype), spec.config)
