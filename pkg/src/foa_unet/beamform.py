"""Pseudo-inverse FOA beamformers and the mask network's input features.

For sources at directions ``d_0`` (target), ``d_1``, ``d_2`` (interferers) the
beamformers are the rows of ``pinv([d_0 d_1 d_2])``: beamformer ``i`` has unit
response towards source ``i`` and nulls towards the others. Features are the
magnitudes ``|x_W|, |s_hat|, |n_hat_1| (, |n_hat_2|)``.
"""

from dataclasses import dataclass

import numpy as np

from foa_unet.errors import IllConditionedError, ShapeError
from foa_unet.foa import steering_vector
from foa_unet.linalg import condition_number, pinv
from foa_unet.stft import Spectrogram

EPS = 1e-8


@dataclass
class BeamformerSet:
    """``vectors[i]`` is ``b_i``; the beamformed output is ``b_i^H x``."""

    vectors: np.ndarray
    condition: float

    @property
    def n_sources(self):
        return self.vectors.shape[0]

    def apply(self, spec_data):
        """``(sources, frames, bins)`` outputs ``b_i^H x`` for a ``(4, T, F)`` array."""
        return np.einsum("sc,ctf->stf", self.vectors.conj(), spec_data)


@dataclass
class FeatureStats:
    """Per-feature, per-frequency standardization parameters, shape ``(C, F)``."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class FeatureTensor:
    """``features[c, t, f]``: c=0 is ``|x_W|``, then one channel per beamformer."""

    features: np.ndarray
    stats: FeatureStats = None

    @property
    def n_features(self):
        return self.features.shape[0]


def steering_matrix(target, interferers=()):
    return np.stack([steering_vector(d) for d in (target, *interferers)], axis=1)


def build_beamformers(target, interferers=()):
    interferers = list(interferers)
    if len(interferers) > 2:
        raise ValueError("at most two interferers are supported")
    d = steering_matrix(target, interferers)
    try:
        b = pinv(d)
    except IllConditionedError as exc:
        raise IllConditionedError("steering directions are coincident", exc.condition) from None
    # rows of pinv(D) act as b_i^H; store b_i itself
    return BeamformerSet(vectors=b.conj(), condition=float(condition_number(d)))


def extract_features(mix, bf, n_features=None):
    """Magnitude features from a 4-channel mixture Spectrogram."""
    data = mix.data if isinstance(mix, Spectrogram) else np.asarray(mix)
    if data.shape[0] != 4:
        raise ShapeError(f"mixture must have 4 FOA channels, got {data.shape[0]}")
    if n_features is not None and n_features != 1 + bf.n_sources:
        raise ShapeError(
            f"{n_features} features requested but {bf.n_sources} beamformers supplied"
        )
    beams = bf.apply(data.astype(np.complex128))
    feats = np.concatenate([np.abs(data[:1]), np.abs(beams)], axis=0)
    return FeatureTensor(feats.astype(np.float32))


def normalize_sequence(features):
    """Divide each beamformed feature by its per-band maximum over the sequence.

    Channel 0 (``|x_W|``) is left unchanged. All-zero bands stay zero.
    """
    f = np.array(features.features, dtype=np.float32)
    beams = f[1:].astype(np.float64)
    peak = beams.max(axis=1, keepdims=True)
    f[1:] = np.where(peak > EPS, beams / np.where(peak > EPS, peak, 1.0), 0.0)
    return FeatureTensor(f, features.stats)


def compute_stats(feature_list):
    """Dataset statistics over a list of (normalized) FeatureTensors or arrays."""
    arrays = [ft.features if isinstance(ft, FeatureTensor) else np.asarray(ft) for ft in feature_list]
    if not arrays:
        raise ValueError("cannot compute statistics of an empty dataset")
    stacked = np.concatenate([a.astype(np.float64) for a in arrays], axis=1)
    return FeatureStats(
        mean=stacked.mean(axis=1).astype(np.float32),
        std=stacked.std(axis=1).astype(np.float32),
    )


def standardize(features, stats):
    """Per-feature, per-frequency ``(q - mean) / std``; std floored at 1e-8."""
    f = features.features.astype(np.float64)
    std = np.maximum(stats.std.astype(np.float64), EPS)
    out = (f - stats.mean[:, None, :]) / std[:, None, :]
    # bins that never varied carry no information
    out = np.where(stats.std[:, None, :] > EPS, out, 0.0)
    return FeatureTensor(out.astype(np.float32), stats)
