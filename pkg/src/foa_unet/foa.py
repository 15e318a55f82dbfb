"""First-order Ambisonics encoding of plane waves and diffuse fields.

Channel order is W, X, Y, Z. A plane wave from azimuth ``theta`` and
elevation ``phi`` is encoded with the gains

    [1, sqrt(3) cos(theta) cos(phi), sqrt(3) sin(theta) cos(phi), sqrt(3) sin(phi)]

so every steering vector has squared norm 4 and an isotropic field has an
identity spatial covariance (up to the W power).
"""

import math
from dataclasses import dataclass

import numpy as np

from foa_unet.errors import ShapeError, SignalError
from foa_unet.stft import Spectrogram, StftConfig, analyze

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Direction:
    """Azimuth/elevation in radians, canonicalized on construction.

    Azimuth is wrapped to [-pi, pi) and elevation clamped to [-pi/2, pi/2].
    """

    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        az = (float(self.azimuth) + math.pi) % (2 * math.pi) - math.pi
        el = min(max(float(self.elevation), -math.pi / 2), math.pi / 2)
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)

    @classmethod
    def from_degrees(cls, azimuth, elevation=0.0):
        return cls(math.radians(azimuth), math.radians(elevation))

    def to_degrees(self):
        return math.degrees(self.azimuth), math.degrees(self.elevation)

    def unit_vector(self):
        ce = math.cos(self.elevation)
        return np.array(
            [math.cos(self.azimuth) * ce, math.sin(self.azimuth) * ce, math.sin(self.elevation)]
        )


def angular_distance(a, b):
    """Great-circle angle between two directions, in radians."""
    cos = float(np.clip(a.unit_vector() @ b.unit_vector(), -1.0, 1.0))
    return math.acos(cos)


def direction_on_cone(center, angle, roll):
    """Direction ``angle`` radians away from ``center``, rotated by ``roll`` around it.

    ``roll = 0`` moves towards increasing azimuth in the horizontal plane
    through ``center`` (for a horizontal ``center``).
    """
    u = center.unit_vector()
    up = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(up, u) if abs(u[2]) < 0.99 else np.cross(np.array([1.0, 0.0, 0.0]), u)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    v = math.cos(angle) * u + math.sin(angle) * (math.cos(roll) * e1 + math.sin(roll) * e2)
    return Direction(math.atan2(v[1], v[0]), math.asin(float(np.clip(v[2], -1.0, 1.0))))


def steering_vector(direction):
    """FOA gains ``[w, x, y, z]`` of a plane wave arriving from ``direction``."""
    u = direction.unit_vector()
    return np.concatenate([[1.0], SQRT3 * u])


def encode_plane_wave(mono, direction):
    """Encode a one-channel Spectrogram (or waveform) as a 4-channel plane wave."""
    d = steering_vector(direction)
    if isinstance(mono, Spectrogram):
        if mono.n_channels != 1:
            raise ShapeError(f"expected a mono spectrogram, got {mono.n_channels} channels")
        data = d[:, None, None] * mono.data[0][None]
        return Spectrogram(data.astype(mono.data.dtype), mono.config)
    x = np.asarray(mono)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ShapeError(f"expected a mono waveform, got shape {x.shape}")
    return d[:, None] * x[None]


def fibonacci_sphere(n):
    """``n`` quasi-uniform directions on the sphere (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    golden = math.pi * (3.0 - math.sqrt(5.0))
    az = golden * i
    return [Direction(a, math.asin(e)) for a, e in zip(az, z)]


def diffuse_noise_waveform(template, num_directions, rng):
    """Time-domain 4-channel diffuse field built from ``template``.

    Each of ``num_directions`` Fibonacci-sphere directions carries an
    independently circular-shifted, sign-randomized copy of the template,
    scaled by ``1/sqrt(num_directions)`` so that W keeps the template power.
    """
    if num_directions < 8:
        raise ValueError("num_directions must be at least 8")
    x = np.asarray(template, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("template must be a mono waveform")
    n = len(x)
    out = np.zeros((4, n))
    shifts = rng.integers(0, n, size=num_directions)
    signs = rng.choice([-1.0, 1.0], size=num_directions)
    for direction, shift, sign in zip(fibonacci_sphere(num_directions), shifts, signs):
        out += steering_vector(direction)[:, None] * (sign * np.roll(x, shift))[None]
    return out / math.sqrt(num_directions)


def diffuse_noise(template, num_directions, seed, stft=None):
    """Spectrogram of a diffuse FOA field synthesized from a mono ``template``."""
    stft = stft or StftConfig()
    template = np.asarray(template)
    if template.ndim != 1 or len(template) < stft.frame_len:
        raise SignalError("template must be a mono waveform at least one frame long")
    rng = np.random.default_rng(seed)
    return analyze(diffuse_noise_waveform(template, num_directions, rng), stft)
