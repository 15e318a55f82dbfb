"""Short-time Fourier transform with a sinusoidal window and 50% overlap.

Framing policy: no implicit padding. Only frames lying entirely inside the
signal are analysed, so a signal of ``L`` samples yields
``T = (L - frame_len) // hop + 1`` frames and any trailing remainder shorter
than a hop is ignored. The same window is applied at analysis and synthesis;
with hop = frame_len / 2 the squared sine windows sum to one, so plain
overlap-add reconstructs every sample covered by two frames.
"""

from dataclasses import dataclass, field

import numpy as np

from foa_unet.errors import ConfigError, ShapeError, SignalError


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 1024
    hop: int = 512
    window: str = "sinusoidal"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.frame_len < 2 or self.frame_len % 2:
            raise ConfigError(f"frame_len must be even and >= 2, got {self.frame_len}")
        if self.hop * 2 != self.frame_len:
            raise ConfigError(
                f"hop must be frame_len / 2 (50% overlap), got hop={self.hop} "
                f"for frame_len={self.frame_len}"
            )
        if self.window != "sinusoidal":
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    @classmethod
    def from_frame_len(cls, frame_len, sample_rate=16000):
        return cls(frame_len=frame_len, hop=frame_len // 2, sample_rate=sample_rate)

    @property
    def n_bins(self):
        return self.frame_len // 2 + 1

    def n_frames(self, n_samples):
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    def window_array(self):
        n = np.arange(self.frame_len)
        return np.sin(np.pi * (n + 0.5) / self.frame_len)


@dataclass
class Spectrogram:
    """Complex STFT coefficients laid out as ``data[channel, frame, bin]``."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ShapeError(f"spectrogram data must be 3-D (C, T, F), got {data.shape}")
        if data.shape[2] != self.config.n_bins:
            raise ShapeError(
                f"expected {self.config.n_bins} bins for frame_len "
                f"{self.config.frame_len}, got {data.shape[2]}"
            )
        self.data = data

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    @property
    def n_bins(self):
        return self.data.shape[2]

    def channel(self, c):
        """One channel as a new single-channel Spectrogram."""
        return Spectrogram(self.data[c : c + 1], self.config)

    def with_data(self, data):
        return Spectrogram(data, self.config)

    def __add__(self, other):
        if not isinstance(other, Spectrogram):
            return NotImplemented
        if other.config != self.config or other.data.shape != self.data.shape:
            raise ShapeError("cannot add spectrograms with different configs or shapes")
        return Spectrogram(self.data + other.data, self.config)


def _as_channels(signal):
    x = np.asarray(signal)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ShapeError(f"signal must be (samples,) or (channels, samples), got {x.shape}")
    return x


def analyze(signal, config=None):
    """STFT of a ``(channels, samples)`` or ``(samples,)`` waveform.

    Computed in double precision and returned as complex64.
    """
    config = config or StftConfig()
    x = _as_channels(signal)
    if x.shape[1] < config.frame_len:
        raise SignalError(
            f"signal has {x.shape[1]} samples, needs at least frame_len={config.frame_len}"
        )
    x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise SignalError("signal contains NaN or Inf samples")

    n_frames = config.n_frames(x.shape[1])
    frames = np.lib.stride_tricks.sliding_window_view(x, config.frame_len, axis=1)
    frames = frames[:, :: config.hop][:, :n_frames]
    spec = np.fft.rfft(frames * config.window_array(), axis=-1)
    return Spectrogram(spec.astype(np.complex64), config)


def synthesize(spec, length=None):
    """Weighted overlap-add inverse of :func:`analyze`.

    Returns ``(channels, samples)`` float32. ``length`` zero-pads or trims the
    result, e.g. back to the length of the analysed signal.
    """
    config = spec.config
    data = np.asarray(spec.data)
    if data.ndim != 3 or data.shape[2] != config.n_bins:
        raise ShapeError(f"spectrogram shape {data.shape} inconsistent with config")
    n_ch, n_frames, _ = data.shape
    n_out = (n_frames - 1) * config.hop + config.frame_len if n_frames else 0

    # irfft ignores the imaginary part of DC and Nyquist, enforcing Hermitian symmetry
    frames = np.fft.irfft(data.astype(np.complex128), n=config.frame_len, axis=-1)
    frames *= config.window_array()
    out = np.zeros((n_ch, max(n_out, length or 0)))
    for t in range(n_frames):
        start = t * config.hop
        out[:, start : start + config.frame_len] += frames[:, t]
    if length is not None:
        out = out[:, :length]
    return out.astype(np.float32)


def interior(n_samples, config):
    """Slice of samples excluded from edge effects in round-trip comparisons."""
    return slice(config.frame_len, max(config.frame_len, n_samples - config.frame_len))
