"""Synthetic FOA scenes: target + interfering talkers + diffuse noise.

Stems are rendered in the time domain, calibrated on the W channel in the
STFT domain, and summed, so ``mixture == target_image + noise_image`` holds
bin-exactly for the returned spectrograms.

Reverberation uses a stochastic model: the direct path is a plane wave and
the tail is exponentially decaying Gaussian noise, rendered independently for
each of a set of Fibonacci-sphere directions so the tail is spatially diffuse.
The decay constant follows from RT60 and the tail level from the
direct-to-reverberant ratio.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from foa_unet.errors import ConfigError, SignalError
from foa_unet.foa import (
    Direction,
    angular_distance,
    diffuse_noise_waveform,
    direction_on_cone,
    encode_plane_wave,
    fibonacci_sphere,
    steering_vector,
)
from foa_unet.masks import ideal_mask
from foa_unet.stft import Spectrogram, StftConfig, analyze

RT60_RANGE = (0.2, 0.8)


@dataclass(frozen=True)
class Placement:
    source: str
    direction: Direction


@dataclass(frozen=True)
class ReverbSpec:
    rt60: float
    direct_to_reverb_db: float = 0.0

    def __post_init__(self):
        lo, hi = RT60_RANGE
        if not lo <= self.rt60 <= hi:
            raise ConfigError(f"rt60 must be within [{lo}, {hi}] s, got {self.rt60}")


@dataclass(frozen=True)
class SceneSpec:
    """Description of one mixture.

    ``sir_db`` is the target-to-each-interferer W energy ratio and ``snr_db``
    the target-to-diffuse-noise ratio (``inf`` disables the noise). ``noise``
    names the diffuse-noise template source; when it is None a seeded white
    noise is used. ``target_rms`` fixes the level of the dry target so that
    the output does not depend on how the source files were scaled.
    """

    target: Placement
    interferers: tuple = ()
    sir_db: float = 0.0
    snr_db: float = math.inf
    reverb: ReverbSpec = None
    noise: str = None
    seed: int = 0
    min_separation_deg: float = 25.0
    diffuse_directions: int = 32
    target_rms: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(self.interferers))
        if len(self.interferers) > 2:
            raise ConfigError("at most two interferers are supported")
        if self.target_rms <= 0:
            raise ConfigError("target_rms must be positive")
        dirs = self.directions
        floor = math.radians(self.min_separation_deg) - 1e-9
        for i, a in enumerate(dirs):
            for b in dirs[i + 1 :]:
                if angular_distance(a, b) < floor:
                    raise ConfigError(
                        f"sources at {a.to_degrees()} and {b.to_degrees()} are closer "
                        f"than {self.min_separation_deg} degrees"
                    )

    @property
    def directions(self):
        return [self.target.direction] + [p.direction for p in self.interferers]

    @property
    def source_ids(self):
        ids = [self.target.source] + [p.source for p in self.interferers]
        return ids + ([self.noise] if self.noise is not None else [])

    def to_dict(self):
        def placement(p):
            az, el = p.direction.to_degrees()
            return {"source": p.source, "azimuth_deg": az, "elevation_deg": el}

        return {
            "target": placement(self.target),
            "interferers": [placement(p) for p in self.interferers],
            "sir_db": self.sir_db,
            "snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            "reverb": None
            if self.reverb is None
            else {"rt60": self.reverb.rt60, "direct_to_reverb_db": self.reverb.direct_to_reverb_db},
            "noise": self.noise,
            "seed": self.seed,
            "min_separation_deg": self.min_separation_deg,
            "diffuse_directions": self.diffuse_directions,
            "target_rms": self.target_rms,
        }

    @classmethod
    def from_dict(cls, d):
        def placement(p):
            return Placement(
                p["source"], Direction.from_degrees(p["azimuth_deg"], p.get("elevation_deg", 0.0))
            )

        reverb = d.get("reverb")
        snr = d.get("snr_db")
        return cls(
            target=placement(d["target"]),
            interferers=tuple(placement(p) for p in d.get("interferers", [])),
            sir_db=float(d.get("sir_db", 0.0)),
            snr_db=math.inf if snr is None else float(snr),
            reverb=None if reverb is None else ReverbSpec(**reverb),
            noise=d.get("noise"),
            seed=int(d.get("seed", 0)),
            min_separation_deg=float(d.get("min_separation_deg", 25.0)),
            diffuse_directions=int(d.get("diffuse_directions", 32)),
            target_rms=float(d.get("target_rms", 0.05)),
        )


@dataclass
class SceneOutput:
    mixture: Spectrogram
    target_image: Spectrogram
    noise_image: Spectrogram
    oracle_mask: np.ndarray
    spec: SceneSpec
    stems: dict = field(default_factory=dict)  # name -> (4, samples) waveform
    gains: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.stems["target"].shape[1]

    def waveform(self, name):
        """Time-domain 4-channel waveform: a stem, 'noise' or 'mixture'."""
        if name == "mixture":
            # start from the target so a lone target passes through bit-exactly (keeps -0.0)
            out = self.stems["target"].copy()
            for k, v in self.stems.items():
                if k != "target":
                    out = out + v
            return out
        if name == "noise":
            return sum(v for k, v in self.stems.items() if k != "target")
        return self.stems[name]


def decay_envelope(rt60, fs, length):
    """Amplitude envelope that loses 60 dB of energy after ``rt60`` seconds."""
    t = np.arange(length) / fs
    return np.exp(-3.0 * math.log(10.0) * t / rt60)


def reverb_tail_ir(rt60, direct_to_reverb_db, rng, fs=16000, num_directions=32):
    """4-channel diffuse tail impulse response, ``1.5 * rt60`` long.

    Scaled so the W-channel tail energy is ``direct_to_reverb_db`` below the
    unit-energy direct impulse.
    """
    ReverbSpec(rt60, direct_to_reverb_db)
    length = int(round(1.5 * rt60 * fs))
    env = decay_envelope(rt60, fs, length)
    ir = np.zeros((4, length))
    for direction in fibonacci_sphere(num_directions):
        ir += steering_vector(direction)[:, None] * (env * rng.standard_normal(length))[None]
    ir /= math.sqrt(num_directions)
    energy = np.sum(ir[0] ** 2)
    return ir * math.sqrt(10.0 ** (-direct_to_reverb_db / 10.0) / energy)


def reverb_waveform(dry, rt60, direct_to_reverb_db, direction, rng, fs=16000, num_directions=32):
    dry = np.asarray(dry, dtype=np.float64)
    out = encode_plane_wave(dry, direction)
    if math.isinf(direct_to_reverb_db) and direct_to_reverb_db > 0:
        ReverbSpec(rt60)
        return out
    ir = reverb_tail_ir(rt60, direct_to_reverb_db, rng, fs, num_directions)
    tail = fftconvolve(dry[None], ir, axes=1)[:, : len(dry)]
    return out + tail


def apply_reverb(dry, rt60, direct_to_reverb_db, direction, seed, stft=None):
    """Reverberant FOA image of a dry mono signal as a 4-channel Spectrogram."""
    stft = stft or StftConfig()
    rng = np.random.default_rng(seed)
    return analyze(
        reverb_waveform(dry, rt60, direct_to_reverb_db, direction, rng, stft.sample_rate), stft
    )


def schroeder_rt60(ir, fs, fit_db=(-5.0, -35.0)):
    """RT60 from the backward-integrated energy decay curve of ``ir``.

    A line is fitted to the EDC between the two ``fit_db`` levels and
    extrapolated to -60 dB.
    """
    e = np.asarray(ir, dtype=np.float64) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    sel = (edc_db <= hi) & (edc_db >= lo)
    t = np.arange(len(e)) / fs
    slope, _ = np.polyfit(t[sel], edc_db[sel], 1)
    return -60.0 / slope


def _fit_length(x, n):
    x = np.asarray(x, dtype=np.float64)
    if len(x) >= n:
        return x[:n]
    return np.resize(x, n)


def w_energy(wave, stft):
    return float(np.sum(np.abs(analyze(wave[0], stft).data.astype(np.complex128)) ** 2))


def synthesize_scene(spec, sources, stft=None):
    """Render ``spec`` from a mapping ``source id -> mono waveform``."""
    stft = stft or StftConfig()
    fs = stft.sample_rate
    for sid in spec.source_ids:
        if sid not in sources:
            raise SignalError(f"missing source {sid!r}")
    target_dry = np.asarray(sources[spec.target.source], dtype=np.float64)
    if target_dry.ndim != 1:
        raise SignalError("sources must be mono")
    if len(target_dry) < fs:
        raise SignalError("sources must be at least 1 s long")
    n = len(target_dry)

    rng = np.random.default_rng(spec.seed)
    stem_rngs = rng.spawn(2 + len(spec.interferers))

    def render(dry, direction, stem_rng):
        if spec.reverb is None:
            return encode_plane_wave(dry, direction)
        return reverb_waveform(
            dry, spec.reverb.rt60, spec.reverb.direct_to_reverb_db, direction, stem_rng, fs,
            spec.diffuse_directions,
        )

    rms = np.sqrt(np.mean(target_dry**2))
    if rms == 0:
        raise SignalError(f"source {spec.target.source!r} has zero energy")
    stems = {"target": render(target_dry * (spec.target_rms / rms), spec.target.direction, stem_rngs[0])}
    e_target = w_energy(stems["target"], stft)
    gains = {}

    for k, p in enumerate(spec.interferers, start=1):
        dry = _fit_length(sources[p.source], n)
        if len(np.asarray(sources[p.source])) < fs:
            raise SignalError("sources must be at least 1 s long")
        image = render(dry, p.direction, stem_rngs[k])
        e = w_energy(image, stft)
        if e == 0:
            raise SignalError(f"source {p.source!r} has zero energy")
        g = math.sqrt(e_target / (e * 10.0 ** (spec.sir_db / 10.0)))
        stems[f"interferer_{k}"] = g * image
        gains[f"interferer_{k}"] = g

    if not math.isinf(spec.snr_db):
        noise_rng = stem_rngs[-1]
        if spec.noise is None:
            template = noise_rng.standard_normal(n)
        else:
            template = _fit_length(sources[spec.noise], n)
        diffuse = diffuse_noise_waveform(template, spec.diffuse_directions, noise_rng)
        e = w_energy(diffuse, stft)
        if e == 0:
            raise SignalError("diffuse-noise template has zero energy")
        g = math.sqrt(e_target / (e * 10.0 ** (spec.snr_db / 10.0)))
        stems["diffuse"] = g * diffuse
        gains["diffuse"] = g

    specs = {name: analyze(wave, stft) for name, wave in stems.items()}
    target_image = specs["target"]
    noise_data = np.zeros_like(target_image.data)
    for name, s in specs.items():
        if name != "target":
            noise_data = noise_data + s.data
    noise_image = Spectrogram(noise_data, stft)
    mixture = target_image + noise_image
    mask = ideal_mask(target_image.data[0], noise_image.data[0])
    return SceneOutput(mixture, target_image, noise_image, mask, spec, stems, gains)


# --- synthetic talkers -------------------------------------------------------


def synthetic_speech(seed, duration=3.0, fs=16000, f0=None, breathiness=0.35):
    """Speech-like mono signal: voiced harmonic syllables with formants, fricative bursts and pauses.

    ``f0`` sets the speaker's mean pitch (Hz); by default it is drawn from the seed.
    ``breathiness`` scales the aspiration noise mixed into voiced segments, which
    keeps the spectrum from being unrealistically sparse between harmonics.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    f0_mean = f0 if f0 is not None else rng.uniform(95.0, 240.0)

    # piecewise syllable plan: (start, length, voiced)
    f0_track = np.full(n, f0_mean)
    amp = np.zeros(n)
    formants = np.zeros((n, 3))
    fric = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.1) * fs)
    while pos < n:
        length = int(rng.uniform(0.12, 0.32) * fs)
        end = min(n, pos + length)
        seg = end - pos
        if seg <= 0:
            break
        u = np.linspace(0.0, 1.0, seg)
        contour = f0_mean * (1.0 + rng.uniform(-0.15, 0.15) + rng.uniform(-0.15, 0.15) * u)
        f0_track[pos:end] = contour
        amp[pos:end] = np.sin(np.pi * u) ** 0.6 * rng.uniform(0.4, 1.0)
        f1a, f1b = rng.uniform(300, 850, 2)
        f2a, f2b = rng.uniform(900, 2400, 2)
        f3 = rng.uniform(2400, 3300)
        formants[pos:end, 0] = f1a + (f1b - f1a) * u
        formants[pos:end, 1] = f2a + (f2b - f2a) * u
        formants[pos:end, 2] = f3
        if rng.random() < 0.5:
            flen = min(int(rng.uniform(0.04, 0.1) * fs), n - end)
            if flen > 0:
                fric[end : end + flen] = np.sin(np.pi * np.linspace(0, 1, flen)) * rng.uniform(0.1, 0.3)
                end += flen
        gap = int(rng.uniform(0.0, 0.06) * fs) if rng.random() < 0.8 else int(rng.uniform(0.15, 0.3) * fs)
        pos = end + gap

    phase = 2 * np.pi * np.cumsum(f0_track) / fs
    voiced = np.zeros(n)
    max_h = int(7000 // (f0_mean * 0.7))
    bandwidths = np.array([120.0, 160.0, 240.0])
    for h in range(1, max_h + 1):
        fh = h * f0_track
        gain = np.zeros(n)
        for k in range(3):
            gain += 1.0 / (1.0 + ((fh - formants[:, k]) / bandwidths[k]) ** 2) / (k + 1)
        gain *= fh < 7500
        voiced += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    noise = rng.standard_normal(n)
    # crude high-pass for fricatives
    hiss = np.diff(noise, prepend=0.0)
    # aspiration: breathy noise riding on the voiced envelope
    breath = np.convolve(noise, np.ones(4) / 4, mode="same")
    signal = amp * (voiced + breathiness * breath) + fric * hiss * 2.0 + 1e-4 * noise
    return (signal / np.sqrt(np.mean(signal**2)) * 0.05).astype(np.float64)


def desk_scene(
    seed,
    n_interferers=1,
    separation_deg=None,
    sir_db=None,
    snr_db=20.0,
    reverb=None,
    duration=3.0,
    stft=None,
):
    """Seeded scene with synthetic talkers, for tests and desk-scale training.

    ``separation_deg`` (a number or a ``(low, high)`` range) fixes the angle
    between the target and each interferer. The first interferer sits in the
    horizontal plane to the left or right of the target; a second one is
    rotated 90-270 degrees around the target from the first. When it is None
    placement is uniformly random subject to the 25 degree floor.
    ``sir_db`` defaults to 0 dB for one interferer and 6 dB for two.
    """
    stft = stft or StftConfig()
    rng = np.random.default_rng(seed)
    if sir_db is None:
        sir_db = 0.0 if n_interferers <= 1 else 6.0
    pitches = rng.permutation([105.0, 140.0, 185.0, 230.0])[: 1 + n_interferers]
    pitches = pitches * rng.uniform(0.9, 1.1, len(pitches))
    sources = {
        f"talker{k}": synthetic_speech(int(rng.integers(2**31)), duration, stft.sample_rate, f0=p)
        for k, p in enumerate(pitches)
    }
    t_az = rng.uniform(-180, 180)
    placements = []
    if separation_deg is not None:
        target = Direction.from_degrees(t_az, 0.0)
        lo, hi = (separation_deg, separation_deg) if np.isscalar(separation_deg) else separation_deg
        roll = float(rng.choice([0.0, math.pi]))
        for _ in range(n_interferers):
            angle = math.radians(rng.uniform(lo, hi))
            placements.append(direction_on_cone(target, angle, roll))
            roll += rng.uniform(math.pi / 2, 3 * math.pi / 2)
    else:
        target = Direction.from_degrees(t_az, rng.uniform(-20, 20))
        while len(placements) < n_interferers:
            cand = Direction.from_degrees(rng.uniform(-180, 180), rng.uniform(-20, 20))
            if all(math.degrees(angular_distance(cand, d)) >= 25 for d in [target, *placements]):
                placements.append(cand)
    spec = SceneSpec(
        target=Placement("talker0", target),
        interferers=tuple(Placement(f"talker{k + 1}", d) for k, d in enumerate(placements)),
        sir_db=sir_db,
        snr_db=snr_db,
        reverb=reverb,
        seed=int(rng.integers(2**31)),
    )
    return synthesize_scene(spec, sources, stft), sources
