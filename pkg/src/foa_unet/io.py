"""File formats: FOA WAVs, mask dumps, scene directories and mask images.

FOA WAV: RIFF, 32-bit float, channel order W, X, Y, Z with the plane-wave
gains used by :mod:`foa_unet.foa`. Mono WAVs (sources, enhanced output) are
32-bit float as well; 16/32-bit integer PCM is accepted on input.

Mask dump: ``b"FMSK"``, then ``version``, ``T`` and ``F`` as little-endian
uint32, then ``T * F`` little-endian float32 values in row-major (frame,
bin) order.

Every writer goes through :func:`atomic_write` (write a temporary file in the
same directory, then rename) so interrupted runs never leave partial files.
"""

import json
import math
import os
import struct
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from foa_unet.errors import DataError, ShapeError
from foa_unet.masks import validate_mask
from foa_unet.scene import SceneOutput, SceneSpec
from foa_unet.stft import Spectrogram, StftConfig, analyze

MASK_MAGIC = b"FMSK"
MASK_VERSION = 1
MANIFEST_NAME = "manifest.json"


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# --- WAV -------------------------------------------------------------------------


def write_wav(path, signal, sample_rate):
    """Write ``(channels, samples)`` or ``(samples,)`` as 32-bit float WAV."""
    x = np.asarray(signal, dtype=np.float32)
    data = x if x.ndim == 1 else x.T
    buf = BytesIO()
    wavfile.write(buf, int(sample_rate), np.ascontiguousarray(data))
    atomic_write(path, buf.getvalue())


def read_wav(path, sample_rate=None, channels=None):
    """Read a WAV as float64 ``(channels, samples)``; validates rate and channel count."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2**31
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    x = x[None] if x.ndim == 1 else x.T
    if sample_rate is not None and rate != sample_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if channels is not None and x.shape[0] != channels:
        raise DataError(f"{path}: {x.shape[0]} channel(s), expected {channels}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite samples")
    return x


# --- masks --------------------------------------------------------------------------


def mask_bytes(mask):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D (frames, bins), got shape {m.shape}")
    head = MASK_MAGIC + struct.pack("<III", MASK_VERSION, m.shape[0], m.shape[1])
    return head + np.ascontiguousarray(m, dtype="<f4").tobytes()


def mask_from_bytes(blob):
    if len(blob) < 16 or not blob.startswith(MASK_MAGIC):
        raise DataError("not a mask dump (bad magic or truncated header)")
    version, t, f = struct.unpack_from("<III", blob, 4)
    if version != MASK_VERSION:
        raise DataError(f"unsupported mask dump version {version}")
    if len(blob) != 16 + 4 * t * f:
        raise DataError(f"mask dump holds {len(blob) - 16} payload bytes, expected {4 * t * f}")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(t, f).astype(np.float32)


def write_mask(path, mask):
    atomic_write(path, mask_bytes(mask))


def read_mask(path):
    with open(path, "rb") as fh:
        return mask_from_bytes(fh.read())


def mask_image(mask):
    """8-bit grayscale image: one pixel per (frame, bin), low frequencies at the bottom."""
    m = np.asarray(mask, dtype=np.float64)
    validate_mask(m)
    pixels = np.round(np.clip(m, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Image.fromarray(np.ascontiguousarray(pixels.T[::-1]))


def write_png(path, mask):
    buf = BytesIO()
    mask_image(mask).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


# --- JSON --------------------------------------------------------------------------------


def json_bytes(obj):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return (json.dumps(obj, indent=2, sort_keys=True, default=default, allow_nan=False) + "\n").encode()


def write_json(path, obj):
    atomic_write(path, json_bytes(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


# --- scene directories -------------------------------------------------------------------


def w_energy_db(wave, stft):
    x = analyze(np.asarray(wave)[0], stft).data.astype(np.complex128)
    return 10 * math.log10(float(np.sum(np.abs(x) ** 2)))


def write_scene(directory, scene, stft, source_info=None):
    """Mixture, stems, oracle mask and manifest of a simulated scene."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fs = stft.sample_rate
    stems = {}
    for name, wave in scene.stems.items():
        stems[name] = f"{name}.wav"
        write_wav(d / stems[name], wave, fs)
    write_wav(d / "mixture.wav", scene.waveform("mixture"), fs)
    write_mask(d / "oracle_mask.bin", scene.oracle_mask)
    e_t = w_energy_db(scene.stems["target"], stft)
    measured = {
        name: e_t - w_energy_db(wave, stft) for name, wave in scene.stems.items() if name != "target"
    }
    manifest = {
        "format": "foa-scene",
        "version": 1,
        "spec": scene.spec.to_dict(),
        "stft": {"frame_len": stft.frame_len, "sample_rate": fs},
        "n_samples": int(scene.n_samples),
        "gains": scene.gains,
        "sources": source_info or {},
        "files": {"mixture": "mixture.wav", "stems": stems, "oracle_mask": "oracle_mask.bin"},
        "measured_ratio_db": measured,
    }
    write_json(d / MANIFEST_NAME, manifest)
    return manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"{directory}: no {MANIFEST_NAME}")
    m = read_json(path)
    if m.get("format") != "foa-scene" or m.get("version") != 1:
        raise DataError(f"{path}: not a version-1 scene manifest")
    return m


def manifest_stft(manifest):
    s = manifest["stft"]
    return StftConfig.from_frame_len(int(s["frame_len"]), int(s["sample_rate"]))


def load_scene(directory, need_stems=True):
    """Rebuild a SceneOutput from a scene directory written by :func:`write_scene`."""
    d = Path(directory)
    m = read_manifest(d)
    stft = manifest_stft(m)
    spec = SceneSpec.from_dict(m["spec"])
    fs = stft.sample_rate
    mix = read_wav(d / m["files"]["mixture"], fs, 4)
    stems = {}
    for name, fname in m["files"]["stems"].items():
        p = d / fname
        if not p.is_file():
            if need_stems:
                raise DataError(f"{directory}: missing stem {fname}")
            continue
        stems[name] = read_wav(p, fs, 4)
    if need_stems and "target" not in stems:
        raise DataError(f"{directory}: missing target stem")
    mixture = analyze(mix, stft)
    if "target" in stems:
        target = analyze(stems["target"], stft)
        noise = mixture.with_data(mixture.data - target.data)
    else:
        target = noise = None
    mask_path = d / m["files"]["oracle_mask"]
    mask = read_mask(mask_path) if mask_path.is_file() else None
    return SceneOutput(mixture, target, noise, mask, spec, stems, m.get("gains", {}))


def scene_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    if (root / MANIFEST_NAME).is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / MANIFEST_NAME).is_file())
    if not dirs:
        raise DataError(f"{root}: no scene directories found")
    return dirs


def mono_spectrogram_to_wave(spec, length=None):
    from foa_unet.stft import synthesize

    if not isinstance(spec, Spectrogram) or spec.n_channels != 1:
        raise ShapeError("expected a single-channel Spectrogram")
    return synthesize(spec, length)[0]
