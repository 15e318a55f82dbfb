"""U-net ratio-mask estimator with frequency-only pooling and dilation.

Encoder block ``l`` is conv-BN-ReLU twice (the second convolution dilated
along frequency by ``dilation_schedule[l]`` in the dilated variant), spatial
dropout, then a frequency max-pool except for the deepest block. Decoder
block ``l`` upsamples frequency by a transposed convolution that halves the
channel count, concatenates the encoder output of the same depth (taken
before pooling) and applies the same conv-BN-ReLU pair. A 1x1 convolution and
a sigmoid give one mask channel. Time is never pooled.

The network sees ``freq_bins_net`` bins: the Nyquist bin is dropped on the
way in and the top predicted bin is copied into it on the way out.
"""

import copy
import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from foa_unet.beamform import (
    FeatureStats,
    build_beamformers,
    compute_stats,
    extract_features,
    normalize_sequence,
    standardize,
)
from foa_unet.errors import ConfigError, DataError, NumericalError, ShapeError
from foa_unet.layers import (
    BatchNorm,
    Conv2d,
    MaxPoolFreq,
    ReLU,
    Sigmoid,
    SpatialDropout,
    UpConvFreq,
    concat_channels,
)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 5
    base_filters: int = 16
    kernel: tuple = (3, 3)
    pool_freq: int = 2
    dilated: bool = True
    dilation_schedule: tuple = (1, 2, 4, 8, 16)
    input_features: int = 3
    seq_frames: int = 40
    freq_bins_net: int = 512
    dropout: float = 0.05
    precision: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "dilation_schedule", tuple(int(r) for r in self.dilation_schedule))
        if self.depth < 1 or self.base_filters < 1:
            raise ConfigError("depth and base_filters must be positive")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError(f"kernel must be two odd sizes, got {self.kernel}")
        if self.pool_freq < 2:
            raise ConfigError("pool_freq must be at least 2")
        if self.input_features not in (3, 4):
            raise ConfigError("input_features must be 3 (one interferer) or 4 (two)")
        if self.seq_frames < 1:
            raise ConfigError("seq_frames must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.precision not in ("single", "double"):
            raise ConfigError("precision must be 'single' or 'double'")
        step = self.pool_freq ** (self.depth - 1)
        if self.freq_bins_net < step or self.freq_bins_net % step:
            raise ConfigError(
                f"freq_bins_net={self.freq_bins_net} is not divisible by "
                f"pool_freq**(depth-1) = {step}"
            )
        if self.dilated:
            rates = self.dilation_schedule
            if len(rates) < self.depth:
                raise ConfigError(f"dilation_schedule needs {self.depth} rates, got {len(rates)}")
            if rates[0] < 1 or any(b != 2 * a for a, b in zip(rates, rates[1 : self.depth])):
                raise ConfigError(f"dilation rates must double per block, got {rates}")

    @classmethod
    def full(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides):
        base = dict(depth=3, base_filters=4, seq_frames=16, freq_bins_net=64)
        base.update(overrides)
        return cls(**base)

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def channels(self, level):
        return self.base_filters * 2**level

    def dilation(self, level):
        return self.dilation_schedule[level] if self.dilated else 1

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["dilation_schedule"] = list(self.dilation_schedule)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown U-net config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainSpec:
    lr: float = 1e-3
    max_epochs: int = 50
    patience: int = 3
    batch_size: int = 16
    seed: int = 0
    min_delta: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive")


@dataclass
class TrainLog:
    """Per-epoch losses plus everything needed to resume training bit-exactly."""

    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    stale: int = 0
    stopped_early: bool = False
    rng_state: dict = None

    @property
    def epoch(self):
        return len(self.epochs)

    def to_dict(self):
        d = asdict(self)
        d["best_loss"] = None if math.isinf(self.best_loss) else self.best_loss
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["best_loss"] = math.inf if d.get("best_loss") is None else d["best_loss"]
        return cls(**d)


class UNetModel:
    """Layers, Nadam state and the feature standardization statistics."""

    def __init__(self, config, seed=0):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.layers = {}
        self.feature_stats = None
        self._recorded = False
        dt = config.dtype
        k = config.kernel
        rng = self.rng

        def block(prefix, c_in, c_out, rate):
            self.layers[f"{prefix}.conv1"] = Conv2d(c_in, c_out, k, 1, rng, dt)
            self.layers[f"{prefix}.bn1"] = BatchNorm(c_out, dtype=dt)
            self.layers[f"{prefix}.relu1"] = ReLU()
            self.layers[f"{prefix}.conv2"] = Conv2d(c_out, c_out, k, rate, rng, dt)
            self.layers[f"{prefix}.bn2"] = BatchNorm(c_out, dtype=dt)
            self.layers[f"{prefix}.relu2"] = ReLU()
            self.layers[f"{prefix}.drop"] = SpatialDropout(config.dropout)

        c_in = config.input_features
        for level in range(config.depth):
            block(f"enc{level}", c_in, config.channels(level), config.dilation(level))
            if level < config.depth - 1:
                self.layers[f"enc{level}.pool"] = MaxPoolFreq(config.pool_freq)
            c_in = config.channels(level)
        for level in reversed(range(config.depth - 1)):
            c = config.channels(level)
            self.layers[f"dec{level}.up"] = UpConvFreq(2 * c, c, config.pool_freq, rng, dt)
            block(f"dec{level}", 2 * c, c, config.dilation(level))
        self.layers["out.conv"] = Conv2d(config.channels(0), 1, (1, 1), 1, rng, dt)
        self.layers["out.sigmoid"] = Sigmoid()
        self.opt_step = 0
        self.opt_m = {n: np.zeros_like(p) for n, p in self.parameters().items()}
        self.opt_v = {n: np.zeros_like(p) for n, p in self.parameters().items()}

    # --- parameter access ---------------------------------------------------

    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self.layers.items() for pn, p in layer.params.items()}

    def buffers(self):
        return {f"{ln}.{bn}": b for ln, layer in self.layers.items() for bn, b in layer.buffers.items()}

    def gradients(self):
        return {f"{ln}.{pn}": g for ln, layer in self.layers.items() for pn, g in layer.grads.items()}

    def _slot(self, name):
        layer, key = name.rsplit(".", 1)
        return self.layers[layer], key

    def set_parameter(self, name, value):
        layer, key = self._slot(name)
        old = layer.params[key]
        if value.shape != old.shape:
            raise ShapeError(f"{name}: expected shape {old.shape}, got {value.shape}")
        layer.params[key] = np.asarray(value, dtype=old.dtype)

    def set_buffer(self, name, value):
        layer, key = self._slot(name)
        old = layer.buffers[key]
        if value.shape != old.shape:
            raise ShapeError(f"{name}: expected shape {old.shape}, got {value.shape}")
        layer.buffers[key] = np.asarray(value, dtype=old.dtype)

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def copy(self):
        # forward caches are large and never needed by a copy
        saved = [(layer, layer._cache) for layer in self.layers.values()]
        for layer, _ in saved:
            layer._cache = None
        try:
            clone = copy.deepcopy(self)
        finally:
            for layer, cache in saved:
                layer._cache = cache
        clone._recorded = False
        return clone

    # --- network passes -----------------------------------------------------

    def _run_block(self, prefix, h, train, rng, trace):
        for part in ("conv1", "bn1", "relu1", "conv2", "bn2", "relu2", "drop"):
            h = self.layers[f"{prefix}.{part}"].forward(h, train, rng)
            if trace is not None:
                trace.append((f"{prefix}.{part}", h.shape))
        return h

    def _back_block(self, prefix, d):
        for part in ("drop", "relu2", "bn2", "conv2", "relu1", "bn1", "conv1"):
            d = self.layers[f"{prefix}.{part}"].backward(d)
        return d

    def forward(self, x, train=False, rng=None, trace=None):
        cfg = self.config
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != (cfg.input_features, cfg.seq_frames, cfg.freq_bins_net):
            raise ShapeError(
                f"expected input (batch, {cfg.input_features}, {cfg.seq_frames}, "
                f"{cfg.freq_bins_net}), got {x.shape}"
            )
        h = x.astype(cfg.dtype, copy=False)
        if trace is not None:
            trace.append(("input", h.shape))
        self._skip_channels = []
        skips = []
        for level in range(cfg.depth):
            h = self._run_block(f"enc{level}", h, train, rng, trace)
            if level < cfg.depth - 1:
                skips.append(h)
                h = self.layers[f"enc{level}.pool"].forward(h, train, rng)
                if trace is not None:
                    trace.append((f"enc{level}.pool", h.shape))
        for level in reversed(range(cfg.depth - 1)):
            up = self.layers[f"dec{level}.up"].forward(h, train, rng)
            if trace is not None:
                trace.append((f"dec{level}.up", up.shape))
            h = concat_channels(up, skips[level])
            self._skip_channels.append(up.shape[1])
            h = self._run_block(f"dec{level}", h, train, rng, trace)
        h = self.layers["out.conv"].forward(h, train, rng)
        y = self.layers["out.sigmoid"].forward(h, train, rng)
        if trace is not None:
            trace.append(("out", y.shape))
        self._recorded = True
        return y[:, 0]

    def backward(self, dy):
        """Backpropagate ``dL/dy`` (shape of the forward output) into the gradients."""
        if not self._recorded:
            raise RuntimeError("backward called without a recorded forward pass")
        cfg = self.config
        d = self.layers["out.sigmoid"].backward(dy[:, None])
        d = self.layers["out.conv"].backward(d)
        skip_grads = {}
        # decoder levels ran deepest first, so unwind from level 0 upwards
        for level in range(cfg.depth - 1):
            d = self._back_block(f"dec{level}", d)
            n_up = self._skip_channels[cfg.depth - 2 - level]
            skip_grads[level] = d[:, n_up:]
            d = self.layers[f"dec{level}.up"].backward(d[:, :n_up])
        for level in reversed(range(cfg.depth)):
            if level < cfg.depth - 1:
                d = self.layers[f"enc{level}.pool"].backward(d) + skip_grads[level]
            d = self._back_block(f"enc{level}", d)
        self._recorded = False
        return d


def build(config, seed=0):
    return UNetModel(config, seed)


def forward(model, features, mode="infer", rng=None):
    """Mask for a batch ``(N, C, T, F)`` or a single ``(C, T, F)`` input."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(features)
    single = x.ndim == 3
    if single:
        x = x[None]
    train = mode == "train"
    if train and rng is None:
        rng = model.rng
    y = model.forward(x, train=train, rng=rng)
    return y[0] if single else y


def mse_loss(pred, target):
    diff = pred.astype(np.float64) - target
    return float(np.mean(diff**2)), (2.0 * diff / diff.size).astype(pred.dtype)


def backward(model, target):
    """Gradients of the MSE loss for the most recent training-mode forward pass.

    Returns ``(loss, gradients)``; ``gradients`` maps parameter names to arrays.
    """
    if not model._recorded:
        raise RuntimeError("backward called without a recorded forward pass")
    y = model.layers["out.sigmoid"]._cached()[:, 0]
    target = np.asarray(target)
    if target.shape != y.shape:
        raise ShapeError(f"target shape {target.shape} does not match output {y.shape}")
    loss, dy = mse_loss(y, target)
    model.zero_grad()
    model.backward(dy)
    return loss, {k: v.copy() for k, v in model.gradients().items()}


def loss_and_gradients(model, x, target, rng=None):
    forward(model, x, mode="train", rng=rng)
    return backward(model, target)


def nadam_step(model, gradients, lr):
    """One Nesterov-Adam update; rejects the step if any gradient is non-finite."""
    bad = [n for n, g in gradients.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericalError(f"non-finite gradients in {', '.join(sorted(bad))}; step rejected")
    params = model.parameters()
    missing = set(params) - set(gradients)
    if missing:
        raise ShapeError(f"missing gradients for {sorted(missing)}")
    t = model.opt_step + 1
    for name, p in params.items():
        g = gradients[name].astype(np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = BETA1 * model.opt_m[name] + (1 - BETA1) * g
        v = BETA2 * model.opt_v[name] + (1 - BETA2) * g * g
        model.opt_m[name] = m.astype(p.dtype)
        model.opt_v[name] = v.astype(p.dtype)
        m_hat = BETA1 * m / (1 - BETA1 ** (t + 1)) + (1 - BETA1) * g / (1 - BETA1**t)
        v_hat = v / (1 - BETA2**t)
        model.set_parameter(name, p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
    model.opt_step = t
    return model


# --- data preparation ---------------------------------------------------------


def raw_features(mix, target, interferers, n_features=None):
    """Beamformed magnitude features with per-band sequence normalization."""
    bf = build_beamformers(target, interferers)
    return normalize_sequence(extract_features(mix, bf, n_features))


def to_windows(array, seq_frames, pad_last=False):
    """Split ``(..., T, F)`` into non-overlapping windows along time.

    Returns ``(windows, starts)``. Without ``pad_last`` a trailing partial
    window is dropped; with it the last window is aligned to the end of the
    sequence (so it overlaps its predecessor) and shorter inputs are padded
    on the left by repeating their first frame.
    """
    a = np.asarray(array)
    t = a.shape[-2]
    if t < seq_frames:
        if not pad_last:
            return np.empty((0, *a.shape[:-2], seq_frames, a.shape[-1]), a.dtype), []
        pad = [(0, 0)] * a.ndim
        pad[-2] = (seq_frames - t, 0)
        a = np.pad(a, pad, mode="edge")
        return a[None], [t - seq_frames]
    starts = list(range(0, t - seq_frames + 1, seq_frames))
    if pad_last and starts[-1] + seq_frames < t:
        starts.append(t - seq_frames)
    wins = np.stack([a[..., s : s + seq_frames, :] for s in starts])
    return wins, starts


def scene_example(scene, n_features):
    """``(features, oracle mask)`` of a simulated scene, before standardization."""
    dirs = scene.spec.directions
    feats = raw_features(scene.mixture, dirs[0], dirs[1:], n_features)
    return feats, scene.oracle_mask


def build_dataset(examples, config, stats):
    """Stack standardized training windows ``(N, C, T, F_net)`` and mask windows."""
    xs, ys = [], []
    f_net = config.freq_bins_net
    for feats, mask in examples:
        if feats.features.shape[0] != config.input_features:
            raise ShapeError(
                f"example has {feats.features.shape[0]} features, model expects {config.input_features}"
            )
        if feats.features.shape[-1] - 1 != f_net or mask.shape != feats.features.shape[1:]:
            raise ShapeError(
                f"features {feats.features.shape} / mask {mask.shape} do not match "
                f"{f_net} network bins plus Nyquist"
            )
        std = standardize(feats, stats).features[..., :f_net]
        wx, _ = to_windows(std, config.seq_frames)
        wy, _ = to_windows(np.asarray(mask)[..., :f_net], config.seq_frames)
        xs.append(wx)
        ys.append(wy)
    if not xs or sum(len(x) for x in xs) == 0:
        raise ShapeError("dataset contains no complete window")
    return np.concatenate(xs).astype(config.dtype), np.concatenate(ys).astype(config.dtype)


def fit_feature_stats(model, examples):
    model.feature_stats = compute_stats([feats for feats, _ in examples])
    return model.feature_stats


# --- training -----------------------------------------------------------------


def evaluate_loss(model, x, y, batch_size=64):
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = model.forward(x[i : i + batch_size], train=False)
        total += float(np.sum((pred.astype(np.float64) - y[i : i + batch_size]) ** 2))
    return total / y.size


def train(model, train_data, val_data, spec, progress=None, resume=None, on_epoch=None):
    """Mini-batch Nadam on the mask MSE with early stopping on validation loss.

    ``train_data`` and ``val_data`` are ``(inputs, targets)`` window arrays.
    Shuffling and dropout draw from one generator seeded by ``spec.seed``.
    ``resume`` is a ``(TrainLog, best_model)`` pair saved by ``on_epoch``;
    continuing from it gives the same log as an uninterrupted run.
    ``on_epoch(model, best_model, log)`` is called after every epoch.
    Returns ``(best_model, TrainLog)``.
    """
    x_tr, y_tr = train_data
    x_va, y_va = val_data
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if x_tr.shape[0] != y_tr.shape[0] or x_va.shape[0] != y_va.shape[0]:
        raise ShapeError("inputs and targets disagree on the number of windows")
    rng = np.random.default_rng(spec.seed)
    if resume is None:
        log, best_model = TrainLog(), model.copy()
    else:
        log, best_model = copy.deepcopy(resume[0]), resume[1]
        rng.bit_generator.state = log.rng_state
    while log.epoch < spec.max_epochs and log.stale < spec.patience:
        epoch = log.epoch + 1
        order = rng.permutation(len(x_tr))
        total = 0.0
        for i in range(0, len(order), spec.batch_size):
            idx = np.sort(order[i : i + spec.batch_size])
            loss, grads = loss_and_gradients(model, x_tr[idx], y_tr[idx], rng)
            nadam_step(model, grads, spec.lr)
            total += loss * len(idx)
        val_loss = evaluate_loss(model, x_va, y_va)
        log.epochs.append({"epoch": epoch, "train_loss": total / len(x_tr), "val_loss": val_loss})
        if val_loss < log.best_loss - spec.min_delta:
            log.best_loss, log.best_epoch, log.stale = val_loss, epoch, 0
            best_model = model.copy()
        else:
            log.stale += 1
        log.stopped_early = log.stale >= spec.patience and epoch < spec.max_epochs
        log.rng_state = rng.bit_generator.state
        if progress is not None:
            progress(log.epochs[-1])
        if on_epoch is not None:
            on_epoch(model, best_model, log)
    best_model._recorded = False
    return best_model, log


# --- inference ----------------------------------------------------------------


def infer_mask(model, mix, target, interferers, batch_size=64):
    """Full-length ``(T, F)`` mask for a 4-channel mixture Spectrogram."""
    cfg = model.config
    interferers = list(interferers)
    if 2 + len(interferers) != cfg.input_features:
        raise ShapeError(
            f"model expects {cfg.input_features - 2} interferer(s), got {len(interferers)}"
        )
    if mix.n_bins - 1 != cfg.freq_bins_net:
        raise ShapeError(
            f"mixture has {mix.n_bins} bins; model expects {cfg.freq_bins_net} + Nyquist"
        )
    if model.feature_stats is None:
        raise ConfigError("model has no feature standardization statistics")
    feats = standardize(raw_features(mix, target, interferers, cfg.input_features), model.feature_stats)
    x = feats.features[..., : cfg.freq_bins_net]
    wins, starts = to_windows(x, cfg.seq_frames, pad_last=True)
    preds = np.concatenate(
        [model.forward(wins[i : i + batch_size], train=False) for i in range(0, len(wins), batch_size)]
    )
    t = mix.n_frames
    mask = np.empty((t, cfg.freq_bins_net + 1), dtype=np.float32)
    # later windows only overwrite frames they cover; the tail window is end-aligned
    for start, pred in zip(starts, preds):
        lo = max(start, 0)
        mask[lo : start + cfg.seq_frames, :-1] = pred[lo - start :]
    mask[:, -1] = mask[:, -2]
    return mask


# --- architecture probes --------------------------------------------------------


def shape_trace(model, batch=1):
    cfg = model.config
    trace = []
    model.forward(np.zeros((batch, cfg.input_features, cfg.seq_frames, cfg.freq_bins_net)), trace=trace)
    model._recorded = False
    return trace


def receptive_field(model, n_probes=4, seed=0, bin_index=None, delta=1.0):
    """Output frequency bins affected by perturbing one input bin (union over probes).

    Runs in inference mode in double precision on a copy of the model.
    """
    cfg = model.config
    probe = model.copy()
    for layer in probe.layers.values():
        layer.params = {k: v.astype(np.float64) for k, v in layer.params.items()}
        layer.buffers = {k: v.astype(np.float64) for k, v in layer.buffers.items()}
    rng = np.random.default_rng(seed)
    center = cfg.freq_bins_net // 2 if bin_index is None else bin_index
    frame = cfg.seq_frames // 2
    affected = np.zeros(cfg.freq_bins_net, dtype=bool)
    for _ in range(n_probes):
        x = rng.standard_normal((1, cfg.input_features, cfg.seq_frames, cfg.freq_bins_net))
        x2 = x.copy()
        x2[0, :, frame, center] += delta
        diff = probe.forward(x2) - probe.forward(x)
        affected |= np.any(diff[0] != 0, axis=0)
    return set(np.flatnonzero(affected).tolist())


# --- checkpoints ------------------------------------------------------------------

MAGIC = b"FOAUNET\x00"
FORMAT_VERSION = 1


def _tensor_table(model):
    tensors = {}
    for n, p in model.parameters().items():
        tensors[f"param/{n}"] = p
    for n, b in model.buffers().items():
        tensors[f"buffer/{n}"] = b
    for n in model.parameters():
        tensors[f"nadam_m/{n}"] = model.opt_m[n]
        tensors[f"nadam_v/{n}"] = model.opt_v[n]
    if model.feature_stats is not None:
        tensors["stats/mean"] = model.feature_stats.mean
        tensors["stats/std"] = model.feature_stats.std
    return tensors


def checkpoint_bytes(model, extra=None):
    """Serialize a model; the layout is described in the README."""
    tensors = _tensor_table(model)
    entries, payload, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    header = {
        "config": model.config.to_dict(),
        "tensors": entries,
        "nadam_step": model.opt_step,
        "rng_state": model.rng.bit_generator.state,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def atomic_write(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(model, path, extra=None):
    atomic_write(path, checkpoint_bytes(model, extra))


def checkpoint_from_bytes(blob):
    """Inverse of :func:`checkpoint_bytes`; returns ``(model, extra)``."""
    if len(blob) < len(MAGIC) + 8 + 32 or not blob.startswith(MAGIC):
        raise DataError("not a U-net checkpoint (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError("checkpoint checksum mismatch")
    version, head_len = struct.unpack_from("<II", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from None
    payload = body[start + head_len :]
    model = UNetModel(UNetConfig.from_dict(header["config"]))
    expected = _tensor_table(model)
    stats = {}
    seen = set()
    for e in header["tensors"]:
        name, shape = e["name"], tuple(e["shape"])
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"] or e["nbytes"] != 4 * int(np.prod(shape, dtype=np.int64)):
            raise DataError(f"tensor {name} payload is truncated")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        kind, _, key = name.partition("/")
        if kind == "stats":
            stats[key] = arr.astype(np.float32)
            continue
        if name not in expected or expected[name].shape != shape:
            raise DataError(f"tensor {name} {shape} does not fit the stored config")
        seen.add(name)
        value = arr.astype(model.config.dtype)
        if kind == "param":
            model.set_parameter(key, value)
        elif kind == "buffer":
            model.set_buffer(key, value)
        elif kind == "nadam_m":
            model.opt_m[key] = value
        elif kind == "nadam_v":
            model.opt_v[key] = value
    missing = set(k for k in expected if not k.startswith("stats/")) - seen
    if missing:
        raise DataError(f"checkpoint lacks tensors: {sorted(missing)[:3]}")
    if stats:
        model.feature_stats = FeatureStats(stats["mean"], stats["std"])
    model.opt_step = int(header["nadam_step"])
    model.rng.bit_generator.state = header["rng_state"]
    return model, header.get("extra", {})


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
