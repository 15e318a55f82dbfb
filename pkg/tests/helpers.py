"""Finite-difference utilities shared by the network tests."""

import numpy as np

from foa_unet.layers import MaxPoolFreq, ReLU
from foa_unet.unet import backward, build, forward


def rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f, x, h=1e-4, pattern=None, stats=None):
    """Central differences of the scalar ``f()`` with respect to array ``x`` (in place).

    Central differences only estimate the derivative when ``f`` is smooth on
    ``[x - h, x + h]``. If ``pattern()`` (the on/off state of every ReLU and
    the argmax of every pooling window after the last ``f()`` call) differs
    between the two probes, a kink lies inside the interval and that entry
    is re-estimated with a 100x smaller step. ``stats['refined']`` counts
    those entries.
    """
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        step = h
        while True:
            x[idx] = old + step
            fp = f()
            sig_p = pattern() if pattern else None
            x[idx] = old - step
            fm = f()
            sig_m = pattern() if pattern else None
            x[idx] = old
            if sig_p == sig_m or step < 1e-9:
                break
            step /= 100
            if stats is not None:
                stats["refined"] = stats.get("refined", 0) + 1
        g[idx] = (fp - fm) / (2 * step)
    return g


def check_layer(layer, x, train=True, seed=0, h=1e-4):
    """Max relative error of the input and parameter gradients of ``layer``.

    The scalar probed is ``sum(layer(x) * r)`` for a fixed random ``r``;
    training-mode randomness is frozen by reseeding before every call.
    """
    out = layer.forward(x, train, np.random.default_rng(seed))
    r = np.random.default_rng(seed + 1).standard_normal(out.shape)

    def f():
        return float(np.sum(layer.forward(x, train, np.random.default_rng(seed)) * r))

    f()
    layer.zero_grad()
    dx = layer.backward(r)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    errors = {"input": rel_error(dx, numeric_grad(f, x, h)).max()}
    for name, p in layer.params.items():
        errors[name] = rel_error(analytic[name], numeric_grad(f, p, h)).max()
    return errors


def activation_pattern(model):
    parts = []
    for layer in model.layers.values():
        if isinstance(layer, ReLU):
            parts.append(np.packbits(layer._cache).tobytes())
        elif isinstance(layer, MaxPoolFreq):
            parts.append(layer._cache[1].tobytes())
    return b"".join(parts)


def full_net_errors(cfg, seed, h=1e-4, stats=None):
    model = build(cfg, seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.standard_normal((2, cfg.input_features, cfg.seq_frames, cfg.freq_bins_net))
    y = rng.uniform(0, 1, (2, cfg.seq_frames, cfg.freq_bins_net))

    def loss():
        forward(model, x, "train", rng=np.random.default_rng(7))
        return backward(model, y)[0]

    def pattern():
        return activation_pattern(model)

    forward(model, x, "train", rng=np.random.default_rng(7))
    _, grads = backward(model, y)
    errors = {}
    for name, p in model.parameters().items():
        errors[name] = rel_error(grads[name], numeric_grad(loss, p, h, pattern, stats)).max()
    # input gradient through the same recorded pass
    forward(model, x, "train", rng=np.random.default_rng(7))
    y_hat = model.layers["out.sigmoid"]._cached()[:, 0]
    dx = model.backward(2 * (y_hat - y) / y.size)
    errors["input"] = rel_error(dx, numeric_grad(loss, x, h, pattern, stats)).max()
    return errors
