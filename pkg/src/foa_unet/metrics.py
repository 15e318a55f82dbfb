"""Signal-quality evaluation: SI-SDR, mask MSE and system comparison reports."""

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from foa_unet import pipeline
from foa_unet.errors import ShapeError, SignalError
from foa_unet.foa import angular_distance
from foa_unet.stft import interior, synthesize

SDR_CAP = 60.0
SEPARATION_CLASSES = (25, 45, 90)


def si_sdr(estimate, reference, cap=SDR_CAP):
    """Scale-invariant SDR in dB, clipped to ``[-cap, cap]``."""
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ShapeError(f"estimate {est.shape} and reference {ref.shape} lengths differ")
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise SignalError("reference signal is all zeros")
    target = (est @ ref) / ref_energy * ref
    residual = est - target
    num, den = target @ target, residual @ residual
    if den == 0:
        return cap
    if num == 0:
        return -cap
    return float(np.clip(10 * np.log10(num / den), -cap, cap))


def mask_mse(predicted, oracle):
    p = np.asarray(predicted, dtype=np.float64)
    o = np.asarray(oracle, dtype=np.float64)
    if p.shape != o.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {o.shape}")
    return float(np.mean((p - o) ** 2))


def separation_class(scene):
    """Nearest of 25/45/90 degrees to the smallest target-interferer angle, or None."""
    dirs = scene.spec.directions
    if len(dirs) < 2:
        return None
    sep = min(math.degrees(angular_distance(dirs[0], d)) for d in dirs[1:])
    nearest = min(SEPARATION_CLASSES, key=lambda c: abs(c - sep))
    return nearest if abs(nearest - sep) <= 5.0 else None


def scene_si_sdr(scene, estimate):
    """SI-SDR of a single-channel estimate Spectrogram against the target's W image.

    Both signals are resynthesized and compared on the STFT round-trip interior.
    """
    ref = synthesize(scene.target_image.channel(0))[0]
    est = synthesize(estimate)[0]
    sl = interior(len(ref), scene.mixture.config)
    return si_sdr(est[sl], ref[sl])


# --- systems ------------------------------------------------------------------
# A system maps a SceneOutput to (estimate Spectrogram, mask or None).


def mixture_system(scene):
    return scene.mixture.channel(0), None


def ideal_mask_system(scene):
    return pipeline.mask_only(scene.mixture, scene.oracle_mask), scene.oracle_mask


def ideal_filter_system(scene):
    return pipeline.mask_filter(scene.mixture, scene.oracle_mask), scene.oracle_mask


def beamformer_system(scene):
    dirs = scene.spec.directions
    return pipeline.beamformer_output(scene.mixture, dirs[0], dirs[1:]), None


def learned_systems(model):
    """'learned_mask' and 'learned_filter' systems driven by a trained U-net."""
    from foa_unet.unet import infer_mask

    cache = {}

    def mask_for(scene):
        key = id(scene)
        if key not in cache:
            dirs = scene.spec.directions
            cache[key] = (scene, infer_mask(model, scene.mixture, dirs[0], dirs[1:]))
        return cache[key][1]

    def learned_mask(scene):
        m = mask_for(scene)
        return pipeline.mask_only(scene.mixture, m), m

    def learned_filter(scene):
        m = mask_for(scene)
        return pipeline.mask_filter(scene.mixture, m), m

    return {"learned_mask": learned_mask, "learned_filter": learned_filter}


def standard_systems(model=None):
    systems = {
        "mixture": mixture_system,
        "ideal_mask": ideal_mask_system,
        "ideal_filter": ideal_filter_system,
        "beamformer": beamformer_system,
    }
    if model is not None:
        systems.update(learned_systems(model))
    return systems


SYSTEM_ORDER = ["mixture", "beamformer", "ideal_mask", "ideal_filter", "learned_mask", "learned_filter"]


def system_rank(name):
    """Table order: known systems first in pipeline order, then others by name."""
    return (SYSTEM_ORDER.index(name), "") if name in SYSTEM_ORDER else (len(SYSTEM_ORDER), name)


@dataclass
class EvalReport:
    """Mean scores per system, overall and per (speaker count, separation class).

    ``rows[system]`` holds ``si_sdr_db``, ``si_sdr_improvement_db`` and
    ``mask_mse`` (None for systems without a mask). ``groups`` maps a label
    such as ``"2spk/25deg"`` to the same structure.
    """

    rows: dict
    groups: dict = field(default_factory=dict)
    per_scene: list = field(default_factory=list)

    def to_dict(self):
        return {"rows": self.rows, "groups": self.groups, "per_scene": self.per_scene}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rows"], d.get("groups", {}), d.get("per_scene", []))

    def format_table(self):
        lines = []
        for title, rows in [("all scenes", self.rows)] + sorted(self.groups.items()):
            lines.append(f"== {title} ==")
            lines.append(f"{'system':<16}{'SI-SDR':>10}{'improv.':>10}{'mask MSE':>11}")
            for name in sorted(rows, key=system_rank):
                r = rows[name]
                mse = "-" if r["mask_mse"] is None else f"{r['mask_mse']:.4f}"
                lines.append(
                    f"{name:<16}{r['si_sdr_db']:>10.2f}{r['si_sdr_improvement_db']:>10.2f}{mse:>11}"
                )
            lines.append("")
        return "\n".join(lines)


def _summarize(records, systems):
    out = {}
    for name in systems:
        sdr = [r[name]["si_sdr_db"] for r in records]
        imp = [r[name]["si_sdr_improvement_db"] for r in records]
        mses = [r[name]["mask_mse"] for r in records if r[name]["mask_mse"] is not None]
        out[name] = {
            "si_sdr_db": float(np.mean(sdr)),
            "si_sdr_improvement_db": float(np.mean(imp)),
            "mask_mse": float(np.mean(mses)) if mses else None,
        }
    return out


def evaluate_pipeline(scenes, systems):
    """Score every system on every scene.

    ``systems`` is a mapping ``name -> system`` or a single system callable.
    Improvements are measured against the unprocessed W channel of each scene.
    """
    if callable(systems):
        systems = {"system": systems}
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes to evaluate")
    records = []
    per_scene = []
    for idx, scene in enumerate(scenes):
        base = scene_si_sdr(scene, scene.mixture.channel(0))
        rec = {}
        for name, system in systems.items():
            est, mask = system(scene)
            sdr = scene_si_sdr(scene, est)
            rec[name] = {
                "si_sdr_db": sdr,
                "si_sdr_improvement_db": sdr - base,
                "mask_mse": None if mask is None else mask_mse(mask, scene.oracle_mask),
            }
        sep = separation_class(scene)
        n_spk = 1 + len(scene.spec.interferers)
        label = f"{n_spk}spk/" + (f"{sep}deg" if sep is not None else "other")
        records.append((label, rec))
        per_scene.append({"index": idx, "group": label, "scores": rec})

    by_group = defaultdict(list)
    for label, rec in records:
        by_group[label].append(rec)
    return EvalReport(
        rows=_summarize([r for _, r in records], systems),
        groups={label: _summarize(recs, systems) for label, recs in by_group.items()},
        per_scene=per_scene,
    )
