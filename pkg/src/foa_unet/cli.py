"""Command-line interface: ``foa-enhance simulate|enhance|train|eval|dump-mask``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or inconsistent files), 3 numerical failure.
"""

import argparse
import configparser
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from foa_unet import io, pipeline
from foa_unet.errors import ConfigError, DataError, FoaError, NumericalError
from foa_unet.foa import Direction
from foa_unet.metrics import evaluate_pipeline, scene_si_sdr, standard_systems
from foa_unet.scene import Placement, ReverbSpec, SceneSpec, desk_scene, synthesize_scene, synthetic_speech
from foa_unet.stft import StftConfig, analyze, synthesize
from foa_unet.unet import (
    TrainLog,
    TrainSpec,
    UNetConfig,
    build,
    build_dataset,
    fit_feature_stats,
    infer_mask,
    load_checkpoint,
    save_checkpoint,
    scene_example,
    train,
)

log = logging.getLogger("foa_unet")

# --- configuration files ------------------------------------------------------------


def _bool(text):
    states = configparser.ConfigParser.BOOLEAN_STATES
    if text.lower() not in states:
        raise ValueError(f"not a boolean: {text!r}")
    return states[text.lower()]


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def _placement_keys(prefix):
    return {f"{prefix}_source": str, f"{prefix}_azimuth": float, f"{prefix}_elevation": float}


SCHEMA = {
    "scene": {
        **_placement_keys("target"),
        **_placement_keys("interferer1"),
        **_placement_keys("interferer2"),
        "sir_db": float,
        "snr_db": float,
        "rt60": float,
        "drr_db": float,
        "noise_source": str,
        "seed": int,
        "min_separation_deg": float,
        "duration": float,
    },
    "stft": {"frame_len": int},
    "unet": {
        "depth": int,
        "base_filters": int,
        "dilated": _bool,
        "dilation_schedule": _int_list,
        "seq_frames": int,
        "dropout": float,
        "precision": str,
    },
    "train": {
        "lr": float,
        "max_epochs": int,
        "patience": int,
        "batch_size": int,
        "seed": int,
        "val_fraction": float,
        "min_delta": float,
    },
}


def load_config(path, sections):
    """Parse an INI file, rejecting unknown sections and keys and bad values."""
    if path is None:
        return {s: {} for s in sections}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {s: {} for s in sections}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError(f"{path}: section [{section}] is not allowed here (expected {sorted(sections)})")
        schema = SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = schema[key](raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
    out["_base"] = path.parent
    return out


# --- sources ---------------------------------------------------------------------------


def resolve_source(ref, base, fs, duration):
    """``synthetic:<seed>`` or a path (relative to the config file) to a mono WAV."""
    if ref.startswith("synthetic:"):
        try:
            seed = int(ref.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad synthetic source {ref!r}") from None
        return synthetic_speech(seed, duration, fs)
    path = Path(ref)
    if not path.is_absolute() and base is not None:
        path = Path(base) / path
    return io.read_wav(path, fs, 1)[0]


def check_source_paths(refs, base):
    for ref in refs:
        if ref.startswith("synthetic:"):
            continue
        path = Path(ref) if Path(ref).is_absolute() or base is None else Path(base) / ref
        if not path.is_file():
            raise ConfigError(f"source file {path} does not exist")


def scene_spec_from_config(sc):
    if "target_source" not in sc or "target_azimuth" not in sc:
        raise ConfigError("[scene] needs target_source and target_azimuth")
    target = Placement(sc["target_source"], Direction.from_degrees(sc["target_azimuth"], sc.get("target_elevation", 0.0)))
    interferers = []
    for k in (1, 2):
        p = f"interferer{k}"
        keys = [key for key in sc if key.startswith(p)]
        if not keys:
            continue
        if f"{p}_source" not in sc or f"{p}_azimuth" not in sc:
            raise ConfigError(f"[scene] {p} needs both {p}_source and {p}_azimuth")
        interferers.append(
            Placement(sc[f"{p}_source"], Direction.from_degrees(sc[f"{p}_azimuth"], sc.get(f"{p}_elevation", 0.0)))
        )
    reverb = None
    if "rt60" in sc:
        reverb = ReverbSpec(sc["rt60"], sc.get("drr_db", 0.0))
    elif "drr_db" in sc:
        raise ConfigError("[scene] drr_db given without rt60")
    return SceneSpec(
        target=target,
        interferers=tuple(interferers),
        sir_db=sc.get("sir_db", 0.0),
        snr_db=sc.get("snr_db", math.inf),
        reverb=reverb,
        noise=sc.get("noise_source"),
        seed=sc.get("seed", 0),
        min_separation_deg=sc.get("min_separation_deg", 25.0),
    )


# --- verbs ------------------------------------------------------------------------------


def require_paths(args, files=(), dirs=()):
    """Fail before any work when a path named on the command line is missing."""
    for name in files:
        value = getattr(args, name)
        if value is not None and not Path(value).is_file():
            raise ConfigError(f"--{name.replace('_', '-')}: {value} does not exist")
    for name in dirs:
        value = getattr(args, name)
        if value is not None and not Path(value).is_dir():
            raise ConfigError(f"--{name.replace('_', '-')}: {value} is not a directory")


def _parse_separation(text):
    if text is None or text == "random":
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad --separation {text!r}") from None
    return values


def _parse_seeds(text):
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--desk-seeds must look like START:STOP, got {text!r}") from None
    if hi <= lo:
        raise ConfigError("--desk-seeds range is empty")
    return range(lo, hi)


def cmd_simulate(args):
    cfg = load_config(args.config, {"scene", "stft"})
    frame_len = args.frame_len or cfg["stft"].get("frame_len", 1024)
    stft = StftConfig.from_frame_len(frame_len)
    out = Path(args.out)
    if args.desk_seeds is None:
        sc = cfg["scene"]
        if not sc:
            raise ConfigError("simulate needs a [scene] section or --desk-seeds")
        if args.seed is not None:
            sc["seed"] = args.seed
        spec = scene_spec_from_config(sc)
        base = cfg.get("_base")
        check_source_paths(spec.source_ids, base)
        duration = sc.get("duration", 3.0)
        sources = {sid: resolve_source(sid, base, stft.sample_rate, duration) for sid in spec.source_ids}
        scene = synthesize_scene(spec, sources, stft)
        io.write_scene(out, scene, stft, {sid: sid for sid in spec.source_ids})
        log.info("wrote scene to %s", out)
        return 0
    seeds = _parse_seeds(args.desk_seeds)
    seps = _parse_separation(args.separation)
    reverb = None if args.rt60 is None else ReverbSpec(args.rt60, args.drr_db)
    if args.interferers not in (1, 2):
        raise ConfigError("--interferers must be 1 or 2")
    out.mkdir(parents=True, exist_ok=True)
    for i, seed in enumerate(seeds):
        sep = None if seps is None else seps[i % len(seps)]
        scene, _ = desk_scene(
            seed,
            args.interferers,
            sep,
            sir_db=args.sir_db,
            snr_db=args.snr_db,
            reverb=reverb,
            duration=args.duration,
            stft=stft,
        )
        io.write_scene(out / f"scene_{seed:05d}", scene, stft, {"generator": f"desk_scene:{seed}"})
    log.info("wrote %d scenes to %s", len(seeds), out)
    return 0


def _direction(text):
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad direction {text!r}; expected AZ[,EL] in degrees") from None
    if len(parts) not in (1, 2):
        raise ConfigError(f"bad direction {text!r}; expected AZ[,EL] in degrees")
    return Direction.from_degrees(*parts)


def cmd_enhance(args):
    require_paths(args, files=("input", "mask", "checkpoint"), dirs=("scene",))
    scene = None
    if args.scene is not None:
        scene = io.load_scene(args.scene, need_stems=False)
        mix = scene.mixture
        dirs = scene.spec.directions
        target, interferers = dirs[0], dirs[1:]
        n_samples = io.read_manifest(args.scene)["n_samples"]
    else:
        if args.input is None or args.target_doa is None:
            raise ConfigError("enhance needs --scene, or --input with --target-doa")
        stft = StftConfig.from_frame_len(args.frame_len or 1024)
        wave = io.read_wav(args.input, stft.sample_rate)
        if wave.shape[0] != 4:
            raise DataError(f"{args.input}: FOA input must have 4 channels, got {wave.shape[0]}")
        mix = analyze(wave, stft)
        target = _direction(args.target_doa)
        interferers = [_direction(d) for d in args.interferer_doa or []]
        n_samples = wave.shape[1]

    mode = args.mask_source
    if mode == "beamformer":
        est = pipeline.beamformer_output(mix, target, interferers)
        mask = None
    else:
        if mode == "oracle":
            if args.mask is not None:
                mask = io.read_mask(args.mask)
            elif scene is not None and scene.oracle_mask is not None:
                mask = scene.oracle_mask
            else:
                raise ConfigError("oracle mode needs --mask or a scene with an oracle mask")
        else:
            if args.checkpoint is None:
                raise ConfigError("checkpoint mode needs --checkpoint")
            model, _ = load_checkpoint(args.checkpoint)
            mask = infer_mask(model, mix, target, interferers)
        if mask.shape != (mix.n_frames, mix.n_bins):
            raise DataError(f"mask shape {mask.shape} does not match the mixture {(mix.n_frames, mix.n_bins)}")
        if args.mask_only:
            est = pipeline.mask_only(mix, mask)
        else:
            est = pipeline.mask_filter(mix, mask, "gevd_rank1" if args.variant == "gevd" else "mwf")
    io.write_wav(args.out, synthesize(est, n_samples)[0], mix.config.sample_rate)
    if args.dump_mask is not None:
        if mask is None:
            raise ConfigError("--dump-mask needs a mask source other than the beamformer")
        io.write_mask(args.dump_mask, mask)
    summary = {"output": str(args.out), "mask_source": mode, "mask_only": bool(args.mask_only)}
    if scene is not None and scene.target_image is not None:
        sdr = scene_si_sdr(scene, est)
        base = scene_si_sdr(scene, mix.channel(0))
        summary.update(si_sdr_db=sdr, mixture_si_sdr_db=base, si_sdr_improvement_db=sdr - base)
    print(io.json_bytes(summary).decode(), end="")
    return 0


def _load_training_scenes(data):
    dirs = io.scene_dirs(data)
    scenes = [io.load_scene(d, need_stems=False) for d in dirs]
    counts = {len(s.spec.interferers) for s in scenes}
    if len(counts) != 1:
        raise DataError(f"scenes mix different interferer counts {sorted(counts)}; train one model per count")
    bins = {s.mixture.n_bins for s in scenes}
    if len(bins) != 1:
        raise DataError(f"scenes use different STFT sizes ({sorted(bins)} bins)")
    if any(s.oracle_mask is None for s in scenes):
        raise DataError("every training scene needs an oracle mask")
    return dirs, scenes


def cmd_train(args):
    require_paths(args, dirs=("data",))
    cfg = load_config(args.config, {"unet", "train"})
    t = dict(cfg["train"])
    for key in ("max_epochs", "seed", "lr", "batch_size", "patience"):
        if getattr(args, key) is not None:
            t[key] = getattr(args, key)
    val_fraction = t.pop("val_fraction", 0.2)
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in (0, 1)")
    spec = TrainSpec(**t)
    out = Path(args.out)
    dirs, scenes = _load_training_scenes(args.data)
    if len(scenes) < 2:
        raise DataError("training needs at least two scenes (train + validation)")
    n_features = 2 + len(scenes[0].spec.interferers)
    n_bins = scenes[0].mixture.n_bins
    ucfg = UNetConfig.toy(input_features=n_features, freq_bins_net=n_bins - 1)
    ucfg = UNetConfig.from_dict({**ucfg.to_dict(), **cfg["unet"]})
    if ucfg.input_features != n_features or ucfg.freq_bins_net != n_bins - 1:
        raise ConfigError("U-net input size does not match the dataset")
    n_val = max(1, int(round(val_fraction * len(scenes))))
    n_val = min(n_val, len(scenes) - 1)
    examples = [scene_example(s, n_features) for s in scenes]
    train_ex, val_ex = examples[:-n_val], examples[-n_val:]
    run_info = {
        "train_spec": {k: v for k, v in asdict(spec).items() if k != "max_epochs"},
        "val_fraction": val_fraction,
        "scenes": [d.name for d in dirs],
    }
    out.mkdir(parents=True, exist_ok=True)
    last_path, best_path = out / "last.ckpt", out / "best.ckpt"
    resume = None
    if args.resume:
        if not last_path.is_file() or not best_path.is_file():
            raise ConfigError(f"--resume needs {last_path} and {best_path}")
        model, extra = load_checkpoint(last_path)
        best, _ = load_checkpoint(best_path)
        for key in ("train_spec", "val_fraction", "scenes"):
            if extra.get("run", {}).get(key) != run_info[key]:
                raise ConfigError(f"cannot resume: {key} differs from the interrupted run")
        if model.config != ucfg:
            raise ConfigError("cannot resume: U-net config differs from the interrupted run")
        resume = (TrainLog.from_dict(extra["log"]), best)
    else:
        model = build(ucfg, spec.seed)
        fit_feature_stats(model, train_ex)
    tr = build_dataset(train_ex, ucfg, model.feature_stats)
    va = build_dataset(val_ex, ucfg, model.feature_stats)

    def checkpoint(model_now, best_now, state):
        extra = {"log": state.to_dict(), "run": run_info}
        save_checkpoint(best_now, best_path, extra)
        save_checkpoint(model_now, last_path, extra)
        io.write_json(out / "train_log.json", state.to_dict())

    def progress(e):
        log.info("epoch %d  train %.5f  val %.5f", e["epoch"], e["train_loss"], e["val_loss"])

    best, state = train(model, tr, va, spec, progress, resume, checkpoint)
    if resume is not None and state.epoch == resume[0].epoch:
        checkpoint(model, best, state)
    baseline = float(np.mean((va[1].astype(np.float64) - 0.5) ** 2))
    summary = {
        "epochs": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val_mse": state.best_loss,
        "constant_half_val_mse": baseline,
        "checkpoint": str(best_path),
    }
    print(io.json_bytes(summary).decode(), end="")
    return 0


def cmd_eval(args):
    require_paths(args, files=("checkpoint",), dirs=("data",))
    dirs = io.scene_dirs(args.data)
    scenes = [io.load_scene(d) for d in dirs]
    if any(s.oracle_mask is None for s in scenes):
        raise DataError("evaluation scenes need oracle masks")
    model = None
    if args.checkpoint is not None:
        model, _ = load_checkpoint(args.checkpoint)
    systems = standard_systems(model)
    if args.systems:
        wanted = args.systems.split(",")
        unknown = set(wanted) - set(systems)
        if unknown:
            raise ConfigError(f"unknown systems {sorted(unknown)}; available: {sorted(systems)}")
        systems = {k: systems[k] for k in wanted}
    report = evaluate_pipeline(scenes, systems)
    for row, d in zip(report.per_scene, dirs):
        row["scene"] = d.name
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = report.format_table()
    io.write_json(out / "report.json", report.to_dict())
    io.atomic_write(out / "report.txt", table.encode())
    print(table)
    return 0


def cmd_dump_mask(args):
    require_paths(args, files=("mask", "checkpoint"), dirs=("scene",))
    if args.png is None and args.matrix is None:
        raise ConfigError("dump-mask needs --png and/or --matrix")
    if args.mask is not None:
        mask = io.read_mask(args.mask)
    elif args.scene is not None:
        scene = io.load_scene(args.scene, need_stems=False)
        if args.checkpoint is not None:
            model, _ = load_checkpoint(args.checkpoint)
            dirs = scene.spec.directions
            mask = infer_mask(model, scene.mixture, dirs[0], dirs[1:])
        elif scene.oracle_mask is not None:
            mask = scene.oracle_mask
        else:
            raise DataError(f"{args.scene}: no oracle mask")
    else:
        raise ConfigError("dump-mask needs --mask or --scene")
    if args.png is not None:
        io.write_png(args.png, mask)
    if args.matrix is not None:
        io.write_mask(args.matrix, mask)
    return 0


# --- entry point ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="foa-enhance", description="Mask-based FOA speech enhancement.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render FOA scenes")
    s.add_argument("--config", help="INI file with [scene] and [stft] sections")
    s.add_argument("--out", required=True, help="scene directory (or parent directory with --desk-seeds)")
    s.add_argument("--seed", type=int, help="override [scene] seed")
    s.add_argument("--frame-len", type=int, help="STFT frame length (default 1024)")
    s.add_argument("--desk-seeds", help="START:STOP, render synthetic-talker scenes for these seeds")
    s.add_argument("--interferers", type=int, default=1)
    s.add_argument("--separation", help="degrees, a comma list cycled over seeds, or 'random'")
    s.add_argument("--sir-db", type=float)
    s.add_argument("--snr-db", type=float, default=20.0)
    s.add_argument("--rt60", type=float)
    s.add_argument("--drr-db", type=float, default=0.0)
    s.add_argument("--duration", type=float, default=3.0)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("enhance", help="enhance an FOA mixture")
    e.add_argument("--scene", help="scene directory (mixture, DOAs and oracle mask)")
    e.add_argument("--input", help="4-channel FOA WAV (without --scene)")
    e.add_argument("--target-doa", help="AZ[,EL] degrees (without --scene); write --target-doa=-30,0 for negative angles")
    e.add_argument("--interferer-doa", action="append", help="AZ[,EL] degrees, repeatable")
    e.add_argument("--frame-len", type=int)
    e.add_argument("--mask-source", choices=["oracle", "checkpoint", "beamformer"], default="oracle")
    e.add_argument("--mask", help="mask dump to use in oracle mode")
    e.add_argument("--checkpoint")
    e.add_argument("--mask-only", action="store_true", help="apply the mask to W instead of filtering")
    e.add_argument("--variant", choices=["gevd", "mwf"], default="gevd")
    e.add_argument("--out", required=True, help="output mono WAV")
    e.add_argument("--dump-mask", help="also write the mask used")
    e.set_defaults(func=cmd_enhance)

    t = sub.add_parser("train", help="train the mask network on simulated scenes")
    t.add_argument("--data", required=True, help="directory of scene directories")
    t.add_argument("--out", required=True, help="directory for checkpoints and the log")
    t.add_argument("--config", help="INI file with [unet] and [train] sections")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--patience", type=int)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="compare enhancement systems on simulated scenes")
    v.add_argument("--data", required=True)
    v.add_argument("--checkpoint", help="adds the learned mask and learned filter rows")
    v.add_argument("--systems", help="comma-separated subset of systems")
    v.add_argument("--out", required=True, help="directory for report.json and report.txt")
    v.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump-mask", help="write a mask as an image and a matrix dump")
    d.add_argument("--mask")
    d.add_argument("--scene")
    d.add_argument("--checkpoint")
    d.add_argument("--png")
    d.add_argument("--matrix")
    d.set_defaults(func=cmd_dump_mask)
    return p


def exit_code(exc):
    if isinstance(exc, ConfigError):
        return 1
    if isinstance(exc, NumericalError):
        return 3
    if isinstance(exc, (FoaError, ValueError, OSError)):
        return 2
    raise exc


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
