"""Command-line entry point: ``momo <command> [flags]``.

Every command reads and writes files only; failures print one JSON line on
stderr (``{"error": ..., "command": ..., "message": ...}``) and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import warnings
from pathlib import Path

import numpy as np

log = logging.getLogger("momo")


class CommandError(Exception):
    """A user-facing failure with a machine-readable kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message, self.prog)
        sys.exit(2)


def _emit_error(kind: str, message: str, command: str | None) -> None:
    print(json.dumps({"error": kind, "command": command, "message": message}), file=sys.stderr)


def _setup_logging() -> None:
    root = logging.getLogger("momo")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(stream)
    log_dir = os.environ.get("MOMO_LOG_DIR")
    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(Path(log_dir) / "momo.log")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        root.addHandler(fh)
    logging.captureWarnings(True)
    warn_log = logging.getLogger("py.warnings")
    for h in list(warn_log.handlers):
        warn_log.removeHandler(h)
    for h in root.handlers:
        warn_log.addHandler(h)


def _log_dir() -> Path | None:
    d = os.environ.get("MOMO_LOG_DIR")
    return Path(d) if d else None


# ------------------------------------------------------------------ inputs
def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CommandError("missing_file", f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CommandError("bad_config", f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CommandError("bad_config", f"{path}: expected a JSON object")
    return cfg


def load_input(path, sigma: float | None = None) -> np.ndarray:
    """Read a 2D sequence file, fill gaps, smooth and crop to a multiple of 8 frames."""
    from .network import DOWNSAMPLE
    from .retarget import crop_to_multiple
    from .skeleton import gaussian_smooth, fill_gaps, load_sequence

    path = Path(path)
    if not path.exists():
        raise CommandError("missing_file", f"{path} does not exist")
    seq = load_sequence(path)
    if seq.dim != 2:
        raise CommandError("bad_input", f"{path}: expected 2D joints, got {seq.dim}D")
    x = fill_gaps(seq.data) if seq.has_missing else seq.data
    if sigma:
        x = gaussian_smooth(x, sigma)
    if x.shape[0] % DOWNSAMPLE:
        T = (x.shape[0] // DOWNSAMPLE) * DOWNSAMPLE
        warnings.warn(f"{path.name}: {x.shape[0]} frames is not a multiple of {DOWNSAMPLE}; "
                      f"cropping to {T}", stacklevel=2)
        x = crop_to_multiple(x, DOWNSAMPLE)
    return x


def _write_sequence(x: np.ndarray, path, meta: dict | None = None) -> None:
    from .skeleton import SkeletonSequence, save_sequence

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_sequence(SkeletonSequence(x, meta=meta or {}), path)


def _load_model(path):
    from .retarget import MotionRetargeter

    if not Path(path).exists():
        raise CommandError("missing_file", f"checkpoint {path} does not exist")
    return MotionRetargeter.load(path)


_ANGLE = re.compile(r"^(?:(\d*\.?\d+)\s*\*?\s*)?pi(?:\s*/\s*(\d*\.?\d+))?$")


def parse_angle(text: str) -> float:
    """A float in radians or a multiple of pi such as ``3*pi/4``."""
    tok = text.strip().lower()
    m = _ANGLE.match(tok)
    try:
        if m:
            return float(m.group(1) or 1.0) * math.pi / float(m.group(2) or 1.0)
        return float(tok)
    except (ValueError, ZeroDivisionError):
        raise CommandError("bad_argument", f"cannot parse angle {text!r}") from None


def _parse_angles(text: str) -> list[float]:
    return [parse_angle(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------- commands
def cmd_gen_data(args, config: dict) -> dict:
    from .synth import bench_specs, dataset_checksum, write_dataset

    opts = {"n_characters": args.characters, "n_frames": args.frames, "seed": args.seed, **config.get("data", {})}
    specs = bench_specs(**opts)
    ds = write_dataset(specs, args.out)
    return {"sequences": len(ds), "checksum": dataset_checksum(args.out), "out": str(args.out)}


def cmd_train(args, config: dict) -> dict:
    from .synth import read_dataset
    from .training import TrainConfig, Trainer, save_model

    overrides = dict(config.get("train", {}))
    overrides["seed"] = args.seed
    for key in ("steps", "batch_size", "checkpoint_every"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    overrides["dataset"] = str(args.data)
    overrides.setdefault("log_every", 100)
    base = TrainConfig.desk() if args.profile == "desk" else TrainConfig.full()
    cfg = TrainConfig.from_dict({**base.to_dict(), **overrides})
    if not Path(args.data).exists():
        raise CommandError("missing_file", f"dataset {args.data} does not exist")
    ds = read_dataset(args.data)
    if args.resume:
        trainer = Trainer.restore(args.resume, ds.sequences, cfg)
    else:
        trainer = Trainer(cfg, ds.sequences)
    log_dir = _log_dir()
    log_path = args.log or (log_dir / "train_log.csv" if log_dir else None)
    ckpt_dir = None
    if cfg.checkpoint_every:
        if log_dir is None:
            raise CommandError("bad_argument", "periodic checkpoints are written under $MOMO_LOG_DIR; set it")
        ckpt_dir = log_dir / "checkpoints"
    remaining = max(0, cfg.steps - trainer.step_count)
    trainer.fit(remaining, log_path=log_path, checkpoint_dir=ckpt_dir)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    if args.save_trainer:
        trainer.save(args.out)
    else:
        save_model(trainer.net, args.out, cfg, {"step": trainer.step_count})
    last = trainer.history[-1] if trainer.history else {}
    return {"steps": trainer.step_count, "out": str(args.out), "final_total": last.get("total")}


def cmd_retarget(args, config: dict) -> dict:
    from .evaluation import mse

    model = _load_model(args.checkpoint)
    src = load_input(args.source, args.sigma)
    tgt = load_input(args.target, args.sigma)
    angle = parse_angle(args.angle)
    out = model.retarget(src, tgt, angle)
    _write_sequence(out, args.out, {"source": str(args.source), "target": str(args.target), "angle": angle})
    result = {"out": str(args.out), "frames": int(out.shape[0])}
    if args.ground_truth:
        result["mse"] = mse(out, load_input(args.ground_truth, args.sigma)[: out.shape[0]])
    if args.plot:
        from .plotting import plot_overlay

        plot_overlay(args.plot, {"source": src, "retargeted": out},
                     title="stick-figure preview (not a rendered video)")
        result["plot"] = str(args.plot)
    return result


def cmd_view(args, config: dict) -> dict:
    model = _load_model(args.checkpoint)
    x = load_input(args.input, args.sigma)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    views = {}
    for i, angle in enumerate(_parse_angles(args.angles)):
        y = model.novel_view(x, angle)
        path = out_dir / f"view_{i:02d}.json"
        _write_sequence(y, path, {"angle": angle})
        files.append(str(path))
        views[f"{angle:.3f} rad"] = y
    if args.plot:
        from .plotting import plot_overlay

        plot_overlay(out_dir / "views.png", {"input": x, **views}, title="novel views (stick figures)")
    return {"files": files}


def cmd_interpolate(args, config: dict) -> dict:
    model = _load_model(args.checkpoint)
    a, b = load_input(args.a, args.sigma), load_input(args.b, args.sigma)
    T = min(a.shape[0], b.shape[0])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = np.linspace(0.0, 1.0, args.grid)
    files = []
    for i, tm in enumerate(steps):
        for j, ts in enumerate(steps):
            y = model.interpolate(a[:T], b[:T], float(tm), float(ts))
            path = out_dir / f"interp_m{i}_s{j}.json"
            _write_sequence(y, path, {"t_motion": float(tm), "t_structure": float(ts)})
            files.append(str(path))
    return {"files": files}


def cmd_eval(args, config: dict) -> dict:
    from .evaluation import BASELINES, disentanglement_probe, run_bench
    from .synth import heldout_pairs

    pairs = heldout_pairs(seed=args.pairs_seed)
    if args.baseline:
        if args.baseline not in BASELINES:
            raise CommandError("bad_argument", f"unknown baseline {args.baseline!r}; known: {sorted(BASELINES)}")
        method, retrieval = args.baseline, None
    elif args.checkpoint:
        method = _load_model(args.checkpoint)
        retrieval = None
        if args.data:
            from .synth import read_dataset

            ds = read_dataset(args.data)
            T = min(len(s) for s in ds.sequences) // 8 * 8
            retrieval = disentanglement_probe(method, [s[:T] for s in ds.sequences],
                                              ds.labels("character"), ds.labels("motion"))
    else:
        raise CommandError("bad_argument", "eval needs --checkpoint or --baseline")
    cfg = {"pairs_seed": args.pairs_seed, "method": args.baseline or str(Path(args.checkpoint).name)}
    report = run_bench(method, pairs, cfg, out_dir=args.out, plots=not args.no_plots, retrieval=retrieval)
    return {"mse": report.mse, "mae": report.mae, "baselines": report.baselines, "out": str(args.out)}


def cmd_gradcheck(args, config: dict) -> dict:
    from .gradient_suite import TOLERANCE, run_suite

    results = run_suite(seed=args.seed, corrupt=args.corrupt, max_coords=args.max_coords, log=print)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CommandError("gradcheck_failed", f"relative error above {TOLERANCE:g} in: {', '.join(failed)}")
    return {"checked": len(results), "max_error": max(r.error for r in results)}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "retarget": cmd_retarget,
    "view": cmd_view,
    "interpolate": cmd_interpolate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="momo", description="Unsupervised 2D skeleton motion retargeting.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with optional 'train' and 'data' sections")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write the synthetic benchmark dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--characters", type=int, default=8)
    g.add_argument("--frames", type=int, default=128)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--profile", choices=("desk", "full"), default="desk")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", help="trainer checkpoint to continue from")
    t.add_argument("--save-trainer", action="store_true", help="write a resumable trainer checkpoint")
    t.add_argument("--log", help="CSV loss log (default: $MOMO_LOG_DIR/train_log.csv)")

    def sigma(q):
        q.add_argument("--sigma", type=float, default=0.0, help="temporal Gaussian smoothing (frames)")

    r = sub.add_parser("retarget", help="move the source motion onto the target's skeleton")
    r.add_argument("--source", required=True)
    r.add_argument("--target", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--angle", default="0", help="radians, or a multiple of pi such as pi/2")
    r.add_argument("--out", required=True)
    r.add_argument("--plot", help="optional stick-figure PNG strip")
    r.add_argument("--ground-truth", help="report MSE against this sequence")
    sigma(r)

    v = sub.add_parser("view", help="render a sequence from rotated viewpoints")
    v.add_argument("--input", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--angles", default="pi/4,pi/2,3*pi/4")
    v.add_argument("--out", required=True, help="output directory")
    v.add_argument("--plot", action="store_true")
    sigma(v)

    i = sub.add_parser("interpolate", help="grid over motion and structure code blends")
    i.add_argument("--a", required=True)
    i.add_argument("--b", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--grid", type=int, default=3)
    i.add_argument("--out", required=True, help="output directory")
    sigma(i)

    e = sub.add_parser("eval", help="score a model or baseline on held-out ground-truth pairs")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline")
    e.add_argument("--data", help="dataset directory for the retrieval probe")
    e.add_argument("--pairs-seed", type=int, default=1234)
    e.add_argument("--out", required=True)
    e.add_argument("--no-plots", action="store_true")

    c = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    c.add_argument("--corrupt", help="test hook: deliberately break one item's backward")
    c.add_argument("--max-coords", type=int, default=3)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging()
    try:
        config = _read_config(args.config)
        if args.command == "interpolate" and args.grid < 1:
            raise CommandError("bad_argument", "--grid must be at least 1")
        result = COMMANDS[args.command](args, config)
    except CommandError as exc:
        _emit_error(exc.kind, str(exc), args.command)
        return 1
    except (ValueError, OSError, FloatingPointError) as exc:
        _emit_error(type(exc).__name__, str(exc), args.command)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
