"""Hip-aligned error metrics, rule-based retargeting baselines, code retrieval
probes and the benchmark report."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .skeleton import DEFAULT_TOPOLOGY, SkeletonTopology, limb_lengths, scale_limbs


# ------------------------------------------------------------------ metrics
def hip_align(x: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - x[:, topology.root : topology.root + 1]


def _aligned_pair(pred, target, topology):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return hip_align(pred, topology), hip_align(target, topology)


def mse(pred, target, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> float:
    """Mean squared joint error over all ``T * N * D`` coordinates after hip alignment."""
    a, b = _aligned_pair(pred, target, topology)
    return float(np.mean((a - b) ** 2))


def mae(pred, target, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> float:
    a, b = _aligned_pair(pred, target, topology)
    return float(np.mean(np.abs(a - b)))


# ---------------------------------------------------------------- baselines
def _mean_limb_lengths(x: np.ndarray, topology: SkeletonTopology, who: str) -> np.ndarray:
    lengths = limb_lengths(np.asarray(x, dtype=np.float64), topology).mean(axis=0)
    if np.any(lengths <= 1e-12):
        bad = [topology.names[c] for (_, c), ln in zip(topology.limbs, lengths) if ln <= 1e-12]
        raise ValueError(f"{who}: zero mean limb length for limbs ending at {bad}")
    return lengths


def limb_norm_factors(src, tgt_ref, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    return _mean_limb_lengths(tgt_ref, topology, "target") / _mean_limb_lengths(src, topology, "source")


def baseline_limb_norm(src, tgt_ref, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """Rescale every 2D limb of ``src`` to ``tgt_ref``'s average projected length."""
    return scale_limbs(np.asarray(src, dtype=np.float64), limb_norm_factors(src, tgt_ref, topology),
                       topology=topology)


def body_height(x, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> float:
    """Mean distance between the shoulder midpoint and the ankle midpoint."""
    x = np.asarray(x, dtype=np.float64)
    ix = topology.index
    shoulders = 0.5 * (x[:, ix("l_shoulder")] + x[:, ix("r_shoulder")])
    ankles = 0.5 * (x[:, ix("l_ankle")] + x[:, ix("r_ankle")])
    return float(np.linalg.norm(shoulders - ankles, axis=-1).mean())


def baseline_global_linear(src, tgt_ref, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """One scale and one translation: match mean body height and mean pelvis position."""
    src = np.asarray(src, dtype=np.float64)
    tgt_ref = np.asarray(tgt_ref, dtype=np.float64)
    h_src, h_tgt = body_height(src, topology), body_height(tgt_ref, topology)
    if h_src <= 1e-12 or h_tgt <= 1e-12:
        raise ValueError("degenerate shoulder-to-ankle extent")
    p_src = src[:, topology.root].mean(axis=0)
    p_tgt = tgt_ref[:, topology.root].mean(axis=0)
    return (src - p_src) * (h_tgt / h_src) + p_tgt


def baseline_identity(src, tgt_ref=None, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    return np.array(src, dtype=np.float64)


class _ReferenceBaseline(TransformerMixin, BaseEstimator):
    """Fit on the target reference clip, then transform source clips."""

    _fn: Callable = staticmethod(baseline_identity)

    def __init__(self, topology: SkeletonTopology = DEFAULT_TOPOLOGY):
        self.topology = topology

    def fit(self, tgt_ref, y=None):
        tgt_ref = np.asarray(tgt_ref, dtype=np.float64)
        if tgt_ref.ndim != 3 or tgt_ref.shape[1] != self.topology.n_joints:
            raise ValueError(f"expected (T, {self.topology.n_joints}, D) reference, got {tgt_ref.shape}")
        self.reference_ = tgt_ref
        return self

    def transform(self, src):
        check_is_fitted(self, "reference_")
        return type(self)._fn(src, self.reference_, self.topology)


class LimbNormalization(_ReferenceBaseline):
    _fn = staticmethod(baseline_limb_norm)


class GlobalLinear(_ReferenceBaseline):
    _fn = staticmethod(baseline_global_linear)


BASELINES: dict[str, Callable] = {
    "identity": baseline_identity,
    "limb_norm": baseline_limb_norm,
    "global_linear": baseline_global_linear,
}


# ------------------------------------------------------- retrieval probes
def retrieval_accuracy(codes: np.ndarray, labels: Sequence) -> float:
    """Leave-one-out 1-nearest-neighbour accuracy under cosine similarity."""
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels)
    if codes.ndim != 2 or codes.shape[0] != labels.shape[0]:
        raise ValueError(f"codes {codes.shape} do not match {labels.shape[0]} labels")
    _, counts = np.unique(labels, return_counts=True)
    if counts.size == 0 or counts.min() < 2:
        raise ValueError("every class needs at least two clips for retrieval")
    norms = np.linalg.norm(codes, axis=1, keepdims=True)
    unit = np.divide(codes, norms, out=np.zeros_like(codes), where=norms > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    nearest = np.argmax(sim, axis=1)
    return float(np.mean(labels[nearest] == labels))


def disentanglement_probe(model, sequences: Sequence[np.ndarray], characters: Sequence,
                          motions: Sequence) -> dict[str, float]:
    """Structure codes retrieve the same character; mean-pooled motion codes the same motion."""
    feats = model.transform(list(sequences))
    sl = model.feature_slices()
    return {
        "structure_character": retrieval_accuracy(feats[:, sl["structure"]], characters),
        "motion_motion": retrieval_accuracy(feats[:, sl["motion"]], motions),
    }


# ---------------------------------------------------------------- reports
@dataclass
class PairResult:
    index: int
    azimuth: float
    motion: str
    mse: float | None
    mae: float | None
    baselines: dict[str, float] = field(default_factory=dict)
    skipped: bool = False


@dataclass
class EvalReport:
    method: str
    pairs: list[PairResult]
    mse: float
    mae: float
    baselines: dict[str, float]
    n_skipped: int
    retrieval: dict[str, float]
    config: dict
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def table(self) -> str:
        names = sorted(self.baselines)
        header = ["pair", "azimuth", "motion", "mse", "mae"] + [f"{n}_mse" for n in names]
        rows = []
        for p in self.pairs:
            if p.skipped:
                rows.append([str(p.index), f"{p.azimuth:.4f}", p.motion, "skipped", "skipped"] + ["-"] * len(names))
            else:
                rows.append([str(p.index), f"{p.azimuth:.4f}", p.motion, f"{p.mse:.6f}", f"{p.mae:.6f}"]
                            + [f"{p.baselines[n]:.6f}" for n in names])
        rows.append(["mean", "", "", f"{self.mse:.6f}", f"{self.mae:.6f}"]
                    + [f"{self.baselines[n]:.6f}" for n in names])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
        lines = [f"method: {self.method}   config: {self.config_hash}", fmt(header),
                 "  ".join("-" * w for w in widths)]
        lines += [fmt(r) for r in rows]
        if self.retrieval:
            lines.append("retrieval: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(self.retrieval.items())))
        return "\n".join(lines) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _method_fn(method) -> tuple[str, Callable]:
    if isinstance(method, str):
        if method not in BASELINES:
            raise ValueError(f"unknown baseline {method!r}; choose from {sorted(BASELINES)}")
        return method, BASELINES[method]
    if hasattr(method, "retarget"):
        return "model", lambda src, ref: method.retarget(src, ref, 0.0)
    if callable(method):
        return getattr(method, "__name__", "custom"), method
    raise TypeError(f"cannot evaluate {method!r}")


def run_bench(method, pairs: Sequence, config: dict | None = None, out_dir=None, plots: bool = True,
              retrieval: dict[str, float] | None = None, baselines: Sequence[str] = tuple(BASELINES)) -> EvalReport:
    """Evaluate ``method`` (a fitted model, a baseline name or ``f(src, tgt_ref)``) on retarget pairs.

    Pairs without ground truth are skipped and counted. When ``out_dir`` is given,
    writes ``report.json``, ``report.txt``, per-pair overlay PNGs and ``timing.json``
    (wall-clock lives there so the report itself is reproducible).
    """
    if len(pairs) == 0:
        raise ValueError("empty evaluation set")
    name, fn = _method_fn(method)
    t0 = time.perf_counter()
    results, outputs = [], []
    for i, p in enumerate(pairs):
        az = float(p.motion.azimuth) if hasattr(p, "motion") else 0.0
        mname = p.motion.name if hasattr(p, "motion") else ""
        if getattr(p, "ground_truth", None) is None:
            results.append(PairResult(i, az, mname, None, None, skipped=True))
            outputs.append(None)
            continue
        out = fn(p.source, p.target_ref)
        outputs.append(out)
        base = {b: mse(BASELINES[b](p.source, p.target_ref), p.ground_truth) for b in baselines}
        results.append(PairResult(i, az, mname, mse(out, p.ground_truth), mae(out, p.ground_truth), base))
    done = [r for r in results if not r.skipped]
    if not done:
        raise ValueError("no evaluation pair has ground truth")
    config = dict(config or {})
    report = EvalReport(
        method=name,
        pairs=results,
        mse=float(np.mean([r.mse for r in done])),
        mae=float(np.mean([r.mae for r in done])),
        baselines={b: float(np.mean([r.baselines[b] for r in done])) for b in baselines},
        n_skipped=len(results) - len(done),
        retrieval=dict(retrieval or {}),
        config=config,
        config_hash=config_hash(config),
    )
    elapsed = time.perf_counter() - t0
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "report.txt").write_text(report.table())
        (out_dir / "timing.json").write_text(json.dumps({"seconds": elapsed, "pairs": len(done)}))
        if plots:
            from .plotting import plot_overlay

            for r, p, out in zip(results, pairs, outputs):
                if out is not None:
                    plot_overlay(out_dir / f"pair_{r.index:03d}.png",
                                 {"source": p.source, "retargeted": out, "ground truth": p.ground_truth},
                                 title=f"pair {r.index} ({r.motion}, azimuth {r.azimuth:.2f}) mse {r.mse:.5f}")
    return report
