"""Unsupervised training: perturbation sampling, alternating adversarial updates,
checkpointing and CSV logging."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Tensor, concat, project_joints
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .losses import (
    COMPONENTS,
    LossWeights,
    cross_reconstruction_loss,
    discriminator_loss,
    generator_loss,
    l1_mean,
    reconstruction_loss,
    sample_pairs,
    all_pairs,
    total_loss,
    triplet_loss,
)
from .network import DOWNSAMPLE, ArchConfig, RetargetNet
from .skeleton import DEFAULT_TOPOLOGY, body_axis, normalize, projection_matrix, rotation_angles, scale_limbs

log = logging.getLogger(__name__)

LOG_FIELDS = ("step",) + COMPONENTS + ("d_loss", "total")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200_000
    batch_size: int = 64
    learning_rate: float = 2e-4
    scale_range: tuple[float, float] = (0.5, 2.0)
    clip_length: int = 64
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    dataset: str | None = None
    d_updates: int = 1
    symmetric_rotation: bool = True
    triplet_mode: str = "sampled"
    weights: LossWeights = field(default_factory=LossWeights)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.clip_length % DOWNSAMPLE:
            raise ValueError(f"clip_length must be divisible by {DOWNSAMPLE}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if self.triplet_mode not in ("sampled", "all"):
            raise ValueError("triplet_mode must be 'sampled' or 'all'")
        if self.batch_size < 1 or self.steps < 0 or self.d_updates < 0:
            raise ValueError("batch_size must be >= 1, steps and d_updates >= 0")
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))

    @property
    def K(self) -> int:
        return self.weights.K

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """5000 short steps on one CPU core. The adversarial weight is off here: over so
        few steps the discriminator game only costs reconstruction and retargeting accuracy."""
        return cls(**{"steps": 5000, "batch_size": 16, "clip_length": 64,
                      "weights": LossWeights(adv=0.0), **overrides})

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        d["arch"] = self.arch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "arch" in d and isinstance(d["arch"], dict):
            d["arch"] = ArchConfig.from_dict(d["arch"])
        if "scale_range" in d:
            d["scale_range"] = tuple(d["scale_range"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ------------------------------------------------------------------ batches
def to_channels(x: np.ndarray) -> np.ndarray:
    """``(B, T, N, D)`` joints -> ``(B, D*N, T)`` channel-major network layout."""
    B, T, N, D = x.shape
    return np.ascontiguousarray(x.reshape(B, T, N * D).transpose(0, 2, 1))


def from_channels(x: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of :func:`to_channels`."""
    B, C, T = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(B, T, C // dim, dim)


@dataclass
class Batch:
    x: np.ndarray
    x_prime: np.ndarray
    local_scales: np.ndarray
    global_scales: np.ndarray
    index: np.ndarray
    start: np.ndarray


def sample_batch(sequences: Sequence[np.ndarray], cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Random ``clip_length`` crops and their limb-scaled twins.

    Every sequence gets fresh local and global factors drawn uniformly from
    ``cfg.scale_range``. Sequences shorter than the clip are never drawn.
    """
    T = cfg.clip_length
    usable = np.array([i for i, s in enumerate(sequences) if s.shape[0] >= T])
    if usable.size == 0:
        raise ValueError(f"no sequence has at least {T} frames")
    B = cfg.batch_size
    idx = usable[rng.integers(usable.size, size=B)]
    starts = np.array([rng.integers(sequences[i].shape[0] - T + 1) for i in idx])
    x = np.stack([sequences[i][s : s + T] for i, s in zip(idx, starts)])
    lo, hi = cfg.scale_range
    local = rng.uniform(lo, hi, size=(B, DEFAULT_TOPOLOGY.n_limbs))
    glob = rng.uniform(lo, hi, size=B)
    x_prime = scale_limbs(x, local, glob)
    return Batch(x, x_prime, local, glob, idx, starts)


def rotation_maps(X3d: np.ndarray, K: int) -> np.ndarray:
    """``(K, B, 2, 3)`` rotate-and-project maps about each sequence's body axis."""
    axes = body_axis(X3d)
    out = np.empty((K, X3d.shape[0], 2, 3))
    for k, theta in enumerate(rotation_angles(K)):
        for b, n in enumerate(axes):
            out[k, b] = projection_matrix(n, theta)
    return out


# --------------------------------------------------------------------- step
PairFn = Callable[[int, int], tuple[np.ndarray, np.ndarray]]


def generator_terms(net: RetargetNet, x: np.ndarray, xp: np.ndarray, weights: LossWeights, pairs: PairFn,
                    symmetric: bool = True, maps: np.ndarray | None = None):
    """Every generator-side loss term except the adversarial one, for one batch.

    ``x`` and ``xp`` are channel-major ``(B, 2N, T)`` arrays (input and its limb-scaled
    twin). ``maps`` overrides the ``(K, S*B, 2, 3)`` rotate-and-project maps, which
    are otherwise computed from the detached reconstructions. Returns the
    component dict, the rotated projections (still attached to the graph), the
    real sequences for the discriminator and the maps used.
    """
    K = weights.K
    B = x.shape[0]
    codes = net.encode(Tensor(np.concatenate([x, xp])))
    m, s, v = codes.motion, codes.structure, codes.view
    m_x, m_p = m[:B], m[B:]
    s_x, s_p = s[:B], s[B:]
    v_x, v_p = v[:B], v[B:]

    # self reconstructions of x and x', then the two cross reconstructions
    X = net.decode(concat([m_x, m_p, m_p, m_x]), concat([s_x, s_p, s_x, s_p]),
                   concat([v_x, v_p, v_x, v_p]))
    X_x, X_p, X_cross, X_cross_p = X[:B], X[B : 2 * B], X[2 * B : 3 * B], X[3 * B :]

    comps: dict[str, Tensor] = {}
    if symmetric:
        comps["rec"] = 0.5 * (reconstruction_loss(x, X_x) + reconstruction_loss(xp, X_p))
    else:
        comps["rec"] = reconstruction_loss(x, X_x)
    comps["crs"] = cross_reconstruction_loss(x, xp, X_cross, X_cross_p)
    comps["inv_m_s"] = l1_mean(m_x, m_p)
    comps["inv_v"] = l1_mean(v_x, v_p)
    M = codes.structure_seq.shape[2]
    comps["trip_s"] = triplet_loss(codes.structure_seq[:B], codes.structure_seq[B:], pairs(B, M),
                                   weights.margin)

    # rotated projections of the reconstructions of x (and x')
    S = 2 if symmetric else 1
    X_src = X[: S * B]
    if maps is None:
        maps = rotation_maps(from_channels(X_src.data, 3), K)
    rotated = project_joints(concat([X_src] * K), maps.reshape(K * S * B, 2, 3))
    rcodes = net.encode(rotated)

    def repeat(t: Tensor) -> Tensor:
        return concat([t[: S * B]] * K)

    comps["inv_m_v"] = l1_mean(repeat(m), rcodes.motion)
    comps["inv_s"] = l1_mean(repeat(s), rcodes.structure)
    comps["trip_v"] = triplet_loss(repeat(codes.view_seq), rcodes.view_seq, pairs(K * S * B, M),
                                   weights.margin)
    real = np.concatenate([x, xp][:S])
    return comps, rotated, real, maps


@dataclass
class StepResult:
    components: dict[str, float]
    d_loss: float
    total: float

    def row(self, step: int) -> dict:
        return {"step": step, **self.components, "d_loss": self.d_loss, "total": self.total}


class Trainer:
    """Owns the model, both optimisers and the sampling RNG."""

    def __init__(self, cfg: TrainConfig, sequences: Sequence[np.ndarray], net: RetargetNet | None = None):
        self.cfg = cfg
        # every clip is centred and scaled to unit torso length once, up front
        self.sequences = [normalize(np.asarray(s, dtype=np.float64))[0] for s in sequences]
        if not self.sequences:
            raise ValueError("empty training set")
        self.net = net if net is not None else RetargetNet(cfg.arch, seed=cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.opt_g = Adam(self.net.generator_params(), lr=cfg.learning_rate)
        self.opt_d = Adam(self.net.discriminator_params(), lr=cfg.learning_rate)
        self.step_count = 0
        self.history: list[dict] = []

    # -------------------------------------------------------------- forward
    def _pairs(self, batch: int, length: int):
        if self.cfg.triplet_mode == "all":
            return all_pairs(batch, length)
        return sample_pairs(batch, length, self.rng)

    def generator_forward(self, batch: Batch) -> tuple[dict[str, Tensor], Tensor, np.ndarray]:
        return generator_terms(self.net, to_channels(batch.x), to_channels(batch.x_prime), self.cfg.weights,
                               self._pairs, self.cfg.symmetric_rotation)[:3]

    # ----------------------------------------------------------------- step
    def train_step(self, batch: Batch | None = None) -> StepResult:
        cfg, net = self.cfg, self.net
        if batch is None:
            batch = sample_batch(self.sequences, cfg, self.rng)
        comps, rotated, real = self.generator_forward(batch)
        fake = rotated.data

        # (1) discriminator on real vs detached fakes
        d_value = float("nan")
        for _ in range(cfg.d_updates):
            self.opt_d.zero_grad()
            d_loss = discriminator_loss(net.discriminate(Tensor(real)), net.discriminate(Tensor(fake)))
            d_value = d_loss.item()
            if not np.isfinite(d_value):
                raise FloatingPointError(f"discriminator loss is {d_value} at step {self.step_count}")
            d_loss.backward()
            self.opt_d.step()

        # (2) generator / encoders, adversarial term through the updated discriminator
        comps["adv"] = generator_loss(net.discriminate(rotated))
        total = total_loss(comps, cfg.weights)
        values = {k: comps[k].item() for k in COMPONENTS}
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}: {values}")
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()
        self.opt_d.zero_grad()
        self.step_count += 1
        result = StepResult(values, d_value, total.item())
        self.history.append(result.row(self.step_count))
        return result

    def fit(self, steps: int | None = None, log_path=None, checkpoint_dir=None,
            callback: Callable[[int, StepResult], None] | None = None) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        writer = None
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            new = not log_path.exists() or self.step_count == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                writer.writeheader()
        try:
            for _ in range(steps):
                res = self.train_step()
                if writer is not None:
                    writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v)
                                     for k, v in res.row(self.step_count).items()})
                if self.cfg.log_every and self.step_count % self.cfg.log_every == 0:
                    log.info("step %d total %.4f rec %.4f crs %.4f d %.4f", self.step_count, res.total,
                             res.components["rec"], res.components["crs"], res.d_loss)
                if (checkpoint_dir is not None and self.cfg.checkpoint_every
                        and self.step_count % self.cfg.checkpoint_every == 0):
                    self.save(Path(checkpoint_dir) / f"train_{self.step_count:07d}.ckpt")
                if callback is not None:
                    callback(self.step_count, res)
        finally:
            if fh is not None:
                fh.close()
        return self.history

    # ----------------------------------------------------------- checkpoints
    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.net.state_dict().items()}
        arrays.update({f"adam_g/{k}": v for k, v in self.opt_g.state_arrays().items()})
        arrays.update({f"adam_d/{k}": v for k, v in self.opt_d.state_arrays().items()})
        meta = {
            "kind": "trainer",
            "arch": self.cfg.arch.to_dict(),
            "config": self.cfg.to_dict(),
            "step": self.step_count,
            "adam_steps": [self.opt_g.state.step, self.opt_d.state.step],
            "rng_state": _jsonable_rng_state(self.rng),
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def restore(cls, path, sequences: Sequence[np.ndarray], cfg: TrainConfig | None = None) -> "Trainer":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "trainer":
            raise CheckpointError(f"{path}: not a trainer checkpoint (kind={meta.get('kind')!r})")
        saved_cfg = TrainConfig.from_dict(meta["config"])
        cfg = cfg or saved_cfg
        if cfg.arch != saved_cfg.arch:
            raise CheckpointError(f"{path}: architecture mismatch: {_arch_diff(saved_cfg.arch, cfg.arch)}")
        params = {k[len("param/"):]: Tensor(v, requires_grad=True, name=k[len("param/"):])
                  for k, v in arrays.items() if k.startswith("param/")}
        trainer = cls(cfg, sequences, RetargetNet(cfg.arch, params))
        g_steps, d_steps = meta["adam_steps"]
        trainer.opt_g.load_state_arrays({k[len("adam_g/"):]: v for k, v in arrays.items()
                                         if k.startswith("adam_g/")}, g_steps)
        trainer.opt_d.load_state_arrays({k[len("adam_d/"):]: v for k, v in arrays.items()
                                         if k.startswith("adam_d/")}, d_steps)
        trainer.step_count = int(meta["step"])
        trainer.rng.bit_generator.state = meta["rng_state"]
        return trainer


def _jsonable_rng_state(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state, default=int))


def _arch_diff(a: ArchConfig, b: ArchConfig) -> str:
    da, db = a.to_dict(), b.to_dict()
    return ", ".join(f"{k}: checkpoint={da[k]} requested={db[k]}" for k in da if da[k] != db[k])


# ----------------------------------------------------------- model files
MODEL_CARD_KEYS = ("arch", "train_config", "n_parameters", "description")


def save_model(net: RetargetNet, path, train_config: TrainConfig | None = None, extra: dict | None = None) -> None:
    card = {
        "kind": "model",
        "arch": net.config.to_dict(),
        "n_parameters": net.n_parameters(),
        "description": "2D skeleton motion retargeting autoencoder (motion/structure/view codes)",
        "input_layout": "(B, 2N, T) channels x0,y0,x1,y1,...; T divisible by 8",
        "output_layout": "(B, 3N, T) channels x0,y0,z0,...",
    }
    if train_config is not None:
        card["train_config"] = train_config.to_dict()
    if extra:
        card.update(extra)
    save_arrays(path, net.state_dict(), card)


def load_model(path, expected_arch: ArchConfig | None = None) -> tuple[RetargetNet, dict]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") == "trainer":
        arrays = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    elif meta.get("kind") != "model":
        raise CheckpointError(f"{path}: unknown checkpoint kind {meta.get('kind')!r}")
    arch = ArchConfig.from_dict(meta["arch"])
    if expected_arch is not None and arch != expected_arch:
        raise CheckpointError(f"{path}: architecture mismatch: {_arch_diff(arch, expected_arch)}")
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    try:
        net = RetargetNet(arch, params)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return net, meta
