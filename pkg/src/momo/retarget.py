"""High-level retargeting model with a scikit-learn style interface."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tensor
from .losses import LossWeights
from .network import DOWNSAMPLE, ArchConfig, LatentCodes, RetargetNet
from .skeleton import DEFAULT_TOPOLOGY, Normalization, body_axis, fit_normalization, rotate_project
from .training import Trainer, TrainConfig, from_channels, load_model, save_model, to_channels


def check_sequence(x, dim: int = 2, n_joints: int = DEFAULT_TOPOLOGY.n_joints, name: str = "sequence") -> np.ndarray:
    """Validate one ``(T, N, dim)`` joint sequence and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (n_joints, dim):
        raise ValueError(f"{name}: expected shape (T, {n_joints}, {dim}), got {x.shape}")
    if x.shape[0] == 0 or x.shape[0] % DOWNSAMPLE:
        raise ValueError(f"{name}: length {x.shape[0]} is not a positive multiple of {DOWNSAMPLE}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains non-finite values")
    return x


def check_sequences(X, dim: int = 2) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    seqs = [check_sequence(x, dim, name=f"sequence {i}") for i, x in enumerate(X)]
    if not seqs:
        raise ValueError("no sequences given")
    return seqs


def lerp(a, b, t: float):
    """Linear blend that returns ``a`` and ``b`` exactly at the end points."""
    return (1.0 - t) * a + t * b


class MotionRetargeter(TransformerMixin, BaseEstimator):
    """Learns motion, structure and view codes from unlabeled 2D joint sequences.

    ``fit`` trains the autoencoder; ``transform`` maps sequences to pooled code
    features ``[mean motion | structure | view]``; ``retarget`` combines the motion
    of one clip with the body and camera of another.
    """

    def __init__(self, steps: int = 5000, batch_size: int = 16, learning_rate: float = 2e-4,
                 clip_length: int = 64, scale_range=(0.5, 2.0), weights: LossWeights | None = None,
                 arch: ArchConfig | None = None, symmetric_rotation: bool = True,
                 triplet_mode: str = "sampled", seed: int = 0):
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_length = clip_length
        self.scale_range = scale_range
        self.weights = weights
        self.arch = arch
        self.symmetric_rotation = symmetric_rotation
        self.triplet_mode = triplet_mode
        self.seed = seed

    # --------------------------------------------------------------- fitting
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate,
            clip_length=self.clip_length, scale_range=tuple(self.scale_range),
            weights=self.weights or LossWeights(), arch=self.arch or ArchConfig(),
            symmetric_rotation=self.symmetric_rotation, triplet_mode=self.triplet_mode, seed=self.seed)

    def fit(self, X, y=None, log_path=None, checkpoint_dir=None):
        X = [np.asarray(x, dtype=np.float64) for x in X]
        for i, x in enumerate(X):
            if x.ndim != 3 or x.shape[2] != 2:
                raise ValueError(f"sequence {i}: expected (T, N, 2), got {x.shape}")
        cfg = self.train_config()
        trainer = Trainer(cfg, X)
        trainer.fit(log_path=log_path, checkpoint_dir=checkpoint_dir)
        self.net_ = trainer.net
        self.history_ = trainer.history
        self.train_config_ = cfg
        return self

    @classmethod
    def from_network(cls, net: RetargetNet, train_config: TrainConfig | None = None) -> "MotionRetargeter":
        cfg = train_config or TrainConfig(arch=net.config)
        est = cls(steps=cfg.steps, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                  clip_length=cfg.clip_length, scale_range=cfg.scale_range, weights=cfg.weights,
                  arch=net.config, symmetric_rotation=cfg.symmetric_rotation,
                  triplet_mode=cfg.triplet_mode, seed=cfg.seed)
        est.net_ = net
        est.history_ = []
        est.train_config_ = replace(cfg, arch=net.config)
        return est

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        save_model(self.net_, path, self.train_config_)

    @classmethod
    def load(cls, path, expected_arch: ArchConfig | None = None) -> "MotionRetargeter":
        net, meta = load_model(path, expected_arch)
        cfg = TrainConfig.from_dict(meta["train_config"] if "train_config" in meta else meta["config"]) \
            if ("train_config" in meta or "config" in meta) else None
        return cls.from_network(net, cfg)

    # ------------------------------------------------------------- encoding
    def _prepare(self, x, name="sequence") -> tuple[np.ndarray, Normalization]:
        x = check_sequence(x, 2, self.net_.config.n_joints, name)
        norm = fit_normalization(x)
        return to_channels(norm.apply(x)[None]), norm

    def encode(self, x) -> LatentCodes:
        """Codes of one sequence ``(T, N, 2)``, batch dimension of size one."""
        check_is_fitted(self, "net_")
        xc, _ = self._prepare(x)
        return self.net_.encode(Tensor(xc))

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        feats = []
        for x in check_sequences(X):
            c = self.encode(x)
            feats.append(np.concatenate([c.motion.data.mean(axis=2)[0], c.structure.data[0], c.view.data[0]]))
        return np.stack(feats)

    def feature_slices(self) -> dict[str, slice]:
        cfg = self.net_.config
        a, b = cfg.motion_dim, cfg.motion_dim + cfg.structure_dim
        return {"motion": slice(0, a), "structure": slice(a, b), "view": slice(b, b + cfg.view_dim)}

    # ------------------------------------------------------------ synthesis
    def _decode_project(self, motion, structure, view, norm: Normalization, angle: float) -> np.ndarray:
        X = self.net_.decode(motion, structure, view).data
        X3 = from_channels(X, 3)[0]
        if angle == 0:
            out = X3[..., :2].copy()
        else:
            out = rotate_project(X3, angle, body_axis(X3[None])[0])
        return norm.invert(out)

    def decode3d(self, src, tgt=None) -> np.ndarray:
        """Normalised 3D sequence ``(T, N, 3)`` carrying src's motion and tgt's codes."""
        check_is_fitted(self, "net_")
        tgt = src if tgt is None else tgt
        cs, ct = self.encode(src), self.encode(tgt)
        return from_channels(self.net_.decode(cs.motion, ct.structure, ct.view).data, 3)[0]

    def retarget(self, src, tgt, angle: float = 0.0) -> np.ndarray:
        """Motion of ``src`` on ``tgt``'s skeleton, seen from ``tgt``'s camera rotated by ``angle``."""
        check_is_fitted(self, "net_")
        xs, _ = self._prepare(src, "source")
        xt, norm_t = self._prepare(tgt, "target")
        cs = self.net_.encode(Tensor(xs))
        ct = cs if xt is xs else self.net_.encode(Tensor(xt))
        return self._decode_project(cs.motion, ct.structure, ct.view, norm_t, angle)

    def reconstruct(self, x) -> np.ndarray:
        return self.retarget(x, x, 0.0)

    def novel_view(self, x, angle: float) -> np.ndarray:
        return self.retarget(x, x, angle)

    def interpolate(self, a, b, t_motion: float, t_structure: float) -> np.ndarray:
        """Blend motion and structure codes of two equal-length clips under ``a``'s view."""
        check_is_fitted(self, "net_")
        xa, norm_a = self._prepare(a, "a")
        xb, _ = self._prepare(b, "b")
        if xa.shape != xb.shape:
            raise ValueError(f"interpolate needs equal lengths, got {xa.shape[2]} and {xb.shape[2]}")
        for t in (t_motion, t_structure):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"interpolation weight {t} outside [0, 1]")
        ca, cb = self.net_.encode(Tensor(xa)), self.net_.encode(Tensor(xb))
        m = Tensor(lerp(ca.motion.data, cb.motion.data, t_motion))
        s = Tensor(lerp(ca.structure.data, cb.structure.data, t_structure))
        return self._decode_project(m, s, ca.view, norm_a, 0.0)


def crop_to_multiple(x: np.ndarray, multiple: int = DOWNSAMPLE) -> np.ndarray:
    """Drop trailing frames so the length is a multiple of ``multiple``."""
    T = (x.shape[0] // multiple) * multiple
    if T == 0:
        raise ValueError(f"sequence of {x.shape[0]} frames is shorter than {multiple}")
    return x[:T]


__all__ = ["MotionRetargeter", "check_sequence", "check_sequences", "crop_to_multiple", "lerp"]
