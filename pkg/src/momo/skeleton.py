"""Skeleton topology, limb scaling, rotate-and-project, and sequence preprocessing.

Sequences are numpy arrays shaped ``(T, N, 2)`` or ``(T, N, 3)``; most functions
also accept extra leading batch axes.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DegenerateLimbWarning(UserWarning):
    """Raised when a limb has zero length in some frames and cannot be rescaled."""


class DegenerateAxisWarning(UserWarning):
    """Raised when the body axis cannot be estimated and the default is used."""


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    names: tuple[str, ...]
    parent: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.parent):
            raise ValueError("names and parent must have the same length")
        roots = [i for i, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"topology must have exactly one root, found {len(roots)}")
        # every joint must reach the root without revisiting a joint
        for j in range(len(self.parent)):
            seen, k = set(), j
            while self.parent[k] >= 0:
                if k in seen:
                    raise ValueError(f"parent links contain a cycle through joint {j}")
                seen.add(k)
                k = self.parent[k]
                if not 0 <= k < len(self.parent):
                    raise ValueError(f"joint {j} has an out-of-range ancestor")

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    @property
    def limbs(self) -> list[tuple[int, int]]:
        """``(parent, child)`` pairs ordered by child index."""
        return [(p, c) for c, p in enumerate(self.parent) if p >= 0]

    @property
    def n_limbs(self) -> int:
        return self.n_joints - 1

    def index(self, name: str) -> int:
        return self.names.index(name)

    def topological_order(self) -> list[int]:
        order, frontier = [], [self.root]
        while frontier:
            j = frontier.pop(0)
            order.append(j)
            frontier.extend(c for c, p in enumerate(self.parent) if p == j)
        return order


DEFAULT_TOPOLOGY = SkeletonTopology(
    name="body15",
    names=(
        "pelvis", "neck", "head",
        "r_shoulder", "r_elbow", "r_wrist",
        "l_shoulder", "l_elbow", "l_wrist",
        "r_hip", "r_knee", "r_ankle",
        "l_hip", "l_knee", "l_ankle",
    ),
    parent=(-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13),
)

TOPOLOGIES = {DEFAULT_TOPOLOGY.name: DEFAULT_TOPOLOGY}


def get_topology(name: str) -> SkeletonTopology:
    try:
        return TOPOLOGIES[name]
    except KeyError:
        raise ValueError(f"unknown topology {name!r}; known: {sorted(TOPOLOGIES)}") from None


# --------------------------------------------------------------------- limbs
def limb_vectors(x: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """``(..., T, L, D)`` child-minus-parent vectors in :attr:`SkeletonTopology.limbs` order."""
    parents, children = zip(*topology.limbs)
    return x[..., list(children), :] - x[..., list(parents), :]


def limb_lengths(x: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    return np.linalg.norm(limb_vectors(x, topology), axis=-1)


def scale_limbs(x: np.ndarray, local_scales, global_scale: float = 1.0,
                topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """Rescale every limb of every frame, moving each subtree rigidly along its limb.

    ``local_scales`` has one factor per limb (in ``topology.limbs`` order) and may
    carry leading batch axes matching ``x``'s (one factor set per sequence). The
    root stays put; afterwards all coordinates are multiplied by ``global_scale``.
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(local_scales, dtype=np.float64)
    if gamma.shape[-1] != topology.n_limbs:
        raise ValueError(f"expected {topology.n_limbs} local scales, got {gamma.shape[-1]}")
    if np.any(gamma <= 0) or np.any(np.asarray(global_scale) <= 0):
        raise ValueError("scale factors must be positive")
    if x.shape[-2] != topology.n_joints:
        raise ValueError(f"expected {topology.n_joints} joints, got {x.shape[-2]}")

    # shift[j]: accumulated translation of joint j from all ancestor limbs
    shift = np.zeros_like(x)
    root = topology.root
    limb_of = {c: k for k, (_, c) in enumerate(topology.limbs)}
    degenerate = 0
    for j in topology.topological_order():
        if j == root:
            continue
        p = topology.parent[j]
        d = x[..., j, :] - x[..., p, :]
        g = gamma[..., limb_of[j]]
        # per-sequence factors broadcast over (T, D)
        g = np.asarray(g)[..., None, None] if np.ndim(g) else g
        shift[..., j, :] = shift[..., p, :] + (g - 1.0) * d
        degenerate += int(np.count_nonzero(~np.any(d, axis=-1)))
    out = x + shift
    if degenerate:
        warnings.warn(f"{degenerate} zero-length limb instance(s) left untranslated",
                      DegenerateLimbWarning, stacklevel=2)
    g_glob = np.asarray(global_scale, dtype=np.float64)
    if g_glob.ndim:
        g_glob = g_glob[..., None, None, None]
    return out * g_glob


# ------------------------------------------------------------------ rotation
def rodrigues(axis, theta: float) -> np.ndarray:
    """Rotation by ``theta`` radians about unit ``axis`` (right-hand rule)."""
    n = np.asarray(axis, dtype=np.float64)
    if n.shape != (3,):
        raise ValueError(f"axis must be a 3-vector, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be unit length, |n| = {np.linalg.norm(n)!r}")
    c, s = math.cos(theta), math.sin(theta)
    cross = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(n, n)


def rotation_angles(k: int) -> np.ndarray:
    """The ``k`` evenly spaced angles ``j / (k + 1) * pi`` for ``j = 1..k``."""
    if k < 1:
        raise ValueError("K must be >= 1")
    return np.arange(1, k + 1) / (k + 1) * np.pi


def projection_matrix(axis, theta: float) -> np.ndarray:
    """First two rows of the rotation: the 2x3 rotate-and-drop-depth map."""
    return rodrigues(axis, theta)[:2]


def rotate_project(X: np.ndarray, theta: float, axis=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rotate 3D joints about ``axis`` by ``theta`` and keep the (x, y) components."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != 3:
        raise ValueError(f"expected 3D joints, got trailing dimension {X.shape[-1]}")
    if theta == 0:
        return X[..., :2].copy()
    return X @ projection_matrix(axis, theta).T


def body_axis(X: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY,
              return_flag: bool = False):
    """Per-sequence vertical body direction from shoulders and hips.

    Each frame contributes ``normalize(mid(shoulders) - mid(hips))``; the result
    is the normalised mean over frames. Falls back to ``(0, 1, 0)`` when no frame
    gives a usable direction.
    """
    X = np.asarray(X, dtype=np.float64)
    ls, rs = topology.index("l_shoulder"), topology.index("r_shoulder")
    lh, rh = topology.index("l_hip"), topology.index("r_hip")
    up = 0.5 * (X[..., ls, :] + X[..., rs, :]) - 0.5 * (X[..., lh, :] + X[..., rh, :])
    norms = np.linalg.norm(up, axis=-1, keepdims=True)
    unit = np.divide(up, norms, out=np.zeros_like(up), where=norms > 1e-12)
    mean = unit.mean(axis=-2)
    length = np.linalg.norm(mean, axis=-1, keepdims=True)
    degenerate = length[..., 0] <= 1e-12
    default = np.zeros_like(mean)
    default[..., 1] = 1.0
    axis = np.where(degenerate[..., None], default, mean / np.where(length > 1e-12, length, 1.0))
    if np.any(degenerate):
        warnings.warn("degenerate body axis; using (0, 1, 0)", DegenerateAxisWarning, stacklevel=2)
    if return_flag:
        return axis, degenerate
    return axis


# ------------------------------------------------------------- preprocessing
def fill_gaps(raw: np.ndarray) -> np.ndarray:
    """Replace missing (NaN) joints with the value at the nearest valid frame.

    Ties go to the earlier frame. A joint missing from every frame is an error.
    """
    raw = np.array(raw, dtype=np.float64)
    T = raw.shape[0]
    missing = np.any(np.isnan(raw), axis=-1)  # (T, N)
    out = raw.copy()
    frames = np.arange(T)
    for j in range(raw.shape[1]):
        valid = np.flatnonzero(~missing[:, j])
        if valid.size == 0:
            raise ValueError(f"joint {j} is never observed")
        if valid.size == T:
            continue
        pos = np.searchsorted(valid, frames)
        before = valid[np.clip(pos - 1, 0, valid.size - 1)]
        after = valid[np.clip(pos, 0, valid.size - 1)]
        take_after = np.abs(after - frames) < np.abs(frames - before)
        src = np.where(take_after, after, before)
        out[:, j] = raw[src, j]
    return out


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    radius = int(math.ceil(truncate * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(x: np.ndarray, sigma: float = 2.0, truncate: float = 4.0) -> np.ndarray:
    """Temporal Gaussian smoothing along axis 0.

    Near the ends only in-range samples contribute and their weights are
    renormalised, so constant signals are preserved exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if sigma <= 0:
        return x.copy()
    k = gaussian_kernel(sigma, truncate)
    r = len(k) // 2
    T = x.shape[0]
    flat = x.reshape(T, -1)
    out = np.empty_like(flat)
    for t in range(T):
        lo, hi = max(0, t - r), min(T, t + r + 1)
        w = k[lo - t + r : hi - t + r]
        out[t] = w @ flat[lo:hi] / w.sum()
    return out.reshape(x.shape)


def preprocess(raw: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Gap filling followed by temporal smoothing."""
    return gaussian_smooth(fill_gaps(raw), sigma)


# ------------------------------------------------------------- normalisation
@dataclass(frozen=True)
class Normalization:
    offset: np.ndarray
    scale: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.offset) / self.scale

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.scale + self.offset


def fit_normalization(x: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> Normalization:
    """Mean pelvis to the origin, mean shoulder-midpoint-to-pelvis distance to 1."""
    x = np.asarray(x, dtype=np.float64)
    root = topology.root
    mid = 0.5 * (x[:, topology.index("l_shoulder")] + x[:, topology.index("r_shoulder")])
    torso = float(np.linalg.norm(mid - x[:, root], axis=-1).mean())
    if not torso > 1e-12:
        raise ValueError("cannot normalise: shoulders coincide with pelvis in every frame")
    return Normalization(offset=x[:, root].mean(axis=0), scale=torso)


def normalize(x: np.ndarray, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> tuple[np.ndarray, Normalization]:
    norm = fit_normalization(x, topology)
    return norm.apply(x), norm


# ----------------------------------------------------------------- file I/O
@dataclass
class SkeletonSequence:
    """A 2D or 3D joint sequence with its topology name and frame rate."""

    data: np.ndarray
    fps: float = 30.0
    topology: str = DEFAULT_TOPOLOGY.name
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        topo = get_topology(self.topology)
        if self.data.ndim != 3 or self.data.shape[1] != topo.n_joints or self.data.shape[2] not in (2, 3):
            raise ValueError(f"expected (T, {topo.n_joints}, 2|3) joints, got {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.data).any())

    def to_json(self) -> dict:
        frames = [[None if np.isnan(p).any() else [float(v) for v in p] for p in frame]
                  for frame in self.data]
        out = {"topology": self.topology, "fps": self.fps, "frames": frames}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonSequence":
        for key in ("topology", "frames"):
            if key not in obj:
                raise ValueError(f"sequence JSON lacks field {key!r}")
        topo = get_topology(obj["topology"])
        frames = obj["frames"]
        if not frames:
            raise ValueError("sequence JSON has no frames")
        dims = {len(p) for f in frames for p in f if p is not None}
        if len(dims) > 1 or (dims and dims.pop() not in (2, 3)):
            raise ValueError("joint entries must all be [x, y] or all be [x, y, z]")
        dim = next((len(p) for f in frames for p in f if p is not None), 2)
        data = np.full((len(frames), topo.n_joints, dim), np.nan)
        for t, frame in enumerate(frames):
            if len(frame) != topo.n_joints:
                raise ValueError(f"frame {t} has {len(frame)} joints, expected {topo.n_joints}")
            for j, p in enumerate(frame):
                if p is not None:
                    data[t, j] = p
        return cls(data=data, fps=float(obj.get("fps", 30.0)), topology=topo.name, meta=obj.get("meta", {}))


def save_sequence(seq: SkeletonSequence, path) -> None:
    Path(path).write_text(json.dumps(seq.to_json(), separators=(",", ":")))


def load_sequence(path) -> SkeletonSequence:
    return SkeletonSequence.from_json(json.loads(Path(path).read_text()))
