"""Procedural skeleton motion with ground-truth retargeting pairs.

Characters differ only in limb proportions; motions are joint-angle trajectories
driven through forward kinematics, so the same motion on two characters shares
its angles exactly. The 2D view is an orthographic projection after rotating the
world about the vertical axis by the camera azimuth.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import DEFAULT_TOPOLOGY, SkeletonSequence, SkeletonTopology, rotate_project

LIMB_TYPES = ("spine", "neck", "clavicle", "upper_arm", "forearm", "pelvis", "thigh", "shin")

# (limb type, unit rest direction) for each non-root joint of the default topology;
# the character faces +z (towards an azimuth-0 camera), its left side is +x
_REST = {
    "neck": ("spine", (0.0, 1.0, 0.0)),
    "head": ("neck", (0.0, 1.0, 0.0)),
    "r_shoulder": ("clavicle", (-1.0, 0.0, 0.0)),
    "r_elbow": ("upper_arm", (0.0, -1.0, 0.0)),
    "r_wrist": ("forearm", (0.0, -1.0, 0.0)),
    "l_shoulder": ("clavicle", (1.0, 0.0, 0.0)),
    "l_elbow": ("upper_arm", (0.0, -1.0, 0.0)),
    "l_wrist": ("forearm", (0.0, -1.0, 0.0)),
    "r_hip": ("pelvis", (-1.0, 0.0, 0.0)),
    "r_knee": ("thigh", (0.0, -1.0, 0.0)),
    "r_ankle": ("shin", (0.0, -1.0, 0.0)),
    "l_hip": ("pelvis", (1.0, 0.0, 0.0)),
    "l_knee": ("thigh", (0.0, -1.0, 0.0)),
    "l_ankle": ("shin", (0.0, -1.0, 0.0)),
}

CANONICAL_LENGTHS = {
    "spine": 0.50, "neck": 0.20, "clavicle": 0.18, "upper_arm": 0.28,
    "forearm": 0.25, "pelvis": 0.10, "thigh": 0.42, "shin": 0.40,
}

MOTIONS = ("walk", "arm_wave", "squat", "turn", "jumping_jack", "side_bend")
# motions whose joints stay in the body's frontal plane
PLANAR_MOTIONS = ("arm_wave", "jumping_jack", "side_bend")
BASE_FREQUENCY = {"walk": 1.0, "arm_wave": 1.2, "squat": 0.5, "turn": 0.4,
                  "jumping_jack": 0.9, "side_bend": 0.5}


@dataclass(frozen=True)
class CharacterSpec:
    """Limb-length multipliers (per limb type, left/right symmetric) and overall height."""

    multipliers: tuple[float, ...] = (1.0,) * len(LIMB_TYPES)
    height: float = 1.0
    name: str = "canonical"

    def __post_init__(self):
        mult = tuple(float(m) for m in self.multipliers)
        if len(mult) != len(LIMB_TYPES):
            raise ValueError(f"expected {len(LIMB_TYPES)} multipliers, got {len(mult)}")
        if any(not 0.5 <= m <= 2.0 for m in mult):
            raise ValueError("limb multipliers must lie in [0.5, 2]")
        if not self.height > 0:
            raise ValueError("height must be positive")
        object.__setattr__(self, "multipliers", mult)

    def bone_lengths(self, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
        """Length of the bone ending at each joint (0 for the root)."""
        mult = dict(zip(LIMB_TYPES, self.multipliers))
        out = np.zeros(topology.n_joints)
        for j, name in enumerate(topology.names):
            if name in _REST:
                kind = _REST[name][0]
                out[j] = CANONICAL_LENGTHS[kind] * mult[kind] * self.height
        return out

    @classmethod
    def sample(cls, rng: np.random.Generator, name: str, low: float = 0.6, high: float = 1.6,
               height_range: tuple[float, float] = (0.8, 1.25)) -> "CharacterSpec":
        mult = tuple(float(v) for v in rng.uniform(low, high, size=len(LIMB_TYPES)))
        return cls(multipliers=mult, height=float(rng.uniform(*height_range)), name=name)

    def to_dict(self) -> dict:
        return {"name": self.name, "multipliers": list(self.multipliers), "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CharacterSpec":
        return cls(multipliers=tuple(d["multipliers"]), height=d["height"], name=d.get("name", ""))


@dataclass(frozen=True)
class MotionSpec:
    name: str
    frequency: float = 1.0
    amplitude: float = 1.0
    phase: float = 0.0
    n_frames: int = 64
    azimuth: float = 0.0
    fps: float = 30.0

    def __post_init__(self):
        if self.name not in MOTIONS:
            raise ValueError(f"unknown motion {self.name!r}; known: {MOTIONS}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")

    @classmethod
    def sample(cls, rng: np.random.Generator, name: str, n_frames: int = 64,
               azimuth: float = 0.0) -> "MotionSpec":
        return cls(name=name, frequency=BASE_FREQUENCY[name] * float(rng.uniform(0.8, 1.2)),
                   amplitude=float(rng.uniform(0.8, 1.1)), phase=float(rng.uniform(0, 2 * np.pi)),
                   n_frames=n_frames, azimuth=azimuth)

    def with_azimuth(self, azimuth: float) -> "MotionSpec":
        return MotionSpec(**{**asdict(self), "azimuth": azimuth})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MotionSpec":
        return cls(**d)


# ---------------------------------------------------------------- rotations
def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def joint_angles(motion: MotionSpec, seed: int = 0,
                 topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """Local rotations ``(T, N, 3, 3)``; entry ``j`` turns the bone ending at ``j``
    (and its subtree) relative to its parent frame; the root entry is the global
    body orientation."""
    rng = np.random.default_rng(seed)
    T = motion.n_frames
    t = np.arange(T) / motion.fps
    A = motion.amplitude
    w = 2 * np.pi * motion.frequency * t + motion.phase
    s, c = np.sin(w), np.cos(w)
    zero = np.zeros(T)
    # small seeded idle sway, scaled with amplitude so A = 0 is a static pose
    sway_phase = rng.uniform(0, 2 * np.pi, size=3)
    sway_freq = rng.uniform(0.2, 0.4, size=3)
    sway = [0.05 * A * np.sin(2 * np.pi * f * t + p) for f, p in zip(sway_freq, sway_phase)]

    ang = {name: np.broadcast_to(np.eye(3), (T, 3, 3)).copy() for name in topology.names}
    ang["neck"] = _rz(sway[0])
    ang["head"] = _rz(sway[1])
    ang["r_elbow"] = _rz(zero - 0.15 * (A > 0))
    ang["l_elbow"] = _rz(zero + 0.15 * (A > 0))

    name = motion.name
    if name == "walk":
        ang["r_knee"] = _rx(0.5 * A * s)
        ang["l_knee"] = _rx(-0.5 * A * s)
        ang["r_ankle"] = _rx(0.7 * A * np.maximum(0.0, -c))
        ang["l_ankle"] = _rx(0.7 * A * np.maximum(0.0, c))
        ang["r_elbow"] = _rx(-0.45 * A * s) @ _rz(zero - 0.15 * A)
        ang["l_elbow"] = _rx(0.45 * A * s) @ _rz(zero + 0.15 * A)
        ang["r_wrist"] = _rx(-0.3 * A + zero)
        ang["l_wrist"] = _rx(-0.3 * A + zero)
        ang["pelvis"] = _ry(0.1 * A * s)
    elif name == "arm_wave":
        # arms sweep from beside the body to overhead and back every cycle
        raise_ = A * (0.3 + 1.1 * (1.0 - c))
        ang["r_elbow"] = _rz(-raise_)
        ang["l_elbow"] = _rz(raise_)
        ang["r_wrist"] = _rz(-0.8 * A * np.sin(2 * w))
        ang["l_wrist"] = _rz(0.8 * A * np.sin(2 * w + 1.0))
    elif name == "squat":
        depth = A * (0.5 - 0.5 * c)
        ang["r_knee"] = _rx(-1.1 * depth)
        ang["l_knee"] = _rx(-1.1 * depth)
        ang["r_ankle"] = _rx(1.9 * depth)
        ang["l_ankle"] = _rx(1.9 * depth)
        ang["neck"] = _rx(0.5 * depth) @ _rz(sway[0])
        ang["r_elbow"] = _rx(-1.3 * depth)
        ang["l_elbow"] = _rx(-1.3 * depth)
    elif name == "turn":
        ang["pelvis"] = _ry(1.0 * A * s)
        ang["neck"] = _ry(0.4 * A * s) @ _rz(sway[0])
        ang["r_elbow"] = _rz(zero - 0.5 * A)
        ang["l_elbow"] = _rz(zero + 0.5 * A)
        ang["r_wrist"] = _rx(-0.6 * A * (0.5 + 0.5 * c))
        ang["l_wrist"] = _rx(-0.6 * A * (0.5 - 0.5 * c))
    elif name == "jumping_jack":
        open_ = 0.5 - 0.5 * c
        ang["r_elbow"] = _rz(-A * (0.2 + 2.6 * open_))
        ang["l_elbow"] = _rz(A * (0.2 + 2.6 * open_))
        ang["r_knee"] = _rz(-A * 0.45 * open_)
        ang["l_knee"] = _rz(A * 0.45 * open_)
        ang["r_ankle"] = _rz(A * 0.1 * open_)
        ang["l_ankle"] = _rz(-A * 0.1 * open_)
    elif name == "side_bend":
        bend = 0.45 * A * s
        ang["neck"] = _rz(bend + sway[0])
        ang["r_elbow"] = _rz(-A * (0.3 + 0.6 * np.maximum(0.0, s)) + 0.15 * (A > 0))
        ang["l_elbow"] = _rz(A * (0.3 + 0.6 * np.maximum(0.0, -s)) - 0.15 * (A > 0))
        ang["r_knee"] = _rz(zero - 0.15 * A)
        ang["l_knee"] = _rz(zero + 0.15 * A)
    return np.stack([ang[n] for n in topology.names], axis=1)


def forward_kinematics(angles: np.ndarray, bone_lengths: np.ndarray,
                       topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> np.ndarray:
    """World joint positions ``(T, N, 3)`` with the root at the origin."""
    T, N = angles.shape[:2]
    rest = np.zeros((N, 3))
    for j, name in enumerate(topology.names):
        if name in _REST:
            rest[j] = np.asarray(_REST[name][1]) * bone_lengths[j]
    glob = np.empty_like(angles)
    pos = np.zeros((T, N, 3))
    root = topology.root
    glob[:, root] = angles[:, root]
    for j in topology.topological_order():
        if j == root:
            continue
        p = topology.parent[j]
        # the bone p->j is turned by joint j's rotation in p's frame
        glob[:, j] = glob[:, p] @ angles[:, j]
        pos[:, j] = pos[:, p] + glob[:, j] @ rest[j]
    return pos


def _ground(pos: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Translate each frame vertically so the lower ankle touches y = 0."""
    ankles = [topology.index("l_ankle"), topology.index("r_ankle")]
    lowest = pos[:, ankles, 1].min(axis=1)
    out = pos.copy()
    out[:, :, 1] -= lowest[:, None]
    return out


def generate(character: CharacterSpec, motion: MotionSpec, seed: int = 0,
             topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X, x)``: world 3D joints ``(T, N, 3)`` and their 2D view ``(T, N, 2)``."""
    angles = joint_angles(motion, seed, topology)
    X = _ground(forward_kinematics(angles, character.bone_lengths(topology), topology), topology)
    x = rotate_project(X, motion.azimuth, (0.0, 1.0, 0.0))
    return X, x


def camera_frame(X: np.ndarray, azimuth: float) -> np.ndarray:
    """3D joints expressed in the camera frame (rotation about the vertical axis)."""
    from .skeleton import rodrigues

    return X @ rodrigues((0.0, 1.0, 0.0), azimuth).T


@dataclass(frozen=True)
class RetargetPair:
    source: np.ndarray
    target_ref: np.ndarray
    ground_truth: np.ndarray
    source_character: CharacterSpec
    target_character: CharacterSpec
    motion: MotionSpec
    ref_motion: MotionSpec
    seed: int = 0


def make_retarget_pair(char_a: CharacterSpec, char_b: CharacterSpec, motion: MotionSpec, seed: int = 0,
                       ref_motion: MotionSpec | None = None) -> RetargetPair:
    """Source: ``motion`` on A. Ground truth: the same motion on B. Target reference:
    a different motion on B seen from the same camera."""
    if ref_motion is None:
        rng = np.random.default_rng(seed)
        others = [m for m in MOTIONS if m != motion.name]
        ref_motion = MotionSpec.sample(rng, others[int(rng.integers(len(others)))],
                                       motion.n_frames, motion.azimuth)
    _, src = generate(char_a, motion, seed)
    _, gt = generate(char_b, motion, seed)
    _, ref = generate(char_b, ref_motion, seed + 1)
    return RetargetPair(src, ref, gt, char_a, char_b, motion, ref_motion, seed)


# ----------------------------------------------------------------- datasets
MANIFEST = "manifest.json"
DATASET_VERSION = 1


@dataclass(frozen=True)
class DatasetEntry:
    file: str
    character: CharacterSpec
    motion: MotionSpec
    seed: int
    sha256: str = ""
    shape: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"file": self.file, "character": self.character.to_dict(), "motion": self.motion.to_dict(),
                "seed": self.seed, "sha256": self.sha256, "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetEntry":
        return cls(file=d["file"], character=CharacterSpec.from_dict(d["character"]),
                   motion=MotionSpec.from_dict(d["motion"]), seed=int(d["seed"]),
                   sha256=d.get("sha256", ""), shape=tuple(d.get("shape", ())))


@dataclass
class Dataset:
    entries: list[DatasetEntry]
    sequences: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self, key: str) -> list[str]:
        if key == "character":
            return [e.character.name for e in self.entries]
        if key == "motion":
            return [e.motion.name for e in self.entries]
        raise ValueError(f"unknown label {key!r}")


def bench_specs(n_characters: int = 8, motions=MOTIONS, azimuths=None, n_frames: int = 128,
                seed: int = 0) -> list[tuple[CharacterSpec, MotionSpec, int]]:
    """The default benchmark: every character x motion x azimuth slot.

    With ``azimuths=None`` there are four slots, one per quadrant, each jittered
    uniformly inside its quadrant per sequence, so the bench sees bodies from
    every side. A sequence of floats fixes the azimuths instead.
    """
    rng = np.random.default_rng(seed)
    chars = [CharacterSpec.sample(rng, f"char{i:02d}") for i in range(n_characters)]
    n_slots = 4 if azimuths is None else len(azimuths)
    specs = []
    for ci, ch in enumerate(chars):
        for mi, name in enumerate(motions):
            for ai in range(n_slots):
                if azimuths is None:
                    az = (ai + rng.uniform()) * np.pi / 2
                else:
                    az = azimuths[ai]
                m = MotionSpec.sample(rng, name, n_frames, float(az))
                specs.append((ch, m, int(seed * 100000 + ci * 1000 + mi * 10 + ai)))
    return specs


def _sequence_bytes(seq: SkeletonSequence) -> bytes:
    return json.dumps(seq.to_json(), separators=(",", ":")).encode()


def write_dataset(specs, path) -> Dataset:
    """Generate every ``(character, motion, seed)`` spec into ``path`` (manifest last)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, seqs = [], []
    for i, (ch, m, seed) in enumerate(specs):
        _, x = generate(ch, m, seed)
        seq = SkeletonSequence(x, fps=m.fps, topology=DEFAULT_TOPOLOGY.name)
        payload = _sequence_bytes(seq)
        fname = f"seq_{i:04d}.json"
        (path / fname).write_bytes(payload)
        entries.append(DatasetEntry(fname, ch, m, seed, hashlib.sha256(payload).hexdigest(), x.shape))
        seqs.append(x)
    manifest = {"version": DATASET_VERSION, "topology": DEFAULT_TOPOLOGY.name, "count": len(entries),
                "entries": [e.to_dict() for e in entries]}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return Dataset(entries, seqs)


def read_dataset(path, verify: bool = True) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    if manifest.get("version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {manifest.get('version')}")
    entries = [DatasetEntry.from_dict(d) for d in manifest["entries"]]
    if manifest.get("count", len(entries)) != len(entries):
        raise ValueError("manifest count does not match its entry list")
    seqs, problems = [], []
    for e in entries:
        payload = (path / e.file).read_bytes()
        if verify and e.sha256 and hashlib.sha256(payload).hexdigest() != e.sha256:
            problems.append(f"{e.file}: checksum mismatch")
            continue
        seq = SkeletonSequence.from_json(json.loads(payload))
        if e.shape and tuple(seq.data.shape) != tuple(e.shape):
            problems.append(f"{e.file}: shape {seq.data.shape} != manifest {tuple(e.shape)}")
            continue
        seqs.append(seq.data)
    if problems:
        raise ValueError("dataset validation failed:\n  " + "\n  ".join(problems))
    return Dataset(entries, seqs)


def dataset_checksum(path) -> str:
    """SHA-256 over the manifest and every sequence file, in manifest order."""
    path = Path(path)
    h = hashlib.sha256((path / MANIFEST).read_bytes())
    for d in json.loads((path / MANIFEST).read_text())["entries"]:
        h.update((path / d["file"]).read_bytes())
    return h.hexdigest()


def heldout_pairs(n_per_azimuth: int = 6, azimuths=(0.0, np.pi / 6, np.pi / 3, 5 * np.pi / 12),
                  n_frames: int = 64, seed: int = 1234) -> list[RetargetPair]:
    """Evaluation pairs on freshly sampled characters (never in the bench)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for ai, az in enumerate(azimuths):
        for i in range(n_per_azimuth):
            a = CharacterSpec.sample(rng, f"eval_a{ai}{i}")
            b = CharacterSpec.sample(rng, f"eval_b{ai}{i}")
            name = MOTIONS[i % len(MOTIONS)]
            ref_name = MOTIONS[(i + 1 + int(rng.integers(len(MOTIONS) - 1))) % len(MOTIONS)]
            m = MotionSpec.sample(rng, name, n_frames, float(az))
            ref = MotionSpec.sample(rng, ref_name, n_frames, float(az))
            pairs.append(make_retarget_pair(a, b, m, seed=int(seed + 10 * len(pairs)), ref_motion=ref))
    return pairs
