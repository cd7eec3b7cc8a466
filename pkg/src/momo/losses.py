"""Training objectives: reconstruction, cross reconstruction, invariance, triplet,
adversarial, and their weighted sum.

Sequences are channel-major tensors: 2D ``(B, 2N, T)``, 3D ``(B, 3N, T)``; code
sequences ``(B, C, M)``; pooled codes ``(B, C)``. Every L1 term is a mean over
elements, which equals the per-sequence ``1/(2NT)``, ``1/(MC)`` or ``1/C``
normalisation averaged over the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, clip, cosine_similarity, log, relu, sigmoid, tabs, transpose

SIGMOID_EPS = 1e-7

COMPONENTS = ("rec", "crs", "adv", "trip_s", "trip_v", "inv_m_s", "inv_m_v", "inv_s", "inv_v")


@dataclass(frozen=True)
class LossWeights:
    rec: float = 10.0
    crs: float = 4.0
    adv: float = 2.0
    trip: float = 10.0
    inv: float = 2.0
    margin: float = 0.2
    K: int = 3

    def __post_init__(self):
        for name in ("rec", "crs", "adv", "trip", "inv"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def drop_depth(X: Tensor) -> Tensor:
    """Orthographic projection without rotation: keep (x, y) of every joint."""
    X = as_tensor(X)
    B, C3, T = X.shape
    N = C3 // 3
    return X.reshape(B, N, 3, T)[:, :, 0:2, :].reshape(B, 2 * N, T)


def l1_mean(a, b) -> Tensor:
    return tabs(as_tensor(a) - as_tensor(b)).mean()


def reconstruction_loss(x, X_hat: Tensor) -> Tensor:
    return l1_mean(x, drop_depth(X_hat))


def cross_reconstruction_loss(x, x_prime, X_cross: Tensor, X_cross_prime: Tensor) -> Tensor:
    """``X_cross`` decodes motion of x' with the codes of x (target x);
    ``X_cross_prime`` decodes motion of x with the codes of x' (target x')."""
    return 0.5 * l1_mean(x, drop_depth(X_cross)) + 0.5 * l1_mean(x_prime, drop_depth(X_cross_prime))


def motion_structural_invariance(m: Tensor, m_prime: Tensor) -> Tensor:
    return l1_mean(m, m_prime)


def motion_rotational_invariance(m: Tensor, m_rotated: Sequence[Tensor]) -> Tensor:
    return sum(l1_mean(m, mk) for mk in m_rotated) * (1.0 / len(m_rotated))


def structure_rotational_invariance(s: Tensor, s_rotated: Sequence[Tensor]) -> Tensor:
    return sum(l1_mean(s, sk) for sk in s_rotated) * (1.0 / len(s_rotated))


def view_structural_invariance(v: Tensor, v_prime: Tensor) -> Tensor:
    return l1_mean(v, v_prime)


# ------------------------------------------------------------------ triplets
def triplet_term(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = 0.2) -> Tensor:
    """``max(0, cos(a, neg) - cos(a, pos) + margin)`` along the last axis."""
    return relu(cosine_similarity(anchor, negative) - cosine_similarity(anchor, positive) + margin)


def sample_pairs(batch: int, length: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One partner ``t2 != t1`` per anchor ``t1``, drawn independently per sequence."""
    if length < 2:
        raise ValueError("triplet loss needs at least two code estimates per sequence")
    t1 = np.broadcast_to(np.arange(length), (batch, length))
    offset = rng.integers(1, length, size=(batch, length))
    return t1.copy(), (t1 + offset) % length


def all_pairs(batch: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    if length < 2:
        raise ValueError("triplet loss needs at least two code estimates per sequence")
    t1, t2 = np.nonzero(~np.eye(length, dtype=bool))
    return np.broadcast_to(t1, (batch, t1.size)).copy(), np.broadcast_to(t2, (batch, t2.size)).copy()


def triplet_loss(a_seq: Tensor, b_seq: Tensor, pairs: tuple[np.ndarray, np.ndarray],
                 margin: float = 0.2) -> Tensor:
    """Symmetric triplet loss between two code sequences ``(B, C, M)``.

    For each pair ``(t1, t2)``: ``tau(a_t1, a_t2, b_t2) + tau(b_t1, b_t2, a_t2)``;
    the sum over pairs is divided by ``2M`` and averaged over the batch.
    """
    a_seq, b_seq = as_tensor(a_seq), as_tensor(b_seq)
    B, _, M = a_seq.shape
    if M < 2:
        raise ValueError("triplet loss needs at least two code estimates per sequence")
    t1, t2 = pairs
    rows = np.arange(B)[:, None]
    a = transpose(a_seq, (0, 2, 1))
    b = transpose(b_seq, (0, 2, 1))
    a1, a2 = a[rows, t1], a[rows, t2]
    b1, b2 = b[rows, t1], b[rows, t2]
    terms = triplet_term(a1, a2, b2, margin) + triplet_term(b1, b2, a2, margin)
    return terms.sum() * (1.0 / (2 * M * B))


def view_triplet_loss(v_seq: Tensor, v_rotated: Sequence[Tensor], pairs_per_k: Sequence[tuple],
                      margin: float = 0.2) -> Tensor:
    return sum(triplet_loss(v_seq, vk, pk, margin) for vk, pk in zip(v_rotated, pairs_per_k)) \
        * (1.0 / len(v_rotated))


# --------------------------------------------------------------- adversarial
def clamped_sigmoid(logits: Tensor) -> Tensor:
    return clip(sigmoid(as_tensor(logits)), SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def discriminator_loss(real_logits: Tensor, fake_logits: Sequence[Tensor] | Tensor) -> Tensor:
    """``-mean[ 1/2 log D(x) + 1/2 log(1 - D(x_k)) ]`` over k, time and batch."""
    if isinstance(fake_logits, Tensor):
        fake_logits = [fake_logits]
    real_term = log(clamped_sigmoid(real_logits)).mean()
    fake_term = sum(log(1.0 - clamped_sigmoid(f)).mean() for f in fake_logits) * (1.0 / len(fake_logits))
    return -(0.5 * real_term + 0.5 * fake_term)


def generator_loss(fake_logits: Sequence[Tensor] | Tensor) -> Tensor:
    """Non-saturating generator objective ``-mean log D(x_k)``."""
    if isinstance(fake_logits, Tensor):
        fake_logits = [fake_logits]
    return -(sum(log(clamped_sigmoid(f)).mean() for f in fake_logits) * (1.0 / len(fake_logits)))


# --------------------------------------------------------------------- total
def total_loss(components: dict, weights: LossWeights = LossWeights()):
    """Weighted sum; works on Tensors or plain floats."""
    c = components
    return (weights.rec * c["rec"] + weights.crs * c["crs"] + weights.adv * c["adv"]
            + weights.trip * (c["trip_s"] + c["trip_v"])
            + weights.inv * (c["inv_m_s"] + c["inv_m_v"] + c["inv_s"] + c["inv_v"]))
