"""Finite-difference checks over every autodiff primitive, every loss term and the
full encode/decode pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (
    Tensor,
    broadcast_to,
    check_gradients,
    clip,
    concat,
    conv1d,
    cosine_similarity,
    exp,
    getitem,
    leaky_relu,
    log,
    matmul,
    maxpool_time,
    pad_reflect,
    project_joints,
    relu,
    reshape,
    sigmoid,
    tabs,
    transpose,
    tsum,
    upsample_nearest,
)
from .losses import COMPONENTS, LossWeights, discriminator_loss, generator_loss, total_loss
from .network import ArchConfig, RetargetNet
from .skeleton import DEFAULT_TOPOLOGY, scale_limbs
from .training import generator_terms, rotation_maps, from_channels, to_channels

TOLERANCE = 1e-4

# small enough for a fast check, same layer plan as the full model
TINY_ARCH = ArchConfig(
    motion_channels=(6, 6, 8),
    structure_channels=(6, 6, 8),
    view_channels=(4, 4, 3),
    decoder_channels=(8, 6, 6),
    disc_channels=(6, 6, 6),
    dec_kernel=3,
)


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _corrupt(fn: Callable[[], Tensor]) -> Callable[[], Tensor]:
    """Negative control: same forward value, backward scaled by 1.1."""

    def wrapped():
        out = fn()
        orig = out._backward
        if orig is not None:
            out._backward = lambda g: tuple(None if pg is None else 1.1 * pg for pg in orig(g))
        return out

    return wrapped


def _away_from_kinks(a: np.ndarray, eps: float = 0.05) -> np.ndarray:
    return np.where(np.abs(a) < eps, np.sign(a) * eps + (a == 0) * eps, a)


def primitive_checks(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    def leaf(*shape):
        return Tensor(_away_from_kinks(rng.normal(size=shape)), requires_grad=True)

    a, b = leaf(3, 4), leaf(3, 4)
    m = leaf(4, 2)
    seq = leaf(2, 3, 8)
    w = leaf(4, 3, 3)
    bias = leaf(4)
    X = leaf(2, 3 * 2, 5)
    R = rng.normal(size=(2, 2, 3))
    probe = {k: rng.normal(size=s) for k, s in
             {"ab": (3, 4), "m": (3, 2), "seq": (2, 3, 8), "pad": (2, 3, 12), "up": (2, 3, 16),
              "conv": (2, 4, 4), "proj": (2, 4, 5), "pool": (2, 3)}.items()}
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    return {
        "add": (lambda: ((a + b) * probe["ab"]).sum(), [a, b]),
        "sub": (lambda: ((a - b) * probe["ab"]).sum(), [a, b]),
        "mul": (lambda: ((a * b) * probe["ab"]).sum(), [a, b]),
        "div": (lambda: ((a / pos) * probe["ab"]).sum(), [a, pos]),
        "abs": (lambda: (tabs(a) * probe["ab"]).sum(), [a]),
        "exp": (lambda: (exp(a) * probe["ab"]).sum(), [a]),
        "log": (lambda: (log(pos) * probe["ab"]).sum(), [pos]),
        "sigmoid": (lambda: (sigmoid(a) * probe["ab"]).sum(), [a]),
        "clip": (lambda: (clip(a * 0.3, -0.2, 0.2) * probe["ab"]).sum(), [a]),
        "relu": (lambda: (relu(a) * probe["ab"]).sum(), [a]),
        "leaky_relu": (lambda: (leaky_relu(a, 0.2) * probe["ab"]).sum(), [a]),
        "sum": (lambda: (tsum(seq, axis=2) * probe["pool"]).sum(), [seq]),
        "mean": (lambda: (seq.mean(axis=(0, 2)) * probe["pool"][0]).sum(), [seq]),
        "maxpool_time": (lambda: (maxpool_time(seq) * probe["pool"]).sum(), [seq]),
        "reshape": (lambda: (reshape(a, (4, 3)) * probe["ab"].reshape(4, 3)).sum(), [a]),
        "transpose": (lambda: (transpose(a, (1, 0)) * probe["ab"].T).sum(), [a]),
        "getitem": (lambda: (getitem(seq, (slice(None), np.array([0, 2, 2]))) * probe["seq"][:, [0, 1, 2]]).sum(),
                    [seq]),
        "concat": (lambda: (concat([a, b], axis=0) * np.vstack([probe["ab"], probe["ab"]])).sum(), [a, b]),
        "broadcast_to": (lambda: (broadcast_to(a[0:1], (3, 4)) * probe["ab"]).sum(), [a]),
        "matmul": (lambda: (matmul(a, m) * probe["m"]).sum(), [a, m]),
        "cosine_similarity": (lambda: (cosine_similarity(a, b) * probe["ab"][:, 0]).sum(), [a, b]),
        "conv1d": (lambda: (conv1d(seq, w, bias, stride=2, padding=1) * probe["conv"]).sum(), [seq, w, bias]),
        "pad_reflect": (lambda: (pad_reflect(seq, 2) * probe["pad"]).sum(), [seq]),
        "upsample_nearest": (lambda: (upsample_nearest(seq, 2) * probe["up"]).sum(), [seq]),
        "project_joints": (lambda: (project_joints(X, R) * probe["proj"]).sum(), [X]),
    }


def loss_checks(rng: np.random.Generator, arch: ArchConfig = TINY_ARCH, T: int = 16, B: int = 2):
    """Each loss term as a function of the model parameters on one fixed batch."""
    net = RetargetNet(arch, seed=int(rng.integers(2**31)))
    N = arch.n_joints
    x = rng.normal(size=(B, T, N, 2))
    xp = scale_limbs(x, rng.uniform(0.5, 2.0, size=(B, DEFAULT_TOPOLOGY.n_limbs)), rng.uniform(0.5, 2.0, size=B))
    xc, xpc = to_channels(x), to_channels(xp)
    weights = LossWeights()
    pair_rng = np.random.default_rng(int(rng.integers(2**31)))
    fixed_pairs: dict[tuple[int, int], tuple] = {}

    def pairs(batch, length):
        key = (batch, length)
        if key not in fixed_pairs:
            offset = pair_rng.integers(1, length, size=(batch, length))
            t1 = np.broadcast_to(np.arange(length), (batch, length)).copy()
            fixed_pairs[key] = (t1, (t1 + offset) % length)
        return fixed_pairs[key]

    # freeze the rotation maps so finite differences see the same projection
    _, _, _, maps = generator_terms(net, xc, xpc, weights, pairs)

    def terms():
        return generator_terms(net, xc, xpc, weights, pairs, maps=maps)

    def term(name):
        return lambda: terms()[0][name]

    def adv_g():
        return generator_loss(net.discriminate(terms()[1]))

    def adv_d():
        comps, rotated, real, _ = terms()
        return discriminator_loss(net.discriminate(Tensor(real)), net.discriminate(Tensor(rotated.data)))

    def total():
        comps, rotated, _, _ = terms()
        comps["adv"] = generator_loss(net.discriminate(rotated))
        return total_loss(comps, weights)

    def pipeline():
        codes = net.encode(Tensor(xc))
        X = net.decode(codes.motion, codes.structure, codes.view)
        return (X * np.linspace(-1, 1, X.size).reshape(X.shape)).sum()

    gen = list(net.generator_params().values())
    disc = list(net.discriminator_params().values())
    checks = {f"loss_{k}": (term(k), gen) for k in COMPONENTS if k != "adv"}
    checks["loss_adv_g"] = (adv_g, gen + disc)
    checks["loss_adv_d"] = (adv_d, disc)
    checks["loss_total"] = (total, gen + disc)
    checks["pipeline_decode_encode"] = (pipeline, gen)
    return checks


def run_suite(seed: int = 0, corrupt: str | None = None, max_coords: int = 3,
              log: Callable[[str], None] | None = None) -> list[CheckResult]:
    """Run every check; ``corrupt`` names one item whose backward is deliberately broken."""
    rng = np.random.default_rng(seed)
    checks = {**primitive_checks(rng), **loss_checks(rng)}
    if corrupt is not None and corrupt not in checks:
        raise ValueError(f"unknown check {corrupt!r}")
    results = []
    for name, (fn, inputs) in checks.items():
        if name == corrupt:
            fn = _corrupt(fn)
        err = check_gradients(fn, inputs, h=1e-5, max_coords=max_coords,
                              rng=np.random.default_rng([seed, len(results)]))
        results.append(CheckResult(name, err))
        if log is not None:
            log(f"{name:28s} max_rel_err={err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
    return results
