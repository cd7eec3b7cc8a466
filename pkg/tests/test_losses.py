from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momo.autodiff import Tensor, check_gradients
from momo.losses import (
    COMPONENTS,
    LossWeights,
    all_pairs,
    clamped_sigmoid,
    cross_reconstruction_loss,
    discriminator_loss,
    drop_depth,
    generator_loss,
    motion_rotational_invariance,
    motion_structural_invariance,
    reconstruction_loss,
    sample_pairs,
    structure_rotational_invariance,
    total_loss,
    triplet_loss,
    triplet_term,
    view_structural_invariance,
    view_triplet_loss,
)

N = 15


def rand(rng, *shape, grad=False):
    return Tensor(rng.normal(size=shape), requires_grad=grad)


# ----------------------------------------------------------- reconstruction
def test_rec_zero_when_xy_match_and_one_for_unit_offset():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 3 * N, 8))
    x = X.reshape(2, N, 3, 8)[:, :, :2].reshape(2, 2 * N, 8)
    assert reconstruction_loss(x, Tensor(X)).item() == 0.0
    shifted = X.reshape(2, N, 3, 8).copy()
    shifted[:, :, :2] += 1.0
    assert reconstruction_loss(x, Tensor(shifted.reshape(2, 3 * N, 8))).item() == 1.0


def test_rec_matches_double_loop_oracle():
    rng = np.random.default_rng(1)
    B, T = 3, 8
    x, X = rng.normal(size=(B, 2 * N, T)), rng.normal(size=(B, 3 * N, T))
    total = 0.0
    for b in range(B):
        for t in range(T):
            for j in range(N):
                for d in range(2):
                    total += abs(x[b, 2 * j + d, t] - X[b, 3 * j + d, t])
    oracle = total / (B * 2 * N * T)
    assert abs(reconstruction_loss(x, Tensor(X)).item() - oracle) < 1e-12


def test_drop_depth_layout():
    X = np.arange(2 * 3 * N * 4, dtype=float).reshape(2, 3 * N, 4)
    out = drop_depth(Tensor(X)).data
    np.testing.assert_array_equal(out[:, 0], X[:, 0])
    np.testing.assert_array_equal(out[:, 1], X[:, 1])
    np.testing.assert_array_equal(out[:, 2], X[:, 3])


def test_cross_reconstruction_degenerate_perturbation_is_plain_rec():
    rng = np.random.default_rng(2)
    x, X = rng.normal(size=(2, 2 * N, 8)), Tensor(rng.normal(size=(2, 3 * N, 8)))
    assert cross_reconstruction_loss(x, x, X, X).item() == reconstruction_loss(x, X).item()


def test_cross_reconstruction_perfect_model_is_zero():
    rng = np.random.default_rng(3)
    X, Xp = rng.normal(size=(1, 3 * N, 8)), rng.normal(size=(1, 3 * N, 8))
    x, xp = drop_depth(Tensor(X)).data, drop_depth(Tensor(Xp)).data
    assert cross_reconstruction_loss(x, xp, Tensor(X), Tensor(Xp)).item() == 0.0


# -------------------------------------------------------------- invariance
def test_invariance_terms_fixtures():
    rng = np.random.default_rng(4)
    m = rand(rng, 2, 128, 8)
    assert motion_structural_invariance(m, m).item() == 0.0
    s = rand(rng, 2, 256)
    assert structure_rotational_invariance(s, [s + 0.25] * 3).item() == pytest.approx(0.25, abs=1e-15)
    v = rand(rng, 2, 8)
    assert view_structural_invariance(v, v - 1.5).item() == pytest.approx(1.5, abs=1e-15)
    # a single identity rotation reduces the rotational term to the plain L1 mean
    m2 = rand(rng, 2, 128, 8)
    assert motion_rotational_invariance(m, [m2]).item() == motion_structural_invariance(m, m2).item()


def test_invariance_terms_match_oracles():
    rng = np.random.default_rng(5)
    B, C, M, K = 2, 6, 4, 3
    m, ms = rng.normal(size=(B, C, M)), [rng.normal(size=(B, C, M)) for _ in range(K)]
    oracle = sum(np.abs(m - mk).sum() for mk in ms) / (K * M * C * B)
    got = motion_rotational_invariance(Tensor(m), [Tensor(a) for a in ms]).item()
    assert abs(got - oracle) < 1e-12
    s, ss = rng.normal(size=(B, C)), [rng.normal(size=(B, C)) for _ in range(K)]
    oracle = sum(np.abs(s - sk).sum() for sk in ss) / (K * C * B)
    assert abs(structure_rotational_invariance(Tensor(s), [Tensor(a) for a in ss]).item() - oracle) < 1e-12


# ----------------------------------------------------------------- triplets
def test_triplet_term_clamp_cases():
    a = Tensor(np.array([1.0, 0.0]))
    assert triplet_term(a, Tensor(np.array([2.0, 0.0])), Tensor(np.array([-1.0, 0.0]))).item() == 0.0
    same = Tensor(np.array([0.3, 0.7]))
    assert triplet_term(a, same, same).item() == pytest.approx(0.2, abs=1e-15)


def naive_triplet(a, b, pairs, margin=0.2):
    def cos(u, v):
        return u @ v / (np.linalg.norm(u) * np.linalg.norm(v))

    B, _, M = a.shape
    total = 0.0
    for bi in range(B):
        for t1, t2 in zip(*[p[bi] for p in pairs]):
            A1, A2, B1, B2 = a[bi, :, t1], a[bi, :, t2], b[bi, :, t1], b[bi, :, t2]
            total += max(0.0, cos(A1, B2) - cos(A1, A2) + margin)
            total += max(0.0, cos(B1, A2) - cos(B1, B2) + margin)
    return total / (2 * M * B)


def test_triplet_all_pairs_matches_brute_force():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 5, 4))
    pairs = all_pairs(3, 4)
    assert pairs[0].shape == (3, 12)
    got = triplet_loss(Tensor(a), Tensor(b), pairs).item()
    assert abs(got - naive_triplet(a, b, pairs)) < 1e-12
    # the brute-force enumeration of ordered pairs
    ordered = [(i, j) for i, j in itertools.product(range(4), repeat=2) if i != j]
    assert list(zip(pairs[0][0], pairs[1][0])) == ordered


def test_sampled_pairs_never_match_and_are_seeded():
    p1 = sample_pairs(4, 8, np.random.default_rng(7))
    p2 = sample_pairs(4, 8, np.random.default_rng(7))
    np.testing.assert_array_equal(p1[1], p2[1])
    assert np.all(p1[0] != p1[1])
    np.testing.assert_array_equal(p1[0][0], np.arange(8))
    with pytest.raises(ValueError):
        sample_pairs(1, 1, np.random.default_rng(0))


def test_triplet_rejects_short_sequences():
    x = Tensor(np.ones((1, 3, 1)))
    with pytest.raises(ValueError, match="two"):
        triplet_loss(x, x, (np.zeros((1, 1), int), np.zeros((1, 1), int)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_triplet_terms_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))
    val = triplet_loss(Tensor(a), Tensor(b), all_pairs(2, 4)).item()
    # each ordered pair contributes two terms in [0, 2 + m]; 12 pairs over 2M=8
    assert 0.0 <= val <= 12 * 2 * 2.2 / 8 + 1e-12


def test_view_triplet_is_mean_over_rotations():
    rng = np.random.default_rng(8)
    v = Tensor(rng.normal(size=(2, 8, 4)))
    vr = [Tensor(rng.normal(size=(2, 8, 4))) for _ in range(3)]
    pairs = [all_pairs(2, 4)] * 3
    expected = np.mean([triplet_loss(v, vk, pairs[0]).item() for vk in vr])
    assert abs(view_triplet_loss(v, vr, pairs).item() - expected) < 1e-14


# ------------------------------------------------------------- adversarial
def test_uninformative_discriminator_gives_log_two():
    zeros = Tensor(np.zeros((4, 8)))
    assert abs(discriminator_loss(zeros, [zeros, zeros]).item() - math.log(2)) < 1e-12
    assert abs(generator_loss(zeros).item() - math.log(2)) < 1e-12


def test_perfect_discriminator_limit():
    real, fake = Tensor(np.full((2, 8), 40.0)), Tensor(np.full((2, 8), -40.0))
    assert discriminator_loss(real, fake).item() < 1e-6
    assert clamped_sigmoid(real).data.max() == 1 - 1e-7
    assert np.isfinite(generator_loss(fake).item())


def test_adversarial_gradients():
    rng = np.random.default_rng(9)
    r, f1, f2 = rand(rng, 2, 4, grad=True), rand(rng, 2, 4, grad=True), rand(rng, 2, 4, grad=True)
    assert check_gradients(lambda: discriminator_loss(r, [f1, f2]), [r, f1, f2]) < 1e-6
    assert check_gradients(lambda: generator_loss([f1, f2]), [f1, f2]) < 1e-6


# ------------------------------------------------------------------- total
def test_total_loss_examples():
    w = LossWeights()
    assert total_loss(dict.fromkeys(COMPONENTS, 0.0), w) == 0.0
    assert total_loss(dict.fromkeys(COMPONENTS, 1.0), w) == 44.0


def test_total_loss_matches_hand_sum_and_is_linear_in_weights():
    rng = np.random.default_rng(10)
    comps = dict(zip(COMPONENTS, rng.uniform(size=len(COMPONENTS))))
    w1 = LossWeights(rec=1.5, crs=0.5, adv=0.25, trip=3.0, inv=0.75)
    hand = (1.5 * comps["rec"] + 0.5 * comps["crs"] + 0.25 * comps["adv"]
            + 3.0 * (comps["trip_s"] + comps["trip_v"])
            + 0.75 * (comps["inv_m_s"] + comps["inv_m_v"] + comps["inv_s"] + comps["inv_v"]))
    assert abs(total_loss(comps, w1) - hand) < 1e-12
    w2 = LossWeights(rec=0.5, crs=2.0, adv=1.0, trip=1.0, inv=0.25)
    w_sum = LossWeights(rec=2.0, crs=2.5, adv=1.25, trip=4.0, inv=1.0)
    assert abs(total_loss(comps, w_sum) - total_loss(comps, w1) - total_loss(comps, w2)) < 1e-12
    tensors = {k: Tensor(np.array(v)) for k, v in comps.items()}
    assert abs(total_loss(tensors, w1).item() - hand) < 1e-12


def test_weights_validate():
    assert LossWeights().to_dict()["margin"] == 0.2
    with pytest.raises(ValueError):
        LossWeights(rec=-1.0)
    with pytest.raises(ValueError):
        LossWeights(K=0)
