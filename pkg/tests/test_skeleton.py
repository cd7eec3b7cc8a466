from __future__ import annotations


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from momo.skeleton import (
    DEFAULT_TOPOLOGY,
    DegenerateAxisWarning,
    DegenerateLimbWarning,
    SkeletonSequence,
    SkeletonTopology,
    body_axis,
    fill_gaps,
    fit_normalization,
    gaussian_kernel,
    gaussian_smooth,
    get_topology,
    limb_lengths,
    load_sequence,
    normalize,
    preprocess,
    rodrigues,
    rotate_project,
    rotation_angles,
    save_sequence,
    scale_limbs,
)

N = DEFAULT_TOPOLOGY.n_joints
L = DEFAULT_TOPOLOGY.n_limbs
CHAIN = SkeletonTopology("chain", ("pelvis", "spine", "head"), (-1, 0, 1))


def random_pose(rng, T=5, dim=2):
    return rng.normal(size=(T, N, dim))


def unit_vectors():
    return arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(
        lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))


# --------------------------------------------------------------- topology
def test_default_topology_shape():
    assert N == 15 and L == 14
    assert DEFAULT_TOPOLOGY.names[DEFAULT_TOPOLOGY.root] == "pelvis"
    assert sorted(DEFAULT_TOPOLOGY.topological_order()) == list(range(N))
    assert get_topology("body15") is DEFAULT_TOPOLOGY


def test_topology_rejects_cycles_and_multiple_roots():
    with pytest.raises(ValueError, match="one root"):
        SkeletonTopology("bad", ("a", "b"), (-1, -1))
    with pytest.raises(ValueError, match="cycle"):
        SkeletonTopology("bad", ("a", "b", "c"), (-1, 2, 1))
    with pytest.raises(ValueError, match="unknown topology"):
        get_topology("nope")


# ------------------------------------------------------------ limb scaling
def test_chain_example():
    x = np.array([[[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]])
    out = scale_limbs(x, [1.0, 2.0], topology=CHAIN)
    np.testing.assert_array_equal(out[0], [[0, 0], [0, 1], [0, 3]])


def test_identity_scaling_is_bitwise():
    x = random_pose(np.random.default_rng(0), T=7)
    out = scale_limbs(x, np.ones(L), 1.0)
    assert out.tobytes() == x.tobytes()


def test_uniform_doubling_doubles_every_limb():
    x = random_pose(np.random.default_rng(1), T=4, dim=3)
    ratio = limb_lengths(scale_limbs(x, np.full(L, 2.0))) / limb_lengths(x)
    np.testing.assert_allclose(ratio, np.full(ratio.shape, 2.0), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_limb_ratio_property(seed, dim):
    rng = np.random.default_rng(seed)
    x = random_pose(rng, T=3, dim=dim)
    gamma, g = rng.uniform(0.5, 2.0, size=L), rng.uniform(0.5, 2.0)
    out = scale_limbs(x, gamma, g)
    assert out.shape == x.shape
    np.testing.assert_allclose(limb_lengths(out) / limb_lengths(x), np.broadcast_to(gamma * g, (3, L)), rtol=1e-9)
    # the root only moves by the global factor
    np.testing.assert_allclose(out[:, 0], g * x[:, 0], rtol=1e-12)
    back = scale_limbs(scale_limbs(x, gamma), 1.0 / gamma)
    np.testing.assert_allclose(back, x, atol=1e-9)


def test_batched_scales_match_per_sequence():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, N, 2))
    gamma, g = rng.uniform(0.5, 2, size=(3, L)), rng.uniform(0.5, 2, size=3)
    out = scale_limbs(x, gamma, g)
    for b in range(3):
        np.testing.assert_allclose(out[b], scale_limbs(x[b], gamma[b], g[b]), atol=1e-15)


def test_zero_length_limb_warns_and_keeps_subtree():
    x = np.array([[[0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]])
    with pytest.warns(DegenerateLimbWarning):
        out = scale_limbs(x, [3.0, 1.0], topology=CHAIN)
    np.testing.assert_array_equal(out, x)


def test_scale_limbs_validates():
    x = random_pose(np.random.default_rng(3))
    with pytest.raises(ValueError, match="positive"):
        scale_limbs(x, np.zeros(L))
    with pytest.raises(ValueError, match="local scales"):
        scale_limbs(x, np.ones(3))


# ---------------------------------------------------------------- rotation
def test_rodrigues_examples():
    np.testing.assert_array_equal(rodrigues((0, 1, 0), 0.0), np.eye(3))
    np.testing.assert_allclose(rodrigues((0, 1, 0), np.pi / 2) @ [1, 0, 0], [0, 0, -1], atol=1e-15)
    with pytest.raises(ValueError, match="unit"):
        rodrigues((0, 2, 0), 1.0)


def test_rodrigues_orthonormal_for_many_random_axes():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        R = rodrigues(n, rng.uniform(-2 * np.pi, 2 * np.pi))
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(unit_vectors(), st.floats(-6.3, 6.3))
def test_rodrigues_matches_quaternion_oracle(n, theta):
    expected = Rotation.from_rotvec(n * theta).as_matrix()
    R = rodrigues(n, theta)
    np.testing.assert_allclose(R, expected, atol=1e-12)
    p = np.random.default_rng(0).normal(size=3)
    assert abs(np.linalg.norm(R @ p) - np.linalg.norm(p)) < 1e-9


def test_rotation_angles():
    np.testing.assert_allclose(rotation_angles(3), [np.pi / 4, np.pi / 2, 3 * np.pi / 4])
    with pytest.raises(ValueError):
        rotation_angles(0)


def test_rotate_project_examples():
    X = np.random.default_rng(5).normal(size=(4, N, 3))
    zero = rotate_project(X, 0.0, (0.3, 0.4, np.sqrt(1 - 0.25)))
    assert zero.tobytes() == np.ascontiguousarray(X[..., :2]).tobytes()
    half = rotate_project(X, np.pi, (0, 1, 0))
    np.testing.assert_allclose(half, np.stack([-X[..., 0], X[..., 1]], -1), atol=1e-12)


def test_bone_lengths_invariant_under_rotation():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(5, N, 3))
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    R = rodrigues(n, 1.1)
    np.testing.assert_allclose(limb_lengths(X @ R.T), limb_lengths(X), atol=1e-9)


# --------------------------------------------------------------- body axis
def t_pose():
    pose = np.zeros((1, N, 3))
    ix = DEFAULT_TOPOLOGY.index
    pose[0, ix("l_shoulder")] = [0.2, 1, 0]
    pose[0, ix("r_shoulder")] = [-0.2, 1, 0]
    pose[0, ix("l_hip")] = [0.1, 0, 0]
    pose[0, ix("r_hip")] = [-0.1, 0, 0]
    return pose


def test_body_axis_upright_and_lying():
    np.testing.assert_allclose(body_axis(t_pose()), [0, 1, 0], atol=1e-15)
    lying = t_pose() @ rodrigues((0, 0, 1), -np.pi / 2).T
    np.testing.assert_allclose(np.abs(body_axis(lying)), [1, 0, 0], atol=1e-12)


def test_body_axis_noisy_within_five_degrees():
    rng = np.random.default_rng(7)
    seq = np.repeat(t_pose(), 200, axis=0) + rng.normal(scale=0.05, size=(200, N, 3))
    axis = body_axis(seq)
    # per-frame oracle
    ix = DEFAULT_TOPOLOGY.index
    up = 0.5 * (seq[:, ix("l_shoulder")] + seq[:, ix("r_shoulder")]) - 0.5 * (seq[:, ix("l_hip")] + seq[:, ix("r_hip")])
    oracle = (up / np.linalg.norm(up, axis=1, keepdims=True)).mean(0)
    np.testing.assert_allclose(axis, oracle / np.linalg.norm(oracle), atol=1e-12)
    assert np.degrees(np.arccos(axis[1])) < 5


def test_body_axis_degenerate_falls_back():
    with pytest.warns(DegenerateAxisWarning):
        axis, flag = body_axis(np.zeros((3, N, 3)), return_flag=True)
    np.testing.assert_array_equal(axis, [0, 1, 0])
    assert flag


def test_body_axis_batched():
    X = np.stack([t_pose()[0], (t_pose() @ rodrigues((0, 0, 1), 0.5).T)[0]])[:, None]
    axes = body_axis(X)
    assert axes.shape == (2, 3)
    np.testing.assert_allclose(axes[1], rodrigues((0, 0, 1), 0.5) @ [0, 1, 0], atol=1e-12)


# ------------------------------------------------------------ preprocessing
def test_smoothing_identity_and_constants():
    x = np.random.default_rng(8).normal(size=(9, N, 2))
    np.testing.assert_array_equal(preprocess(x, sigma=0), x)
    const = np.full((20, N, 2), 3.25)
    np.testing.assert_allclose(gaussian_smooth(const, 2.0), const, atol=1e-14)
    assert abs(gaussian_kernel(2.0).sum() - 1.0) < 1e-12
    assert len(gaussian_kernel(2.0)) == 17


def test_gap_fill_then_smooth_five_frame_fixture():
    x = np.arange(5, dtype=float)[:, None, None] * np.ones((5, N, 2))
    raw = x.copy()
    raw[2, 4] = np.nan  # joint 4 missing in the middle frame: tie, earlier wins
    filled = fill_gaps(raw)
    assert filled[2, 4, 0] == 1.0
    out = preprocess(raw, sigma=2.0)
    # direct kernel evaluation at t=2 for joint 4
    t = np.arange(5)
    w = np.exp(-0.5 * ((t - 2) / 2.0) ** 2)
    col = np.array([0.0, 1.0, 1.0, 3.0, 4.0])
    assert abs(out[2, 4, 0] - (w @ col) / w.sum()) < 1e-12


def test_gap_fill_nearest_and_never_observed():
    raw = np.zeros((6, N, 2))
    raw[:, 1, 0] = np.arange(6)
    raw[1:5, 1] = np.nan
    filled = fill_gaps(raw)
    np.testing.assert_array_equal(filled[:, 1, 0], [0, 0, 0, 5, 5, 5])
    raw[:, 3] = np.nan
    with pytest.raises(ValueError, match="never observed"):
        fill_gaps(raw)


# ---------------------------------------------------------- normalisation
def test_normalisation_round_trip_and_scale():
    x = np.random.default_rng(9).normal(size=(16, N, 2)) * 40 + 300
    z, norm = normalize(x)
    np.testing.assert_allclose(norm.invert(z), x, atol=1e-10)
    np.testing.assert_allclose(z[:, 0].mean(0), 0, atol=1e-10)
    again = fit_normalization(z)
    assert abs(again.scale - 1.0) < 1e-12


# ------------------------------------------------------------------- files
def test_sequence_json_round_trip_with_missing(tmp_path):
    data = np.random.default_rng(10).normal(size=(4, N, 2))
    data[1, 3] = np.nan
    seq = SkeletonSequence(data, fps=25.0)
    save_sequence(seq, tmp_path / "s.json")
    back = load_sequence(tmp_path / "s.json")
    np.testing.assert_array_equal(back.data, data)
    assert back.fps == 25.0 and back.has_missing
    assert seq.to_json()["frames"][1][3] is None


def test_sequence_json_rejects_wrong_joint_count():
    with pytest.raises(ValueError, match="joints"):
        SkeletonSequence.from_json({"topology": "body15", "fps": 30, "frames": [[[0, 0]] * 3]})
