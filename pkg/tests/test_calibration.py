import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.analysis.calibration import (
    _mean_quaternion, aggregate_extrinsics, aggregate_windows, msee_mrr, msee_mrr_from_errors,
)
from app.analysis.geometry import PoseSE3, canonical_quaternion, compose, pose_errors
from app.core.errors import DimensionMismatch, ZeroInitialError


# ── MSEE / MRR ──────────────────────────────────────────────────────────

def test_worked_example():
    msee, mrr = msee_mrr_from_errors([0.10, 0.20], [0.01, 0.02])
    assert abs(msee - 0.015) < 1e-12
    assert abs(mrr - 0.90) < 1e-12


def test_perfect_recalibration():
    gt = PoseSE3.from_euler("xyz", [1.0, 2.0, 3.0], translation=(0.1, 0.2, 0.3))
    initial = [(gt, compose(PoseSE3.from_rotvec([0.01, 0.0, 0.0], [0.05, 0.0, 0.0]), gt)),
               (gt, compose(PoseSE3.from_rotvec([0.0, 0.02, 0.0], [0.0, 0.1, 0.0]), gt))]
    final = [(gt, gt), (gt, gt)]
    msee, mrr = msee_mrr(initial, final)
    assert msee == pytest.approx(0.0, abs=1e-12)
    assert mrr == pytest.approx(1.0, abs=1e-12)


def test_no_improvement():
    _, mrr = msee_mrr_from_errors([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])
    assert mrr == 0.0


def test_overshoot_scores_like_perfection():
    _, mrr = msee_mrr_from_errors([0.1], [0.2])
    assert mrr == pytest.approx(1.0)


shares = st.one_of(st.just(0.0), st.floats(0.001, 0.999))


@given(st.lists(st.tuples(st.floats(0.01, 10.0), shares), min_size=1, max_size=20))
def test_mrr_reaches_one_only_for_zero_error(rows):
    eta = [e for e, _ in rows]
    final = [e * share for e, share in rows]
    _, mrr = msee_mrr_from_errors(eta, final)
    if all(f == 0.0 for f in final):
        assert mrr == pytest.approx(1.0)
    else:
        assert mrr < 1.0


def test_metric_errors():
    with pytest.raises(ZeroInitialError):
        msee_mrr_from_errors([0.0, 0.1], [0.0, 0.05])
    with pytest.raises(DimensionMismatch):
        msee_mrr_from_errors([0.1, 0.2], [0.1])
    with pytest.raises(DimensionMismatch):
        msee_mrr_from_errors([], [])
    with pytest.raises(DimensionMismatch):
        msee_mrr([(PoseSE3.identity(), PoseSE3.identity())], [])


# ── Aggregation ─────────────────────────────────────────────────────────

def test_identical_poses():
    pose = PoseSE3.from_euler("xyz", [5.0, -3.0, 40.0], translation=(0.25, -1.5, 0.75))
    agg = aggregate_extrinsics([pose] * 7)
    np.testing.assert_allclose(agg.mean_pose.matrix, pose.matrix, atol=1e-12)
    np.testing.assert_allclose(agg.median_translation, pose.translation, atol=1e-12)
    np.testing.assert_allclose(agg.mode_pose.translation, pose.translation, atol=5e-3)
    assert pose_errors(pose, agg.mode_pose)[1] < 0.05
    assert agg.frame_count == 7


def test_symmetric_rotations_average_to_identity():
    agg = aggregate_extrinsics([PoseSE3.from_euler("z", 10.0), PoseSE3.from_euler("z", -10.0)])
    np.testing.assert_allclose(agg.mean_pose.rotation, [1.0, 0.0, 0.0, 0.0], atol=1e-9)


def test_mode_ignores_minority():
    a = PoseSE3([0.8, 0.6, 0.0, 0.0], [1.0, 2.0, 3.0])
    b = PoseSE3.from_rotvec([0.0, 0.0, np.pi / 2], [5.0, 5.0, 5.0])
    agg = aggregate_extrinsics([a] * 90 + [b] * 10)

    np.testing.assert_array_equal(agg.mode_pose.rotation, a.rotation)
    np.testing.assert_array_equal(agg.mode_pose.translation, a.translation)
    np.testing.assert_array_equal(agg.median_translation, a.translation)

    assert np.all(agg.mean_pose.translation > a.translation)
    assert np.all(agg.mean_pose.translation < b.translation)
    to_a = pose_errors(a, agg.mean_pose)[1]
    to_b = pose_errors(b, agg.mean_pose)[1]
    between = pose_errors(a, b)[1]
    assert 0.0 < to_a < between
    assert 0.0 < to_b < between


def test_mode_falls_back_to_whole_quaternions():
    # Per-component modes of these rotations give (0.866, 0, 0, 0), which is not a rotation
    about_x = PoseSE3.from_euler("x", 60.0)
    about_z = PoseSE3.from_euler("z", 60.0)
    agg = aggregate_extrinsics([about_x, about_x, about_z, about_z, PoseSE3.identity()])
    assert pose_errors(about_x, agg.mode_pose)[1] < 0.05


def test_mean_is_sign_invariant():
    rng = np.random.default_rng(0)
    quats = np.array([canonical_quaternion(q) for q in rng.normal(size=(10, 4))])
    flips = rng.choice([-1.0, 1.0], size=(10, 1))
    np.testing.assert_array_equal(_mean_quaternion(quats), _mean_quaternion(quats * flips))


def _chordal_mean_by_ascent(quats: np.ndarray, steps: int = 5000, rate: float = 0.5) -> np.ndarray:
    """Projected gradient ascent of sum (q . q_i)^2 on the unit sphere, started at the first sample."""
    q = quats[0].copy()
    for _ in range(steps):
        grad = 2.0 * quats.T @ (quats @ q) / len(quats)
        grad -= (grad @ q) * q
        q = q + rate * grad
        q /= np.linalg.norm(q)
    return canonical_quaternion(q)


def test_mean_matches_manifold_ascent():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        center = PoseSE3.from_rotvec(rng.normal(size=3))
        poses = []
        for _ in range(10):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            poses.append(compose(PoseSE3.from_rotvec(axis * math.radians(rng.uniform(0, 15))), center))
        quats = np.array([p.rotation for p in poses])
        expected = PoseSE3(_chordal_mean_by_ascent(quats), np.zeros(3))
        worst = max(worst, pose_errors(expected, aggregate_extrinsics(poses).mean_pose)[1])
    assert worst < 0.01


def test_empty_aggregation_raises():
    with pytest.raises(DimensionMismatch):
        aggregate_extrinsics([])


@given(st.integers(0, 25), st.integers(1, 8))
@settings(max_examples=30, deadline=None)
def test_windows(n, window):
    poses = [PoseSE3([1.0, 0.0, 0.0, 0.0], [float(i), 0.0, 0.0]) for i in range(n)]
    results = aggregate_windows(poses, window)
    if n == 0:
        assert results == []
    elif n < window:
        assert len(results) == 1
        assert results[0].frame_count == n
    else:
        assert len(results) == n // window
        assert all(r.frame_count == window for r in results)
        assert results[0].mean_pose.translation[0] == pytest.approx((window - 1) / 2)


def test_window_must_be_positive():
    with pytest.raises(ValueError):
        aggregate_windows([PoseSE3.identity()], 0)
