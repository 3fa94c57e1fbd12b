from __future__ import annotations

import logging

import numpy as np
import pytest

from gyroflow_services.core_math import rodrigues
from gyroflow_services.errors import ArgumentError, DegenerateConfigurationError
from gyroflow_services.fusion import FusionParams, run_fusion
from gyroflow_services.gyro_field import homography_array_to_field, rotation_homography, row_homographies
from gyroflow_services.homography_fit import (
    fit_global_homography,
    fit_rs_homography_array,
    fit_rs_homography_details,
    fit_weighted_homography,
    flow_to_correspondences,
    homography_to_field,
    project,
    smooth_patch_parameters,
)
from gyroflow_services.metrics import pme
from gyroflow_services.synth import SynthSpec, TrajectorySpec, TranslationSpec, synth_sequence
from gyroflow_services.types import Correspondence, FlowField, FusionMap, HomographyArray, normalize_homography

from conftest import pair_gyro_array

PERSPECTIVE_H = np.array([[1.02, 0.01, 3.0], [-0.015, 0.98, -2.0], [1e-4, -5e-5, 1.0]])


def grid_points(width: int = 128, height: int = 96, step: int = 8) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(0, height, step), np.arange(0, width, step), indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)


def correspondences(p: np.ndarray, q: np.ndarray, w=None) -> list:
    weights = np.ones(len(p)) if w is None else w
    return [Correspondence(tuple(a), tuple(b), float(c)) for a, b, c in zip(p, q, weights)]


def max_reprojection(H: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(project(H, p) - q, axis=1)))


def rotational_gyro(small_intrinsics) -> HomographyArray:
    angles = np.linspace(0.004, 0.012, 14)
    stack = [rotation_homography(small_intrinsics, rodrigues([0.002, angle, 0.001])) for angle in angles]
    return HomographyArray(np.stack(stack), small_intrinsics.width, small_intrinsics.height)


def field_from_rows(Hs: np.ndarray, width: int, height: int) -> FlowField:
    xs = np.arange(width, dtype=np.float64)
    u = np.empty((height, width))
    v = np.empty((height, width))
    for y, H in enumerate(Hs):
        q = project(H, np.column_stack([xs, np.full(width, float(y))]))
        u[y] = q[:, 0] - xs
        v[y] = q[:, 1] - y
    return FlowField(u, v)


def test_zero_flow_gives_identity_correspondences():
    M = FusionMap(np.full((12, 16), 0.3), 1, 0.0, 1.0)
    pairs = flow_to_correspondences(FlowField.zeros(16, 12), M, 4)
    assert len(pairs) == 12
    assert all(c.p == c.q for c in pairs)
    assert all(c.weight == pytest.approx(0.7) for c in pairs)


def test_stride_equal_to_width_samples_one_column():
    pairs = flow_to_correspondences(FlowField.zeros(16, 12), None, 16)
    assert {c.p[0] for c in pairs} == {0.0}
    assert len(pairs) == 1


def test_correspondences_skip_unlabeled_pixels():
    valid = np.ones((8, 8), dtype=bool)
    valid[0, 0] = False
    pairs = flow_to_correspondences(FlowField(np.zeros((8, 8)), np.zeros((8, 8)), valid), None, 4)
    assert (0.0, 0.0) not in {c.p for c in pairs}
    assert len(pairs) == 3


def test_correspondences_follow_a_generating_homography():
    f = homography_to_field(PERSPECTIVE_H, 64, 48)
    pairs = flow_to_correspondences(f, None, 5)
    p = np.array([c.p for c in pairs])
    q = np.array([c.q for c in pairs])
    assert max_reprojection(PERSPECTIVE_H, p, q) < 1e-9


def test_identity_correspondences_fit_the_identity():
    p = grid_points()
    estimate = fit_weighted_homography(correspondences(p, p))
    assert np.allclose(estimate.H, np.eye(3), atol=1e-12)
    assert estimate.inlier_rms == pytest.approx(0.0, abs=1e-9)
    assert estimate.support == pytest.approx(len(p))


def test_noiseless_homography_is_recovered():
    p = grid_points()
    q = project(PERSPECTIVE_H, p)
    estimate = fit_weighted_homography(correspondences(p, q))
    assert max_reprojection(estimate.H, p, q) < 1e-6


def test_zero_weight_outliers_are_ignored():
    rng = np.random.default_rng(0)
    p = grid_points()
    q = project(PERSPECTIVE_H, p)
    w = np.ones(len(p))
    corrupt = rng.choice(len(p), size=len(p) // 5, replace=False)
    q_bad = q.copy()
    q_bad[corrupt] = rng.uniform(0, 128, size=(len(corrupt), 2))
    w[corrupt] = 0.0
    estimate = fit_weighted_homography(correspondences(p, q_bad, w))
    clean = np.setdiff1d(np.arange(len(p)), corrupt)
    assert max_reprojection(estimate.H, p[clean], q[clean]) < 1e-6


def test_too_few_or_collinear_points_are_degenerate():
    p = grid_points()[:3]
    with pytest.raises(DegenerateConfigurationError):
        fit_weighted_homography(correspondences(p, p))
    line = np.column_stack([np.arange(10.0), 2.0 * np.arange(10.0)])
    with pytest.raises(DegenerateConfigurationError):
        fit_weighted_homography(correspondences(line, line + 1.0))
    weights = np.array([1.0, 1.0, 1.0, 1e-4, 1e-4])
    five = grid_points()[:5] + np.array([[0, 0], [0, 30], [40, 0], [7, 9], [3, 50]])
    with pytest.raises(DegenerateConfigurationError):
        fit_weighted_homography(correspondences(five, five, weights))


def noisy_pairs(seed: int):
    rng = np.random.default_rng(seed)
    p = grid_points()
    q = project(PERSPECTIVE_H, p) + rng.normal(0.0, 0.3, size=p.shape)
    w = rng.uniform(0.2, 1.0, size=len(p))
    return p, q, w


def test_fit_is_invariant_to_weight_scale():
    p, q, w = noisy_pairs(1)
    H1 = fit_weighted_homography(correspondences(p, q, w)).H
    H2 = fit_weighted_homography(correspondences(p, q, 7.3 * w)).H
    assert np.max(np.abs(H1 / np.linalg.norm(H1) - H2 / np.linalg.norm(H2))) < 1e-12


def test_fit_is_equivariant_under_translation():
    p, q, w = noisy_pairs(2)
    shift = 17.0
    H = fit_weighted_homography(correspondences(p, q, w)).H
    H_shifted = fit_weighted_homography(correspondences(p + shift, q + shift, w)).H
    T = np.array([[1.0, 0.0, shift], [0.0, 1.0, shift], [0.0, 0.0, 1.0]])
    expected = normalize_homography(T @ H @ np.linalg.inv(T))
    assert np.max(np.abs(normalize_homography(H_shifted) - expected)) < 1e-9


def test_smoothing_limits_and_normal_equations():
    rng = np.random.default_rng(3)
    params = rng.normal(size=(6, 9))
    assert np.array_equal(smooth_patch_parameters(params, 0.0), params)
    assert np.allclose(smooth_patch_parameters(params, float("inf")), params.mean(axis=0))
    lam = 2.5
    L = np.zeros((6, 6))
    for n in range(5):
        L[n, n] += 1.0
        L[n + 1, n + 1] += 1.0
        L[n, n + 1] -= 1.0
        L[n + 1, n] -= 1.0
    dense = np.linalg.solve(np.eye(6) + lam * L, params)
    assert np.allclose(smooth_patch_parameters(params, lam), dense, atol=1e-12)
    with pytest.raises(ArgumentError):
        smooth_patch_parameters(params, -1.0)


def test_gyro_consistent_flow_echoes_the_gyro_array(small_intrinsics):
    gyro = rotational_gyro(small_intrinsics)
    f = homography_array_to_field(gyro, small_intrinsics, 128, 96)
    rng = np.random.default_rng(4)
    M = FusionMap(rng.uniform(0.0, 0.9, size=(96, 128)), 1, 0.0, 1.0)
    fitted = fit_rs_homography_array(f, M, gyro, 10.0, K=small_intrinsics, stride=2)
    assert np.max(np.abs(fitted.homographies - gyro.homographies)) < 1e-9


def test_constant_translation_is_shared_by_every_patch(small_intrinsics):
    gyro = rotational_gyro(small_intrinsics)
    base = homography_array_to_field(gyro, small_intrinsics, 128, 96)
    f = FlowField(base.u + 2.0, base.v + 1.0)
    fitted = fit_rs_homography_array(f, None, gyro, float("inf"), K=small_intrinsics, stride=2)
    T = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    expected = normalize_homography(T[None] @ gyro.homographies)
    assert np.max(np.abs(fitted.homographies - expected)) < 1e-6


def test_projective_residual_is_recovered_on_every_patch(small_intrinsics):
    gyro = rotational_gyro(small_intrinsics)
    residual = np.array([[1.01, 0.004, 1.5], [-0.003, 0.995, -0.8], [2e-5, 1e-5, 1.0]])
    rows = row_homographies(gyro, small_intrinsics, np.arange(96, dtype=np.float64))
    f = field_from_rows(residual[None] @ rows, 128, 96)
    fitted = fit_rs_homography_array(f, None, gyro, 10.0, K=small_intrinsics, stride=2)

    truth = normalize_homography(residual[None] @ gyro.homographies)
    p = grid_points()
    errors = [np.linalg.norm(project(fitted[n], p) - project(truth[n], p), axis=1) for n in range(14)]
    assert float(np.sqrt(np.mean(np.concatenate(errors) ** 2))) < 1e-5


def test_single_patch_without_smoothing_matches_the_global_fit():
    f = homography_to_field(PERSPECTIVE_H, 128, 96)
    rng = np.random.default_rng(5)
    f = FlowField(f.u + rng.normal(0, 0.3, f.shape), f.v + rng.normal(0, 0.3, f.shape))
    identity = HomographyArray.single(np.eye(3), 128, 96)
    fitted = fit_rs_homography_array(f, None, identity, 0.0, stride=8)
    single = fit_global_homography(f, None, stride=8)
    assert np.max(np.abs(fitted[0] - normalize_homography(single.H))) < 1e-9


def test_patch_without_support_inherits_the_gyro_homography(small_intrinsics, caplog):
    gyro = rotational_gyro(small_intrinsics)
    base = homography_array_to_field(gyro, small_intrinsics, 128, 96)
    f = FlowField(base.u + 2.0, base.v + 1.0)
    values = np.zeros((96, 128))
    top, bottom = gyro.patch_bounds()[0]
    values[top:bottom] = 1.0
    M = FusionMap(values, 1, 0.0, 1.0)
    with caplog.at_level(logging.WARNING, logger="gyroflow_services.homography_fit"):
        details = fit_rs_homography_details(f, M, gyro, 0.0, K=small_intrinsics, stride=2)
    assert details.inherited == [0]
    assert np.allclose(details.array[0], gyro[0], atol=1e-12)
    assert "patch 0 inherits" in caplog.text


def test_sub_threshold_residual_keeps_the_gyro_array(small_intrinsics):
    gyro = rotational_gyro(small_intrinsics)
    base = homography_array_to_field(gyro, small_intrinsics, 128, 96)
    f = FlowField(base.u + 0.03, base.v - 0.02)
    details = fit_rs_homography_details(f, None, gyro, 10.0, K=small_intrinsics, stride=2, min_gain=0.1)
    assert details.kept == list(range(gyro.patch_count))
    assert details.array is gyro

    refitted = fit_rs_homography_details(f, None, gyro, 10.0, K=small_intrinsics, stride=2, min_gain=0.0)
    assert refitted.kept == []
    assert np.allclose(refitted.array.homographies[:, 0, 2], gyro.homographies[:, 0, 2] + 0.03, atol=1e-3)


def test_array_size_must_match_the_flow(small_intrinsics):
    gyro = rotational_gyro(small_intrinsics)
    with pytest.raises(ArgumentError):
        fit_rs_homography_array(FlowField.zeros(64, 48), None, gyro, 1.0, K=small_intrinsics)


def test_homography_to_field_cases():
    assert np.array_equal(homography_to_field(np.eye(3), 8, 6).u, np.zeros((6, 8)))
    shift = homography_to_field(np.array([[1.0, 0.0, 2.5], [0.0, 1.0, -1.0], [0.0, 0.0, 1.0]]), 8, 6)
    assert np.allclose(shift.u, 2.5) and np.allclose(shift.v, -1.0)
    f = homography_to_field(PERSPECTIVE_H, 40, 30)
    g = homography_array_to_field(HomographyArray.single(PERSPECTIVE_H, 40, 30), None, 40, 30)
    assert np.array_equal(f.u, g.u) and np.array_equal(f.v, g.v)


@pytest.mark.slow
def test_translation_scene_fit_beats_the_gyro_array(small_intrinsics):
    spec = SynthSpec(
        intrinsics=small_intrinsics,
        trajectory=TrajectorySpec(axis=(0.0, 1.0, 0.0), rate=0.3),
        translation=TranslationSpec(velocity=(1.5, 0.5, 0.0), plane_depth=2.0),
        frame_count=2,
        texture_cell=8.0,
        seed=13,
    )
    seq = synth_sequence(spec)
    gyro = pair_gyro_array(seq)
    first = run_fusion(seq.images[0], seq.images[1], gyro, small_intrinsics, FusionParams())
    fitted = fit_rs_homography_array(first.flow, first.maps[1], gyro, 10.0, K=small_intrinsics, stride=2)
    gt_pairs = seq.gt_pairs[0]
    assert len(gt_pairs) >= 8
    assert pme(fitted, gt_pairs) < 0.8 * pme(gyro, gt_pairs)
