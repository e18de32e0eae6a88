"""Gradient-descent depth refinement and its preconditioned descent metric."""

import numpy as np
import pytest

from ppsdepth import (
    RefineConfig,
    RefineResult,
    RenderModel,
    depth_metrics,
    objective_and_gradient,
    refine_depth,
    render,
)
from ppsdepth.refine import _dct_basis, _smooth_gradient


def tube_problem(tube32, cam32, light):
    """Ground truth depth plus its own rendering under constant albedo."""
    gt, _ = tube32
    albedo = np.full(gt.shape + (3,), 0.7)
    res = render(gt, cam32, light, albedo, RenderModel())
    assert not res.clamped.any()
    return gt, res.image


# ---------------------------------------------------------------------------
# objective + gradient


def test_gradient_matches_directional_fd(tube32, cam32, light):
    gt, image = tube_problem(tube32, cam32, light)
    rng = np.random.default_rng(0)
    z = np.log(gt) + 0.05 * rng.standard_normal(gt.shape)
    value, grad = objective_and_gradient(np.exp(z), image, cam32, light)
    assert np.isfinite(value)
    h = 1e-6
    for seed in range(3):
        w = np.random.default_rng(seed).standard_normal(gt.shape)
        w /= np.abs(w).max()
        f_hi, _ = objective_and_gradient(np.exp(z + h * w), image, cam32, light)
        f_lo, _ = objective_and_gradient(np.exp(z - h * w), image, cam32, light)
        fd = (f_hi - f_lo) / (2.0 * h)
        analytic = float((grad * w).sum())
        assert abs(fd - analytic) < 1e-4 * max(abs(fd), abs(analytic)), seed


def test_gradient_has_no_global_scale_component(tube32, cam32, light):
    # both loss terms ignore a uniform shift of log depth, so the gradient
    # must be orthogonal to the all-ones direction
    gt, image = tube_problem(tube32, cam32, light)
    rng = np.random.default_rng(1)
    depth = gt * np.exp(0.05 * rng.standard_normal(gt.shape))
    _, grad = objective_and_gradient(depth, image, cam32, light)
    assert abs(grad.sum()) < 1e-8 * (1.0 + np.abs(grad).sum())


def test_objective_shape_mismatch(cam16):
    from ppsdepth import LightSpec

    with pytest.raises(ValueError, match="shape mismatch"):
        objective_and_gradient(
            np.ones((8, 8)), np.ones((16, 16)), cam16, LightSpec.colocated()
        )


# ---------------------------------------------------------------------------
# descent metric machinery


def test_dct_basis_is_orthonormal():
    for n in (4, 8, 13):
        c = _dct_basis(n)
        np.testing.assert_allclose(c @ c.T, np.eye(n), atol=1e-12)


def test_smooth_gradient_solves_screened_poisson():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((16, 12))
    lam = 7.3
    u = _smooth_gradient(g, lam)
    padded = np.pad(u, 1, mode="edge")  # reflecting (Neumann) boundary
    lap = (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        - 4.0 * u
    )
    np.testing.assert_allclose(u - lam * lap, g, atol=1e-10)


def test_smooth_gradient_preserves_mean():
    # the solve damps oscillations but must not touch the constant mode
    rng = np.random.default_rng(3)
    g = rng.standard_normal((12, 12))
    u = _smooth_gradient(g, 25.0)
    assert u.mean() == pytest.approx(g.mean(), abs=1e-12)
    assert u.std() < g.std()


# ---------------------------------------------------------------------------
# the optimizer itself


def test_refine_at_the_optimum_stops_immediately(tube32, cam32, light):
    gt, image = tube_problem(tube32, cam32, light)
    config = RefineConfig(max_iters=50, weight_smooth=0.0)
    result = refine_depth(gt, image, cam32, light, config=config)
    assert result.converged
    assert result.iterations_used <= 1
    np.testing.assert_allclose(result.refined, gt, rtol=1e-12)


def test_refine_trace_is_strictly_decreasing(tube32, cam32, light):
    gt, image = tube_problem(tube32, cam32, light)
    rng = np.random.default_rng(4)
    init = gt * np.exp(0.1 * rng.standard_normal(gt.shape))
    config = RefineConfig(max_iters=30, step_size=1.0, stop_tol=0.0)
    result = refine_depth(init, image, cam32, light, config=config)
    assert isinstance(result, RefineResult)
    assert len(result.loss_trace) == result.iterations_used + 1
    assert np.all(np.diff(result.loss_trace) < 0.0)


def test_refine_is_deterministic(tube32, cam32, light):
    gt, image = tube_problem(tube32, cam32, light)
    init = gt * (1.0 + 0.2 * np.sin(2.0 * np.pi * np.arange(32) / 32.0))[None, :]
    config = RefineConfig(max_iters=20, step_size=10.0, grad_smooth=100.0,
                          weight_smooth=0.01, stop_tol=0.0)
    a = refine_depth(init, image, cam32, light, config=config)
    b = refine_depth(init, image, cam32, light, config=config)
    np.testing.assert_array_equal(a.refined, b.refined)
    assert a.loss_trace == b.loss_trace
    assert a.iterations_used == b.iterations_used


def test_refine_recovers_low_frequency_error(tube32, cam32, light):
    # a smooth sinusoidal warp of the true depth: exactly the error mode the
    # preconditioned descent is built to remove
    gt, image = tube_problem(tube32, cam32, light)
    init = gt * (1.0 + 0.2 * np.sin(2.0 * np.pi * np.arange(32) / 32.0))[None, :]
    config = RefineConfig(max_iters=50, step_size=10.0, weight_smooth=0.01,
                          grad_smooth=100.0, stop_tol=0.0)
    result = refine_depth(init, image, cam32, light, config=config)
    before = depth_metrics(init, gt, align="ssi").rmse
    after = depth_metrics(result.refined, gt, align="ssi").rmse
    assert after < 0.6 * before  # calibrated run achieves ~0.33x
    assert np.all(np.diff(result.loss_trace) < 0.0)


def test_refine_pull_toward_reference():
    from ppsdepth import CameraIntrinsics, LightSpec

    K = CameraIntrinsics(fx=6.0, fy=6.0, cx=3.5, cy=3.5, width=8, height=8)
    ref = np.full((8, 8), 3.0)
    config = RefineConfig(
        max_iters=200, step_size=1.0, weight_corr=0.0, weight_smooth=0.0,
        ref_depth=ref, ref_weight=1.0, stop_tol=0.0,
    )
    init = np.full((8, 8), 2.0)
    image = np.full((8, 8), 0.5)
    result = refine_depth(init, image, K, LightSpec.colocated(), config=config)
    assert result.loss_trace[0] == pytest.approx(1.0)
    assert result.loss_trace[-1] < 0.01 * result.loss_trace[0]
    assert 2.9 < result.refined.min() <= result.refined.max() < 3.1


def test_refine_smoothness_only_flattens_noise():
    from ppsdepth import CameraIntrinsics, LightSpec

    K = CameraIntrinsics(fx=6.0, fy=6.0, cx=3.5, cy=3.5, width=8, height=8)
    rng = np.random.default_rng(7)
    noisy = 2.0 * (1.0 + 0.2 * (rng.random((8, 8)) - 0.5))
    image = np.full((8, 8), 0.5)
    config = RefineConfig(max_iters=150, weight_corr=0.0, weight_smooth=1.0,
                          stop_tol=0.0)
    result = refine_depth(noisy, image, K, LightSpec.colocated(), config=config)
    assert result.loss_trace[-1] < 0.5 * result.loss_trace[0]


def test_refine_rejects_bad_initial_depth(cam16, light):
    image = np.full((16, 16), 0.5)
    with pytest.raises(ValueError, match="strictly positive"):
        refine_depth(np.zeros((16, 16)), image, cam16, light)


def test_refine_reports_degenerate_start(tube32, cam32, light):
    gt, _ = tube32
    flat_image = np.full(gt.shape, 0.5)  # constant reference: correlation undefined
    with pytest.raises(ValueError, match="initial iterate"):
        refine_depth(gt, flat_image, cam32, light)


def test_refine_config_validation():
    with pytest.raises(ValueError, match="step_size"):
        RefineConfig(step_size=0.0)
    with pytest.raises(ValueError, match="max_iters"):
        RefineConfig(max_iters=0)
    with pytest.raises(ValueError, match="reference depth"):
        RefineConfig(ref_weight=1.0)
    with pytest.raises(ValueError, match="parameterization"):
        RefineConfig(parameterization="depth")
    with pytest.raises(ValueError, match="grad_smooth"):
        RefineConfig(grad_smooth=-1.0)
    with pytest.raises(ValueError, match="stop_tol"):
        RefineConfig(stop_tol=-1e-3)
    with pytest.raises(ValueError, match="strictly positive"):
        RefineConfig(ref_depth=np.zeros((4, 4)), ref_weight=1.0)
