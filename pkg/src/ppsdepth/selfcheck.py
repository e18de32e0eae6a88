"""Built-in invariant suite behind the ``selfcheck`` CLI subcommand.

Each check exercises one analytic property the library must satisfy on
synthetic data: the inverse-square law, analytic-vs-numeric gradient
agreement, scale-gauge invariance of the correlation loss, metric
sanity, and the network wiring identities.  All checks are deterministic
and complete in seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import (
    CameraIntrinsics,
    LightSpec,
    backproject,
    compute_ppl,
    pps_from_depth,
    pps_from_depth_backward,
)
from .losses import (
    depth_metrics,
    pps_corr_loss,
    pps_corr_loss_grad,
    pps_sup_loss,
    pps_sup_loss_grad,
    smoothness_reg,
    smoothness_reg_grad,
    ssi_loss,
    ssi_loss_grad,
)
from .photometrics import RenderModel, luminance, render
from .refine import RefineConfig, objective_and_gradient
from .refinenet import FiLMParams, ToyWeights, cross_attention, film_modulate, refinenet_forward
from .scenes import SceneSpec, generate_scene

__all__ = ["CheckResult", "run_selfcheck"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _camera(size: int) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=0.75 * size, fy=0.75 * size, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
        width=size, height=size,
    )


def _small_scene(seed: int, size: int = 8) -> np.ndarray:
    """Smooth, strictly positive seeded depth map for gradient checks."""
    rng = np.random.default_rng(seed)
    u = np.arange(size) / size
    v = np.arange(size) / size
    uu, vv = np.meshgrid(u, v)
    d = 2.0 + 0.4 * np.sin(2 * np.pi * uu + rng.uniform(0, 2 * np.pi))
    d = d * (1.0 + 0.3 * np.cos(2 * np.pi * vv + rng.uniform(0, 2 * np.pi)))
    return d * (1.0 + 0.02 * rng.standard_normal((size, size)))


def _fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central finite differences with per-element relative step."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        h = rel_step * max(abs(float(x[idx])), 1e-12)
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2.0 * h)
        it.iternext()
    return g


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_inverse_square() -> CheckResult:
    """Attenuation of a colocated isotropic light times squared distance is 1."""
    t0 = time.perf_counter()
    K = _camera(128)
    light = LightSpec.colocated(mu=0.0)
    worst = 0.0
    for spec in (
        SceneSpec(kind="tube", radius=1.0, length=6.0, offset_x=0.05, offset_y=-0.03),
        SceneSpec(kind="sphere-cap", center=(0.1, -0.1, 0.8), radius=2.0),
        SceneSpec(kind="bump-field", z0=2.0, amplitude=0.25, freq_u=2, freq_v=1),
    ):
        depth, _ = generate_scene(spec, K)
        points = backproject(depth, K)
        _, atten = compute_ppl(points, light)
        dist2 = np.sum((points - light.position) ** 2, axis=-1)
        worst = max(worst, float(np.max(np.abs(atten * dist2 - 1.0))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 1.0
    return CheckResult(
        "inverse-square law", ok, f"max |A*dist^2 - 1| = {worst:.3e}, {dt:.2f}s", dt
    )


def check_gradients() -> CheckResult:
    """Analytic loss gradients match central finite differences on 8x8 scenes."""
    t0 = time.perf_counter()
    K = _camera(8)
    light = LightSpec.colocated(mu=0.0)
    depth = _small_scene(3)
    gt_pps = pps_from_depth(_small_scene(4), K, light).pps
    rng = np.random.default_rng(5)
    gray = rng.uniform(0.2, 0.9, size=(8, 8))
    mask = rng.uniform(size=(8, 8)) < 0.92
    mask.flat[:2] = True
    errs = {}

    an = pps_from_depth_backward(
        depth, K, light, pps_sup_loss_grad(pps_from_depth(depth, K, light).pps, gt_pps, mask)
    )
    num = _fd_gradient(lambda d: pps_sup_loss(pps_from_depth(d, K, light).pps, gt_pps, mask), depth)
    errs["pps_sup"] = _max_rel_err(an, num)

    an = pps_from_depth_backward(
        depth, K, light, pps_corr_loss_grad(gray, pps_from_depth(depth, K, light).pps, mask)
    )
    num = _fd_gradient(lambda d: pps_corr_loss(gray, pps_from_depth(d, K, light).pps, mask), depth)
    errs["pps_corr"] = _max_rel_err(an, num)

    gt_depth = _small_scene(6)
    errs["ssi"] = _max_rel_err(
        ssi_loss_grad(depth, gt_depth, mask),
        _fd_gradient(lambda d: ssi_loss(d, gt_depth, mask), depth),
    )
    errs["smoothness"] = _max_rel_err(
        smoothness_reg_grad(depth, gray),
        _fd_gradient(lambda d: smoothness_reg(d, gray), depth),
    )

    cfg = RefineConfig(weight_corr=1.0, weight_smooth=0.05)
    _, an_log = objective_and_gradient(depth, gray, K, light, mask, cfg)

    def obj_of_z(z: np.ndarray) -> float:
        d = np.exp(z)
        fld = pps_from_depth(d, K, light)
        val = cfg.weight_corr * pps_corr_loss(gray, fld.pps, mask & fld.valid)
        return val + cfg.weight_smooth * smoothness_reg(d, gray)

    num_log = _fd_gradient(obj_of_z, np.log(depth))
    errs["objective"] = _max_rel_err(an_log, num_log)

    worst = max(errs.values())
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 30.0
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errs.items())
    return CheckResult("gradient correctness", ok, f"max rel err: {detail}; {dt:.2f}s", dt)


def check_scale_gauge() -> CheckResult:
    """Correlation loss is exactly invariant to global depth scale."""
    t0 = time.perf_counter()
    K = _camera(64)
    light = LightSpec.colocated(mu=0.0)
    spec = SceneSpec(kind="tube", radius=1.0, length=6.0, offset_x=0.05, offset_y=-0.03,
                     albedo_mode="procedural", albedo_seed=11)
    depth, albedo = generate_scene(spec, K)
    img = render(depth, K, light, albedo, RenderModel(sigma0=0.5, gamma=2.2)).image
    gray = luminance(img)
    mask = np.ones_like(gray, dtype=bool)
    base = pps_corr_loss(gray, pps_from_depth(depth, K, light).pps, mask)
    worst = 0.0
    for c in (0.5, 3.0, 10.0):
        scaled = pps_corr_loss(gray, pps_from_depth(c * depth, K, light).pps, mask)
        worst = max(worst, abs(scaled - base))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9
    return CheckResult(
        "scale-gauge invariance", ok, f"max |L(cD) - L(D)| = {worst:.3e} over c in (0.5, 3, 10)", dt
    )


def check_metric_sanity() -> CheckResult:
    """AbsRel and the 1.1-ratio fraction behave exactly on scaled depth."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    gt = rng.uniform(0.5, 5.0, size=(32, 32))
    mask = np.ones_like(gt, dtype=bool)
    r105 = depth_metrics(1.05 * gt, gt, mask)
    r120 = depth_metrics(1.2 * gt, gt, mask)
    ok = (
        abs(r105.abs_rel - 0.05) <= 1e-9
        and r105.delta_110 == 1.0
        and r120.delta_110 == 0.0
    )
    dt = time.perf_counter() - t0
    return CheckResult(
        "metric sanity",
        ok,
        f"abs_rel(1.05*gt) = {r105.abs_rel:.12f}, delta(1.05) = {r105.delta_110}, delta(1.2) = {r120.delta_110}",
        dt,
    )


def check_wiring() -> CheckResult:
    """Attention, FiLM, and residual identities of the toy network."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    problems = []

    v_single = rng.standard_normal((1, 5))
    out = cross_attention(rng.standard_normal((1, 4)), rng.standard_normal((1, 4)), v_single)
    if not np.allclose(out, v_single, atol=1e-12):
        problems.append("single-token attention != V")

    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((10, 8))
    scores = q @ k.T / np.sqrt(8.0)
    w = np.exp(scores - scores.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
        problems.append("softmax rows do not sum to 1")

    grid = rng.standard_normal((4, 4))
    if not np.array_equal(film_modulate(grid, FiLMParams([1.0], [0.0])), grid):
        problems.append("FiLM(gamma=1, beta=0) is not the identity")

    K = _camera(16)
    light = LightSpec.colocated()
    spec = SceneSpec(kind="bump-field", z0=2.0, amplitude=0.2, freq_u=1, freq_v=1)
    depth, albedo = generate_scene(spec, K)
    img = render(depth, K, light, albedo, RenderModel(sigma0=0.5)).image
    refined = refinenet_forward(img, depth, K, light, ToyWeights.zeros(feat_dim=8, channels=4))
    if not np.array_equal(refined, depth):
        problems.append("zero-weight forward is not the identity on depth")

    dt = time.perf_counter() - t0
    return CheckResult(
        "network wiring identities",
        not problems,
        "; ".join(problems) if problems else "single-token, row-sum, FiLM, residual identities hold",
        dt,
    )


def run_selfcheck() -> list[CheckResult]:
    """Run all checks; deterministic, a few seconds total."""
    return [
        check_inverse_square(),
        check_gradients(),
        check_scale_gauge(),
        check_metric_sanity(),
        check_wiring(),
    ]
