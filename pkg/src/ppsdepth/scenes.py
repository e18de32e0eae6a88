"""Procedural test scenes with exact depth and analytic normals.

Each scene kind is a closed surface patch that must cover the whole
frame; depth comes from closed-form ray-surface intersection per pixel,
so generated depth maps carry no discretization error.  Analytic normals
are available separately for use as test oracles against the finite
difference normals of the geometry module.

Scene kinds:

* ``plane``: z = z0 + slope_x * x + slope_y * y.
* ``sphere-cap``: patch of a sphere.  ``concave=True`` places the camera
  inside the sphere looking at the inner wall (bowl); ``concave=False``
  is a convex bump seen from outside, whose near cap must cover the frame.
* ``tube``: cylinder of radius ``radius`` parallel to the optical axis
  through (offset_x, offset_y), closed at distance ``length`` by a
  hemispherical end cap of the same radius (a test-tube interior).
* ``bump-field``: smooth multiplicative depth relief over a base plane,
  D(u, v) = z0 * (1 + amplitude * sin(2 pi freq_u u / W + phase_u)
                               * sin(2 pi freq_v v / H + phase_v)).

Albedo is either constant RGB or a smooth procedural pattern derived
deterministically from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, rays

__all__ = ["SceneSpec", "generate_scene", "analytic_normals", "standard_scene_suite"]

_KINDS = ("plane", "sphere-cap", "tube", "bump-field")
_ALBEDO_MODES = ("constant", "procedural")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene; fields are read per ``kind``."""

    kind: str
    # plane and bump-field
    z0: float = 2.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    # sphere-cap
    center: tuple[float, float, float] = (0.0, 0.0, 2.0)
    radius: float = 1.0
    concave: bool = True
    # tube
    length: float = 6.0
    offset_x: float = 0.0
    offset_y: float = 0.0
    # bump-field
    amplitude: float = 0.15
    freq_u: float = 2.0
    freq_v: float = 1.0
    phase_u: float = 0.0
    phase_v: float = 0.0
    # albedo
    albedo_mode: str = "constant"
    albedo_rgb: tuple[float, float, float] = (0.6, 0.45, 0.4)
    albedo_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}, expected one of {_KINDS}")
        if self.albedo_mode not in _ALBEDO_MODES:
            raise ValueError(
                f"unknown albedo mode {self.albedo_mode!r}, expected one of {_ALBEDO_MODES}"
            )
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.kind == "bump-field":
            if not 0.0 <= self.amplitude < 1.0:
                raise ValueError(
                    f"bump amplitude must lie in [0, 1) to keep depth positive, got {self.amplitude}"
                )
            if self.z0 <= 0.0:
                raise ValueError(f"bump base depth must be positive, got {self.z0}")
        if self.kind == "tube":
            if self.offset_x**2 + self.offset_y**2 >= self.radius**2:
                raise ValueError("camera must sit inside the tube (offset within radius)")
            if self.length <= 0.0:
                raise ValueError(f"tube length must be positive, got {self.length}")
        if self.kind == "sphere-cap":
            c = np.asarray(self.center, dtype=np.float64)
            inside = float(c @ c) < self.radius**2
            if self.concave and not inside:
                raise ValueError("concave sphere-cap requires the camera inside the sphere")
            if not self.concave and inside:
                raise ValueError("convex sphere-cap requires the camera outside the sphere")
        if not all(0.0 <= v <= 1.0 for v in self.albedo_rgb):
            raise ValueError(f"albedo_rgb must lie in [0, 1], got {self.albedo_rgb}")


def _uncovered_error(bad: np.ndarray, kind: str) -> ValueError:
    pix = np.argwhere(bad)
    listed = ", ".join(f"(u={u}, v={v})" for v, u in pix[:8])
    suffix = "" if len(pix) <= 8 else f" and {len(pix) - 8} more"
    return ValueError(f"{kind} surface does not cover the frame at pixels {listed}{suffix}")


def _plane_depth(spec: SceneSpec, r: np.ndarray) -> np.ndarray:
    # z = z0 + a x + b y with X = t * (rx, ry, 1):  t (1 - a rx - b ry) = z0
    denom = 1.0 - spec.slope_x * r[..., 0] - spec.slope_y * r[..., 1]
    bad = denom <= 1e-12
    if np.any(bad):
        raise _uncovered_error(bad, "plane")
    t = spec.z0 / denom
    if np.any(t <= 0.0):
        raise _uncovered_error(t <= 0.0, "plane")
    return t


def _sphere_depth(spec: SceneSpec, r: np.ndarray) -> np.ndarray:
    c = np.asarray(spec.center, dtype=np.float64)
    a = np.sum(r * r, axis=-1)
    b = r @ c
    c0 = float(c @ c) - spec.radius**2
    disc = b * b - a * c0
    if spec.concave:
        # camera inside: single positive root
        t = (b + np.sqrt(disc)) / a
    else:
        bad = disc <= 0.0
        if np.any(bad):
            raise _uncovered_error(bad, "sphere-cap")
        t = (b - np.sqrt(disc)) / a
    if np.any(t <= 0.0):
        raise _uncovered_error(t <= 0.0, "sphere-cap")
    return t


def _tube_depth(spec: SceneSpec, r: np.ndarray) -> np.ndarray:
    ax, ay, ell, rad = spec.offset_x, spec.offset_y, spec.length, spec.radius
    rx, ry = r[..., 0], r[..., 1]
    a2 = rx * rx + ry * ry
    b2 = rx * ax + ry * ay
    c2 = ax * ax + ay * ay - rad * rad  # < 0, camera inside
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cyl = (b2 + np.sqrt(b2 * b2 - a2 * c2)) / a2
    t_cyl = np.where(a2 > 0.0, t_cyl, np.inf)  # axis-parallel rays never hit the wall

    need_cap = ~(t_cyl <= ell)  # rays that pass the wall region unhit
    cap = np.array([ax, ay, ell])
    a = np.sum(r * r, axis=-1)
    b = r @ cap
    c0 = float(cap @ cap) - rad * rad
    disc = b * b - a * c0
    bad = need_cap & (disc <= 0.0)
    if np.any(bad):
        raise _uncovered_error(bad, "tube")
    t_cap = (b + np.sqrt(np.clip(disc, 0.0, None))) / a  # far root: inside of the end dome

    t = np.where(need_cap, t_cap, t_cyl)
    if not np.all(np.isfinite(t)) or np.any(t <= 0.0):
        raise _uncovered_error(~np.isfinite(t) | (t <= 0.0), "tube")
    return t


def _bump_depth(spec: SceneSpec, K: CameraIntrinsics) -> np.ndarray:
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    su = np.sin(2.0 * np.pi * spec.freq_u * uu / K.width + spec.phase_u)
    sv = np.sin(2.0 * np.pi * spec.freq_v * vv / K.height + spec.phase_v)
    return spec.z0 * (1.0 + spec.amplitude * su * sv)


def _procedural_albedo(spec: SceneSpec, K: CameraIntrinsics) -> np.ndarray:
    rng = np.random.default_rng(spec.albedo_seed)
    base = rng.uniform(0.35, 0.75, size=3)
    amp = rng.uniform(0.05, 0.18, size=3)
    fu = rng.integers(1, 4, size=3)
    fv = rng.integers(1, 4, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    rho = np.empty((K.height, K.width, 3))
    for ch in range(3):
        wave = np.sin(2.0 * np.pi * (fu[ch] * uu / K.width + fv[ch] * vv / K.height) + phase[ch])
        rho[..., ch] = base[ch] + amp[ch] * wave
    return np.clip(rho, 0.05, 1.0)


def generate_scene(spec: SceneSpec, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Exact depth map and ground-truth albedo for a scene.

    Returns:
        (depth, albedo) with shapes (H, W) and (H, W, 3).  Depth is
        strictly positive everywhere; a surface that fails to cover the
        frame raises with the offending pixels listed.
    """
    r = rays(K)
    if spec.kind == "plane":
        depth = _plane_depth(spec, r)
    elif spec.kind == "sphere-cap":
        depth = _sphere_depth(spec, r)
    elif spec.kind == "tube":
        depth = _tube_depth(spec, r)
    else:
        depth = _bump_depth(spec, K)

    if spec.albedo_mode == "constant":
        albedo = np.broadcast_to(
            np.asarray(spec.albedo_rgb, dtype=np.float64), depth.shape + (3,)
        ).copy()
    else:
        albedo = _procedural_albedo(spec, K)
    return depth, albedo


def analytic_normals(spec: SceneSpec, K: CameraIntrinsics) -> np.ndarray:
    """Closed-form unit normals of a scene, oriented away from the camera.

    Serves as an oracle for finite-difference normal estimation; exact up
    to the ray-surface intersection itself.
    """
    r = rays(K)
    depth, _ = generate_scene(spec, K)
    points = depth[..., None] * r

    if spec.kind == "plane":
        n = np.array([-spec.slope_x, -spec.slope_y, 1.0])
        n = n / np.linalg.norm(n)
        return np.broadcast_to(n, points.shape).copy()

    if spec.kind == "sphere-cap":
        c = np.asarray(spec.center, dtype=np.float64)
        n = (points - c) if spec.concave else (c - points)
        return n / spec.radius

    if spec.kind == "tube":
        cap = np.array([spec.offset_x, spec.offset_y, spec.length])
        on_wall = points[..., 2] <= spec.length
        radial = points - np.array([spec.offset_x, spec.offset_y, 0.0])
        radial[..., 2] = 0.0
        n_wall = radial / np.linalg.norm(radial, axis=-1, keepdims=True)
        n_cap = (points - cap) / spec.radius
        return np.where(on_wall[..., None], n_wall, n_cap)

    # bump-field: differentiate X(u, v) = D(u, v) * ray(u, v) exactly
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    au = 2.0 * np.pi * spec.freq_u / K.width
    av = 2.0 * np.pi * spec.freq_v / K.height
    su = np.sin(au * uu + spec.phase_u)
    cu = np.cos(au * uu + spec.phase_u)
    sv = np.sin(av * vv + spec.phase_v)
    cv = np.cos(av * vv + spec.phase_v)
    d_u = spec.z0 * spec.amplitude * au * cu * sv
    d_v = spec.z0 * spec.amplitude * av * su * cv
    e_u = np.zeros_like(points)
    e_u[..., 0] = 1.0 / K.fx
    e_v = np.zeros_like(points)
    e_v[..., 1] = 1.0 / K.fy
    xu = d_u[..., None] * r + depth[..., None] * e_u
    xv = d_v[..., None] * r + depth[..., None] * e_v
    n = np.cross(xu, xv)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def standard_scene_suite() -> list[SceneSpec]:
    """Fixed ten-scene benchmark used by the shading-correlation checks.

    A mix of tubes, bowls, bumps, and slanted planes with procedural
    albedo, frozen so correlation statistics are reproducible.
    """
    return [
        SceneSpec(kind="tube", radius=1.0, length=6.0, offset_x=0.05, offset_y=-0.03,
                  albedo_mode="procedural", albedo_seed=11),
        SceneSpec(kind="tube", radius=1.4, length=8.0, offset_x=-0.2, offset_y=0.1,
                  albedo_mode="procedural", albedo_seed=12),
        SceneSpec(kind="tube", radius=0.8, length=5.0, offset_x=0.0, offset_y=0.15,
                  albedo_mode="procedural", albedo_seed=13),
        SceneSpec(kind="tube", radius=1.1, length=7.0, offset_x=0.25, offset_y=0.2,
                  albedo_mode="procedural", albedo_seed=14),
        SceneSpec(kind="sphere-cap", center=(0.6, -0.4, 1.1), radius=1.45, concave=True,
                  albedo_mode="procedural", albedo_seed=15),
        SceneSpec(kind="sphere-cap", center=(-0.65, 0.45, 1.35), radius=1.65, concave=True,
                  albedo_mode="procedural", albedo_seed=16),
        SceneSpec(kind="bump-field", z0=2.0, amplitude=0.2, freq_u=2.0, freq_v=2.0,
                  phase_u=0.4, phase_v=1.1, albedo_mode="procedural", albedo_seed=17),
        SceneSpec(kind="bump-field", z0=3.0, amplitude=0.3, freq_u=1.0, freq_v=3.0,
                  phase_u=2.0, phase_v=0.3, albedo_mode="procedural", albedo_seed=18),
        SceneSpec(kind="plane", z0=2.0, slope_x=0.4, slope_y=-0.2,
                  albedo_mode="procedural", albedo_seed=19),
        SceneSpec(kind="sphere-cap", center=(0.2, 0.1, 6.0), radius=5.0, concave=False,
                  albedo_mode="procedural", albedo_seed=20),
    ]
