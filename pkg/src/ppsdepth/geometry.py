"""Pinhole camera geometry, per-pixel lighting, and shading fields.

Conventions used throughout the package:

* The camera sits at the origin of the scene frame and looks down +z.
* Pixel (u, v) indexes pixel centers, with u in [0, W) running along
  columns and v in [0, H) along rows, no half-pixel offset.  Dense
  per-pixel maps are numpy arrays indexed ``[v, u]``.
* Normals are oriented away from the camera: a fronto-parallel plane
  has normal (0, 0, 1).  Light directions point from the light toward
  the surface, so lit visible geometry has ``light_dir . normal >= 0``
  and shading clamps negative dot products to zero.
* Everything is float64 and pure; no function keeps global state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "LightSpec",
    "NormalMap",
    "PPSField",
    "rays",
    "backproject",
    "project",
    "grid_partials",
    "normals_from_points",
    "compute_ppl",
    "compute_pps",
    "pps_from_depth",
    "pps_from_depth_backward",
]

# Surface points closer to the light than this are treated as a modeling
# error (the light would sit on the surface and attenuation diverges).
LIGHT_DISTANCE_EPS = 1e-9

# Cross products shorter than this mark a degenerate normal.
DEGENERATE_CROSS_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole projection parameters, in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        """(H, W) array shape of maps under this camera."""
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class LightSpec:
    """Point light with an optional angular falloff.

    ``mu`` is the angular-spread exponent: attenuation carries a factor
    ``(light_dir . direction)**mu``.  With ``mu = 0`` the light is an
    isotropic point source and ``direction`` is ignored.
    """

    position: np.ndarray
    direction: np.ndarray
    mu: float = 0.0

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "direction", d)
        if self.mu < 0.0:
            raise ValueError(f"angular exponent mu must be >= 0, got {self.mu}")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("light direction must be a unit vector")

    @classmethod
    def colocated(cls, mu: float = 0.0) -> "LightSpec":
        """Light at the camera origin pointing down the optical axis."""
        return cls(position=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]), mu=mu)


@dataclass
class NormalMap:
    """Unit normals per pixel plus a validity mask for degenerate pixels."""

    normals: np.ndarray  # (H, W, 3), unit length where valid
    valid: np.ndarray  # (H, W) bool


@dataclass
class PPSField:
    """Per-pixel lighting and shading evaluated on a depth map.

    ``light_dirs`` are unit vectors from the light to each surface point,
    ``attenuation`` is the distance/angular falloff, ``pps`` the shading
    value, and ``valid`` marks pixels whose normal was well defined.
    """

    light_dirs: np.ndarray  # (H, W, 3)
    attenuation: np.ndarray  # (H, W), > 0
    pps: np.ndarray  # (H, W), >= 0
    valid: np.ndarray  # (H, W) bool


def _as_map(arr: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {a.shape}")
    return a


def rays(K: CameraIntrinsics) -> np.ndarray:
    """Unnormalized viewing rays K^-1 (u, v, 1) per pixel, shape (H, W, 3).

    The z component is 1, so a point at depth D along the ray has z = D.
    """
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    r = np.empty((K.height, K.width, 3))
    r[..., 0] = (uu - K.cx) / K.fx
    r[..., 1] = (vv - K.cy) / K.fy
    r[..., 2] = 1.0
    return r


def backproject(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Lift a depth map to camera-frame 3-d points, shape (H, W, 3).

    Depth is the z coordinate (not ray length): X(u, v) = D(u, v) * K^-1 (u, v, 1).
    """
    d = _as_map(depth, "depth")
    if d.shape != K.shape:
        raise ValueError(f"depth shape {d.shape} does not match camera {K.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("depth map contains non-finite values")
    if np.any(d <= 0.0):
        raise ValueError("depth map must be strictly positive")
    return d[..., None] * rays(K)


def project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points to (possibly fractional) pixel coordinates.

    Accepts a single (3,) point or any (..., 3) array; returns (..., 2)
    with columns (u, v).  Points with z <= 0 are behind the camera and
    rejected.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"points must have a trailing dimension of 3, got {p.shape}")
    z = p[..., 2]
    if np.any(z <= 0.0):
        raise ValueError("cannot project points with z <= 0")
    uv = np.empty(p.shape[:-1] + (2,))
    uv[..., 0] = K.fx * p[..., 0] / z + K.cx
    uv[..., 1] = K.fy * p[..., 1] / z + K.cy
    return uv


def _axis_diff(field: np.ndarray, axis: int) -> np.ndarray:
    """Central differences along ``axis``; one-sided at the two borders."""
    f = np.moveaxis(field, axis, 0)
    if f.shape[0] < 2:
        raise ValueError("need at least 2 samples along each image axis")
    g = np.empty_like(f)
    g[1:-1] = 0.5 * (f[2:] - f[:-2])
    g[0] = f[1] - f[0]
    g[-1] = f[-1] - f[-2]
    return np.moveaxis(g, 0, axis)


def _axis_diff_adjoint(grad: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`_axis_diff` as a linear operator."""
    g = np.moveaxis(grad, axis, 0)
    out = np.zeros_like(g)
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return np.moveaxis(out, 0, axis)


def grid_partials(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel tangents (dX/du, dX/dv) of a point map.

    Central differences in the interior, one-sided at image borders.
    u runs along array axis 1 (columns), v along axis 0 (rows).
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 3 or p.shape[-1] != 3:
        raise ValueError(f"point map must have shape (H, W, 3), got {p.shape}")
    return _axis_diff(p, axis=1), _axis_diff(p, axis=0)


def normals_from_points(points: np.ndarray) -> NormalMap:
    """Surface normals of a point map via the cross product of its tangents.

    Normals are unit length and oriented away from the camera (a
    fronto-parallel plane maps to (0, 0, 1)).  Pixels whose tangent
    cross product is degenerate are flagged invalid and carry the
    placeholder normal (0, 0, 1); callers must exclude them downstream.
    """
    xu, xv = grid_partials(points)
    c = np.cross(xu, xv)
    cn = np.linalg.norm(c, axis=-1)
    valid = cn > DEGENERATE_CROSS_EPS
    safe = np.where(valid, cn, 1.0)
    n = c / safe[..., None]
    n[~valid] = (0.0, 0.0, 1.0)
    return NormalMap(normals=n, valid=valid)


def compute_ppl(
    points: np.ndarray, light: LightSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel lighting: unit light directions and scalar attenuation.

    For a surface point X, the light direction is L = (X - p) / |X - p|
    and the attenuation A = (L . d)^mu / |X - p|^2.  With mu = 0 the
    angular factor is identically 1 and the light's direction is ignored;
    for mu > 0 a surface point behind the emission cone (L . d <= 0)
    receives zero attenuation.

    Returns:
        (light_dirs, attenuation) with shapes (H, W, 3) and (H, W).

    Raises:
        ValueError: if any surface point coincides with the light position.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 3 or p.shape[-1] != 3:
        raise ValueError(f"point map must have shape (H, W, 3), got {p.shape}")
    offset = p - light.position
    dist = np.linalg.norm(offset, axis=-1)
    if np.any(dist < LIGHT_DISTANCE_EPS):
        bad = np.argwhere(dist < LIGHT_DISTANCE_EPS)
        v, u = bad[0]
        raise ValueError(
            f"surface point at pixel (u={u}, v={v}) coincides with the light position"
        )
    ldirs = offset / dist[..., None]
    if light.mu == 0.0:
        atten = 1.0 / (dist * dist)
    else:
        cos_emit = np.clip(ldirs @ light.direction, 0.0, None)
        atten = cos_emit**light.mu / (dist * dist)
    return ldirs, atten


def compute_pps(
    light_dirs: np.ndarray, attenuation: np.ndarray, normals: NormalMap | np.ndarray
) -> np.ndarray:
    """Per-pixel shading: attenuation times the clamped light/normal cosine.

    Negative cosines (surfaces facing away from the light) clamp to zero.
    Invalid-normal pixels produce zero shading; the caller is expected to
    mask them out via the normal map's validity.
    """
    if isinstance(normals, NormalMap):
        n, valid = normals.normals, normals.valid
    else:
        n = np.asarray(normals, dtype=np.float64)
        valid = None
    l = np.asarray(light_dirs, dtype=np.float64)
    a = np.asarray(attenuation, dtype=np.float64)
    if l.shape != n.shape or l.shape[:-1] != a.shape:
        raise ValueError(
            f"shape mismatch: light_dirs {l.shape}, attenuation {a.shape}, normals {n.shape}"
        )
    cos = np.clip(np.sum(l * n, axis=-1), 0.0, None)
    pps = a * cos
    if valid is not None:
        pps = np.where(valid, pps, 0.0)
    return pps


def pps_from_depth(
    depth: np.ndarray, K: CameraIntrinsics, light: LightSpec
) -> PPSField:
    """Full shading chain: depth -> points -> normals -> lighting -> shading."""
    points = backproject(depth, K)
    nmap = normals_from_points(points)
    ldirs, atten = compute_ppl(points, light)
    pps = compute_pps(ldirs, atten, nmap)
    return PPSField(light_dirs=ldirs, attenuation=atten, pps=pps, valid=nmap.valid)


def pps_from_depth_backward(
    depth: np.ndarray,
    K: CameraIntrinsics,
    light: LightSpec,
    grad_pps: np.ndarray,
) -> np.ndarray:
    """Adjoint of :func:`pps_from_depth`: pull a shading cotangent back to depth.

    Given dLoss/dPPS per pixel, returns dLoss/dDepth per pixel, chaining
    through backprojection, the normal stencil, lighting, and the shading
    clamp.  The stencil scatter mirrors :func:`grid_partials` exactly
    (central interior, one-sided borders), so the result matches finite
    differences of the forward chain.

    Clamped quantities (shading cosine at zero, angular falloff outside the
    emission cone) contribute zero gradient, and pixels with degenerate
    normals are treated as constants.
    """
    d = _as_map(depth, "depth")
    g_in = np.asarray(grad_pps, dtype=np.float64)
    if g_in.shape != d.shape:
        raise ValueError(f"grad_pps shape {g_in.shape} does not match depth {d.shape}")

    r = rays(K)
    x = backproject(d, K)
    xu, xv = grid_partials(x)
    c = np.cross(xu, xv)
    cn = np.linalg.norm(c, axis=-1)
    valid = cn > DEGENERATE_CROSS_EPS
    safe_cn = np.where(valid, cn, 1.0)
    n = c / safe_cn[..., None]
    n[~valid] = (0.0, 0.0, 1.0)

    offset = x - light.position
    dist = np.linalg.norm(offset, axis=-1)
    if np.any(dist < LIGHT_DISTANCE_EPS):
        raise ValueError("surface point coincides with the light position")
    ldirs = offset / dist[..., None]
    if light.mu == 0.0:
        atten = 1.0 / (dist * dist)
    else:
        w = ldirs @ light.direction
        atten = np.clip(w, 0.0, None) ** light.mu / (dist * dist)

    s = np.sum(ldirs * n, axis=-1)
    lit = s > 0.0

    g = np.where(valid, g_in, 0.0)

    # pps = atten * max(s, 0)
    g_atten = g * np.where(lit, s, 0.0)
    g_s = g * atten * lit

    g_x = np.zeros_like(x)

    # attenuation path: total derivative of A with respect to X
    if light.mu == 0.0:
        g_x += g_atten[..., None] * (-2.0 * offset / (dist**4)[..., None])
    else:
        active = w > 0.0
        wc = np.where(active, w, 1.0)  # placeholder where inactive
        term = (
            (light.mu * wc ** (light.mu - 1.0))[..., None]
            * (light.direction - wc[..., None] * ldirs)
            - 2.0 * (wc**light.mu)[..., None] * ldirs
        ) / (dist**3)[..., None]
        g_x += np.where(active[..., None], g_atten[..., None] * term, 0.0)

    # shading cosine path: s = L . n
    g_l = g_s[..., None] * n
    g_n = g_s[..., None] * ldirs

    # L = offset / dist (projection onto the unit sphere)
    g_x += (g_l - ldirs * np.sum(ldirs * g_l, axis=-1, keepdims=True)) / dist[..., None]

    # n = c / |c|, then c = xu x xv
    g_c = np.where(
        valid[..., None],
        (g_n - n * np.sum(n * g_n, axis=-1, keepdims=True)) / safe_cn[..., None],
        0.0,
    )
    g_xu = np.cross(xv, g_c)
    g_xv = np.cross(g_c, xu)
    g_x += _axis_diff_adjoint(g_xu, axis=1)
    g_x += _axis_diff_adjoint(g_xv, axis=0)

    # X = depth * ray
    return np.sum(g_x * r, axis=-1)
