"""Image photometrics: luminance, specular masking, albedo, and rendering.

Images are float64 arrays in [0, 1]: RGB maps have shape (H, W, 3) and
grayscale maps (H, W).  The renderer implements a near-field image
formation model: light at position p with angular spread exponent mu_r,
inverse-square distance falloff, Lambertian surface response, per-channel
albedo, a global gain, and display gamma:

    I_c = clamp_01( (sigma0 / |X-p|^2 * R(psi) * cos(theta) * rho_c * g) ** (1/gamma) )

with R(psi) = (L . d)^mu_r the angular falloff of the source (identically
1 for mu_r = 0) and cos(theta) the clamped light/normal cosine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    LightSpec,
    backproject,
    normals_from_points,
)

__all__ = [
    "REC601_WEIGHTS",
    "SPECULAR_THRESHOLD",
    "RenderModel",
    "RenderResult",
    "luminance",
    "specular_mask",
    "albedo_proxy",
    "render",
    "invert_albedo",
    "albedo_variance_loss",
]

# Rec. 601 luma weights for RGB -> grayscale.
REC601_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Default near-saturation cutoff for the specular mask.
SPECULAR_THRESHOLD = 0.98

# Pixels where the angular-times-cosine denominator falls below this are
# too weakly lit for a stable albedo inversion and are marked invalid.
ALBEDO_DENOM_EPS = 1e-6


def _check_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"RGB image must have shape (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return np.clip(img, 0.0, 1.0)


def _check_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"grayscale image must have shape (H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class RenderModel:
    """Radiometric parameters of the forward renderer."""

    sigma0: float = 1.0  # source intensity
    gain: float = 1.0  # global gain
    gamma: float = 1.0  # display gamma (1 = linear)
    mu_r: float = 0.0  # angular spread exponent of the source

    def __post_init__(self) -> None:
        if self.sigma0 <= 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.gain <= 0.0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.mu_r < 0.0:
            raise ValueError(f"mu_r must be >= 0, got {self.mu_r}")


@dataclass
class RenderResult:
    """Rendered image plus the pixels that saturated the [0, 1] clamp."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    clamped: np.ndarray  # (H, W) bool, True where any channel exceeded 1


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 grayscale of an RGB image, clipped to [0, 1]."""
    img = _check_rgb(image)
    return np.clip(img @ REC601_WEIGHTS, 0.0, 1.0)


def specular_mask(gray: np.ndarray, threshold: float = SPECULAR_THRESHOLD) -> np.ndarray:
    """Validity mask that drops near-saturated (specular) pixels.

    A pixel is valid iff its intensity is strictly below ``threshold``;
    pixels at or above it are treated as specular highlights.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    g = _check_gray(gray)
    return g < threshold


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0.0, c / np.where(v > 0.0, v, 1.0), 0.0)
    # hue in [0, 1); 0 where the pixel is achromatic
    h = np.zeros_like(v)
    nz = c > 0.0
    cc = np.where(nz, c, 1.0)
    rmax = nz & (v == r)
    gmax = nz & (v == g) & ~rmax
    bmax = nz & (v == b) & ~rmax & ~gmax
    h = np.where(rmax, ((g - b) / cc) % 6.0, h)
    h = np.where(gmax, (b - r) / cc + 2.0, h)
    h = np.where(bmax, (r - g) / cc + 4.0, h)
    return h / 6.0, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def albedo_proxy(image: np.ndarray) -> np.ndarray:
    """Shading-free chroma proxy: normalize HSV value to 1 and convert back.

    Keeps hue and saturation while discarding the brightness component,
    which mostly carries shading.  Achromatic pixels (including black)
    map to white.
    """
    img = _check_rgb(image)
    h, s, _ = _rgb_to_hsv(img)
    return _hsv_to_rgb(h, s, np.ones_like(s))


def render(
    depth: np.ndarray,
    K: CameraIntrinsics,
    light: LightSpec,
    albedo: np.ndarray,
    model: RenderModel = RenderModel(),
) -> RenderResult:
    """Render an RGB image from depth, light, and per-channel albedo.

    Surface normals come from the depth map itself (finite differences of
    the backprojected points), so the render is consistent with the
    package's shading chain.  Intensities clamp to [0, 1]; the returned
    ``clamped`` mask reports saturated pixels so callers can exclude them.
    """
    rho = _check_rgb(albedo)
    points = backproject(depth, K)
    if rho.shape[:2] != points.shape[:2]:
        raise ValueError(f"albedo shape {rho.shape} does not match depth {points.shape[:2]}")
    nmap = normals_from_points(points)

    offset = points - light.position
    dist = np.linalg.norm(offset, axis=-1)
    if np.any(dist < 1e-9):
        raise ValueError("surface point coincides with the light position")
    ldirs = offset / dist[..., None]
    if model.mu_r == 0.0:
        angular = np.ones_like(dist)
    else:
        angular = np.clip(ldirs @ light.direction, 0.0, None) ** model.mu_r
    cos = np.clip(np.sum(ldirs * nmap.normals, axis=-1), 0.0, None)
    cos = np.where(nmap.valid, cos, 0.0)

    radiance = (model.sigma0 / (dist * dist)) * angular * cos
    raw = radiance[..., None] * rho * model.gain
    img = raw ** (1.0 / model.gamma)
    clamped = np.any(img > 1.0, axis=-1)
    return RenderResult(image=np.clip(img, 0.0, 1.0), clamped=clamped)


def invert_albedo(
    image: np.ndarray,
    depth: np.ndarray,
    K: CameraIntrinsics,
    light: LightSpec,
    model: RenderModel = RenderModel(),
) -> tuple[np.ndarray, np.ndarray]:
    """Recover per-channel albedo from an image and known geometry.

    Inverts the render model with unit source intensity and gain:
    rho_c = |X-p|^2 * I_c^gamma / (R(psi) * cos(theta)).  Pixels whose
    angular-times-cosine denominator falls below ``ALBEDO_DENOM_EPS``
    (grazing or unlit surfaces) are returned as zero and flagged invalid
    rather than extrapolated.

    Returns:
        (albedo, valid) with shapes (H, W, 3) and (H, W).
    """
    img = _check_rgb(image)
    points = backproject(depth, K)
    if img.shape[:2] != points.shape[:2]:
        raise ValueError(f"image shape {img.shape} does not match depth {points.shape[:2]}")
    nmap = normals_from_points(points)

    offset = points - light.position
    dist = np.linalg.norm(offset, axis=-1)
    if np.any(dist < 1e-9):
        raise ValueError("surface point coincides with the light position")
    ldirs = offset / dist[..., None]
    if model.mu_r == 0.0:
        angular = np.ones_like(dist)
    else:
        angular = np.clip(ldirs @ light.direction, 0.0, None) ** model.mu_r
    cos = np.clip(np.sum(ldirs * nmap.normals, axis=-1), 0.0, None)

    denom = angular * cos
    valid = (denom >= ALBEDO_DENOM_EPS) & nmap.valid
    safe = np.where(valid, denom, 1.0)
    rho = (dist * dist)[..., None] * img**model.gamma / safe[..., None]
    rho = np.where(valid[..., None], rho, 0.0)
    return rho, valid


def albedo_variance_loss(albedo: np.ndarray, mask: np.ndarray) -> float:
    """Mean per-channel population variance of albedo over valid pixels.

    Low values mean the albedo field is nearly constant, the regularity a
    piecewise-uniform surface is expected to satisfy.
    """
    rho = np.asarray(albedo, dtype=np.float64)
    if rho.ndim != 3 or rho.shape[-1] != 3:
        raise ValueError(f"albedo must have shape (H, W, 3), got {rho.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != rho.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match albedo {rho.shape[:2]}")
    n = int(m.sum())
    if n < 2:
        raise ValueError(f"albedo variance needs at least 2 valid pixels, got {n}")
    vals = rho[m]  # (n, 3)
    return float(np.mean(np.var(vals, axis=0)))
