"""Shading-consistency losses, depth regularizers, and evaluation metrics.

Every loss takes dense float64 maps plus an explicit boolean validity
mask and returns a python float.  Losses that participate in gradient
based refinement come with a hand-derived gradient function (suffix
``_grad``) returning the derivative with respect to the prediction map;
these are exact, not finite-difference approximations.

Masking semantics differ by loss and are documented per function: the
supervised shading loss zeros masked residuals but normalizes by the
full pixel count, while the correlation loss excludes masked pixels from
the statistics entirely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "DegenerateCorrelationError",
    "LossWeights",
    "MetricReport",
    "pps_sup_loss",
    "pps_sup_loss_grad",
    "pps_corr_loss",
    "pps_corr_loss_grad",
    "ssi_align",
    "ssi_loss",
    "ssi_loss_grad",
    "smoothness_reg",
    "smoothness_reg_grad",
    "aggregate_loss",
    "depth_metrics",
]

# Relative variance floor below which a signal counts as constant for
# correlation purposes.
_VARIANCE_FLOOR = 1e-24


class DegenerateCorrelationError(ValueError):
    """Raised when a correlation loss sees a (near-)constant signal."""


def _check_pair(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None, names: str):
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    m = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if x.shape != y.shape or x.shape != m.shape:
        raise ValueError(f"{names}: shapes {x.shape}, {y.shape}, mask {m.shape} must match")
    if x.ndim != 2:
        raise ValueError(f"{names}: expected 2-d maps, got shape {x.shape}")
    return x, y, m


def pps_sup_loss(pps_pred: np.ndarray, pps_gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Masked mean squared shading error, normalized by the full pixel count.

    The sum runs over valid pixels only, but the normalizer is H*W, not
    the valid count, so sparser masks yield proportionally smaller loss.
    """
    pred, gt, m = _check_pair(pps_pred, pps_gt, mask, "pps_sup_loss")
    if not m.any():
        raise ValueError("pps_sup_loss: mask has no valid pixels")
    resid = np.where(m, pred - gt, 0.0)
    return float(np.sum(resid * resid) / pred.size)


def pps_sup_loss_grad(pps_pred: np.ndarray, pps_gt: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Derivative of :func:`pps_sup_loss` with respect to the prediction."""
    pred, gt, m = _check_pair(pps_pred, pps_gt, mask, "pps_sup_loss")
    if not m.any():
        raise ValueError("pps_sup_loss: mask has no valid pixels")
    return np.where(m, 2.0 * (pred - gt) / pred.size, 0.0)


def _corr_stats(x: np.ndarray, y: np.ndarray, m: np.ndarray):
    n = int(m.sum())
    if n < 2:
        raise ValueError(f"correlation needs at least 2 valid pixels, got {n}")
    xv = x[m]
    yv = y[m]
    xt = xv - xv.mean()
    yt = yv - yv.mean()
    sxx = float(xt @ xt)
    syy = float(yt @ yt)
    # scale-aware constancy check: variance negligible against the signal
    if sxx <= _VARIANCE_FLOOR * max(1.0, float(np.max(np.abs(xv))) ** 2) * n:
        raise DegenerateCorrelationError("reference signal is constant on the mask")
    if syy <= _VARIANCE_FLOOR * max(1.0, float(np.max(np.abs(yv))) ** 2) * n:
        raise DegenerateCorrelationError("shading signal is constant on the mask")
    return xt, yt, sxx, syy


def pps_corr_loss(gray: np.ndarray, pps_pred: np.ndarray, mask: np.ndarray | None = None) -> float:
    """One minus the Pearson correlation of intensity and predicted shading.

    Statistics run over valid pixels only; masked pixels are excluded,
    not zeroed, so the mask cannot manufacture correlation.  Constant
    signals raise :class:`DegenerateCorrelationError` so the caller can
    decide on a fallback instead of silently reading a loss of 1.
    """
    x, y, m = _check_pair(gray, pps_pred, mask, "pps_corr_loss")
    xt, yt, sxx, syy = _corr_stats(x, y, m)
    r = float(xt @ yt) / math.sqrt(sxx * syy)
    return 1.0 - r


def pps_corr_loss_grad(gray: np.ndarray, pps_pred: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Derivative of :func:`pps_corr_loss` with respect to the shading map."""
    x, y, m = _check_pair(gray, pps_pred, mask, "pps_corr_loss")
    xt, yt, sxx, syy = _corr_stats(x, y, m)
    sxy = float(xt @ yt)
    denom = math.sqrt(sxx * syy)
    # d r / d y_i = xt_i / denom - r * yt_i / syy on valid pixels
    dr = xt / denom - (sxy / denom) * yt / syy
    g = np.zeros_like(y)
    g[m] = -dr
    return g


def ssi_align(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float]:
    """Closed-form scale and shift aligning pred to gt in least squares.

    Solves min over (s, t) of sum_mask (s * pred + t - gt)^2 via the 2x2
    normal equations.  A constant prediction makes the system singular
    and raises.
    """
    p, g, m = _check_pair(pred, gt, mask, "ssi_align")
    n = int(m.sum())
    if n < 2:
        raise ValueError(f"ssi_align needs at least 2 valid pixels, got {n}")
    pv = p[m]
    gv = g[m]
    sp = pv.sum()
    spp = float(pv @ pv)
    var = spp / n - (sp / n) ** 2
    if var <= 1e-15 * max(1.0, spp / n):
        raise ValueError("ssi_align: prediction is constant on the mask, system is singular")
    a = np.array([[spp, sp], [sp, float(n)]])
    b = np.array([float(pv @ gv), gv.sum()])
    s, t = np.linalg.solve(a, b)
    return float(s), float(t)


def ssi_loss(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean squared error after optimal scale-and-shift alignment."""
    p, g, m = _check_pair(pred, gt, mask, "ssi_loss")
    s, t = ssi_align(p, g, m)
    resid = s * p[m] + t - g[m]
    return float(np.mean(resid * resid))


def ssi_loss_grad(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Derivative of :func:`ssi_loss` with respect to the prediction.

    (s, t) minimize the same residual, so by the envelope theorem their
    sensitivity to the prediction contributes nothing and the gradient is
    the partial at the optimal alignment.
    """
    p, g, m = _check_pair(pred, gt, mask, "ssi_loss")
    s, t = ssi_align(p, g, m)
    n = int(m.sum())
    grad = np.zeros_like(p)
    grad[m] = 2.0 * s * (s * p[m] + t - g[m]) / n
    return grad


def _forward_diff_terms(depth: np.ndarray, gray: np.ndarray):
    d = np.asarray(depth, dtype=np.float64)
    i = np.asarray(gray, dtype=np.float64)
    if d.shape != i.shape or d.ndim != 2:
        raise ValueError(f"smoothness_reg: depth {d.shape} and image {i.shape} must be equal 2-d shapes")
    if np.any(d <= 0.0):
        raise ValueError("smoothness_reg: depth must be strictly positive")
    logd = np.log(d)
    du_d = logd[:, 1:] - logd[:, :-1]
    dv_d = logd[1:, :] - logd[:-1, :]
    wu = np.exp(-np.abs(i[:, 1:] - i[:, :-1]))
    wv = np.exp(-np.abs(i[1:, :] - i[:-1, :]))
    return d, du_d, dv_d, wu, wv


def smoothness_reg(depth: np.ndarray, gray: np.ndarray) -> float:
    """Edge-aware log-depth smoothness penalty.

    Forward differences of log depth are weighted by exp(-|forward
    difference of intensity|), summed over both directions, and
    normalized by the pixel count H*W: image edges license depth edges,
    flat image regions penalize them.
    """
    d, du_d, dv_d, wu, wv = _forward_diff_terms(depth, gray)
    total = float(np.sum(np.abs(du_d) * wu) + np.sum(np.abs(dv_d) * wv))
    return total / d.size


def smoothness_reg_grad(depth: np.ndarray, gray: np.ndarray) -> np.ndarray:
    """Derivative of :func:`smoothness_reg` with respect to depth."""
    d, du_d, dv_d, wu, wv = _forward_diff_terms(depth, gray)
    g = np.zeros_like(d)
    su = np.sign(du_d) * wu / d.size
    g[:, 1:] += su / d[:, 1:]
    g[:, :-1] -= su / d[:, :-1]
    sv = np.sign(dv_d) * wv / d.size
    g[1:, :] += sv / d[1:, :]
    g[:-1, :] -= sv / d[:-1, :]
    return g


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the refinement loss terms."""

    ssi: float = 1.0
    reg: float = 0.1
    pps_sup: float = 1.0
    pps_corr: float = 1.0

    def __post_init__(self) -> None:
        for name in ("ssi", "reg", "pps_sup", "pps_corr"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


_TERM_NAMES = ("ssi", "reg", "pps_sup", "pps_corr")


def aggregate_loss(
    terms: Mapping[str, float],
    weights: LossWeights = LossWeights(),
    extra: Mapping[str, tuple[float, float]] | None = None,
) -> float:
    """Weighted sum of named loss terms.

    ``terms`` maps a subset of {ssi, reg, pps_sup, pps_corr} to values;
    ``extra`` adds externally weighted terms as name -> (weight, value)
    for losses this package does not compute itself.  Non-finite values
    raise with the offending term named.
    """
    total = 0.0
    for name, value in terms.items():
        if name not in _TERM_NAMES:
            raise ValueError(f"unknown loss term {name!r}, expected one of {_TERM_NAMES}")
        if not math.isfinite(value):
            raise ValueError(f"loss term {name!r} is non-finite: {value}")
        total += getattr(weights, name) * value
    if extra:
        for name, (w, value) in extra.items():
            if not math.isfinite(value) or not math.isfinite(w):
                raise ValueError(f"extra loss term {name!r} is non-finite: weight={w}, value={value}")
            total += w * value
    return total


@dataclass
class MetricReport:
    """Standard depth evaluation metrics over the valid pixels of one map."""

    rmse: float
    rmse_log: float
    abs_rel: float
    sq_rel_x1000: float
    delta_110: float  # fraction of pixels with max(pred/gt, gt/pred) < 1.1
    pixel_count: int
    log_excluded: int  # non-positive predictions dropped from ratio metrics
    align: str = "none"

    def to_text(self) -> str:
        """Flat key/value record, one metric per line."""
        lines = [
            f"rmse {self.rmse:.9g}",
            f"rmse_log {self.rmse_log:.9g}",
            f"abs_rel {self.abs_rel:.9g}",
            f"sq_rel_x1000 {self.sq_rel_x1000:.9g}",
            f"delta_110 {self.delta_110:.9g}",
            f"pixel_count {self.pixel_count}",
            f"log_excluded {self.log_excluded}",
            f"align {self.align}",
        ]
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "rmse": self.rmse,
                "rmse_log": self.rmse_log,
                "abs_rel": self.abs_rel,
                "sq_rel_x1000": self.sq_rel_x1000,
                "delta_110": self.delta_110,
                "pixel_count": self.pixel_count,
                "log_excluded": self.log_excluded,
                "align": self.align,
            },
            indent=2,
        )


def depth_metrics(
    pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None, align: str = "none"
) -> MetricReport:
    """Depth evaluation metrics on valid pixels, optionally scale/shift aligned.

    ``mask=None`` evaluates every pixel.

    ``align="ssi"`` fits the prediction to ground truth with
    :func:`ssi_align` before computing metrics.  Ground truth must be
    strictly positive on the mask.  Predictions that end up non-positive
    cannot enter the log and ratio metrics (rmse_log, delta); those
    pixels are excluded there and counted in ``log_excluded`` while still
    contributing to rmse, abs_rel, and sq_rel.
    """
    if align not in ("none", "ssi"):
        raise ValueError(f"align must be 'none' or 'ssi', got {align!r}")
    p, g, m = _check_pair(pred, gt, mask, "depth_metrics")
    n = int(m.sum())
    if n == 0:
        raise ValueError("depth_metrics: mask has no valid pixels")
    gv = g[m]
    if np.any(gv <= 0.0):
        raise ValueError("depth_metrics: ground truth must be positive on the mask")
    if align == "ssi":
        s, t = ssi_align(p, g, m)
        pv = s * p[m] + t
    else:
        pv = p[m]

    diff = pv - gv
    rmse = math.sqrt(float(np.mean(diff * diff)))
    abs_rel = float(np.mean(np.abs(diff) / gv))
    sq_rel_x1000 = 1000.0 * float(np.mean(diff * diff / gv))

    pos = pv > 0.0
    excluded = int(np.sum(~pos))
    if excluded == n:
        raise ValueError("depth_metrics: no positive predictions for ratio metrics")
    pp, gp = pv[pos], gv[pos]
    log_diff = np.log(pp) - np.log(gp)
    rmse_log = math.sqrt(float(np.mean(log_diff * log_diff)))
    thresh = np.maximum(pp / gp, gp / pp)
    delta = float(np.mean(thresh < 1.1))

    return MetricReport(
        rmse=rmse,
        rmse_log=rmse_log,
        abs_rel=abs_rel,
        sq_rel_x1000=sq_rel_x1000,
        delta_110=delta,
        pixel_count=n,
        log_excluded=excluded,
        align=align,
    )
