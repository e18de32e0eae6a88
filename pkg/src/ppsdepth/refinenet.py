"""Forward-only depth refinement network wiring with injected weights.

Desk-scale realization of a shading-guided refiner: patchwise linear
feature stubs stand in for a learned encoder, cross-attention fuses RGB
features with shading features, a FiLM stage modulates the initial
depth, a small 4-level convolutional encoder-decoder produces a residual
correction, and the output is ``D_init + delta``.  Everything is plain
numpy, deterministic, and runs forward only; the module verifies wiring
and algebra, not learned behavior.

Weights live in :class:`ToyWeights` and serialize to a flat binary
container (see :func:`write_weights` for the byte layout).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, fields
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import CameraIntrinsics, LightSpec, pps_from_depth
from .photometrics import albedo_proxy

__all__ = [
    "FiLMParams",
    "ToyWeights",
    "PatchFeatureProvider",
    "cross_attention",
    "film_modulate",
    "toy_refiner_forward",
    "shading_feature_image",
    "refinenet_forward",
    "write_weights",
    "read_weights",
]

PATCH = 8  # tokenization patch edge, also the total downsampling factor

WEIGHTS_MAGIC = b"PPSW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class FiLMParams:
    """Per-channel affine modulation parameters."""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        g = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if g.shape != b.shape or g.ndim != 1:
            raise ValueError(f"gamma and beta must be equal-length vectors, got {g.shape} and {b.shape}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)


def cross_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int = 1
) -> np.ndarray:
    """Scaled dot-product cross-attention over token matrices.

    Computes softmax(Q K^T / sqrt(d_k)) V row-wise.  Q is (Tq, d_k),
    K is (Tk, d_k), V is (Tk, d_v); the output is (Tq, d_v).  With
    ``heads > 1`` the feature dimensions are split evenly per head and
    the per-head outputs concatenated.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("Q, K, V must be 2-d token matrices")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"Q and K feature dimensions differ: {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"K and V token counts differ: {k.shape[0]} vs {v.shape[0]}")
    if heads < 1:
        raise ValueError(f"head count must be >= 1, got {heads}")
    if q.shape[1] % heads or v.shape[1] % heads:
        raise ValueError(
            f"head count {heads} must divide feature dims {q.shape[1]} and {v.shape[1]}"
        )

    dk = q.shape[1] // heads
    dv = v.shape[1] // heads
    out = np.empty((q.shape[0], v.shape[1]))
    for h in range(heads):
        qh = q[:, h * dk : (h + 1) * dk]
        kh = k[:, h * dk : (h + 1) * dk]
        vh = v[:, h * dv : (h + 1) * dv]
        scores = qh @ kh.T / np.sqrt(dk)
        scores -= scores.max(axis=1, keepdims=True)  # stabilize exp
        w = np.exp(scores)
        w /= w.sum(axis=1, keepdims=True)
        out[:, h * dv : (h + 1) * dv] = w @ vh
    return out


def film_modulate(grid: np.ndarray, params: FiLMParams) -> np.ndarray:
    """Feature-wise linear modulation: gamma * grid + beta per channel.

    A (C, H, W) grid is modulated per channel; any other shape is a
    single-channel grid and requires scalar parameters.
    """
    g = np.asarray(grid, dtype=np.float64)
    c = params.gamma.shape[0]
    if g.ndim == 3 and g.shape[0] == c:
        return params.gamma[:, None, None] * g + params.beta[:, None, None]
    if c == 1:
        return params.gamma[0] * g + params.beta[0]
    raise ValueError(
        f"FiLM channel mismatch: {c} parameter channels for grid of shape {g.shape}"
    )


def _conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 'same' convolution, (C_in, H, W) x (C_out, C_in, 3, 3) -> (C_out, H, W)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C_in, H, W, 3, 3)
    return np.einsum("ihwkl,oikl->ohw", win, kernel, optimize=True)


def _pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _up2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# Conv tensor names and (out, in) channel multipliers relative to the base
# channel count; encoder input is the single modulated depth channel and the
# decoder consumes upsampled features concatenated with the encoder skip.
_CONV_PLAN = {
    "enc0": (1, None),  # (c, 1)
    "enc1": (2, 1),
    "enc2": (4, 2),
    "bottleneck": (4, 4),
    "dec2": (2, 8),
    "dec1": (1, 4),
    "dec0": (1, 2),
    "head": (None, 1),  # (1, c)
}


@dataclass
class ToyWeights:
    """All tensors of the toy refinement network.

    Feature stack: ``proj_feat`` lifts flattened 8x8 RGB patches (192
    values) to the feature dimension; ``q_proj``/``k_proj``/``v_proj``
    are the attention projections; ``film_w``/``film_b`` map the pooled
    attention output to the (gamma, beta) pair.  The remaining tensors
    are the 3x3 convolution kernels of the 4-level refiner.
    """

    proj_feat: np.ndarray  # (192, d)
    q_proj: np.ndarray  # (d, d)
    k_proj: np.ndarray  # (d, d)
    v_proj: np.ndarray  # (d, d)
    film_w: np.ndarray  # (d, 2)
    film_b: np.ndarray  # (2,)
    enc0: np.ndarray  # (c, 1, 3, 3)
    enc1: np.ndarray  # (2c, c, 3, 3)
    enc2: np.ndarray  # (4c, 2c, 3, 3)
    bottleneck: np.ndarray  # (4c, 4c, 3, 3)
    dec2: np.ndarray  # (2c, 8c, 3, 3)
    dec1: np.ndarray  # (c, 4c, 3, 3)
    dec0: np.ndarray  # (c, 2c, 3, 3)
    head: np.ndarray  # (1, c, 3, 3)

    def __post_init__(self) -> None:
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"weight tensor {f.name!r} contains non-finite values")
            setattr(self, f.name, arr)
        d = self.proj_feat.shape[1] if self.proj_feat.ndim == 2 else 0
        if self.proj_feat.shape != (3 * PATCH * PATCH, d) or d < 1:
            raise ValueError(f"proj_feat must be (192, d), got {self.proj_feat.shape}")
        for name in ("q_proj", "k_proj", "v_proj"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.film_w.shape != (d, 2) or self.film_b.shape != (2,):
            raise ValueError(
                f"FiLM generator must be ({d}, 2) and (2,), got {self.film_w.shape}, {self.film_b.shape}"
            )
        c = self.enc0.shape[0]
        for name, (mout, min_) in _CONV_PLAN.items():
            t = getattr(self, name)
            out_ch = 1 if mout is None else mout * c
            in_ch = 1 if min_ is None else min_ * c
            if t.shape != (out_ch, in_ch, 3, 3):
                raise ValueError(
                    f"conv tensor {name!r} must have shape ({out_ch}, {in_ch}, 3, 3), got {t.shape}"
                )

    @property
    def feat_dim(self) -> int:
        return self.proj_feat.shape[1]

    @property
    def channels(self) -> int:
        return self.enc0.shape[0]

    @classmethod
    def zeros(cls, feat_dim: int = 32, channels: int = 8) -> "ToyWeights":
        """All-zero weights: the refiner contributes exactly no residual."""
        return cls(**cls._tensor_shapes(feat_dim, channels, np.zeros))

    @classmethod
    def seeded(cls, seed: int, feat_dim: int = 32, channels: int = 8) -> "ToyWeights":
        """Deterministic random initialization, scaled by fan-in."""
        rng = np.random.default_rng(seed)

        def init(shape):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            return rng.standard_normal(shape) * (0.5 / np.sqrt(fan_in))

        tensors = cls._tensor_shapes(feat_dim, channels, init)
        tensors["film_b"] = np.array([1.0, 0.0])  # start at identity modulation
        return cls(**tensors)

    @staticmethod
    def _tensor_shapes(d: int, c: int, make) -> dict[str, np.ndarray]:
        return {
            "proj_feat": make((3 * PATCH * PATCH, d)),
            "q_proj": make((d, d)),
            "k_proj": make((d, d)),
            "v_proj": make((d, d)),
            "film_w": make((d, 2)),
            "film_b": make((2,)),
            "enc0": make((c, 1, 3, 3)),
            "enc1": make((2 * c, c, 3, 3)),
            "enc2": make((4 * c, 2 * c, 3, 3)),
            "bottleneck": make((4 * c, 4 * c, 3, 3)),
            "dec2": make((2 * c, 8 * c, 3, 3)),
            "dec1": make((c, 4 * c, 3, 3)),
            "dec0": make((c, 2 * c, 3, 3)),
            "head": make((1, c, 3, 3)),
        }

    def to_tensor_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensor_dict(cls, tensors: Mapping[str, np.ndarray]) -> "ToyWeights":
        names = {f.name for f in fields(cls)}
        missing = names - set(tensors)
        if missing:
            raise ValueError(f"weights container is missing tensors: {sorted(missing)}")
        extra = set(tensors) - names
        if extra:
            raise ValueError(f"weights container has unexpected tensors: {sorted(extra)}")
        return cls(**{k: np.asarray(v) for k, v in tensors.items()})

    def save(self, path) -> None:
        write_weights(path, self.to_tensor_dict())

    @classmethod
    def load(cls, path) -> "ToyWeights":
        return cls.from_tensor_dict(read_weights(path))


def toy_refiner_forward(d_mod: np.ndarray, weights: ToyWeights) -> np.ndarray:
    """Residual head: a fixed 4-level conv encoder-decoder on one channel.

    Levels run at full, 1/2, 1/4, and 1/8 resolution (average-pool down,
    nearest up) with skip concatenation, ReLU between convolutions, no
    bias terms, and a linear output head.  Input and output are (H, W).
    """
    x = np.asarray(d_mod, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"refiner input must be 2-d, got shape {x.shape}")
    h, w = x.shape
    if h % PATCH or w % PATCH:
        raise ValueError(
            f"refiner needs dimensions divisible by {PATCH}: "
            f"pad H {h} -> {-(-h // PATCH) * PATCH} and W {w} -> {-(-w // PATCH) * PATCH}"
        )
    e0 = _relu(_conv2d_same(x[None], weights.enc0))
    e1 = _relu(_conv2d_same(_pool2(e0), weights.enc1))
    e2 = _relu(_conv2d_same(_pool2(e1), weights.enc2))
    b = _relu(_conv2d_same(_pool2(e2), weights.bottleneck))
    d2 = _relu(_conv2d_same(np.concatenate([_up2(b), e2]), weights.dec2))
    d1 = _relu(_conv2d_same(np.concatenate([_up2(d2), e1]), weights.dec1))
    d0 = _relu(_conv2d_same(np.concatenate([_up2(d1), e0]), weights.dec0))
    return _conv2d_same(d0, weights.head)[0]


@dataclass(frozen=True)
class PatchFeatureProvider:
    """Encoder stub: non-overlapping 8x8 patches, flattened and linearly projected."""

    projection: np.ndarray  # (192, d)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValueError(f"feature provider expects (H, W, 3), got {img.shape}")
        h, w, _ = img.shape
        if h % PATCH or w % PATCH:
            raise ValueError(f"image dimensions must be divisible by {PATCH}, got {h}x{w}")
        patches = img.reshape(h // PATCH, PATCH, w // PATCH, PATCH, 3)
        tokens = patches.transpose(0, 2, 1, 3, 4).reshape(-1, 3 * PATCH * PATCH)
        return tokens @ self.projection


def shading_feature_image(
    image: np.ndarray, depth: np.ndarray, K: CameraIntrinsics, light: LightSpec
) -> np.ndarray:
    """Shading-feature input: albedo proxy times the per-pixel shading map."""
    field = pps_from_depth(depth, K, light)
    return albedo_proxy(image) * field.pps[..., None]


def refinenet_forward(
    image: np.ndarray,
    d_init: np.ndarray,
    K: CameraIntrinsics,
    light: LightSpec,
    weights: ToyWeights,
    feature_provider: Callable[[np.ndarray], np.ndarray] | None = None,
    heads: int = 1,
) -> np.ndarray:
    """Full forward pass: features, cross-attention, FiLM, residual refiner.

    Pipeline: RGB features and shading features come from the (injected
    or default patchwise-linear) provider on the image and on
    ``albedo_proxy(image) * PPS(d_init)`` respectively; cross-attention
    uses Q from RGB features and K = V from shading features; the pooled
    attention output generates the FiLM (gamma, beta) that modulates
    ``d_init``; the conv refiner maps the modulated depth to a residual
    added back onto ``d_init``.

    The output is NOT clamped: a refined depth with non-positive pixels
    is returned as-is with a warning reporting the count.
    """
    d0 = np.asarray(d_init, dtype=np.float64)
    img = np.asarray(image, dtype=np.float64)
    if img.shape[:2] != d0.shape:
        raise ValueError(f"image {img.shape} and depth {d0.shape} dimensions differ")

    provider = feature_provider or PatchFeatureProvider(weights.proj_feat)
    rgb_feats = provider(img)
    pps_feats = provider(shading_feature_image(img, d0, K, light))

    q = rgb_feats @ weights.q_proj
    k = pps_feats @ weights.k_proj
    v = pps_feats @ weights.v_proj
    combo = cross_attention(q, k, v, heads=heads)

    gamma_beta = combo.mean(axis=0) @ weights.film_w + weights.film_b
    d_mod = film_modulate(d0, FiLMParams(gamma_beta[:1], gamma_beta[1:]))

    delta = toy_refiner_forward(d_mod, weights)
    refined = d0 + delta

    bad = int(np.sum(refined <= 0.0))
    if bad:
        warnings.warn(
            f"refined depth has {bad} non-positive pixel(s); returned unclamped",
            RuntimeWarning,
            stacklevel=2,
        )
    return refined


def write_weights(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Serialize named tensors to the flat binary weights container.

    Layout (all integers little-endian u32):

        magic  b"PPSW"
        version (=1)
        repeated tensor records until end of file:
            name_length, name bytes (utf-8),
            rank, dims[rank],
            payload: prod(dims) float32 values, row-major, little-endian
    """
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        for name, arr in tensors.items():
            # asarray, not ascontiguousarray: the latter silently promotes 0-d to 1-d
            data = np.asarray(arr, dtype="<f4", order="C")
            name_b = name.encode("utf-8")
            if not name_b:
                raise ValueError("tensor names must be non-empty")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_weights(path) -> dict[str, np.ndarray]:
    """Parse a weights container back into name -> float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"not a weights container: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weights container version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError("weights container is truncated")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        if rank > 32:
            raise ValueError(f"implausible tensor rank {rank} in weights container")
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * count)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if name in out:
            raise ValueError(f"duplicate tensor name {name!r} in weights container")
        out[name] = arr.copy()
    return out
