"""File formats: PFM depth maps, PNG/PPM/PGM images, PLY point clouds.

Byte-level conventions
----------------------

PFM (grayscale ``Pf``): three ASCII header lines (type, ``width height``,
scale), then ``width * height`` float32 values, row-major with the
BOTTOM row first (the netpbm-float convention).  A negative scale marks
little-endian payloads, positive big-endian; this writer always emits
``-1.0`` (little-endian).  NaNs are rejected on both read and write.

PPM/PGM (binary ``P6``/``P5``): ASCII header (magic, dimensions,
maxval), then samples top row first; maxval 255 stores one byte per
sample and maxval 65535 two bytes big-endian, per the netpbm spec.

PLY: ``ply`` header with float32 x/y/z (and optional uchar red/green/
blue) vertex properties, either ``ascii 1.0`` or
``binary_little_endian 1.0``.  One vertex per valid pixel.

PNG is delegated to OpenCV and supports 8- and 16-bit, gray and RGB.
All image values map linearly to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .geometry import CameraIntrinsics, backproject

__all__ = [
    "PointCloud",
    "read_pfm",
    "write_pfm",
    "read_depth",
    "write_depth",
    "read_image",
    "write_image",
    "export_pointcloud",
    "read_pointcloud",
    "write_pointcloud",
    "falsecolor",
]


# ---------------------------------------------------------------------------
# PFM

def write_pfm(path, values: np.ndarray) -> None:
    """Write a 2-d float32 map as a grayscale PFM file (little-endian)."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-d map, got shape {arr.shape}")
    if np.any(np.isnan(arr)):
        raise ValueError("refusing to write NaN values to PFM")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).astype("<f4").tobytes())


def _read_pfm_token(fh) -> bytes:
    """One whitespace-delimited header token, skipping comment lines."""
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("malformed PFM header: unexpected end of file")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float32 (H, W) array."""
    with open(path, "rb") as fh:
        magic = _read_pfm_token(fh)
        if magic != b"Pf":
            raise ValueError(
                f"malformed PFM header: expected grayscale magic b'Pf', got {magic!r}"
            )
        try:
            w = int(_read_pfm_token(fh))
            h = int(_read_pfm_token(fh))
            scale = float(_read_pfm_token(fh))
        except ValueError as exc:
            raise ValueError(f"malformed PFM header: {exc}") from exc
        if w <= 0 or h <= 0:
            raise ValueError(f"malformed PFM header: bad dimensions {w}x{h}")
        if scale == 0.0:
            raise ValueError("malformed PFM header: scale must be non-zero")
        payload = fh.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise ValueError(
            f"truncated PFM payload: expected {4 * w * h} bytes, got {len(payload)}"
        )
    dtype = "<f4" if scale < 0.0 else ">f4"
    arr = np.flipud(np.frombuffer(payload, dtype=dtype).reshape(h, w))
    arr = arr.astype(np.float32)
    if np.any(np.isnan(arr)):
        v, u = np.argwhere(np.isnan(arr))[0]
        raise ValueError(f"PFM file contains NaN at pixel (u={u}, v={v})")
    return arr


def write_depth(path, depth: np.ndarray) -> None:
    """Write a strictly positive depth map as PFM."""
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise ValueError("depth map must be strictly positive and finite")
    write_pfm(path, d.astype(np.float32))


def read_depth(path) -> np.ndarray:
    """Read a PFM depth map, enforcing positive finite values."""
    d = read_pfm(path).astype(np.float64)
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise ValueError(f"{path}: depth map must be strictly positive and finite")
    return d


# ---------------------------------------------------------------------------
# PNG / PPM / PGM

def _to_quantized(image: np.ndarray, bits: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    if bits == 8:
        maxval, dtype = 255, np.uint8
    elif bits == 16:
        maxval, dtype = 65535, np.uint16
    else:
        raise ValueError(f"unsupported bit depth {bits}, expected 8 or 16")
    return np.round(np.clip(img, 0.0, 1.0) * maxval).astype(dtype)


def _write_netpbm(path, quantized: np.ndarray) -> None:
    color = quantized.ndim == 3
    magic = b"P6" if color else b"P5"
    maxval = int(np.iinfo(quantized.dtype).max)
    h, w = quantized.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n{maxval}\n".encode("ascii"))
        # multi-byte samples are big-endian in netpbm
        fh.write(quantized.astype(">u2" if maxval > 255 else "u1").tobytes())


def _read_netpbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_pfm_token(fh)  # same token grammar as PFM headers
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"unsupported netpbm magic {magic!r}, expected P5 or P6")
        w = int(_read_pfm_token(fh))
        h = int(_read_pfm_token(fh))
        maxval = int(_read_pfm_token(fh))
        if maxval not in (255, 65535):
            raise ValueError(f"unsupported netpbm maxval {maxval}, expected 255 or 65535")
        channels = 3 if magic == b"P6" else 1
        per = 1 if maxval == 255 else 2
        payload = fh.read(w * h * channels * per)
    if len(payload) != w * h * channels * per:
        raise ValueError("truncated netpbm payload")
    dtype = "u1" if maxval == 255 else ">u2"
    arr = np.frombuffer(payload, dtype=dtype).reshape(
        (h, w, 3) if channels == 3 else (h, w)
    )
    return arr.astype(np.float64) / maxval


def write_image(path, image: np.ndarray, bits: int = 8) -> None:
    """Write an image in [0, 1] as PNG, PPM, or PGM by file extension.

    ``bits`` selects 8- or 16-bit quantization.  Gray maps are (H, W),
    color (H, W, 3); .pgm requires gray and .ppm color.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[-1] != 3):
        raise ValueError(f"image must be (H, W) or (H, W, 3), got shape {img.shape}")
    ext = Path(path).suffix.lower()
    q = _to_quantized(img, bits)
    if ext == ".png":
        bgr = q[..., ::-1] if q.ndim == 3 else q
        if not cv2.imwrite(str(path), bgr):
            raise ValueError(f"failed to write PNG to {path}")
    elif ext == ".ppm":
        if q.ndim != 3:
            raise ValueError(".ppm stores color images; use .pgm for grayscale")
        _write_netpbm(path, q)
    elif ext == ".pgm":
        if q.ndim != 2:
            raise ValueError(".pgm stores grayscale images; use .ppm for color")
        _write_netpbm(path, q)
    else:
        raise ValueError(f"unsupported image extension {ext!r}, expected .png/.ppm/.pgm")


def read_image(path) -> np.ndarray:
    """Read a PNG/PPM/PGM image to float64 values in [0, 1]."""
    ext = Path(path).suffix.lower()
    if ext in (".ppm", ".pgm"):
        return _read_netpbm(path)
    if ext != ".png":
        raise ValueError(f"unsupported image extension {ext!r}, expected .png/.ppm/.pgm")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"failed to read image {path}")
    if raw.dtype == np.uint8:
        maxval = 255.0
    elif raw.dtype == np.uint16:
        maxval = 65535.0
    else:
        raise ValueError(f"unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[..., :3]
        raw = raw[..., ::-1]  # BGR -> RGB
    return raw.astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# PLY point clouds

@dataclass
class PointCloud:
    """Vertices in the camera frame, optionally colored."""

    positions: np.ndarray  # (N, 3) float32
    colors: np.ndarray | None = None  # (N, 3) uint8

    def __post_init__(self) -> None:
        p = np.asarray(self.positions, dtype=np.float32)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {p.shape}")
        self.positions = p
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.uint8)
            if c.shape != p.shape:
                raise ValueError(f"colors shape {c.shape} must match positions {p.shape}")
            self.colors = c

    def __len__(self) -> int:
        return self.positions.shape[0]


def write_pointcloud(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write a PLY file, binary little-endian by default."""
    n = len(cloud)
    if n == 0:
        raise ValueError("refusing to write an empty point cloud")
    fmt = "binary_little_endian" if binary else "ascii"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if cloud.colors is None:
                fh.write(np.ascontiguousarray(cloud.positions, dtype="<f4").tobytes())
            else:
                rec = np.zeros(
                    n, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)]
                )
                rec["xyz"] = cloud.positions
                rec["rgb"] = cloud.colors
                fh.write(rec.tobytes())
        else:
            for i in range(n):
                x, y, z = (repr(float(v)) for v in cloud.positions[i])
                line = f"{x} {y} {z}"
                if cloud.colors is not None:
                    r, g, b = (int(v) for v in cloud.colors[i])
                    line += f" {r} {g} {b}"
                fh.write((line + "\n").encode("ascii"))


def read_pointcloud(path) -> PointCloud:
    """Read PLY files produced by :func:`write_pointcloud`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header_lines = blob[:end].decode("ascii").splitlines()
    body = blob[end + len(b"end_header\n") :]

    fmt = None
    n = None
    props: list[tuple[str, str]] = []  # (type, name), both checked
    for line in header_lines[1:]:
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ValueError(f"unsupported PLY element {parts[1]!r}")
            n = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian") or n is None:
        raise ValueError(f"{path}: unsupported PLY header")
    xyz = [("float", a) for a in "xyz"]
    rgb = [("uchar", c) for c in ("red", "green", "blue")]
    has_color = props == xyz + rgb
    if not has_color and props != xyz:
        raise ValueError(f"{path}: unsupported PLY vertex properties {props}")

    if fmt == "binary_little_endian":
        dt = np.dtype([("xyz", "<f4", 3)] + ([("rgb", "u1", 3)] if has_color else []))
        if len(body) < n * dt.itemsize:
            raise ValueError(f"{path}: truncated PLY payload")
        rec = np.frombuffer(body, dtype=dt, count=n)
        return PointCloud(
            positions=rec["xyz"].copy(),
            colors=rec["rgb"].copy() if has_color else None,
        )
    rows = body.decode("ascii").split()
    width = 6 if has_color else 3
    vals = np.array(rows, dtype=np.float64).reshape(n, width)
    return PointCloud(
        positions=vals[:, :3].astype(np.float32),
        colors=vals[:, 3:].astype(np.uint8) if has_color else None,
    )


def export_pointcloud(
    depth: np.ndarray,
    K: CameraIntrinsics,
    mask: np.ndarray,
    path,
    color: np.ndarray | None = None,
    binary: bool = True,
) -> PointCloud:
    """Backproject valid pixels and write them as a PLY file.

    One vertex per valid (masked-in, finite) pixel; optional per-vertex
    color sampled from an RGB image in [0, 1].  Returns the cloud that
    was written.
    """
    d = np.asarray(depth, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if m.shape != d.shape:
        raise ValueError(f"mask shape {m.shape} does not match depth {d.shape}")
    m = m & np.isfinite(d)
    if not m.any():
        raise ValueError("no valid pixels to export")
    points = backproject(d, K)
    cloud = PointCloud(
        positions=points[m].astype(np.float32),
        colors=(
            None
            if color is None
            else np.round(np.clip(np.asarray(color, dtype=np.float64)[m], 0, 1) * 255).astype(np.uint8)
        ),
    )
    write_pointcloud(path, cloud, binary=binary)
    return cloud


# ---------------------------------------------------------------------------
# False-color rendering of scalar maps

# Fixed five-stop map, low -> high: blue, cyan, green, yellow, red.
_COLOR_STOPS = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ]
)


def falsecolor(
    values: np.ndarray,
    mask: np.ndarray | None = None,
    vmin: float | None = None,
    vmax: float | None = None,
) -> np.ndarray:
    """Map a scalar field to RGB in [0, 1] with a fixed blue-to-red ramp.

    Low values render blue and high values red (for depth maps: blue is
    near, red is far).  The range defaults to the min/max over the mask;
    masked-out pixels render black.
    """
    v = np.asarray(values, dtype=np.float64)
    m = np.ones(v.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != v.shape:
        raise ValueError(f"mask shape {m.shape} does not match values {v.shape}")
    if not m.any():
        raise ValueError("falsecolor: empty mask")
    lo = float(v[m].min()) if vmin is None else float(vmin)
    hi = float(v[m].max()) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    t = np.clip((v - lo) / span, 0.0, 1.0) * (len(_COLOR_STOPS) - 1)
    idx = np.clip(t.astype(int), 0, len(_COLOR_STOPS) - 2)
    frac = (t - idx)[..., None]
    rgb = _COLOR_STOPS[idx] * (1.0 - frac) + _COLOR_STOPS[idx + 1] * frac
    rgb[~m] = 0.0
    return rgb
