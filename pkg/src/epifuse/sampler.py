"""Sampling image features along epipolar lines.

The sampler clips an epipolar line to the image rectangle, spreads K
endpoint-inclusive sample locations over the clipped segment, and reads
feature vectors at those locations with bilinear interpolation. A query
whose line misses the image entirely is skipped (None), mirroring how the
fusion stage passes such pixels through untouched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateLine
from .geometry import (
    DEFAULT_TOLERANCES,
    CameraView,
    EpipolarLine,
    Tolerances,
    epipolar_line,
    rescale_camera,
)

FMAP_MAGIC = b"FMAP"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense (H, W, C) float64 feature grid, read-only after construction.

    Axis order is (y, x, channel); H and W must be at least 2 so bilinear
    interpolation always has four distinct corners available.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got {data.shape}")
        h, w, c = data.shape
        if h < 2 or w < 2:
            raise ValueError("feature map needs H >= 2 and W >= 2")
        if c < 1:
            raise ValueError("feature map needs at least one channel")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map has non-finite entries")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


# A fused map has exactly the shape and constraints of its input map.
FusedMap = FeatureMap


@dataclass(frozen=True)
class Segment2D:
    """Closed segment inside the image rect, ordered by increasing (x, y)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def p0(self) -> np.ndarray:
        return np.array([self.x0, self.y0])

    @property
    def p1(self) -> np.ndarray:
        return np.array([self.x1, self.y1])

    @property
    def length(self) -> float:
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))


@dataclass(frozen=True, eq=False)
class EpipolarSampleSet:
    """K locations on a clipped epipolar line plus their feature rows."""

    locations: np.ndarray  # (K, 2)
    features: np.ndarray  # (K, C)

    def __post_init__(self) -> None:
        loc = np.asarray(self.locations, dtype=np.float64)
        feat = np.asarray(self.features, dtype=np.float64)
        if loc.ndim != 2 or loc.shape[1] != 2 or loc.shape[0] < 1:
            raise ValueError("locations must be (K, 2) with K >= 1")
        if feat.shape[0] != loc.shape[0]:
            raise ValueError("locations and features disagree on K")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "features", feat)

    @property
    def k(self) -> int:
        return self.locations.shape[0]


def clip_lines(lines: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Clip normalized lines to the rect [0, W-1] x [0, H-1], batched.

    Returns (valid, endpoints) where endpoints is (N, 4) as x0, y0, x1, y1
    ordered by increasing x then y. Rows that miss the rect are invalid.
    """
    lines = np.asarray(lines, dtype=np.float64)
    a, b, c = lines[:, 0], lines[:, 1], lines[:, 2]
    # Closest point to the origin and the unit direction along the line.
    px, py = -a * c, -b * c
    dx, dy = -b, a
    x_hi, y_hi = float(width - 1), float(height - 1)

    t0 = np.full(len(lines), -np.inf)
    t1 = np.full(len(lines), np.inf)
    ok = np.ones(len(lines), dtype=bool)
    for d, p, hi in ((dx, px, x_hi), (dy, py, y_hi)):
        parallel = d == 0.0
        ok &= ~parallel | ((p >= 0.0) & (p <= hi))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (0.0 - p) / d
            tb = (hi - p) / d
        lo = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        t0 = np.where(parallel, t0, np.maximum(t0, lo))
        t1 = np.where(parallel, t1, np.minimum(t1, hi_t))
    ok &= t0 <= t1

    ex0 = np.clip(px + t0 * dx, 0.0, x_hi)
    ey0 = np.clip(py + t0 * dy, 0.0, y_hi)
    ex1 = np.clip(px + t1 * dx, 0.0, x_hi)
    ey1 = np.clip(py + t1 * dy, 0.0, y_hi)
    swap = (ex0 > ex1) | ((ex0 == ex1) & (ey0 > ey1))
    end = np.stack(
        [
            np.where(swap, ex1, ex0),
            np.where(swap, ey1, ey0),
            np.where(swap, ex0, ex1),
            np.where(swap, ey0, ey1),
        ],
        axis=1,
    )
    return ok, end


def clip_line_to_image(
    line: EpipolarLine | np.ndarray, width: int, height: int
) -> Segment2D | None:
    """Single segment of a normalized line inside the image rect, or None."""
    arr = line.l if isinstance(line, EpipolarLine) else np.asarray(line, dtype=np.float64)
    valid, end = clip_lines(arr[None, :], width, height)
    if not valid[0]:
        return None
    x0, y0, x1, y1 = end[0]
    return Segment2D(float(x0), float(y0), float(x1), float(y1))


def sample_parameters(k: int) -> np.ndarray:
    """Endpoint-inclusive parameters t_i = i / (K - 1); K = 1 is the midpoint."""
    if k < 1:
        raise ValueError("K must be at least 1")
    if k == 1:
        return np.array([0.5])
    return np.arange(k, dtype=np.float64) / (k - 1)


def sample_locations(segment: Segment2D, k: int) -> np.ndarray:
    """(K, 2) equally spaced locations on the segment, endpoints included."""
    t = sample_parameters(k)
    p0 = np.array([segment.x0, segment.y0])
    d = np.array([segment.x1 - segment.x0, segment.y1 - segment.y0])
    return p0[None, :] + t[:, None] * d[None, :]


def bilinear_plan(
    height: int, width: int, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Corner indices and blend weights for clamp-to-border bilinear reads.

    Points are clamped into [0, W-1] x [0, H-1] first, so out-of-range
    queries replicate the border row or column. Returns
    (y0, x0, w00, w10, w01, w11) with the second corner at (y0+1, x0+1).
    """
    points = np.asarray(points, dtype=np.float64)
    x = np.clip(points[:, 0], 0.0, float(width - 1))
    y = np.clip(points[:, 1], 0.0, float(height - 1))
    x0 = np.clip(np.floor(x), 0.0, float(width - 2)).astype(np.intp)
    y0 = np.clip(np.floor(y), 0.0, float(height - 2)).astype(np.intp)
    fx = x - x0
    fy = y - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    return y0, x0, w00, w10, w01, w11


def bilinear_many(fmap: FeatureMap, points: np.ndarray) -> np.ndarray:
    """(N, C) bilinear reads at (N, 2) pixel locations."""
    y0, x0, w00, w10, w01, w11 = bilinear_plan(fmap.height, fmap.width, points)
    d = fmap.data
    return (
        w00[:, None] * d[y0, x0]
        + w10[:, None] * d[y0, x0 + 1]
        + w01[:, None] * d[y0 + 1, x0]
        + w11[:, None] * d[y0 + 1, x0 + 1]
    )


def bilinear_sample(fmap: FeatureMap, point: np.ndarray) -> np.ndarray:
    """C-vector bilinear read at a single (x, y) location."""
    return bilinear_many(fmap, np.asarray(point, dtype=np.float64)[None, :])[0]


def epipolar_samples(
    f_src: FeatureMap,
    ref: CameraView,
    src: CameraView,
    p: np.ndarray,
    k: int = 64,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> EpipolarSampleSet | None:
    """Sample the source map along the epipolar line of reference pixel p.

    When the source map is at a different resolution than the source camera
    the camera is rescaled to map resolution first, keeping one coordinate
    frame for lines, locations, and reads. Returns None when the line is
    degenerate or misses the map.
    """
    if (f_src.width, f_src.height) != (src.width, src.height):
        src = rescale_camera(src, src.width / f_src.width, src.height / f_src.height)
    try:
        line = epipolar_line(ref, src, p, tol)
    except DegenerateLine:
        return None
    segment = clip_line_to_image(line, f_src.width, f_src.height)
    if segment is None:
        return None
    locations = sample_locations(segment, k)
    return EpipolarSampleSet(locations=locations, features=bilinear_many(f_src, locations))


# -- feature map file I/O ----------------------------------------------------
#
# Binary layout: magic "FMAP", then u32 little-endian H, W, C, then H*W*C
# float32 little-endian values in row-major (y, x, c) order.


def save_feature_map(fmap: FeatureMap, path: str | Path) -> None:
    header = FMAP_MAGIC + struct.pack("<III", fmap.height, fmap.width, fmap.channels)
    Path(path).write_bytes(header + fmap.data.astype("<f4").tobytes())


def load_feature_map(path: str | Path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != FMAP_MAGIC:
        raise ConfigError(f"{path}: not a feature map file (bad magic)")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise ConfigError(
            f"{path}: truncated feature map, expected {expected} bytes got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return FeatureMap(data.reshape(h, w, c))
