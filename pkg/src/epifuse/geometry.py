"""Projective camera algebra for calibrated multi-view rigs.

A camera is a 3x4 projection matrix M of full row rank together with the
pixel extent of its image. Integer pixel coordinates address pixel centers:
the top-left pixel center is (0, 0) and the valid sample domain is
[0, width-1] x [0, height-1]. All computation is float64.

Epipolar lines follow the pseudo-inverse construction: with C the center of
the reference camera and M' the source camera, the line in the source image
through the match of reference pixel p is

    l = [M'C]_x M' M^+ p

which factors as l = F p with F = [M'C]_x M' M^+ the fundamental matrix.
Lines are normalized to a^2 + b^2 = 1 so that l . (x, y, 1) is a signed
point-line distance in pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AtInfinity,
    CoincidentCenters,
    ConfigError,
    DegenerateLine,
    RankDeficient,
    SingularAffine,
)


@dataclass(frozen=True)
class Tolerances:
    """Degeneracy thresholds shared by the geometry operations.

    rank_rel       relative singular-value cutoff for full row rank
    line_rel       |(a, b)| / |l| below which a line has no image direction
    center_rel     relative center separation below which views coincide
    projection_w   |w| below which dehomogenization is refused
    """

    rank_rel: float = 1e-12
    line_rel: float = 1e-12
    center_rel: float = 1e-9
    projection_w: float = 1e-12


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True, eq=False)
class CameraView:
    """A 3x4 projection matrix plus the pixel extent of its image."""

    M: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        M = np.array(self.M, dtype=np.float64, order="C", copy=True)
        if M.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("projection matrix has non-finite entries")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("image extent must be at least 1x1 pixels")
        s = np.linalg.svd(M, compute_uv=False)
        if s[2] < DEFAULT_TOLERANCES.rank_rel * s[0]:
            raise RankDeficient("projection matrix is rank deficient")
        M.flags.writeable = False
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))


@dataclass(frozen=True, eq=False)
class EpipolarLine:
    """Normalized image line a x + b y + c = 0 with a^2 + b^2 = 1.

    The sign is fixed so the first nonzero of (a, b) is positive, making
    the representation unique.
    """

    l: np.ndarray

    def __post_init__(self) -> None:
        l = np.asarray(self.l, dtype=np.float64)
        if l.shape != (3,):
            raise ValueError("line must be a 3-vector")
        l = l.copy()
        l.flags.writeable = False
        object.__setattr__(self, "l", l)

    @property
    def a(self) -> float:
        return float(self.l[0])

    @property
    def b(self) -> float:
        return float(self.l[1])

    @property
    def c(self) -> float:
        return float(self.l[2])

    def distance(self, x: float, y: float) -> float:
        """Signed pixel distance from (x, y) to the line."""
        return float(self.l[0] * x + self.l[1] * y + self.l[2])


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]_x with [v]_x w = v x w."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def camera_center(cam: CameraView, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Homogeneous camera center: the unit right null vector of M.

    The sign is fixed so the last nonzero coordinate is positive. M is
    immutable, so the default-tolerance result is cached on the camera and
    returned as a read-only view.
    """
    if tol is DEFAULT_TOLERANCES:
        cached = getattr(cam, "_center", None)
        if cached is not None:
            return cached
    _, s, vt = np.linalg.svd(cam.M)
    if s[2] < tol.rank_rel * s[0]:
        raise RankDeficient("camera center undefined: matrix rank below 3")
    c = vt[3]
    c = c / np.linalg.norm(c)
    nonzero = np.flatnonzero(np.abs(c) > 1e-14)
    if c[nonzero[-1]] < 0.0:
        c = -c
    c.flags.writeable = False
    if tol is DEFAULT_TOLERANCES:
        object.__setattr__(cam, "_center", c)
    return c


def pseudo_inverse(m: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a full-row-rank 3x4 matrix via SVD."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 4):
        raise ValueError(f"expected a 3x4 matrix, got {m.shape}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[2] < tol.rank_rel * s[0]:
        raise RankDeficient("pseudo-inverse undefined: matrix rank below 3")
    return (vt.T / s) @ u.T


def _camera_pinv(cam: CameraView, tol: Tolerances) -> np.ndarray:
    # Same default-tolerance caching as camera_center: one SVD per camera.
    if tol is DEFAULT_TOLERANCES:
        cached = getattr(cam, "_pinv", None)
        if cached is not None:
            return cached
    pinv = pseudo_inverse(cam.M, tol)
    pinv.flags.writeable = False
    if tol is DEFAULT_TOLERANCES:
        object.__setattr__(cam, "_pinv", pinv)
    return pinv


def _require_distinct_centers(
    ref: CameraView, src: CameraView, tol: Tolerances
) -> tuple[np.ndarray, np.ndarray]:
    c_ref = camera_center(ref, tol)
    c_src = camera_center(src, tol)
    if abs(c_ref[3]) > tol.projection_w and abs(c_src[3]) > tol.projection_w:
        p_ref = c_ref[:3] / c_ref[3]
        p_src = c_src[:3] / c_src[3]
        scale = max(1.0, float(np.linalg.norm(p_ref)), float(np.linalg.norm(p_src)))
        if float(np.linalg.norm(p_ref - p_src)) <= tol.center_rel * scale:
            raise CoincidentCenters("reference and source cameras share a center")
    else:
        # A center at infinity: compare the unit homogeneous vectors directly.
        d = min(
            float(np.linalg.norm(c_ref - c_src)),
            float(np.linalg.norm(c_ref + c_src)),
        )
        if d <= tol.center_rel:
            raise CoincidentCenters("reference and source cameras share a center")
    return c_ref, c_src


def normalize_lines(lines: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a batch of (N, 3) lines to a^2 + b^2 = 1 with canonical sign.

    Returns (normalized, valid); rows with no image direction are flagged
    invalid and left unnormalized.
    """
    lines = np.asarray(lines, dtype=np.float64)
    ab = np.hypot(lines[:, 0], lines[:, 1])
    total = np.linalg.norm(lines, axis=1)
    valid = (total > 0.0) & (ab >= tol.line_rel * total)
    safe = np.where(ab > 0.0, ab, 1.0)
    normed = lines / safe[:, None]
    a, b = normed[:, 0], normed[:, 1]
    sign = np.where(a != 0.0, np.sign(a), np.sign(b))
    sign = np.where(sign == 0.0, 1.0, sign)
    return normed * sign[:, None], valid


def normalize_line(l: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES) -> EpipolarLine:
    """Normalize a single line; raises DegenerateLine when |(a, b)| ~ 0."""
    normed, valid = normalize_lines(np.asarray(l, dtype=np.float64)[None, :], tol)
    if not valid[0]:
        raise DegenerateLine("line has no direction in the image plane")
    return EpipolarLine(normed[0])


def _homogeneous_pixel(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape == (2,):
        return np.array([p[0], p[1], 1.0])
    if p.shape == (3,):
        return p
    raise ValueError("pixel must be a 2-vector or homogeneous 3-vector")


def epipolar_line(
    ref: CameraView,
    src: CameraView,
    p: np.ndarray,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> EpipolarLine:
    """Epipolar line in the source image for reference pixel p."""
    c_ref, _ = _require_distinct_centers(ref, src, tol)
    m_pinv = _camera_pinv(ref, tol)
    epipole = src.M @ c_ref
    l = skew(epipole) @ (src.M @ (m_pinv @ _homogeneous_pixel(p)))
    return normalize_line(l, tol)


def fundamental_matrix(
    ref: CameraView, src: CameraView, tol: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Fundamental matrix mapping reference pixels to source lines, l = F p.

    Rank 2 by construction; returned unnormalized (lines from it should be
    passed through normalize_line before use as distances).
    """
    c_ref, _ = _require_distinct_centers(ref, src, tol)
    return skew(src.M @ c_ref) @ src.M @ _camera_pinv(ref, tol)


def apply_affine_to_camera(
    cam: CameraView,
    a: np.ndarray,
    b: np.ndarray,
    new_width: int,
    new_height: int,
) -> CameraView:
    """Camera for an affinely warped image, x_new = A x_old + b.

    Left-multiplies M by the homogeneous affine update so projecting through
    the new camera equals warping the old projection. The camera center is
    untouched.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (2, 2) or b.shape != (2,):
        raise ValueError("affine update needs a 2x2 matrix and a 2-vector")
    if abs(float(np.linalg.det(a))) < 1e-12:
        raise SingularAffine("affine image transform is singular")
    t = np.array(
        [
            [a[0, 0], a[0, 1], b[0]],
            [a[1, 0], a[1, 1], b[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraView(t @ cam.M, new_width, new_height)


def rescale_camera(cam: CameraView, s_x: float, s_y: float) -> CameraView:
    """Camera for an image downsampled s_x times in x and s_y times in y.

    Pixel centers stay aligned: old pixel x maps to (x + 0.5) / s_x - 0.5,
    so e.g. s_x = 2 sends old x = 0.5 to new x = 0. Width and height are
    divided by the scale and rounded down.
    """
    s_x = float(s_x)
    s_y = float(s_y)
    if s_x <= 0.0 or s_y <= 0.0:
        raise ValueError("scale factors must be positive")
    t = np.array(
        [
            [1.0 / s_x, 0.0, (1.0 - s_x) / (2.0 * s_x)],
            [0.0, 1.0 / s_y, (1.0 - s_y) / (2.0 * s_y)],
            [0.0, 0.0, 1.0],
        ]
    )
    # The epsilon absorbs float noise in ratios like 10 / (10 / 5).
    new_w = int(np.floor(cam.width / s_x + 1e-9))
    new_h = int(np.floor(cam.height / s_y + 1e-9))
    if new_w < 1 or new_h < 1:
        raise ValueError("scale exceeds the image extent")
    return CameraView(t @ cam.M, new_w, new_h)


def project(
    cam: CameraView, x: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Pixel projection of a 3D point (mm). Raises AtInfinity when |w| ~ 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ValueError("expected a 3D point")
    q = cam.M @ np.array([x[0], x[1], x[2], 1.0])
    if abs(q[2]) < tol.projection_w:
        raise AtInfinity("point projects to infinity (principal plane)")
    return q[:2] / q[2]


# -- camera file I/O ---------------------------------------------------------
#
# A camera is stored as {"M": [12 row-major floats], "width": w, "height": h};
# a rig file is a JSON array of such objects. Floats round-trip exactly via
# repr.


def camera_to_dict(cam: CameraView) -> dict:
    return {
        "M": [float(v) for v in cam.M.ravel()],
        "width": cam.width,
        "height": cam.height,
    }


def camera_from_dict(obj: dict) -> CameraView:
    if not isinstance(obj, dict):
        raise ConfigError("camera entry must be a JSON object")
    for key in ("M", "width", "height"):
        if key not in obj:
            raise ConfigError(f"camera entry missing key '{key}'")
    m = obj["M"]
    if not isinstance(m, list) or len(m) != 12:
        raise ConfigError("camera key 'M' must hold 12 row-major numbers")
    try:
        mat = np.asarray(m, dtype=np.float64).reshape(3, 4)
        return CameraView(mat, int(obj["width"]), int(obj["height"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid camera entry: {exc}") from exc


def save_camera(cam: CameraView, path: str | Path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")


def load_camera(path: str | Path) -> CameraView:
    return camera_from_dict(_read_json(path))


def save_rig_file(cameras: list[CameraView], path: str | Path) -> None:
    Path(path).write_text(rig_to_json(cameras))


def load_rig_file(path: str | Path) -> list[CameraView]:
    obj = _read_json(path)
    if not isinstance(obj, list):
        raise ConfigError("rig file must be a JSON array of cameras")
    return [camera_from_dict(entry) for entry in obj]


def rig_to_json(cameras: list[CameraView]) -> str:
    return json.dumps([camera_to_dict(c) for c in cameras], indent=2) + "\n"


def _read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
