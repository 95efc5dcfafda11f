"""Heatmap rendering, peak readout, and pose accuracy metrics.

Heatmaps are unnormalized Gaussians with peak value 1 at the annotated
location. Peak readout is an integer argmax refined by a quarter-pixel
shift toward the larger immediate neighbor along each axis, the standard
decoding for MSE-trained heatmap regressors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, LengthMismatch, MaskMismatch, ShapeMismatch


@dataclass(frozen=True, eq=False)
class Pose2D:
    """Per-joint 2D pixel points with confidences."""

    points: np.ndarray  # (J, 2)
    confidences: np.ndarray  # (J,)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be (J, 2)")
        if conf.shape != (pts.shape[0],):
            raise ValueError("confidences must be (J,)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidences", conf)

    @property
    def joints(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class Pose3D:
    """Per-joint 3D points (mm) with a validity mask."""

    points: np.ndarray  # (J, 3)
    valid: np.ndarray  # (J,) bool

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be (J, 3)")
        if valid.shape != (pts.shape[0],):
            raise ValueError("valid mask must be (J,)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def joints(self) -> int:
        return self.points.shape[0]


def render_gaussian_heatmap(
    p: np.ndarray, sigma: float, height: int, width: int
) -> np.ndarray:
    """(H, W) map of exp(-|pixel - p|^2 / (2 sigma^2)), peak value 1 at p."""
    if not (sigma > 0.0):
        raise ValueError("sigma must be positive")
    p = np.asarray(p, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    d2 = (xs[None, :] - p[0]) ** 2 + (ys[:, None] - p[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def argmax_peak(heatmap: np.ndarray) -> tuple[tuple[float, float], float]:
    """Sub-pixel peak location and its confidence (the peak value).

    The integer argmax resolves ties toward the lowest row, then column.
    Along each axis the location then shifts a quarter pixel toward the
    larger immediate neighbor; border peaks and exact neighbor ties do not
    shift.
    """
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    rows, cols = h.shape
    flat = int(np.argmax(h))
    y, x = divmod(flat, cols)
    confidence = float(h[y, x])
    xr = float(x)
    yr = float(y)
    if 0 < x < cols - 1:
        xr += 0.25 * float(np.sign(h[y, x + 1] - h[y, x - 1]))
    if 0 < y < rows - 1:
        yr += 0.25 * float(np.sign(h[y + 1, x] - h[y - 1, x]))
    return (xr, yr), confidence


def mpjpe(pred: Pose3D, gt: Pose3D) -> float:
    """Mean Euclidean distance (mm) over the jointly valid joints."""
    if pred.joints != gt.joints:
        raise MaskMismatch(f"joint counts differ: {pred.joints} vs {gt.joints}")
    if not np.array_equal(pred.valid, gt.valid):
        raise MaskMismatch("validity masks differ")
    if not np.any(pred.valid):
        raise ValueError("no valid joints to average over")
    d = np.linalg.norm(pred.points[pred.valid] - gt.points[gt.valid], axis=1)
    return float(np.mean(d))


def jdr(
    pred: np.ndarray, gt: np.ndarray, head_sizes: float | np.ndarray
) -> float:
    """Joint detection rate: percent of joints within half a head size.

    The comparison is strict (distance < 0.5 * head size), so a detection
    exactly on the boundary does not count. head_sizes may be a scalar or a
    per-joint array.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] not in (2, 3):
        raise LengthMismatch(f"expected (J, 2) or (J, 3) points, got {pred.shape}")
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    heads = np.broadcast_to(np.asarray(head_sizes, dtype=np.float64), (pred.shape[0],))
    if np.any(heads <= 0.0):
        raise ValueError("head sizes must be positive")
    d = np.linalg.norm(pred - gt, axis=1)
    return float(100.0 * np.mean(d < 0.5 * heads))


def select_best_view(predictions: Sequence[Pose2D]) -> Pose2D:
    """Per-joint pick of the most confident view; ties go to the lower index."""
    if not predictions:
        raise ValueError("need at least one view of predictions")
    joints = predictions[0].joints
    for pose in predictions:
        if pose.joints != joints:
            raise LengthMismatch("views disagree on the joint count")
    conf = np.stack([pose.confidences for pose in predictions])  # (V, J)
    winner = np.argmax(conf, axis=0)
    points = np.stack([predictions[winner[j]].points[j] for j in range(joints)])
    confidences = conf[winner, np.arange(joints)]
    return Pose2D(points=points, confidences=confidences)


# -- pose file I/O ------------------------------------------------------------
#
# CSV with header joint_id, x, y[, z], confidence; one joint per row. The z
# column is present for 3D poses and absent for 2D ones.


def save_pose_csv(
    joint_ids: Sequence[int],
    points: np.ndarray,
    confidences: Sequence[float],
    path: str | Path,
) -> None:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] not in (2, 3):
        raise ValueError("points must be (J, 2) or (J, 3)")
    dims = points.shape[1]
    header = ["joint_id", "x", "y", "z", "confidence"] if dims == 3 else [
        "joint_id", "x", "y", "confidence"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for jid, pt, conf in zip(joint_ids, points, confidences):
            writer.writerow([int(jid)] + [repr(float(v)) for v in pt] + [repr(float(conf))])


def load_pose_csv(path: str | Path) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Returns (joint_ids, points (J, 2 or 3), confidences)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty pose file") from None
        if header == ["joint_id", "x", "y", "z", "confidence"]:
            dims = 3
        elif header == ["joint_id", "x", "y", "confidence"]:
            dims = 2
        else:
            raise ConfigError(f"{path}: unrecognized pose header {','.join(header)}")
        ids: list[int] = []
        pts: list[list[float]] = []
        confs: list[float] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dims + 2:
                raise ConfigError(f"{path}: row {line_no} must have {dims + 2} columns")
            try:
                ids.append(int(row[0]))
                pts.append([float(v) for v in row[1 : 1 + dims]])
                confs.append(float(row[-1]))
            except ValueError as exc:
                raise ConfigError(f"{path}: row {line_no}: {exc}") from exc
    return ids, np.asarray(pts, dtype=np.float64), np.asarray(confs, dtype=np.float64)
