"""Shared camera and scene builders for the test suite."""

from __future__ import annotations

import numpy as np

from epifuse.geometry import CameraView, project


def look_at_camera(
    center,
    focal: float = 80.0,
    width: int = 64,
    height: int = 64,
    target=(0.0, 0.0, 0.0),
) -> CameraView:
    """Pinhole camera at `center` aimed at `target`, principal point centered."""
    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - center
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(z, up))) > 0.97:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    k = np.array(
        [
            [focal, 0.0, (width - 1) / 2.0],
            [0.0, focal, (height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return CameraView(k @ np.hstack([rot, (-rot @ center)[:, None]]), width, height)


def random_camera(rng: np.random.Generator, width: int = 64, height: int = 64) -> CameraView:
    """Camera on a random shell around the origin, aimed near the origin."""
    direction = rng.standard_normal(3)
    direction = direction / np.linalg.norm(direction)
    center = rng.uniform(400.0, 1200.0) * direction
    focal = rng.uniform(50.0, 150.0)
    target = rng.normal(0.0, 30.0, 3)
    return look_at_camera(center, focal, width, height, target)


def random_camera_pair(
    rng: np.random.Generator, width: int = 64, height: int = 64
) -> tuple[CameraView, CameraView]:
    return random_camera(rng, width, height), random_camera(rng, width, height)


def visible_point(rng: np.random.Generator, cams: list[CameraView]) -> np.ndarray:
    """A 3D point whose projection lands inside every camera's image."""
    for _ in range(1000):
        x = rng.normal(0.0, 60.0, 3)
        try:
            pts = [project(cam, x) for cam in cams]
        except Exception:
            continue
        if all(
            0.0 <= p[0] <= cam.width - 1 and 0.0 <= p[1] <= cam.height - 1
            for p, cam in zip(pts, cams)
        ):
            return x
    raise AssertionError("could not find a mutually visible point")


def rectified_pair(
    baseline: float = 100.0, width: int = 32, height: int = 32
) -> tuple[CameraView, CameraView]:
    """Identity-intrinsics stereo pair translated along x (horizontal lines)."""
    m_ref = np.hstack([np.eye(3), np.zeros((3, 1))])
    m_src = np.hstack([np.eye(3), np.array([[-baseline], [0.0], [0.0]])])
    return CameraView(m_ref, width, height), CameraView(m_src, width, height)
