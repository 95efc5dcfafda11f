"""Synthetic multi-view rigs and the end-to-end verification pipeline.

The harness builds a circular rig of cameras aimed at a common center,
populates a scene with joints carrying well-separated unit descriptors, and
renders per-view descriptor maps: each joint splats its descriptor under a
Gaussian around its projection. Because every quantity is known in closed
form, the pipeline can verify geometry, sampling, fusion, readout, and
triangulation end to end; it checks the machinery, not any learned model.

Keypoints are read out by correlating a fused map with each descriptor and
taking the sub-pixel peak. Optional Gaussian pixel noise perturbs the
detections before per-joint RANSAC triangulation. The report carries MPJPE
against the true joints, a joint detection rate, the attention matching
accuracy (how often the argmax attention sample lands within one sample
step of the true correspondence), and per-joint similarity profiles.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    Degenerate,
    DescriptorSaturation,
    DimsTooLarge,
    IndexOutOfRange,
    InvalidAngle,
    NoConsensus,
    ShapeMismatch,
)
from .fusion import (
    FusionParams,
    ForwardResult,
    plan_epipolar_sampling,
    similarity_weights,
    transformer_backward,
    transformer_forward,
)
from .geometry import CameraView, DEFAULT_TOLERANCES, rescale_camera
from .metrics import Pose3D, argmax_peak, jdr, mpjpe
from .sampler import FeatureMap, epipolar_samples
from .triangulation import Observation, ransac_triangulate


@dataclass(eq=False)
class Rig:
    """Cameras on a circle around the origin plus their pairwise view angles."""

    cameras: list[CameraView]
    angles_deg: np.ndarray  # (n, n) optical-axis separations

    @property
    def n_views(self) -> int:
        return len(self.cameras)


@dataclass(eq=False)
class Scene:
    """Joints (mm) with one unit descriptor row per joint."""

    joints: np.ndarray  # (J, 3)
    descriptors: np.ndarray  # (J, C), unit rows, pairwise dot < 0.5
    seed: int | None = None

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    @property
    def channels(self) -> int:
        return self.descriptors.shape[1]


def make_rig(
    n_cameras: int,
    angle_deg: float,
    radius_mm: float,
    image_wh: int | tuple[int, int],
    focal_px: float,
    seed: int | np.random.SeedSequence = 0,
) -> Rig:
    """Cameras on a circle of the given radius, all aimed at the origin.

    Consecutive cameras are separated by angle_deg along the circle, which
    equals the angle between their optical axes since every axis passes
    through the center. The starting azimuth is drawn from the seed.
    """
    if not (0.0 < angle_deg < 180.0):
        raise InvalidAngle("separation angle must lie in (0, 180) degrees")
    if n_cameras < 2:
        raise ValueError("a rig needs at least two cameras")
    if n_cameras * angle_deg > 360.0 + 1e-9:
        raise InvalidAngle("rig wraps past a full circle; reduce cameras or angle")
    if radius_mm <= 0.0 or focal_px <= 0.0:
        raise ValueError("radius and focal length must be positive")
    w, h = (image_wh, image_wh) if isinstance(image_wh, int) else image_wh

    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, 2.0 * np.pi)
    intrinsics = np.array(
        [
            [focal_px, 0.0, (w - 1) / 2.0],
            [0.0, focal_px, (h - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    cameras = []
    axes = []
    for i in range(n_cameras):
        az = start + i * np.deg2rad(angle_deg)
        center = radius_mm * np.array([np.cos(az), np.sin(az), 0.0])
        z = -center / np.linalg.norm(center)
        x = np.cross(z, np.array([0.0, 0.0, 1.0]))
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        t = -rot @ center
        cameras.append(CameraView(intrinsics @ np.hstack([rot, t[:, None]]), w, h))
        axes.append(z)
    ax = np.asarray(axes)
    angles = np.degrees(np.arccos(np.clip(ax @ ax.T, -1.0, 1.0)))
    return Rig(cameras=cameras, angles_deg=angles)


def make_scene(
    n_joints: int,
    extent_mm: float,
    channels: int,
    seed: int | np.random.SeedSequence = 0,
    max_draws: int = 1000,
) -> Scene:
    """Joints uniform in a centered cube with well-separated descriptors.

    Descriptors are unit vectors redrawn until every pairwise dot product
    stays below 0.5; DescriptorSaturation is raised once max_draws draws
    have been spent (too many joints for too few channels).
    """
    if n_joints < 1:
        raise ValueError("need at least one joint")
    if channels < 4:
        raise ValueError("need at least four descriptor channels")
    if extent_mm <= 0.0:
        raise ValueError("scene extent must be positive")
    rng = np.random.default_rng(seed)
    joints = rng.uniform(-extent_mm / 2.0, extent_mm / 2.0, size=(n_joints, 3))
    accepted: list[np.ndarray] = []
    draws = 0
    while len(accepted) < n_joints:
        if draws >= max_draws:
            raise DescriptorSaturation(
                f"{len(accepted)} of {n_joints} descriptors after {draws} draws"
            )
        v = rng.standard_normal(channels)
        draws += 1
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        v = v / norm
        if all(float(np.dot(v, d)) < 0.5 for d in accepted):
            accepted.append(v)
    return Scene(
        joints=joints,
        descriptors=np.asarray(accepted),
        seed=seed if isinstance(seed, int) else None,
    )


def render_descriptor_map(
    cam: CameraView,
    scene: Scene,
    sigma_px: float = 2.0,
    map_wh: int | tuple[int, int] | None = None,
) -> FeatureMap:
    """Descriptor splat map: sum_j d_j * exp(-|pixel - proj_j|^2 / 2 sigma^2).

    With map_wh below the camera resolution the camera is rescaled first so
    projections land in map coordinates. Joints behind the camera are
    omitted; joints outside the map still contribute their Gaussian tail.
    """
    if not (sigma_px > 0.0):
        raise ValueError("sigma must be positive")
    cam_m = _camera_at_map_resolution(cam, map_wh)
    mw, mh = cam_m.width, cam_m.height
    data = np.zeros((mh, mw, scene.channels))
    xs = np.arange(mw, dtype=np.float64)
    ys = np.arange(mh, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for joint, desc in zip(scene.joints, scene.descriptors):
        q = cam_m.M @ np.array([joint[0], joint[1], joint[2], 1.0])
        if q[2] <= DEFAULT_TOLERANCES.projection_w:
            continue
        px, py = q[0] / q[2], q[1] / q[2]
        blob = np.exp(-((xs[None, :] - px) ** 2 + (ys[:, None] - py) ** 2) * inv)
        data += blob[:, :, None] * desc[None, None, :]
    return FeatureMap(data)


def _camera_at_map_resolution(
    cam: CameraView, map_wh: int | tuple[int, int] | None
) -> CameraView:
    if map_wh is None:
        return cam
    mw, mh = (map_wh, map_wh) if isinstance(map_wh, int) else map_wh
    if (cam.width, cam.height) == (mw, mh):
        return cam
    return rescale_camera(cam, cam.width / mw, cam.height / mh)


# -- end-to-end pipeline -------------------------------------------------------


@dataclass(eq=False)
class JointOutcome:
    joint: int
    error_mm: float | None
    analytic_error_mm: float | None
    observed_views: int
    inlier_views: int | None
    match_hits: int
    match_total: int
    profile: dict | None


@dataclass(eq=False)
class PipelineReport:
    views: int
    joints: int
    k: int
    noise_px: float
    mpjpe_mm: float | None
    analytic_mpjpe_mm: float | None
    jdr_pct: float | None
    matching_accuracy: float | None
    per_joint: list[JointOutcome]


def run_pipeline(
    rig: Rig,
    scene: Scene,
    params: FusionParams,
    k: int = 64,
    noise_px: float = 0.0,
    seed: int | np.random.SeedSequence = 0,
    *,
    sigma_px: float = 2.0,
    map_wh: int | tuple[int, int] | None = None,
    ransac_threshold_px: float = 5.0,
    ransac_iterations: int = 100,
    head_size_px: float = 10.0,
    target_angle_deg: float = 24.0,
    threads: int = 1,
    fused_out: list | None = None,
) -> PipelineReport:
    """Render, fuse, read out, and triangulate one synthetic scenario.

    Each view fuses with the source whose viewing angle is nearest the
    target separation (lower index on ties). Keypoints come from sub-pixel
    peaks of descriptor-correlation heatmaps over the fused maps; a second,
    analytic path triangulates the exact projections under the same noise
    model, isolating readout error from geometric error. Bit-reproducible
    for a fixed seed, including across thread counts: workers only evaluate
    pure functions and results are merged in view order.

    Pass a list as fused_out to receive the per-view fused maps.
    """
    cams = rig.cameras
    n_views = rig.n_views
    n_joints = scene.n_joints
    if params.channels != scene.channels:
        raise ShapeMismatch(
            f"params are for {params.channels} channels, scene has {scene.channels}"
        )

    cams_m = [_camera_at_map_resolution(cam, map_wh) for cam in cams]
    mw, mh = cams_m[0].width, cams_m[0].height
    src_of = _choose_sources(rig.angles_deg, target_angle_deg)

    entropy = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_heat, s_analytic, s_ransac_heat, s_ransac_analytic = entropy.spawn(4)

    maps = _ordered_map(
        lambda cam: render_descriptor_map(cam, scene, sigma_px, (mw, mh)), cams, threads
    )
    fused = _ordered_map(
        lambda r: transformer_forward(
            maps[r], maps[src_of[r]], cams[r], cams[src_of[r]], params, k
        ).fused,
        range(n_views),
        threads,
    )
    if fused_out is not None:
        fused_out.extend(fused)

    # True projections and visibility at map resolution.
    proj = np.full((n_views, n_joints, 2), np.nan)
    visible = np.zeros((n_views, n_joints), dtype=bool)
    for r in range(n_views):
        for j in range(n_joints):
            q = cams_m[r].M @ np.append(scene.joints[j], 1.0)
            if q[2] <= DEFAULT_TOLERANCES.projection_w:
                continue
            p = q[:2] / q[2]
            proj[r, j] = p
            visible[r, j] = (0.0 <= p[0] <= mw - 1) and (0.0 <= p[1] <= mh - 1)

    # Heatmap readout per view and joint, then optional detection noise.
    detections = np.zeros((n_views, n_joints, 2))
    confidences = np.zeros((n_views, n_joints))
    for r in range(n_views):
        for j in range(n_joints):
            corr = fused[r].data @ scene.descriptors[j]
            (px, py), conf = argmax_peak(corr)
            detections[r, j] = (px, py)
            confidences[r, j] = min(max(conf, 0.0), 1.0)
    noise = np.random.default_rng(s_heat).standard_normal((n_views, n_joints, 2))
    detections = detections + noise_px * noise
    analytic_noise = np.random.default_rng(s_analytic).standard_normal(
        (n_views, n_joints, 2)
    )
    analytic_det = proj + noise_px * analytic_noise

    heat_points, heat_valid, heat_inliers = _triangulate_joints(
        cams_m, detections, confidences, visible, ransac_threshold_px,
        ransac_iterations, s_ransac_heat,
    )
    ana_points, ana_valid, _ = _triangulate_joints(
        cams_m, analytic_det, np.ones_like(confidences), visible,
        ransac_threshold_px, ransac_iterations, s_ransac_analytic,
    )

    mpjpe_mm = _masked_mpjpe(heat_points, heat_valid, scene.joints)
    analytic_mpjpe_mm = _masked_mpjpe(ana_points, ana_valid, scene.joints)

    vis_idx = np.argwhere(visible)
    if len(vis_idx):
        pred2d = detections[vis_idx[:, 0], vis_idx[:, 1]]
        gt2d = proj[vis_idx[:, 0], vis_idx[:, 1]]
        jdr_pct = jdr(pred2d, gt2d, head_size_px)
    else:
        jdr_pct = None

    match_hits, match_total = _matching_counts(
        maps, cams_m, proj, visible, src_of, scene, params, k
    )
    profiles = _reference_profiles(maps, cams_m, proj, visible, src_of, scene, params, k)

    per_joint = []
    for j in range(n_joints):
        err = float(np.linalg.norm(heat_points[j] - scene.joints[j])) if heat_valid[j] else None
        ana = float(np.linalg.norm(ana_points[j] - scene.joints[j])) if ana_valid[j] else None
        per_joint.append(
            JointOutcome(
                joint=j,
                error_mm=err,
                analytic_error_mm=ana,
                observed_views=int(np.sum(visible[:, j])),
                inlier_views=heat_inliers[j],
                match_hits=int(match_hits[j]),
                match_total=int(match_total[j]),
                profile=profiles[j],
            )
        )
    total_pairs = int(np.sum(match_total))
    return PipelineReport(
        views=n_views,
        joints=n_joints,
        k=k,
        noise_px=float(noise_px),
        mpjpe_mm=mpjpe_mm,
        analytic_mpjpe_mm=analytic_mpjpe_mm,
        jdr_pct=jdr_pct,
        matching_accuracy=(float(np.sum(match_hits)) / total_pairs) if total_pairs else None,
        per_joint=per_joint,
    )


def _ordered_map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _choose_sources(angles_deg: np.ndarray, target_angle_deg: float) -> list[int]:
    n = angles_deg.shape[0]
    sources = []
    for r in range(n):
        cost = np.abs(angles_deg[r] - target_angle_deg)
        cost[r] = np.inf
        sources.append(int(np.argmin(cost)))
    return sources


def _triangulate_joints(
    cams_m, detections, confidences, visible, threshold_px, iterations, entropy
) -> tuple[np.ndarray, np.ndarray, list[int | None]]:
    n_joints = detections.shape[1]
    seeds = entropy.spawn(n_joints)
    points = np.zeros((n_joints, 3))
    valid = np.zeros(n_joints, dtype=bool)
    inliers: list[int | None] = [None] * n_joints
    for j in range(n_joints):
        obs = [
            Observation(cams_m[r], detections[r, j], confidences[r, j])
            for r in range(detections.shape[0])
            if visible[r, j]
        ]
        if len(obs) < 2:
            continue
        try:
            result = ransac_triangulate(obs, threshold_px, iterations, seeds[j])
        except (NoConsensus, Degenerate):
            continue
        points[j] = result.point
        valid[j] = True
        inliers[j] = int(np.sum(result.inliers))
    return points, valid, inliers


def _masked_mpjpe(points, valid, gt_joints) -> float | None:
    if not np.any(valid):
        return None
    pred = Pose3D(points=points, valid=valid)
    gt = Pose3D(points=gt_joints, valid=valid)
    return mpjpe(pred, gt)


def _attention_over_samples(query, samples, params: FusionParams) -> np.ndarray:
    if params.variant == "identity":
        return similarity_weights(query, samples, params.weight_mode, params.temperature)
    u = params.theta.T @ query
    v = samples @ params.phi
    return similarity_weights(u, v, params.weight_mode, params.temperature)


def _query_pixel(p: np.ndarray, width: int, height: int) -> tuple[int, int]:
    qx = int(np.clip(np.rint(p[0]), 0, width - 1))
    qy = int(np.clip(np.rint(p[1]), 0, height - 1))
    return qx, qy


def _matching_counts(maps, cams_m, proj, visible, src_of, scene, params, k):
    n_views, n_joints = visible.shape
    hits = np.zeros(n_joints, dtype=int)
    totals = np.zeros(n_joints, dtype=int)
    for r in range(n_views):
        s = src_of[r]
        for j in range(n_joints):
            if not (visible[r, j] and visible[s, j]):
                continue
            totals[j] += 1
            qx, qy = _query_pixel(proj[r, j], maps[r].width, maps[r].height)
            samples = epipolar_samples(maps[s], cams_m[r], cams_m[s], (float(qx), float(qy)), k)
            if samples is None:
                continue
            weights = _attention_over_samples(maps[r].data[qy, qx], samples.features, params)
            best = samples.locations[int(np.argmax(weights))]
            span = float(np.linalg.norm(samples.locations[-1] - samples.locations[0]))
            step = span / (k - 1) if k > 1 else span / 2.0
            if float(np.linalg.norm(best - proj[s, j])) <= step + 1e-9:
                hits[j] += 1
    return hits, totals


def _reference_profiles(maps, cams_m, proj, visible, src_of, scene, params, k):
    """Similarity profile of every joint as seen from reference view 0."""
    r = 0
    s = src_of[r]
    profiles: list[dict | None] = [None] * scene.n_joints
    t_values = np.arange(k, dtype=np.float64) / (k - 1) if k > 1 else np.array([0.5])
    for j in range(scene.n_joints):
        if not (visible[r, j] and visible[s, j]):
            continue
        qx, qy = _query_pixel(proj[r, j], maps[r].width, maps[r].height)
        samples = epipolar_samples(maps[s], cams_m[r], cams_m[s], (float(qx), float(qy)), k)
        if samples is None:
            continue
        query = maps[r].data[qy, qx]
        weights = _attention_over_samples(query, samples.features, params)
        profiles[j] = {
            "ref_view": r,
            "src_view": s,
            "t": [float(v) for v in t_values],
            "x": [float(v) for v in samples.locations[:, 0]],
            "y": [float(v) for v in samples.locations[:, 1]],
            "weight": [float(v) for v in weights],
            "dot": [float(v) for v in samples.features @ query],
        }
    return profiles


# -- scenario configuration ----------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one synthetic run (JSON-serializable)."""

    cameras: int = 10
    angle_deg: float = 24.0
    radius_mm: float = 2000.0
    joints: int = 21
    channels: int = 16
    sigma_px: float = 2.0
    k: int = 64
    noise_px: float = 0.0
    seed: int = 7
    variant: str = "identity"
    weight_mode: str = "softmax"
    image_wh: int = 160
    focal_px: float = 200.0
    extent_mm: float = 600.0
    map_wh: int | None = None
    ransac_threshold_px: float = 5.0
    ransac_iterations: int = 100
    head_size_px: float = 10.0
    target_angle_deg: float = 24.0


_INT_KEYS = {"cameras", "joints", "channels", "k", "seed", "image_wh", "map_wh",
             "ransac_iterations"}
_FLOAT_KEYS = {"angle_deg", "radius_mm", "sigma_px", "noise_px", "focal_px",
               "extent_mm", "ransac_threshold_px", "head_size_px", "target_angle_deg"}
_STR_KEYS = {"variant", "weight_mode"}


def scenario_from_dict(obj: dict) -> ScenarioConfig:
    if not isinstance(obj, dict):
        raise ConfigError("scenario config must be a JSON object")
    known = {f.name for f in fields(ScenarioConfig)}
    values: dict = {}
    for key, raw in obj.items():
        name = "k" if key == "K" else key
        if name not in known:
            raise ConfigError(f"unknown config key '{key}'")
        if name in values:
            raise ConfigError(f"config key '{key}' given twice")
        if name in _INT_KEYS:
            if name == "map_wh" and raw is None:
                values[name] = None
                continue
            if not isinstance(raw, int) or isinstance(raw, bool):
                raise ConfigError(f"config key '{key}' must be an integer")
            values[name] = raw
        elif name in _FLOAT_KEYS:
            if not isinstance(raw, (int, float)) or isinstance(raw, bool):
                raise ConfigError(f"config key '{key}' must be a number")
            values[name] = float(raw)
        elif name in _STR_KEYS:
            if not isinstance(raw, str):
                raise ConfigError(f"config key '{key}' must be a string")
            values[name] = raw
    return ScenarioConfig(**values)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    out = asdict(config)
    out["K"] = out.pop("k")
    return out


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(obj)


def build_scenario(
    config: ScenarioConfig,
) -> tuple[Rig, Scene, FusionParams, np.random.SeedSequence]:
    """Rig, scene, and fusion parameters for a config, plus the pipeline seed.

    All randomness forks from config.seed through one SeedSequence, so any
    consumer of the returned pieces sees the exact objects run_scenario uses.
    """
    entropy = np.random.SeedSequence(config.seed)
    s_rig, s_scene, s_params, s_pipe = entropy.spawn(4)
    rig = make_rig(
        config.cameras, config.angle_deg, config.radius_mm, config.image_wh,
        config.focal_px, s_rig,
    )
    scene = make_scene(config.joints, config.extent_mm, config.channels, s_scene)
    params = FusionParams.initialize(
        config.variant, config.weight_mode, config.channels, s_params
    )
    return rig, scene, params, s_pipe


def run_scenario(
    config: ScenarioConfig, threads: int = 1, fused_out: list | None = None
) -> PipelineReport:
    """Build the rig, scene, and parameters for a config and run the pipeline."""
    rig, scene, params, s_pipe = build_scenario(config)
    return run_pipeline(
        rig,
        scene,
        params,
        config.k,
        config.noise_px,
        s_pipe,
        sigma_px=config.sigma_px,
        map_wh=config.map_wh,
        ransac_threshold_px=config.ransac_threshold_px,
        ransac_iterations=config.ransac_iterations,
        head_size_px=config.head_size_px,
        target_angle_deg=config.target_angle_deg,
        threads=threads,
        fused_out=fused_out,
    )


def similarity_profile(
    config: ScenarioConfig, ref_view: int, src_view: int, joint: int
) -> dict | None:
    """Attention profile for one joint between one view pair of a scenario.

    The query is the joint's true projection in the reference view, rounded
    to the nearest pixel. Returns None when the joint is invisible there or
    its epipolar line misses the source map, and raises IndexOutOfRange for
    indices outside the rig or scene.
    """
    rig, scene, params, _ = build_scenario(config)
    last_view = rig.n_views - 1
    if not 0 <= ref_view <= last_view:
        raise IndexOutOfRange(f"reference view {ref_view} outside 0..{last_view}")
    if not 0 <= src_view <= last_view:
        raise IndexOutOfRange(f"source view {src_view} outside 0..{last_view}")
    if ref_view == src_view:
        raise IndexOutOfRange("reference and source views must differ")
    if not 0 <= joint < scene.n_joints:
        raise IndexOutOfRange(f"joint {joint} outside 0..{scene.n_joints - 1}")

    cam_r = _camera_at_map_resolution(rig.cameras[ref_view], config.map_wh)
    cam_s = _camera_at_map_resolution(rig.cameras[src_view], config.map_wh)
    map_r = render_descriptor_map(rig.cameras[ref_view], scene, config.sigma_px, config.map_wh)
    map_s = render_descriptor_map(rig.cameras[src_view], scene, config.sigma_px, config.map_wh)

    q = cam_r.M @ np.append(scene.joints[joint], 1.0)
    if q[2] <= DEFAULT_TOLERANCES.projection_w:
        return None
    p = q[:2] / q[2]
    if not (0.0 <= p[0] <= cam_r.width - 1 and 0.0 <= p[1] <= cam_r.height - 1):
        return None
    qx, qy = _query_pixel(p, cam_r.width, cam_r.height)
    samples = epipolar_samples(map_s, cam_r, cam_s, (float(qx), float(qy)), config.k)
    if samples is None:
        return None
    query = map_r.data[qy, qx]
    weights = _attention_over_samples(query, samples.features, params)
    t_values = np.arange(config.k, dtype=np.float64) / (config.k - 1) if config.k > 1 else np.array([0.5])
    return {
        "ref_view": ref_view,
        "src_view": src_view,
        "joint": joint,
        "t": [float(v) for v in t_values],
        "x": [float(v) for v in samples.locations[:, 0]],
        "y": [float(v) for v in samples.locations[:, 1]],
        "weight": [float(v) for v in weights],
        "dot": [float(v) for v in samples.features @ query],
    }


def report_to_dict(report: PipelineReport, config: ScenarioConfig | None = None) -> dict:
    out = {
        "views": report.views,
        "joints": report.joints,
        "k": report.k,
        "noise_px": report.noise_px,
        "mpjpe_mm": report.mpjpe_mm,
        "analytic_mpjpe_mm": report.analytic_mpjpe_mm,
        "jdr_pct": report.jdr_pct,
        "matching_accuracy": report.matching_accuracy,
        "per_joint": [asdict(j) for j in report.per_joint],
    }
    if config is not None:
        out["config"] = scenario_to_dict(config)
    return out


def report_json(report: PipelineReport, config: ScenarioConfig | None = None) -> str:
    """Canonical serialization: sorted keys, so equal reports are equal bytes."""
    return json.dumps(report_to_dict(report, config), indent=2, sort_keys=True) + "\n"


# -- gradient verification -------------------------------------------------------


@dataclass(eq=False)
class GradCheckResult:
    max_rel_error: float
    entries: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(
    height: int = 8,
    width: int = 8,
    channels: int = 16,
    k: int = 8,
    seed: int = 0,
    variant: str = "identity",
    mode: str = "softmax",
    step: float = 1e-5,
    tolerance: float = 1e-5,
) -> GradCheckResult:
    """Compare transformer_backward against central finite differences.

    Checks every entry of every input and parameter gradient on a random
    two-camera rig with random maps. The sampling geometry is planned once
    and shared across evaluations since it does not depend on the perturbed
    quantities. The relative error is floored at unit scale; a pure ratio
    would blow up on true-zero gradients where finite differences only see
    rounding noise.
    """
    if height * width * channels * k > 1_000_000:
        raise DimsTooLarge("refusing gradient check beyond H*W*C*K = 1e6")
    rig = make_rig(2, 24.0, 1000.0, (width, height), 0.75 * max(width, height), seed)
    cam_r, cam_s = rig.cameras
    rng = np.random.default_rng(seed)
    f_ref = rng.standard_normal((height, width, channels)) * 0.5
    f_src = rng.standard_normal((height, width, channels)) * 0.5
    if variant == "identity":
        params = FusionParams(
            variant, mode, rng.standard_normal((channels, channels)) * 0.3
        )
    else:
        bound = 1.0 / np.sqrt(channels)
        half = channels // 2
        params = FusionParams(
            variant,
            mode,
            rng.standard_normal((half, channels)) * 0.3,
            theta=rng.uniform(-bound, bound, (channels, half)),
            phi=rng.uniform(-bound, bound, (channels, half)),
            g=rng.uniform(-bound, bound, (channels, half)),
        )
    upstream = rng.standard_normal((height, width, channels))

    plan = plan_epipolar_sampling(cam_r, cam_s, (height, width), (height, width), k)

    def loss(ref_data: np.ndarray, src_data: np.ndarray, prm: FusionParams) -> float:
        result: ForwardResult = transformer_forward(
            FeatureMap(ref_data), FeatureMap(src_data), cam_r, cam_s, prm, k, plan=plan
        )
        return float(np.sum(upstream * result.fused.data))

    result = transformer_forward(
        FeatureMap(f_ref), FeatureMap(f_src), cam_r, cam_s, params, k,
        plan=plan, record_grad=True,
    )
    grads = transformer_backward(result.state, upstream)

    def rebuild(name: str, arr: np.ndarray) -> FusionParams:
        parts = {
            "w_z": params.w_z, "theta": params.theta, "phi": params.phi, "g": params.g,
        }
        parts[name] = arr
        if variant == "identity":
            return FusionParams(variant, mode, parts["w_z"])
        return FusionParams(variant, mode, parts["w_z"], theta=parts["theta"],
                            phi=parts["phi"], g=parts["g"])

    checks: list[tuple[np.ndarray, np.ndarray, object]] = [
        (f_ref, grads.f_ref, lambda a: loss(a, f_src, params)),
        (f_src, grads.f_src, lambda a: loss(f_ref, a, params)),
        (params.w_z, grads.w_z, lambda a: loss(f_ref, f_src, rebuild("w_z", a))),
    ]
    if variant == "bottleneck":
        checks += [
            (params.theta, grads.theta, lambda a: loss(f_ref, f_src, rebuild("theta", a))),
            (params.phi, grads.phi, lambda a: loss(f_ref, f_src, rebuild("phi", a))),
            (params.g, grads.g, lambda a: loss(f_ref, f_src, rebuild("g", a))),
        ]

    worst = 0.0
    entries = 0
    for base, analytic, evaluate in checks:
        work = np.array(base, dtype=np.float64)
        flat = work.ravel()
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            hi = evaluate(work)
            flat[idx] = original - step
            lo = evaluate(work)
            flat[idx] = original
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic.ravel()[idx])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
            entries += 1
    return GradCheckResult(max_rel_error=worst, entries=entries, tolerance=tolerance)
