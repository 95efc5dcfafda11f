"""Attention-weighted fusion of epipolar samples into a reference map.

For every reference pixel p with query feature q = F_ref(p), the K feature
rows s_1..s_K sampled along p's epipolar line in the source view are scored
by dot product, turned into weights (softmax, or a one-hot max), and blended
into an aggregate that is added back through a residual projection:

    identity variant     out = q + W_z @ sum_i w_i s_i          W_z: (C, C)
    bottleneck variant   out = q + W_z^T @ sum_i w_i (g^T s_i)  W_z: (C/2, C)

where the bottleneck scores in an embedded half-width space, w ~ softmax of
(theta^T q) . (phi^T s_i). Pixels whose epipolar line misses the source map
are passed through unchanged. Logits are plain dot products; an optional
temperature scales them and defaults to 1.

The forward pass can retain per-pixel weights (for profile inspection) and
the intermediate state needed by transformer_backward, which returns exact
analytic gradients for both feature maps and all fusion parameters. Sample
locations depend only on camera geometry, so no gradient flows through them;
in max mode the weights are piecewise constant and the backward pass
differentiates the locally selected branch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChannelMismatch,
    ConfigError,
    OddChannels,
    ShapeMismatch,
    StateMissing,
)
from .geometry import (
    DEFAULT_TOLERANCES,
    CameraView,
    Tolerances,
    fundamental_matrix,
    normalize_lines,
    rescale_camera,
)
from .sampler import FeatureMap, FusedMap, bilinear_plan, clip_lines, sample_parameters

ETWT_MAGIC = b"ETWT"

VARIANTS = ("identity", "bottleneck")
WEIGHT_MODES = ("softmax", "max")


@dataclass(frozen=True, eq=False)
class FusionParams:
    """Residual projection and optional bottleneck embeddings.

    identity:   w_z is (C, C); theta/phi/g unused.
    bottleneck: w_z is (C/2, C) and theta, phi, g are (C, C/2).
    """

    variant: str
    weight_mode: str
    w_z: np.ndarray
    theta: np.ndarray | None = None
    phi: np.ndarray | None = None
    g: np.ndarray | None = None
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if not (float(self.temperature) > 0.0):
            raise ValueError("temperature must be positive")
        w_z = np.array(self.w_z, dtype=np.float64, copy=True)
        if w_z.ndim != 2 or not np.all(np.isfinite(w_z)):
            raise ShapeMismatch("w_z must be a finite 2-D matrix")
        if self.variant == "identity":
            if w_z.shape[0] != w_z.shape[1]:
                raise ShapeMismatch("identity variant needs a square w_z")
            c = w_z.shape[1]
            object.__setattr__(self, "theta", None)
            object.__setattr__(self, "phi", None)
            object.__setattr__(self, "g", None)
        else:
            half, c = w_z.shape
            if c % 2 != 0:
                raise OddChannels("bottleneck fusion needs an even channel count")
            if half != c // 2:
                raise ShapeMismatch(f"bottleneck w_z must be ({c // 2}, {c})")
            for name in ("theta", "phi", "g"):
                e = getattr(self, name)
                if e is None:
                    raise ShapeMismatch(f"bottleneck variant needs embedding '{name}'")
                e = np.array(e, dtype=np.float64, copy=True)
                if e.shape != (c, c // 2) or not np.all(np.isfinite(e)):
                    raise ShapeMismatch(f"embedding '{name}' must be finite ({c}, {c // 2})")
                e.flags.writeable = False
                object.__setattr__(self, name, e)
        w_z.flags.writeable = False
        object.__setattr__(self, "w_z", w_z)
        object.__setattr__(self, "_channels", c)

    @property
    def channels(self) -> int:
        return self._channels

    @classmethod
    def initialize(
        cls,
        variant: str,
        weight_mode: str,
        channels: int,
        seed: int | np.random.SeedSequence = 0,
        temperature: float = 1.0,
    ) -> "FusionParams":
        """Fresh parameters: zero residual projection, seeded embeddings.

        A zero w_z makes fusion an exact pass-through, so inserting the
        stage into an existing pipeline changes nothing until w_z moves.
        Embeddings draw from uniform(-1/sqrt(C), 1/sqrt(C)).
        """
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if variant == "identity":
            return cls(variant, weight_mode, np.zeros((channels, channels)),
                       temperature=temperature)
        if channels % 2 != 0:
            raise OddChannels("bottleneck fusion needs an even channel count")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(channels)
        half = channels // 2
        theta, phi, g = (rng.uniform(-bound, bound, size=(channels, half)) for _ in range(3))
        return cls(variant, weight_mode, np.zeros((half, channels)),
                   theta=theta, phi=phi, g=g, temperature=temperature)


def similarity_weights(
    query: np.ndarray,
    samples: np.ndarray,
    mode: str = "softmax",
    temperature: float = 1.0,
) -> np.ndarray:
    """Attention weights over K samples from dot-product similarity.

    softmax: w_i = exp(z_i - max_j z_j) / sum, z_i = temperature * q . s_i.
    max: one-hot at the largest logit, lowest index on ties.
    """
    query = np.asarray(query, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or query.shape != (samples.shape[1],):
        raise ShapeMismatch("query must be (C,) and samples (K, C)")
    if mode not in WEIGHT_MODES:
        raise ValueError(f"mode must be one of {WEIGHT_MODES}")
    z = temperature * (samples @ query)
    if mode == "max":
        w = np.zeros(len(z))
        w[int(np.argmax(z))] = 1.0
        return w
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def aggregate(weights: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Convex combination sum_i w_i s_i of the sample rows."""
    weights = np.asarray(weights, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or weights.shape != (samples.shape[0],):
        raise ShapeMismatch("weights must be (K,) and samples (K, C)")
    if abs(float(np.sum(weights)) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    return weights @ samples


def fuse_identity(ref_feat: np.ndarray, agg: np.ndarray, params: FusionParams) -> np.ndarray:
    """Residual fusion out = ref + W_z @ agg for the identity variant."""
    if params.variant != "identity":
        raise ValueError("params are not for the identity variant")
    ref_feat = np.asarray(ref_feat, dtype=np.float64)
    agg = np.asarray(agg, dtype=np.float64)
    c = params.channels
    if ref_feat.shape != (c,) or agg.shape != (c,):
        raise ShapeMismatch("feature vectors do not match the parameter width")
    return ref_feat + params.w_z @ agg


def fuse_bottleneck(
    ref_feat: np.ndarray, samples: np.ndarray, params: FusionParams
) -> np.ndarray:
    """Half-width embedded attention with an up-projection back to C."""
    if params.variant != "bottleneck":
        raise ValueError("params are not for the bottleneck variant")
    ref_feat = np.asarray(ref_feat, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    c = params.channels
    if ref_feat.shape != (c,) or samples.ndim != 2 or samples.shape[1] != c:
        raise ShapeMismatch("feature vectors do not match the parameter width")
    u = params.theta.T @ ref_feat
    v = samples @ params.phi
    w = similarity_weights(u, v, params.weight_mode, params.temperature)
    m = aggregate(w, samples @ params.g)
    return ref_feat + params.w_z.T @ m


@dataclass(eq=False)
class SamplingPlan:
    """Geometry of a dense forward pass: one epipolar segment per pixel.

    valid flags the reference pixels (row-major) whose line intersects the
    source map; locations, corner indices, and blend weights cover only
    those pixels. Built once per view pair, the plan is reusable across any
    feature or parameter values at the same resolutions.
    """

    ref_hw: tuple[int, int]
    src_hw: tuple[int, int]
    k: int
    valid: np.ndarray  # (H*W,) bool
    locations: np.ndarray  # (n_valid, K, 2)
    y0: np.ndarray  # (n_valid*K,) bilinear corner rows
    x0: np.ndarray
    w00: np.ndarray
    w10: np.ndarray
    w01: np.ndarray
    w11: np.ndarray


@dataclass(eq=False)
class WeightRecord:
    """Per-pixel sample locations and attention weights (profile support)."""

    valid: np.ndarray  # (H, W) bool
    locations: np.ndarray  # (H, W, K, 2), NaN where invalid
    weights: np.ndarray  # (H, W, K), NaN where invalid


@dataclass(eq=False)
class _ForwardState:
    plan: SamplingPlan
    params: FusionParams
    query: np.ndarray  # (n, C)
    samples: np.ndarray  # (n, K, C)
    weights: np.ndarray  # (n, K)
    agg: np.ndarray | None = None  # identity: (n, C)
    u: np.ndarray | None = None  # bottleneck: (n, C/2)
    v: np.ndarray | None = None  # (n, K, C/2)
    h_emb: np.ndarray | None = None  # (n, K, C/2)
    m: np.ndarray | None = None  # (n, C/2)


@dataclass(eq=False)
class ForwardResult:
    fused: FusedMap
    weight_record: WeightRecord | None = None
    state: _ForwardState | None = None


@dataclass(eq=False)
class FusionGradients:
    """Analytic gradients returned by transformer_backward."""

    f_ref: np.ndarray  # (H, W, C)
    f_src: np.ndarray  # (H, W, C)
    w_z: np.ndarray
    theta: np.ndarray | None = None
    phi: np.ndarray | None = None
    g: np.ndarray | None = None


def plan_epipolar_sampling(
    ref: CameraView,
    src: CameraView,
    ref_hw: tuple[int, int],
    src_hw: tuple[int, int],
    k: int = 64,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> SamplingPlan:
    """Segments and bilinear plans for every reference pixel at once.

    Cameras at a different resolution than the requested map shapes are
    rescaled first, exactly as epipolar_samples does per query.
    """
    ref_h, ref_w = ref_hw
    src_h, src_w = src_hw
    if (ref.width, ref.height) != (ref_w, ref_h):
        ref = rescale_camera(ref, ref.width / ref_w, ref.height / ref_h)
    if (src.width, src.height) != (src_w, src_h):
        src = rescale_camera(src, src.width / src_w, src.height / src_h)
    f = fundamental_matrix(ref, src, tol)

    xs = np.tile(np.arange(ref_w, dtype=np.float64), ref_h)
    ys = np.repeat(np.arange(ref_h, dtype=np.float64), ref_w)
    pixels = np.stack([xs, ys, np.ones_like(xs)], axis=1)
    lines, line_ok = normalize_lines(pixels @ f.T, tol)
    clip_ok, ends = clip_lines(lines, src_w, src_h)
    valid = line_ok & clip_ok

    t = sample_parameters(k)
    p0 = ends[valid, :2]
    d = ends[valid, 2:] - ends[valid, :2]
    locations = p0[:, None, :] + t[None, :, None] * d[:, None, :]
    y0, x0, w00, w10, w01, w11 = bilinear_plan(src_h, src_w, locations.reshape(-1, 2))
    return SamplingPlan(
        ref_hw=(ref_h, ref_w),
        src_hw=(src_h, src_w),
        k=k,
        valid=valid,
        locations=locations,
        y0=y0,
        x0=x0,
        w00=w00,
        w10=w10,
        w01=w01,
        w11=w11,
    )


def _gather_samples(plan: SamplingPlan, src_data: np.ndarray) -> np.ndarray:
    src_h, src_w = plan.src_hw
    c = src_data.shape[2]
    flat = src_data.reshape(src_h * src_w, c)
    i00 = plan.y0 * src_w + plan.x0
    s = (
        plan.w00[:, None] * flat[i00]
        + plan.w10[:, None] * flat[i00 + 1]
        + plan.w01[:, None] * flat[i00 + src_w]
        + plan.w11[:, None] * flat[i00 + src_w + 1]
    )
    return s.reshape(-1, plan.k, c)


def _batch_weights(logits: np.ndarray, mode: str) -> np.ndarray:
    if mode == "max":
        w = np.zeros_like(logits)
        if logits.shape[0]:
            w[np.arange(logits.shape[0]), np.argmax(logits, axis=1)] = 1.0
        return w
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def transformer_forward(
    f_ref: FeatureMap,
    f_src: FeatureMap,
    ref: CameraView,
    src: CameraView,
    params: FusionParams,
    k: int = 64,
    *,
    plan: SamplingPlan | None = None,
    record_weights: bool = False,
    record_grad: bool = False,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> ForwardResult:
    """Fuse the reference map with epipolar-sampled source features.

    Every pixel is processed independently; skipped pixels (no epipolar
    intersection) keep their reference feature bit for bit. Pass a
    precomputed plan to amortize the geometry across repeated calls with
    the same cameras, map shapes, and K.
    """
    if f_ref.channels != f_src.channels:
        raise ChannelMismatch(
            f"reference has {f_ref.channels} channels, source {f_src.channels}"
        )
    c = f_ref.channels
    if params.channels != c:
        raise ShapeMismatch(f"params are for {params.channels} channels, maps have {c}")
    if plan is None:
        plan = plan_epipolar_sampling(
            ref, src, (f_ref.height, f_ref.width), (f_src.height, f_src.width), k, tol
        )
    elif plan.ref_hw != (f_ref.height, f_ref.width) or plan.src_hw != (
        f_src.height,
        f_src.width,
    ):
        raise ShapeMismatch("sampling plan does not match the map shapes")

    h, w = plan.ref_hw
    valid = plan.valid
    queries = f_ref.data.reshape(h * w, c)[valid]
    samples = _gather_samples(plan, f_src.data)
    tau = params.temperature

    state = _ForwardState(plan, params, queries, samples, np.empty(0)) if record_grad else None

    if params.variant == "identity":
        logits = tau * np.einsum("nc,nkc->nk", queries, samples)
        weights = _batch_weights(logits, params.weight_mode)
        agg = np.einsum("nk,nkc->nc", weights, samples)
        out = queries + agg @ params.w_z.T
        if state is not None:
            state.agg = agg
    else:
        u = queries @ params.theta
        v = np.einsum("nkc,cd->nkd", samples, params.phi)
        logits = tau * np.einsum("nd,nkd->nk", u, v)
        weights = _batch_weights(logits, params.weight_mode)
        h_emb = np.einsum("nkc,cd->nkd", samples, params.g)
        m = np.einsum("nk,nkd->nd", weights, h_emb)
        out = queries + m @ params.w_z
        if state is not None:
            state.u, state.v, state.h_emb, state.m = u, v, h_emb, m

    fused_flat = f_ref.data.reshape(h * w, c).copy()
    fused_flat[valid] = out
    fused = FeatureMap(fused_flat.reshape(h, w, c))

    record = None
    if record_weights:
        loc_full = np.full((h * w, plan.k, 2), np.nan)
        loc_full[valid] = plan.locations
        w_full = np.full((h * w, plan.k), np.nan)
        w_full[valid] = weights
        record = WeightRecord(
            valid=valid.reshape(h, w).copy(),
            locations=loc_full.reshape(h, w, plan.k, 2),
            weights=w_full.reshape(h, w, plan.k),
        )
    if state is not None:
        state.weights = weights
    return ForwardResult(fused=fused, weight_record=record, state=state)


def transformer_backward(state: _ForwardState | None, grad_fused: np.ndarray) -> FusionGradients:
    """Exact gradients of a recorded forward pass.

    grad_fused is dL/dFusedMap as an (H, W, C) array. Returns gradients for
    the reference map, the source map, and every fusion parameter; skipped
    pixels contribute identity gradients to the reference map only. Bilinear
    reads scatter back to their four corner pixels; the scatter accumulates
    in a fixed order, so results are reproducible run to run.
    """
    if state is None:
        raise StateMissing("forward pass was not run with record_grad=True")
    plan = state.plan
    params = state.params
    h, w = plan.ref_hw
    src_h, src_w = plan.src_hw
    c = params.channels
    grad_fused = np.asarray(grad_fused, dtype=np.float64)
    if grad_fused.shape != (h, w, c):
        raise ShapeMismatch(f"grad must be ({h}, {w}, {c}), got {grad_fused.shape}")

    g_flat = grad_fused.reshape(h * w, c)
    d_ref = g_flat.copy()  # identity path reaches every pixel
    gv = g_flat[plan.valid]
    queries, samples, weights = state.query, state.samples, state.weights
    tau = params.temperature
    softmax = params.weight_mode == "softmax"

    theta_g = phi_g = g_g = None
    if params.variant == "identity":
        da = gv @ params.w_z  # dL/d agg
        wz_g = np.einsum("nc,nj->cj", gv, state.agg)
        dw = np.einsum("nkc,nc->nk", samples, da)
        ds = weights[:, :, None] * da[:, None, :]
        if softmax:
            dz = weights * (dw - np.sum(weights * dw, axis=1, keepdims=True))
            d_ref[plan.valid] += tau * np.einsum("nk,nkc->nc", dz, samples)
            ds += tau * dz[:, :, None] * queries[:, None, :]
    else:
        dm = gv @ params.w_z.T
        wz_g = np.einsum("nd,nc->dc", state.m, gv)
        dh = weights[:, :, None] * dm[:, None, :]
        dw = np.einsum("nkd,nd->nk", state.h_emb, dm)
        ds = np.einsum("nkd,cd->nkc", dh, params.g)
        g_g = np.einsum("nkc,nkd->cd", samples, dh)
        theta_g = np.zeros_like(params.theta)
        phi_g = np.zeros_like(params.phi)
        if softmax:
            dz = weights * (dw - np.sum(weights * dw, axis=1, keepdims=True))
            du = tau * np.einsum("nk,nkd->nd", dz, state.v)
            dv = tau * dz[:, :, None] * state.u[:, None, :]
            d_ref[plan.valid] += du @ params.theta.T
            theta_g += np.einsum("nc,nd->cd", queries, du)
            ds += np.einsum("nkd,cd->nkc", dv, params.phi)
            phi_g += np.einsum("nkc,nkd->cd", samples, dv)

    d_src_flat = np.zeros((src_h * src_w, c))
    ds_flat = ds.reshape(-1, c)
    i00 = plan.y0 * src_w + plan.x0
    np.add.at(d_src_flat, i00, plan.w00[:, None] * ds_flat)
    np.add.at(d_src_flat, i00 + 1, plan.w10[:, None] * ds_flat)
    np.add.at(d_src_flat, i00 + src_w, plan.w01[:, None] * ds_flat)
    np.add.at(d_src_flat, i00 + src_w + 1, plan.w11[:, None] * ds_flat)

    return FusionGradients(
        f_ref=d_ref.reshape(h, w, c),
        f_src=d_src_flat.reshape(src_h, src_w, c),
        w_z=wz_g,
        theta=theta_g,
        phi=phi_g,
        g=g_g,
    )


# -- parameter file I/O -------------------------------------------------------
#
# Binary layout: magic "ETWT", one variant byte (0 identity, 1 bottleneck),
# one weight-mode byte (0 softmax, 1 max), u32 little-endian C, then the
# matrices in declared order (w_z, then theta, phi, g for the bottleneck) as
# little-endian float64 row-major.


def save_fusion_params(params: FusionParams, path: str | Path) -> None:
    header = ETWT_MAGIC + struct.pack(
        "<BBI",
        VARIANTS.index(params.variant),
        WEIGHT_MODES.index(params.weight_mode),
        params.channels,
    )
    blocks = [params.w_z]
    if params.variant == "bottleneck":
        blocks += [params.theta, params.phi, params.g]
    Path(path).write_bytes(header + b"".join(b.astype("<f8").tobytes() for b in blocks))


def load_fusion_params(path: str | Path) -> FusionParams:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != ETWT_MAGIC:
        raise ConfigError(f"{path}: not a fusion parameter file (bad magic)")
    variant_b, mode_b, c = struct.unpack("<BBI", raw[4:10])
    if variant_b >= len(VARIANTS) or mode_b >= len(WEIGHT_MODES):
        raise ConfigError(f"{path}: unknown variant or weight-mode byte")
    variant = VARIANTS[variant_b]
    mode = WEIGHT_MODES[mode_b]
    if variant == "identity":
        shapes = [(c, c)]
    else:
        if c % 2 != 0:
            raise ConfigError(f"{path}: bottleneck channel count must be even")
        shapes = [(c // 2, c)] + [(c, c // 2)] * 3
    expected = 10 + 8 * sum(r * s for r, s in shapes)
    if len(raw) != expected:
        raise ConfigError(f"{path}: expected {expected} bytes, got {len(raw)}")
    offset = 10
    blocks = []
    for r, s in shapes:
        n = r * s
        blocks.append(
            np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(r, s).copy()
        )
        offset += 8 * n
    if variant == "identity":
        return FusionParams(variant, mode, blocks[0])
    return FusionParams(variant, mode, blocks[0], theta=blocks[1], phi=blocks[2], g=blocks[3])
