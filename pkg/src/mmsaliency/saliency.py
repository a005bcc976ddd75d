"""Black-box perturbation saliency methods and saliency post-processing.

All methods probe a prediction oracle only through input-output pairs. The
"superpixels" are regular grid blocks: deterministic and dimension-agnostic.
Methods on per-modality grids produce modality-specific maps; methods on
shared grids broadcast one map across all modalities.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .oracle import _iter_samples
from .tensorio import MultiModalVolume, SaliencyMap


class SaliencyMethod(Enum):
    OCCLUSION = "occlusion"
    FEATURE_ABLATION = "feature_ablation"
    FEATURE_PERMUTATION = "feature_permutation"
    LIME = "lime"
    SHAPLEY_SAMPLING = "shapley_sampling"
    KERNEL_SHAP = "kernel_shap"


# Methods whose segment grid is shared across modalities; their maps are
# identical on every modality by construction.
SHARED_MAP_METHODS = (SaliencyMethod.FEATURE_PERMUTATION, SaliencyMethod.KERNEL_SHAP)


@dataclass(frozen=True, eq=False)
class SegmentGrid:
    """Regular-block partition of a volume into attribution units.

    per_modality=True gives each modality its own segment ids; otherwise one
    spatial segment spans all modalities. Ids are dense from 0 and every voxel
    belongs to exactly one segment.
    """

    block_shape: tuple
    per_modality: bool
    segment_ids: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.segment_ids, dtype=np.int32)
        uniq = np.unique(ids)
        if uniq[0] != 0 or uniq[-1] != len(uniq) - 1:
            raise ValueError("segment ids must be dense from 0")
        ids.setflags(write=False)
        object.__setattr__(self, "segment_ids", ids)
        object.__setattr__(self, "block_shape", tuple(int(b) for b in self.block_shape))

    @property
    def n_segments(self):
        return int(self.segment_ids.max()) + 1


def build_grid(n_modalities, dims, block_shape, per_modality=True) -> SegmentGrid:
    """Partition (n_modalities, *dims) into regular blocks of block_shape."""
    block_shape = _axis_tuple(block_shape, len(dims), "block_shape")
    if any(b < 1 for b in block_shape):
        raise ValueError(f"block_shape must be positive, got {block_shape}")
    axes = [np.arange(d) // b for d, b in zip(dims, block_shape)]
    n_axis_blocks = [int(a[-1]) + 1 for a in axes]
    spatial = np.zeros(dims, dtype=np.int64)
    for k, ax in enumerate(axes):
        shape = [1] * len(dims)
        shape[k] = dims[k]
        spatial = spatial * n_axis_blocks[k] + ax.reshape(shape)
    n_blocks = int(np.prod(n_axis_blocks))
    if per_modality:
        ids = spatial[None] + n_blocks * np.arange(n_modalities).reshape(
            (-1,) + (1,) * len(dims)
        )
    else:
        ids = np.broadcast_to(spatial, (n_modalities, *dims)).copy()
    return SegmentGrid(block_shape, per_modality, ids)


@dataclass(frozen=True)
class MethodConfig:
    """Configuration shared by all saliency methods.

    target_class=None means "explain the predicted class". `exhaustive`
    switches the sampling estimators (shapley_sampling, kernel_shap) to full
    enumeration; n_samples is ignored in that mode.
    """

    method: SaliencyMethod
    target_class: int | None = None
    rng_seed: int = 0
    window: tuple | int | None = None
    stride: tuple | int | None = None
    block_shape: tuple | int = 8
    n_samples: int = 128
    ridge_lambda: float = 1e-3
    kernel_width: float = 0.25
    exhaustive: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width must be positive")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")


def _axis_tuple(value, ndim, name):
    if np.isscalar(value):
        return (int(value),) * ndim
    out = tuple(int(v) for v in value)
    if len(out) != ndim:
        raise ValueError(f"{name} must have {ndim} entries, got {out}")
    return out


def _predict_target(oracle, names, data, target):
    return oracle.predict(MultiModalVolume(names, data.copy())).probs[target]


def _resolve_target(oracle, volume, cfg):
    if cfg.target_class is not None:
        return cfg.target_class
    return oracle.predict(volume).argmax


def postprocess(raw: SaliencyMap) -> SaliencyMap:
    """Cap outliers at the joint 99th percentile, zero negatives, scale to [0,1].

    The percentile (linear-interpolation definition) is taken over all values
    of the whole multi-modal map. All-zero maps pass through unchanged. The
    operation is idempotent.
    """
    values = raw.data.astype(np.float64)
    cap = np.percentile(values, 99.0)
    values = np.minimum(values, cap)
    values = np.maximum(values, 0.0)
    top = values.max()
    if top > 0.0:
        values = values / top
    return SaliencyMap(raw.modality_names, values, postprocessed=True)


def occlusion(volume, oracle, cfg) -> SaliencyMap:
    """Modality-wise sliding-window occlusion with Gaussian replacement.

    Each window in one modality is replaced by draws from a normal with that
    modality's mean and standard deviation (a constant-modality's draws equal
    its mean); the drop in the target probability is accumulated over the
    window's voxels and averaged by per-voxel window coverage. Window
    positions step by `stride` plus a final flush-to-edge position; voxels a
    stride > window leaves uncovered keep attribution 0.
    """
    dims = volume.dims
    window = _axis_tuple(8 if cfg.window is None else cfg.window, len(dims), "window")
    stride = _axis_tuple(4 if cfg.stride is None else cfg.stride, len(dims), "stride")
    if any(w < 1 or w > d for w, d in zip(window, dims)):
        raise ValueError(f"window {window} must fit inside dims {dims}")
    if any(s < 1 for s in stride):
        raise ValueError(f"stride {stride} must be positive")
    target = _resolve_target(oracle, volume, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    p_orig = _predict_target(oracle, volume.modality_names, volume.data, target)

    positions = []
    for d, w, s in zip(dims, window, stride):
        pos = list(range(0, d - w + 1, s))
        if pos[-1] != d - w:
            pos.append(d - w)
        positions.append(pos)

    accum = np.zeros_like(volume.data, dtype=np.float64)
    cover = np.zeros_like(volume.data, dtype=np.int64)
    for m in range(volume.n_modalities):
        mu = float(volume.data[m].mean())
        sd = float(volume.data[m].std())
        for corner in itertools.product(*positions):
            sl = (m,) + tuple(slice(c, c + w) for c, w in zip(corner, window))
            if sd > 0.0:
                fill = rng.normal(mu, sd, size=window)
            else:
                fill = np.full(window, mu)
            perturbed = volume.data.copy()
            perturbed[sl] = fill
            delta = p_orig - _predict_target(
                oracle, volume.modality_names, perturbed, target
            )
            accum[sl] += delta
            cover[sl] += 1
    sal = np.divide(accum, cover, out=np.zeros_like(accum), where=cover > 0)
    return SaliencyMap(volume.modality_names, sal)


def feature_ablation(volume, oracle, cfg, grid: SegmentGrid) -> SaliencyMap:
    """Zero one segment at a time; its voxels get the target-probability drop.

    Requires a per-modality grid so the maps are modality-specific.
    """
    if not grid.per_modality:
        raise ValueError("feature_ablation requires a per-modality segment grid")
    _check_grid(grid, volume)
    target = _resolve_target(oracle, volume, cfg)
    p_orig = _predict_target(oracle, volume.modality_names, volume.data, target)
    phi = np.zeros(grid.n_segments)
    for k in range(grid.n_segments):
        sel = grid.segment_ids == k
        perturbed = volume.data.copy()
        perturbed[sel] = 0.0
        phi[k] = p_orig - _predict_target(
            oracle, volume.modality_names, perturbed, target
        )
    return SaliencyMap(volume.modality_names, phi[grid.segment_ids])


def feature_permutation(data, oracle, cfg, grid: SegmentGrid):
    """Shuffle each segment's content across the batch (the whole dataset).

    The grid is shared across modalities, so one spatial map is broadcast to
    every modality. The per-segment shuffle prefers derangements (falls back
    to a random full cycle), is seeded, and swaps the segment's content in all
    modalities at once. Returns {sample_id: SaliencyMap}.
    """
    if grid.per_modality:
        raise ValueError("feature_permutation requires a shared segment grid")
    samples = _iter_samples(data)
    if len(samples) < 2:
        raise ValueError("feature_permutation needs at least 2 samples in the batch")
    names = samples[0].volume.modality_names
    shape = samples[0].volume.data.shape
    for s in samples:
        if s.volume.modality_names != names or s.volume.data.shape != shape:
            raise ValueError("all samples in the batch must share modalities and dims")
    _check_grid(grid, samples[0].volume)

    rng = np.random.default_rng(cfg.rng_seed)
    p_orig, targets = {}, {}
    for s in samples:
        probs = oracle.predict(s.volume)
        t = cfg.target_class if cfg.target_class is not None else probs.argmax
        targets[s.record.sample_id] = t
        p_orig[s.record.sample_id] = probs.probs[t]

    n = len(samples)
    out = {s.record.sample_id: np.zeros(shape) for s in samples}
    for k in range(grid.n_segments):
        sel = grid.segment_ids == k
        perm = _derangement_preferring(rng, n)
        for j, s in enumerate(samples):
            sid = s.record.sample_id
            src = samples[int(perm[j])]
            perturbed = s.volume.data.copy()
            perturbed[sel] = src.volume.data[sel]
            delta = p_orig[sid] - _predict_target(oracle, names, perturbed, targets[sid])
            out[sid][sel] = delta
    return {sid: SaliencyMap(names, arr) for sid, arr in out.items()}


def _derangement_preferring(rng, n):
    identity = np.arange(n)
    for _ in range(10):
        perm = rng.permutation(n)
        if not np.any(perm == identity):
            return perm
    order = rng.permutation(n)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = np.roll(order, -1)
    return perm


def lime(volume, oracle, cfg, grid: SegmentGrid) -> SaliencyMap:
    """Local ridge surrogate on uniformly sampled keep/drop segment masks.

    Dropped segments are zeroed; sample weights follow
    exp(-(1 - |z|/K)^2 / kernel_width^2). The fit includes an unpenalized
    intercept; each segment's voxels receive its coefficient.
    """
    _check_grid(grid, volume)
    k_segments = grid.n_segments
    if cfg.n_samples < k_segments:
        raise ValueError(
            f"n_samples={cfg.n_samples} < {k_segments} segments: "
            "surrogate system is underdetermined"
        )
    target = _resolve_target(oracle, volume, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    Z = rng.integers(0, 2, size=(cfg.n_samples, k_segments)).astype(np.float64)
    y = np.empty(cfg.n_samples)
    for i in range(cfg.n_samples):
        keep = Z[i][grid.segment_ids]
        y[i] = _predict_target(
            oracle, volume.modality_names, volume.data * keep, target
        )
    frac = Z.sum(axis=1) / k_segments
    weights = np.exp(-((1.0 - frac) ** 2) / cfg.kernel_width**2)

    design = np.hstack([np.ones((cfg.n_samples, 1)), Z])
    penalty = np.eye(k_segments + 1) * cfg.ridge_lambda
    penalty[0, 0] = 0.0  # intercept unpenalized
    gram = design.T @ (design * weights[:, None]) + penalty
    rhs = design.T @ (weights * y)
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"lime normal equations are singular: {exc}") from exc
    if not np.isfinite(beta).all():
        raise ValueError("lime normal equations are singular")
    coef = beta[1:]
    return SaliencyMap(volume.modality_names, coef[grid.segment_ids])


def shapley_sampling(volume, oracle, cfg, grid: SegmentGrid) -> SaliencyMap:
    """Mean marginal contribution of each segment over segment orderings.

    Segments are added in permutation order starting from an all-zero
    baseline. cfg.exhaustive enumerates all K! orderings (K <= 8), which
    reproduces exact Shapley values; otherwise n_samples random orderings.
    """
    _check_grid(grid, volume)
    k_segments = grid.n_segments
    target = _resolve_target(oracle, volume, cfg)
    if cfg.exhaustive:
        if k_segments > 8:
            raise ValueError("exhaustive ordering enumeration is capped at 8 segments")
        perms = list(itertools.permutations(range(k_segments)))
    else:
        rng = np.random.default_rng(cfg.rng_seed)
        perms = [rng.permutation(k_segments) for _ in range(cfg.n_samples)]
    p_empty = _predict_target(
        oracle, volume.modality_names, np.zeros_like(volume.data), target
    )
    marginals = np.zeros(k_segments)
    for perm in perms:
        x = np.zeros_like(volume.data)
        p_prev = p_empty
        for k in perm:
            sel = grid.segment_ids == k
            x[sel] = volume.data[sel]
            p_cur = _predict_target(oracle, volume.modality_names, x, target)
            marginals[int(k)] += p_cur - p_prev
            p_prev = p_cur
    phi = marginals / len(perms)
    return SaliencyMap(volume.modality_names, phi[grid.segment_ids])


def _kernel_shap_weight(k, size):
    return (k - 1.0) / (math.comb(k, size) * size * (k - size))


def kernel_shap(volume, oracle, cfg, grid: SegmentGrid) -> SaliencyMap:
    """Shapley values via the weighted-least-squares (LIME-style) formulation.

    Coalitions exclude the empty and full sets, which enter as the efficiency
    constraint sum(phi) = p(full) - p(empty); weights are
    (K-1)/(C(K,|z|)|z|(K-|z|)). The grid is shared across modalities, so the
    map is not modality-specific. cfg.exhaustive enumerates all 2^K - 2
    proper coalitions (K <= 12).
    """
    if grid.per_modality:
        raise ValueError("kernel_shap requires a shared segment grid")
    _check_grid(grid, volume)
    k_segments = grid.n_segments
    target = _resolve_target(oracle, volume, cfg)
    names = volume.modality_names
    p_full = _predict_target(oracle, names, volume.data, target)
    p_empty = _predict_target(oracle, names, np.zeros_like(volume.data), target)
    delta = p_full - p_empty
    if k_segments == 1:
        return SaliencyMap(names, np.full_like(volume.data, delta, dtype=np.float64))

    if cfg.exhaustive:
        if k_segments > 12:
            raise ValueError("exhaustive coalition enumeration is capped at 12 segments")
        masks = np.arange(1, (1 << k_segments) - 1)
        Z = (masks[:, None] >> np.arange(k_segments) & 1).astype(np.float64)
    else:
        if cfg.n_samples < k_segments + 2:
            raise ValueError(
                f"kernel_shap needs n_samples >= K+2 = {k_segments + 2}, "
                f"got {cfg.n_samples}"
            )
        rng = np.random.default_rng(cfg.rng_seed)
        sizes = np.arange(1, k_segments)
        size_mass = np.array(
            [math.comb(k_segments, s) * _kernel_shap_weight(k_segments, s) for s in sizes]
        )
        size_probs = size_mass / size_mass.sum()
        Z = np.zeros((cfg.n_samples, k_segments))
        for i in range(cfg.n_samples):
            s = int(rng.choice(sizes, p=size_probs))
            Z[i, rng.choice(k_segments, size=s, replace=False)] = 1.0

    coalition_sizes = Z.sum(axis=1).astype(int)
    weights = np.array([_kernel_shap_weight(k_segments, s) for s in coalition_sizes])
    y = np.empty(len(Z))
    for i in range(len(Z)):
        keep = Z[i][grid.segment_ids]
        y[i] = _predict_target(oracle, names, volume.data * keep, target)

    # Eliminate the last player with the efficiency constraint, then solve WLS.
    B = Z[:, :-1] - Z[:, -1:]
    t = y - p_empty - Z[:, -1] * delta
    gram = B.T @ (B * weights[:, None])
    rhs = B.T @ (weights * t)
    try:
        head = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"kernel_shap system is singular: {exc}") from exc
    if not np.isfinite(head).all():
        raise ValueError("kernel_shap system is singular")
    phi = np.concatenate([head, [delta - head.sum()]])
    return SaliencyMap(names, phi[grid.segment_ids])


def _check_grid(grid, volume):
    if grid.segment_ids.shape != volume.data.shape:
        raise ValueError(
            f"grid shape {grid.segment_ids.shape} does not match volume "
            f"shape {volume.data.shape}"
        )


def default_grid_for(method, n_modalities, dims, block_shape):
    """Grid with the conventional sharing mode for a method (None for occlusion)."""
    method = SaliencyMethod(method)
    if method is SaliencyMethod.OCCLUSION:
        return None
    shared = method in SHARED_MAP_METHODS
    return build_grid(n_modalities, dims, block_shape, per_modality=not shared)


def generate_maps(data, oracle, cfg: MethodConfig, grid=None):
    """Run one method over a dataset; returns ({sample_id: map}, runlog dict).

    The runlog records method, params, seed, and wall time per sample (for
    batch methods, the batch time split evenly). Wall times are measurement,
    not a deterministic output.
    """
    samples = _iter_samples(data)
    if not samples:
        raise ValueError("empty dataset")
    method = cfg.method
    first = samples[0].volume
    if grid is None:
        grid = default_grid_for(method, first.n_modalities, first.dims, cfg.block_shape)

    maps, wall = {}, {}
    if method is SaliencyMethod.FEATURE_PERMUTATION:
        t0 = time.perf_counter()
        maps = feature_permutation(samples, oracle, cfg, grid)
        per_sample = (time.perf_counter() - t0) / len(samples)
        wall = {s.record.sample_id: per_sample for s in samples}
    else:
        for s in samples:
            t0 = time.perf_counter()
            if method is SaliencyMethod.OCCLUSION:
                smap = occlusion(s.volume, oracle, cfg)
            elif method is SaliencyMethod.FEATURE_ABLATION:
                smap = feature_ablation(s.volume, oracle, cfg, grid)
            elif method is SaliencyMethod.LIME:
                smap = lime(s.volume, oracle, cfg, grid)
            elif method is SaliencyMethod.SHAPLEY_SAMPLING:
                smap = shapley_sampling(s.volume, oracle, cfg, grid)
            elif method is SaliencyMethod.KERNEL_SHAP:
                smap = kernel_shap(s.volume, oracle, cfg, grid)
            else:
                raise ValueError(f"unknown method {method}")
            wall[s.record.sample_id] = time.perf_counter() - t0
            maps[s.record.sample_id] = smap
    runlog = {
        "method": method.value,
        "params": {
            "window": cfg.window,
            "stride": cfg.stride,
            "block_shape": cfg.block_shape,
            "n_samples": cfg.n_samples,
            "ridge_lambda": cfg.ridge_lambda,
            "kernel_width": cfg.kernel_width,
            "exhaustive": cfg.exhaustive,
            "target_class": cfg.target_class,
        },
        "seed": cfg.rng_seed,
        "wall_time": wall,
    }
    return maps, runlog
