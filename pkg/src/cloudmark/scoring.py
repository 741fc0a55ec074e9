"""From feature grids to anomaly scores.

The 2D path classifies every feature-grid cell against the prompt pair,
upsamples the cell probabilities bilinearly to image resolution, and reads
the map back at each point's pixel, gated by visibility. Averaging over
views yields the per-point 3D segmentation; smoothing and the global-score
formula complete inference. Multimodal fusion combines two aligned per-point
maps and their global scores.

Classification happens at feature resolution and is then upsampled; this
order is normative and the per-point reference in oracles.py replicates it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree
from scipy.special import expit

from cloudmark.cloud import PointCloud
from cloudmark.encoder import TAU_DEFAULT, EncoderProvider, PromptPair
from cloudmark.errors import NumericError, ValidationError
from cloudmark.render import ViewBundle, ViewConfig, render_views, write_pgm

SIGMA_3D_DEFAULT = 0.05
SIGMA_2D_DEFAULT = 4.0
KNN_DEFAULT = 8


@dataclass(frozen=True)
class InferenceResult:
    point_map: np.ndarray       # (n,) anomaly probabilities, smoothed
    global_score: float
    per_view_probs: np.ndarray  # (K,) global p_a per view


# ---------------------------------------------------------------------------
# per-cell classification

def cosine_maps(
    prompts: PromptPair, grid: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell cosines against both prompts, plus the feature norms."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[2] != prompts.d:
        raise ValidationError(
            f"feature grid shape {grid.shape} incompatible with prompt dimension {prompts.d}"
        )
    fnorm = np.linalg.norm(grid, axis=2)
    if not (fnorm > 0).all():
        raise NumericError("feature grid contains zero vectors")
    cos_n = np.clip(grid @ prompts.g_n / (fnorm * np.linalg.norm(prompts.g_n)), -1.0, 1.0)
    cos_a = np.clip(grid @ prompts.g_a / (fnorm * np.linalg.norm(prompts.g_a)), -1.0, 1.0)
    return cos_n, cos_a, fnorm


def probability_map(cos_n: np.ndarray, cos_a: np.ndarray, tau: float) -> np.ndarray:
    """Abnormal-class probability per cell (two-way softmax at temperature tau)."""
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    return expit((cos_a - cos_n) / tau)


def segment(
    prompts: PromptPair,
    grid: np.ndarray,
    cls: str = "abnormal",
    tau: float = TAU_DEFAULT,
) -> np.ndarray:
    """Per-cell class probability map; normal and abnormal sum to 1 exactly."""
    if cls not in ("normal", "abnormal"):
        raise ValidationError(f"unknown class {cls!r}")
    cos_n, cos_a, _ = cosine_maps(prompts, grid)
    p_a = probability_map(cos_n, cos_a, tau)
    return p_a if cls == "abnormal" else 1.0 - p_a


# ---------------------------------------------------------------------------
# bilinear upsampling

@lru_cache(maxsize=64)
def bilinear_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) row-interpolation matrix, cell-center aligned, edge clamped.

    Output index i samples source coordinate (i + 0.5) * src/dst - 0.5.
    """
    if dst < src:
        raise ValidationError("upsampling requires dst >= src")
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    x = np.clip(x, 0.0, src - 1.0)
    x0 = np.floor(x).astype(np.int64)
    x1 = np.minimum(x0 + 1, src - 1)
    t = x - x0
    weights = np.zeros((dst, src))
    rows = np.arange(dst)
    weights[rows, x0] += 1.0 - t
    weights[rows, x1] += t
    weights.setflags(write=False)
    return weights


def upsample_bilinear(cell_map: np.ndarray, H: int, W: int) -> np.ndarray:
    """Bilinear h x w -> H x W; preserves constants and min/max bounds."""
    cell_map = np.asarray(cell_map, dtype=np.float64)
    h, w = cell_map.shape
    return bilinear_weights(h, H) @ cell_map @ bilinear_weights(w, W).T


# ---------------------------------------------------------------------------
# back-projection and aggregation

def back_project_view(s2d: np.ndarray, view: ViewBundle) -> np.ndarray:
    """Per-point score: the map value at the point's pixel where visible, else 0."""
    if s2d.shape != view.depth.shape:
        raise ValidationError("score map resolution does not match the view")
    out = np.zeros(view.n)
    visible = view.vis_mask == 1
    pix = view.pixel_map[visible]
    out[visible] = s2d[pix[:, 0], pix[:, 1]]
    return out


def aggregate_3d(
    view_scores: Sequence[np.ndarray],
    vis_masks: Sequence[np.ndarray],
    mode: str = "paper",
) -> np.ndarray:
    """Combine K per-view back-projections into one per-point map.

    paper: plain mean over K (invisible views contribute zeros).
    visibility_normalized: sum divided by max(1, number of views seeing the point).
    """
    if len(view_scores) < 1:
        raise ValidationError("need at least one view")
    if len(view_scores) != len(vis_masks):
        raise ValidationError("view_scores and vis_masks must pair up")
    total = np.sum(view_scores, axis=0)
    if mode == "paper":
        return total / len(view_scores)
    if mode == "visibility_normalized":
        seen = np.sum([m.astype(np.int64) for m in vis_masks], axis=0)
        return total / np.maximum(1, seen)
    raise ValidationError(f"unknown aggregation mode {mode!r}")


# ---------------------------------------------------------------------------
# smoothing

def smooth_scores(
    scores: np.ndarray,
    cloud: PointCloud,
    sigma: float = SIGMA_3D_DEFAULT,
    k_nn: int = KNN_DEFAULT,
) -> np.ndarray:
    """Gaussian-weighted average over each point's k nearest neighbors.

    sigma = 0 is the identity. Weights exp(-dist^2 / (2 sigma^2)) are
    normalized per point, so the output stays within [min, max] of the input.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (cloud.n,):
        raise ValidationError("score map length must match the cloud")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0 or cloud.n == 1:
        return scores.copy()
    k = min(k_nn, cloud.n)
    tree = cKDTree(cloud.points)
    dist, idx = tree.query(cloud.points, k=k)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    weights = np.exp(-(dist**2) / (2.0 * sigma**2))
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights * scores[idx]).sum(axis=1)


def smooth_map_2d(score_map: np.ndarray, sigma: float = SIGMA_2D_DEFAULT) -> np.ndarray:
    """Separable Gaussian blur truncated at 3 sigma, for image-space maps."""
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        return np.asarray(score_map, dtype=np.float64).copy()
    return gaussian_filter(np.asarray(score_map, dtype=np.float64), sigma, truncate=3.0)


# ---------------------------------------------------------------------------
# inference

def infer_3d(
    cloud: PointCloud,
    prompts: PromptPair,
    provider: EncoderProvider | None,
    cfg: ViewConfig,
    tau: float = TAU_DEFAULT,
    sigma: float = SIGMA_3D_DEFAULT,
    k_nn: int = KNN_DEFAULT,
    mode: str = "paper",
    views: Sequence[ViewBundle] | None = None,
    features: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> InferenceResult:
    """Full 3D inference on one (normalized, label-free) cloud.

    views/features may be supplied to reuse renderings or replay stored
    features; otherwise views are rendered here and features come from the
    provider.
    """
    if views is None:
        views = render_views(cloud, None, cfg)
    if features is None:
        if provider is None:
            raise ValidationError("need an encoder provider or precomputed features")
        features = [provider.encode(v.image) for v in views]
    if len(features) != len(views):
        raise ValidationError("one feature pair per view required")

    per_view_probs = np.empty(len(views))
    back_projections = []
    for k, (view, (global_feat, grid)) in enumerate(zip(views, features)):
        cos_n, cos_a, _ = cosine_maps(prompts, grid)
        cell_probs = probability_map(cos_n, cos_a, tau)
        s2d = upsample_bilinear(cell_probs, view.depth.shape[0], view.depth.shape[1])
        back_projections.append(back_project_view(s2d, view))
        gap = _global_gap(prompts, global_feat)
        per_view_probs[k] = expit(gap / tau)

    raw = aggregate_3d(back_projections, [v.vis_mask for v in views], mode)
    point_map = smooth_scores(raw, cloud, sigma, k_nn)
    global_score = 0.5 * (per_view_probs.mean() + point_map.max())
    return InferenceResult(point_map, float(global_score), per_view_probs)


def _global_gap(prompts: PromptPair, f: np.ndarray) -> float:
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        raise NumericError("global feature has zero norm")
    cos_n = np.dot(f, prompts.g_n) / (fnorm * np.linalg.norm(prompts.g_n))
    cos_a = np.dot(f, prompts.g_a) / (fnorm * np.linalg.norm(prompts.g_a))
    return float(np.clip(cos_a, -1, 1) - np.clip(cos_n, -1, 1))


# ---------------------------------------------------------------------------
# multimodal fusion

def fuse_multimodal(
    res3d: InferenceResult,
    rgb_point_map: np.ndarray,
    rgb_global: float,
    cloud: PointCloud,
    sigma: float = SIGMA_3D_DEFAULT,
    k_nn: int = KNN_DEFAULT,
) -> tuple[np.ndarray, float]:
    """Fuse geometry and RGB scores:

    point_map_mod = 1/2 * G_sigma(A_m + A_m_rgb)
    global_mod    = 1/2 * (1/2 * (A_s_rgb + A_s) + max(point_map_mod))
    """
    rgb_point_map = np.asarray(rgb_point_map, dtype=np.float64)
    if rgb_point_map.shape != res3d.point_map.shape:
        raise ValidationError("RGB point map length does not match the 3D map")
    point_map_mod = 0.5 * smooth_scores(
        res3d.point_map + rgb_point_map, cloud, sigma, k_nn
    )
    global_mod = 0.5 * (
        0.5 * (rgb_global + res3d.global_score) + point_map_mod.max()
    )
    return point_map_mod, float(global_mod)


# ---------------------------------------------------------------------------
# score export

def save_scores_csv(path: str | Path, cloud: PointCloud, scores: np.ndarray) -> None:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (cloud.n,):
        raise ValidationError("score map length must match the cloud")
    with open(path, "w") as fh:
        fh.write("index,a,b,c,score\n")
        for j in range(cloud.n):
            a, b, c = cloud.points[j]
            fh.write(f"{j},{a:.17g},{b:.17g},{c:.17g},{scores[j]:.17g}\n")


def load_scores_csv(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 4].copy()


def save_score_map(path_base: str | Path, score_map: np.ndarray) -> None:
    """8-bit PGM for inspection plus a float32 raw sidecar for exact reload."""
    path_base = Path(path_base)
    write_pgm(path_base.with_suffix(".pgm"), score_map)
    np.asarray(score_map, dtype=np.float32).tofile(path_base.with_suffix(".f32"))
