"""Independent reference implementations used to cross-check the pipeline.

Everything here recomputes results by the most direct route available
(per-pixel enumeration, per-point interpolation, exhaustive threshold
sweeps, central finite differences) and deliberately shares no intermediate
code with the fast paths it checks.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from cloudmark.cloud import PointCloud
from cloudmark.encoder import PromptPair, class_probability
from cloudmark.learning import TrainConfig, TrainSample, hybrid_loss
from cloudmark.render import MARGIN, ViewBundle, ViewConfig
from cloudmark.scoring import InferenceResult


# ---------------------------------------------------------------------------
# z-buffer

def brute_force_vis_mask(cloud: PointCloud, angle: float, cfg: ViewConfig) -> np.ndarray:
    """Per pixel, enumerate every point mapping there and mark the argmin-depth
    point (lowest index on ties). Pure-Python loop, no shared kernel code."""
    ct, st = math.cos(angle), math.sin(angle)
    by_pixel: dict[tuple[int, int], list[int]] = {}
    depths = np.empty(cloud.n)
    for j in range(cloud.n):
        a, b, c = cloud.points[j]
        b2 = b * ct - c * st
        c2 = b * st + c * ct
        u = math.floor(MARGIN * cfg.H + (a + 1.0) * 0.5 * (1.0 - 2.0 * MARGIN) * cfg.H)
        v = math.floor(MARGIN * cfg.W + (b2 + 1.0) * 0.5 * (1.0 - 2.0 * MARGIN) * cfg.W)
        depths[j] = c2
        if 0 <= u < cfg.H and 0 <= v < cfg.W:
            by_pixel.setdefault((u, v), []).append(j)
    mask = np.zeros(cloud.n, dtype=np.uint8)
    for points in by_pixel.values():
        best = points[0]
        for j in points[1:]:
            if depths[j] < depths[best]:
                best = j
        mask[best] = 1
    return mask


# ---------------------------------------------------------------------------
# bilinear upsampling

def bilinear_oracle(cell_map: np.ndarray, H: int, W: int) -> np.ndarray:
    """Direct per-pixel evaluation: output (i, j) samples the source at
    ((i + 0.5) h/H - 0.5, (j + 0.5) w/W - 0.5), clamped to the edges."""
    cell_map = np.asarray(cell_map, dtype=np.float64)
    h, w = cell_map.shape
    out = np.empty((H, W))
    for i in range(H):
        x = min(max((i + 0.5) * h / H - 0.5, 0.0), h - 1.0)
        x0 = int(math.floor(x))
        x1 = min(x0 + 1, h - 1)
        tx = x - x0
        for j in range(W):
            y = min(max((j + 0.5) * w / W - 0.5, 0.0), w - 1.0)
            y0 = int(math.floor(y))
            y1 = min(y0 + 1, w - 1)
            ty = y - y0
            out[i, j] = (
                cell_map[x0, y0] * (1 - tx) * (1 - ty)
                + cell_map[x0, y1] * (1 - tx) * ty
                + cell_map[x1, y0] * tx * (1 - ty)
                + cell_map[x1, y1] * tx * ty
            )
    return out


# ---------------------------------------------------------------------------
# per-point scoring (the O(K n d) route)

def naive_point_scores(
    views: Sequence[ViewBundle],
    features: Sequence[tuple[np.ndarray, np.ndarray]],
    prompts: PromptPair,
    tau: float,
) -> np.ndarray:
    """For every point and view, classify the four feature cells around the
    point's pixel sample position and interpolate the resulting
    probabilities directly (same classify-then-interpolate order as the
    pipeline, but O(d) work per point per view). Mean over views."""
    n = views[0].n
    total = np.zeros(n)
    norm_n = np.linalg.norm(prompts.g_n)
    norm_a = np.linalg.norm(prompts.g_a)
    for view, (_, grid) in zip(views, features):
        h, w, d = grid.shape
        H, W = view.depth.shape
        visible = view.vis_mask == 1
        if not visible.any():
            continue
        pix = view.pixel_map[visible]
        x = np.clip((pix[:, 0] + 0.5) * h / H - 0.5, 0.0, h - 1.0)
        y = np.clip((pix[:, 1] + 0.5) * w / W - 0.5, 0.0, w - 1.0)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = np.minimum(x0 + 1, h - 1)
        y1 = np.minimum(y0 + 1, w - 1)
        tx = x - x0
        ty = y - y0
        score = np.zeros(visible.sum())
        for cx, cy, wt in (
            (x0, y0, (1 - tx) * (1 - ty)),
            (x0, y1, (1 - tx) * ty),
            (x1, y0, tx * (1 - ty)),
            (x1, y1, tx * ty),
        ):
            feats = grid[cx, cy]  # (m, d) gather per corner
            fnorm = np.linalg.norm(feats, axis=1)
            gap = feats @ prompts.g_a / (fnorm * norm_a) - feats @ prompts.g_n / (
                fnorm * norm_n
            )
            score += wt / (1.0 + np.exp(-gap / tau))
        contribution = np.zeros(n)
        contribution[visible] = score
        total += contribution
    return total / len(views)


def naive_point_scores_slow(
    views: Sequence[ViewBundle],
    features: Sequence[tuple[np.ndarray, np.ndarray]],
    prompts: PromptPair,
    tau: float,
) -> np.ndarray:
    """Scalar-loop variant of naive_point_scores for small instances; uses
    the public class_probability on each corner cell."""
    n = views[0].n
    total = np.zeros(n)
    for view, (_, grid) in zip(views, features):
        h, w, _ = grid.shape
        H, W = view.depth.shape
        for j in range(n):
            if view.vis_mask[j] != 1:
                continue
            u, v = view.pixel_map[j]
            x = min(max((u + 0.5) * h / H - 0.5, 0.0), h - 1.0)
            y = min(max((v + 0.5) * w / W - 0.5, 0.0), w - 1.0)
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            x1, y1 = min(x0 + 1, h - 1), min(y0 + 1, w - 1)
            tx, ty = x - x0, y - y0
            value = 0.0
            for cx, cy, wt in (
                (x0, y0, (1 - tx) * (1 - ty)),
                (x0, y1, (1 - tx) * ty),
                (x1, y0, tx * (1 - ty)),
                (x1, y1, tx * ty),
            ):
                _, p_a = class_probability(prompts, grid[cx, cy], tau)
                value += wt * p_a
            total[j] += value
    return total / len(views)


# ---------------------------------------------------------------------------
# gradients

def fd_gradient(
    batch: Sequence[TrainSample],
    prompts: PromptPair,
    hyper: TrainConfig,
    step: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of the total hybrid loss w.r.t. both
    prompt vectors."""
    grads = []
    for which in ("g_n", "g_a"):
        base = getattr(prompts, which).copy()
        grad = np.empty_like(base)
        for i in range(base.size):
            for sign, slot in ((1.0, 0), (-1.0, 1)):
                shifted = base.copy()
                shifted[i] += sign * step
                pair = (
                    PromptPair(shifted, prompts.g_a)
                    if which == "g_n"
                    else PromptPair(prompts.g_n, shifted)
                )
                value = hybrid_loss(batch, pair, hyper).total
                if slot == 0:
                    plus = value
                else:
                    minus = value
            grad[i] = (plus - minus) / (2.0 * step)
        grads.append(grad)
    return grads[0], grads[1]


# ---------------------------------------------------------------------------
# metrics

def auroc_oracle(scores, labels) -> float:
    """Exhaustive pair counting."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def ap_oracle(scores, labels) -> float:
    """Recount precision/recall from scratch at every distinct threshold,
    descending, ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    total_pos = int(labels.sum())
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= t
        tp = int(labels[predicted].sum())
        precision = tp / int(predicted.sum())
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def aupro_oracle(
    maps: Sequence[np.ndarray], region_sets: Sequence[np.ndarray], fpr_limit: float = 0.3
) -> float:
    """Exhaustive threshold sweep recounting FPR and per-region coverage
    with fresh passes at every threshold."""
    all_scores = sorted(
        {float(s) for m in maps for s in np.asarray(m).ravel()}, reverse=True
    )
    curve = [(0.0, 0.0)]
    for t in all_scores:
        fp = 0
        normals = 0
        coverages = []
        for scores, regions in zip(maps, region_sets):
            scores = np.asarray(scores, dtype=np.float64).ravel()
            regions = np.asarray(regions, dtype=np.int64).ravel()
            normal = regions == 0
            normals += int(normal.sum())
            fp += int((scores[normal] >= t).sum())
            for rid in sorted(set(regions[regions > 0].tolist())):
                member = regions == rid
                coverages.append(
                    float((scores[member] >= t).sum()) / float(member.sum())
                )
        curve.append((fp / normals, sum(coverages) / len(coverages)))

    area = 0.0
    for (f0, p0), (f1, p1) in zip(curve[:-1], curve[1:]):
        if f1 <= f0:
            continue
        if f0 >= fpr_limit:
            break
        if f1 > fpr_limit:
            p1 = p0 + (p1 - p0) * (fpr_limit - f0) / (f1 - f0)
            f1 = fpr_limit
        area += 0.5 * (p0 + p1) * (f1 - f0)
    return area / fpr_limit


# ---------------------------------------------------------------------------
# smoothing and fusion closed forms

def smooth_oracle(
    scores: np.ndarray, cloud: PointCloud, sigma: float, k_nn: int
) -> np.ndarray:
    """Per-point loop with explicit distance sorting (ties by index)."""
    if sigma == 0:
        return np.asarray(scores, dtype=np.float64).copy()
    n = cloud.n
    out = np.empty(n)
    for j in range(n):
        d2 = ((cloud.points - cloud.points[j]) ** 2).sum(axis=1)
        nearest = np.argsort(d2, kind="stable")[: min(k_nn, n)]
        w = np.exp(-d2[nearest] / (2.0 * sigma**2))
        out[j] = (w * np.asarray(scores)[nearest]).sum() / w.sum()
    return out


def fuse_oracle(
    res3d: InferenceResult,
    rgb_map: np.ndarray,
    rgb_global: float,
    smoothed_sum: np.ndarray,
) -> tuple[np.ndarray, float]:
    """The two fusion formulas with the smoothing result supplied externally."""
    point = 0.5 * smoothed_sum
    global_mod = 0.5 * (0.5 * (rgb_global + res3d.global_score) + point.max())
    return point, global_mod
