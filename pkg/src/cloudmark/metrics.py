"""Anomaly-detection metrics.

Global scores: AUROC (Mann-Whitney with midranks) and average precision
(descending sweep, ties grouped). Per-point maps: pooled AUROC and AUPRO,
the area under the per-region-overlap vs. false-positive-rate curve up to an
FPR limit, normalized by that limit. All metrics are invariant under
strictly increasing transforms of the scores.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from cloudmark.cloud import PointCloud, PointLabels
from cloudmark.errors import MetricUndefined, ValidationError


def _scored_set(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels must have equal length")
    if scores.size == 0:
        raise MetricUndefined("empty input")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    return scores, labels


def auroc(scores, labels) -> float:
    """(#(pos > neg) + 1/2 #(pos = neg)) / (P * N), via midranks."""
    scores, labels = _scored_set(scores, labels)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise MetricUndefined("AUROC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


def average_precision(scores, labels) -> float:
    """AP = sum_k (R_k - R_{k-1}) * P_k over the descending-score sweep,
    with tied scores grouped into one sweep step."""
    scores, labels = _scored_set(scores, labels)
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise MetricUndefined("AP needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # last index of each tie group
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    ends = np.append(boundary, sorted_labels.size - 1)
    tp = np.cumsum(sorted_labels)[ends]
    predicted = ends + 1.0
    precision = tp / predicted
    recall = tp / pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


# ---------------------------------------------------------------------------
# regions

class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def connected_regions(
    labels: PointLabels, cloud: PointCloud, radius: float
) -> np.ndarray:
    """Per-point region ids (0 = normal).

    Anomalous points within `radius` of each other share a region. Region
    ids are assigned deterministically in order of each region's lowest
    member index, starting at 1. If the labels already carry region ids they
    are passed through unchanged.
    """
    if radius <= 0:
        raise ValidationError("radius must be positive")
    if labels.n != cloud.n:
        raise ValidationError("labels length must match cloud size")
    if labels.region_ids is not None:
        return labels.region_ids.astype(np.int64)
    out = np.zeros(cloud.n, dtype=np.int64)
    anomalous = np.flatnonzero(labels.labels == 1)
    if anomalous.size == 0:
        return out
    tree = cKDTree(cloud.points[anomalous])
    uf = _UnionFind(anomalous.size)
    for i, j in tree.query_pairs(radius):
        uf.union(i, j)
    roots = np.array([uf.find(i) for i in range(anomalous.size)])
    next_id = 1
    root_to_id: dict[int, int] = {}
    for i, root in enumerate(roots):
        if root not in root_to_id:
            root_to_id[root] = next_id
            next_id += 1
        out[anomalous[i]] = root_to_id[root]
    return out


# ---------------------------------------------------------------------------
# AUPRO

def aupro(
    maps: Sequence[np.ndarray],
    region_sets: Sequence[np.ndarray],
    fpr_limit: float = 0.3,
) -> float:
    """Area under the per-region-overlap curve, FPR-limited and normalized.

    Thresholds sweep all distinct scores (predicted positive: score >= t);
    FPR pools false positives over every instance, PRO averages the covered
    fraction over every region. The curve starts at (0, 0), is integrated by
    trapezoid up to an interpolated endpoint at fpr_limit, and divided by
    fpr_limit.
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValidationError("fpr_limit must be in (0, 1]")
    if len(maps) != len(region_sets) or not maps:
        raise ValidationError("need one region set per score map")

    all_scores = []
    normal_scores = []
    region_scores: list[np.ndarray] = []
    for scores, regions in zip(maps, region_sets):
        scores = np.asarray(scores, dtype=np.float64).ravel()
        regions = np.asarray(regions, dtype=np.int64).ravel()
        if scores.shape != regions.shape:
            raise ValidationError("score map and region set lengths differ")
        all_scores.append(scores)
        normal_scores.append(scores[regions == 0])
        for rid in np.unique(regions[regions > 0]):
            region_scores.append(scores[regions == rid])
    if not region_scores:
        raise MetricUndefined("AUPRO needs at least one anomalous region")
    normal = np.concatenate(normal_scores)
    if normal.size == 0:
        raise MetricUndefined("AUPRO needs at least one normal element")

    thresholds = np.unique(np.concatenate(all_scores))[::-1]
    # step curves per threshold via descending cumulative counts
    fpr = np.searchsorted(np.sort(-normal), -thresholds, side="right") / normal.size
    pro = np.zeros(thresholds.size)
    for reg in region_scores:
        covered = np.searchsorted(np.sort(-reg), -thresholds, side="right") / reg.size
        pro += covered
    pro /= len(region_scores)

    fpr = np.concatenate([[0.0], fpr])
    pro = np.concatenate([[0.0], pro])
    return _clipped_trapezoid(fpr, pro, fpr_limit) / fpr_limit


def _clipped_trapezoid(fpr: np.ndarray, pro: np.ndarray, limit: float) -> float:
    area = 0.0
    for i in range(1, fpr.size):
        f0, f1 = fpr[i - 1], fpr[i]
        p0, p1 = pro[i - 1], pro[i]
        if f1 <= f0:
            continue
        if f0 >= limit:
            break
        if f1 > limit:
            p1 = p0 + (p1 - p0) * (limit - f0) / (f1 - f0)
            f1 = limit
        area += 0.5 * (p0 + p1) * (f1 - f0)
    return area


# ---------------------------------------------------------------------------
# per-point AUROC over a test set

def pooled_point_auroc(
    maps: Sequence[np.ndarray],
    labels: Sequence[np.ndarray],
    per_cloud_average: bool = False,
) -> float:
    """Point-level AUROC, pooled over all clouds (default) or averaged
    per cloud (skipping single-class clouds)."""
    if len(maps) != len(labels) or not maps:
        raise ValidationError("need one label set per score map")
    if not per_cloud_average:
        return auroc(np.concatenate([np.ravel(m) for m in maps]),
                     np.concatenate([np.ravel(l) for l in labels]))
    values = []
    for m, l in zip(maps, labels):
        l = np.asarray(l)
        if 0 < l.sum() < l.size:
            values.append(auroc(m, l))
    if not values:
        raise MetricUndefined("no cloud has both classes present")
    return float(np.mean(values))
