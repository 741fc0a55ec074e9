"""Shared helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np

from cloudmark.cloud import PointCloud, PointLabels
from cloudmark.encoder import PromptPair
from cloudmark.learning import TrainSample, make_sample
from cloudmark.render import ViewConfig, render_views


def plane_prompts() -> PromptPair:
    """g_a = (1, 0), g_n = (0, 1): any unit feature (cos a, sin a) has
    cos(g_a, f) - cos(g_n, f) = cos a - sin a = sqrt(2) cos(a + pi/4)."""
    return PromptPair(g_n=np.array([0.0, 1.0]), g_a=np.array([1.0, 0.0]))


def feature_for_pa(p_a: float, tau: float) -> np.ndarray:
    """Unit 2-vector whose class_probability against plane_prompts() is
    exactly p_a at temperature tau (solve the cosine gap for the logit)."""
    gap = tau * math.log(p_a / (1.0 - p_a))
    if abs(gap) >= math.sqrt(2.0):
        raise ValueError("unreachable probability for this tau")
    alpha = math.acos(gap / math.sqrt(2.0)) - math.pi / 4.0
    return np.array([math.cos(alpha), math.sin(alpha)])


def sample_with_global_pa(
    pa_per_view: list[float],
    tau: float,
    point_labels: list[int],
) -> TrainSample:
    """TrainSample over a tiny cloud whose per-view global p_a values are the
    given closed-form targets. Feature grids are benign constants; only the
    global features are engineered."""
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [0.4, 0.2, 0.1]]))
    labels = PointLabels(np.array(point_labels))
    K = len(pa_per_view)
    cfg = ViewConfig(K=K, H=16, W=16, h=4, w=4)
    views = render_views(cloud, labels, cfg)
    grid = np.full((4, 4, 2), 1.0) / math.sqrt(2.0)
    features = [(feature_for_pa(pa, tau), grid) for pa in pa_per_view]
    return make_sample(cloud, labels, views, features)


def random_unit_grid(rng: np.random.Generator, h: int, w: int, d: int) -> np.ndarray:
    grid = rng.standard_normal((h, w, d))
    return grid / np.linalg.norm(grid, axis=2, keepdims=True)


def random_features(
    rng: np.random.Generator, K: int, h: int, w: int, d: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for _ in range(K):
        grid = random_unit_grid(rng, h, w, d)
        g = rng.standard_normal(d)
        g /= np.linalg.norm(g)
        out.append((g, grid))
    return out
