"""Synthetic clouds and a label-aware planted feature provider.

Clouds are sphere-surface samples; anomalies are spherical caps, optionally
with a geometric bump so depth shading also sees them. The planted provider
emits, per feature cell, a fixed "abnormal" unit direction wherever the
view's ground-truth mask touches the cell and a "normal" direction
elsewhere, plus seeded noise of fixed relative magnitude. It is keyed by
rendering content, so identical images always replay identical features.
"""

from __future__ import annotations

import numpy as np

from cloudmark.cloud import PointCloud, PointLabels, normalize_cloud
from cloudmark.encoder import image_key
from cloudmark.errors import DataIOError, ValidationError
from cloudmark.learning import TrainSample, make_sample
from cloudmark.render import ViewBundle, ViewConfig, render_views


def sphere_cloud(
    n: int,
    seed: int,
    n_regions: int = 0,
    cap_angle: float = 0.45,
    bump: float = 0.0,
) -> tuple[PointCloud, PointLabels]:
    """Points on the unit sphere with n_regions disjoint anomalous caps."""
    if n < 1:
        raise ValidationError("need at least one point")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    labels = np.zeros(n, dtype=np.int64)
    regions = np.zeros(n, dtype=np.int64)
    centers = _disjoint_centers(rng, n_regions, cap_angle)
    cos_limit = np.cos(cap_angle)
    radii = np.ones(n)
    for rid, center in enumerate(centers, start=1):
        member = (dirs @ center >= cos_limit) & (labels == 0)
        labels[member] = 1
        regions[member] = rid
        if bump > 0:
            radii[member] *= 1.0 + bump
    points = dirs * radii[:, None]
    cloud = normalize_cloud(PointCloud(points))
    return cloud, PointLabels(labels, regions if n_regions else None)


def _disjoint_centers(rng: np.random.Generator, k: int, cap_angle: float) -> list[np.ndarray]:
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < k:
        c = rng.standard_normal(3)
        c /= np.linalg.norm(c)
        # caps must not touch: centers separated by more than twice the
        # angular radius (with slack)
        if all(np.arccos(np.clip(c @ o, -1, 1)) > 2.2 * cap_angle for o in centers):
            centers.append(c)
        attempts += 1
        if attempts > 1000:
            raise ValidationError("cannot place that many disjoint caps")
    return centers


class PlantedEncoder:
    """Feature provider with known anomaly structure.

    Features exist only for registered renderings; registration derives the
    per-cell class from the view's ground-truth mask. Noise is seeded from
    the rendering content, so features are reproducible independent of
    registration order.
    """

    def __init__(self, seed: int = 0, d: int = 32, h: int = 12, w: int = 12, noise: float = 0.3):
        if d < 4:
            raise ValidationError("planted encoder needs d >= 4")
        self.seed = seed
        self.d = d
        self.h = h
        self.w = w
        self.noise = noise
        rng = np.random.default_rng(seed)
        u_n = rng.standard_normal(d)
        u_n /= np.linalg.norm(u_n)
        u_a = rng.standard_normal(d)
        u_a -= (u_a @ u_n) * u_n
        u_a /= np.linalg.norm(u_a)
        self.normal_dir = u_n
        self.abnormal_dir = u_a
        self._registry: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def register(self, view: ViewBundle) -> tuple[np.ndarray, np.ndarray]:
        """Plant features for one rendering using its gt_mask."""
        key = image_key(view.image)
        if key in self._registry:
            return self._registry[key]
        H, W = view.gt_mask.shape
        if H % self.h or W % self.w:
            raise ValidationError("image size must be divisible by the grid size")
        ph, pw = H // self.h, W // self.w
        cell_anomalous = (
            view.gt_mask.reshape(self.h, ph, self.w, pw).max(axis=(1, 3)) == 1
        )
        rng = np.random.default_rng([self.seed, int(key[:15], 16)])
        xi = rng.standard_normal((self.h, self.w, self.d))
        xi /= np.linalg.norm(xi, axis=2, keepdims=True)
        base = np.where(
            cell_anomalous[:, :, None], self.abnormal_dir, self.normal_dir
        )
        grid = base + self.noise * xi
        grid /= np.linalg.norm(grid, axis=2, keepdims=True)
        g = grid.mean(axis=(0, 1))
        g /= np.linalg.norm(g)
        self._registry[key] = (g, grid)
        return self._registry[key]

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = image_key(image)
        if key not in self._registry:
            raise DataIOError("rendering was never registered with this provider")
        return self._registry[key]


def planted_sample(
    cloud: PointCloud,
    labels: PointLabels,
    cfg: ViewConfig,
    provider: PlantedEncoder,
    gt_labels: PointLabels | None = None,
) -> TrainSample:
    """Render, register planted features, and assemble a TrainSample.

    gt_labels, when given, are what the sample reports as ground truth while
    the planted features follow `labels` (used to build modalities that see
    only a subset of the true regions).
    """
    views = render_views(cloud, labels, cfg)
    features = [provider.register(v) for v in views]
    if gt_labels is None:
        return make_sample(cloud, labels, views, features)
    gt_views = render_views(cloud, gt_labels, cfg)
    return make_sample(cloud, gt_labels, gt_views, features)


def planted_dataset(
    n_clouds: int,
    cfg: ViewConfig,
    provider: PlantedEncoder,
    seed: int = 0,
    points_range: tuple[int, int] = (350, 700),
    anomalous_fraction: float = 0.5,
    cap_angle: float = 0.45,
) -> list[TrainSample]:
    """Half anomalous (one planted cap), half clean, interleaved."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_clouds):
        n = int(rng.integers(points_range[0], points_range[1] + 1))
        anomalous = rng.random() < anomalous_fraction
        cloud, labels = sphere_cloud(
            n, seed=int(rng.integers(2**31)), n_regions=1 if anomalous else 0,
            cap_angle=cap_angle,
        )
        samples.append(planted_sample(cloud, labels, cfg, provider))
    return samples
