"""Prompt optimization: the four loss terms, their analytic gradients with
respect to the prompt pair, and Adam.

Gradients are hand-derived by chain rule through cosine -> two-way softmax ->
upsample -> gather -> aggregate -> Dice/Focal/cross-entropy. Every operation
between the per-cell probabilities and the losses is linear, so the backward
pass is a sequence of adjoints (transpose-matmul for upsampling, scatter-add
for the visibility gather) feeding two closed-form accumulators for the
prompt vectors. Correctness is gated by a central finite-difference check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from cloudmark.cloud import PointCloud, PointLabels
from cloudmark.encoder import (
    PromptPair,
    load_features,
    save_features,
)
from cloudmark.errors import DataIOError, ValidationError
from cloudmark.render import ViewBundle
from cloudmark.scoring import (
    aggregate_3d,
    back_project_view,
    bilinear_weights,
    cosine_maps,
    probability_map,
    upsample_bilinear,
)

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainSample:
    """One cloud with its renderings, per-view features, and labels."""

    cloud: PointCloud
    labels: PointLabels
    views: tuple[ViewBundle, ...]
    features: tuple[tuple[np.ndarray, np.ndarray], ...]  # (global, grid) per view
    global_label: int
    per_view_labels: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.views)


def make_sample(
    cloud: PointCloud,
    labels: PointLabels,
    views: Sequence[ViewBundle],
    features: Sequence[tuple[np.ndarray, np.ndarray]],
) -> TrainSample:
    if labels.n != cloud.n:
        raise ValidationError("labels length must match cloud size")
    if len(views) != len(features) or not views:
        raise ValidationError("need one feature pair per view, at least one view")
    d = features[0][0].shape[0]
    for g, grid in features:
        if g.shape != (d,) or grid.ndim != 3 or grid.shape[2] != d:
            raise ValidationError("inconsistent feature dimensions across views")
    return TrainSample(
        cloud=cloud,
        labels=labels,
        views=tuple(views),
        features=tuple(features),
        global_label=int(labels.labels.max()),
        per_view_labels=tuple(int(v.gt_mask.max()) for v in views),
    )


@dataclass(frozen=True)
class LossBreakdown:
    l3d_global: float
    l3d_local: float
    l2d_global: float
    l2d_local: float
    total: float

    def __post_init__(self):
        parts = (self.l3d_global, self.l3d_local, self.l2d_global, self.l2d_local)
        if any(not np.isfinite(p) or p < 0 for p in parts):
            raise ValidationError("loss components must be finite and >= 0")
        if abs(self.total - sum(parts)) > 1e-12 * max(1.0, abs(self.total)):
            raise ValidationError("total must equal the sum of the components")


def breakdown(l3g: float, l3l: float, l2g: float, l2l: float) -> LossBreakdown:
    return LossBreakdown(l3g, l3l, l2g, l2l, l3g + l3l + l2g + l2l)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.07
    alpha: float = 1.0
    gamma: float = 2.0
    eps: float = 1.0
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    aggregate_mode: str = "paper"
    lr: float = 0.001
    epochs: int = 15
    batch: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0 or self.eps <= 0:
            raise ValidationError("tau and eps must be positive")
        if self.alpha <= 0 or self.gamma < 0:
            raise ValidationError("alpha must be > 0 and gamma >= 0")
        if min(self.weights) < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.epochs < 0 or self.batch < 1:
            raise ValidationError("epochs must be >= 0 and batch >= 1")


# ---------------------------------------------------------------------------
# elementary losses

def _safe_log(p: np.ndarray | float) -> np.ndarray | float:
    return np.log(np.maximum(p, LOG_CLAMP))


def _ce(p_a: float, y: int) -> float:
    return float(-_safe_log(p_a if y == 1 else 1.0 - p_a))


def _ce_grad(p_a: float, y: int) -> float:
    """d/dp_a of _ce; zero where the log clamp is active."""
    if y == 1:
        return -1.0 / p_a if p_a > LOG_CLAMP else 0.0
    return 1.0 / (1.0 - p_a) if 1.0 - p_a > LOG_CLAMP else 0.0


def dice_loss(pred: np.ndarray, target: np.ndarray, eps: float = 1.0) -> float:
    """1 - (2 sum(pred*target) + eps) / (sum(pred) + sum(target) + eps)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError("dice_loss: shape mismatch")
    if eps <= 0:
        raise ValidationError("dice_loss: eps must be positive")
    num = 2.0 * float((pred * target).sum()) + eps
    den = float(pred.sum()) + float(target.sum()) + eps
    return 1.0 - num / den


def _dice_grad(pred: np.ndarray, target: np.ndarray, eps: float) -> np.ndarray:
    num = 2.0 * (pred * target).sum() + eps
    den = pred.sum() + target.sum() + eps
    return (num - 2.0 * target * den) / den**2


def focal_loss(
    p_n_map: np.ndarray,
    p_a_map: np.ndarray,
    target: np.ndarray,
    alpha: float = 1.0,
    gamma: float = 2.0,
) -> float:
    """Mean over pixels of -alpha * (1 - p_t)^gamma * log(p_t)."""
    p_n_map = np.asarray(p_n_map, dtype=np.float64)
    p_a_map = np.asarray(p_a_map, dtype=np.float64)
    target = np.asarray(target)
    if not (p_n_map.shape == p_a_map.shape == target.shape):
        raise ValidationError("focal_loss: shape mismatch")
    p_t = np.where(target == 1, p_a_map, p_n_map)
    return float((-alpha * (1.0 - p_t) ** gamma * _safe_log(p_t)).mean())


def _focal_grad_pt(p_t: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """d/dp_t of the per-pixel focal term, consistent with the log clamp."""
    log_p = _safe_log(p_t)
    inv_p = np.where(p_t > LOG_CLAMP, 1.0 / np.maximum(p_t, LOG_CLAMP), 0.0)
    grad = -alpha * (1.0 - p_t) ** gamma * inv_p
    if gamma > 0:
        grad = grad + alpha * gamma * (1.0 - p_t) ** (gamma - 1.0) * log_p
    return grad


# ---------------------------------------------------------------------------
# per-view forward pieces

def _view_probs(sample: TrainSample, prompts: PromptPair, tau: float):
    """Per view: cell p_a map, global p_a, plus cosines/norms for backward."""
    cells = []
    glob = []
    for global_feat, grid in sample.features:
        cos_n, cos_a, fnorm = cosine_maps(prompts, grid)
        cells.append((probability_map(cos_n, cos_a, tau), cos_n, cos_a, fnorm, grid))
        gn = np.linalg.norm(global_feat)
        gcos_n = float(np.clip(global_feat @ prompts.g_n / (gn * np.linalg.norm(prompts.g_n)), -1, 1))
        gcos_a = float(np.clip(global_feat @ prompts.g_a / (gn * np.linalg.norm(prompts.g_a)), -1, 1))
        glob.append((float(expit((gcos_a - gcos_n) / tau)), gcos_n, gcos_a, gn, global_feat))
    return cells, glob


def _point_channels(sample: TrainSample, cell_probs: list[np.ndarray], mode: str):
    """Back-project each view's abnormal map and build (S_a, S_n, per-point
    view weight). S_n = V - S_a where V aggregates plain visibility."""
    H, W = sample.views[0].gt_mask.shape
    bps = [
        back_project_view(upsample_bilinear(p, H, W), v)
        for p, v in zip(cell_probs, sample.views)
    ]
    vis = [v.vis_mask.astype(np.float64) for v in sample.views]
    s_a = aggregate_3d(bps, vis, mode)
    v_agg = aggregate_3d(vis, vis, mode)
    if mode == "paper":
        point_weight = np.full(sample.cloud.n, 1.0 / sample.K)
    else:
        seen = np.sum([m for m in vis], axis=0)
        point_weight = 1.0 / np.maximum(1.0, seen)
    return bps, s_a, v_agg - s_a, point_weight


# ---------------------------------------------------------------------------
# the four loss operations

def loss_3d_global(sample: TrainSample, prompts: PromptPair, tau: float = 0.07) -> float:
    """Cross-entropy of the view-averaged class probabilities vs. max(y3d)."""
    _, glob = _view_probs(sample, prompts, tau)
    p_mean = float(np.mean([g[0] for g in glob]))
    return _ce(p_mean, sample.global_label)


def loss_2d_global(sample: TrainSample, prompts: PromptPair, tau: float = 0.07) -> float:
    """Mean over views of per-view cross-entropy vs. max(y^(k))."""
    _, glob = _view_probs(sample, prompts, tau)
    return float(
        np.mean([_ce(g[0], y) for g, y in zip(glob, sample.per_view_labels)])
    )


def loss_3d_local(
    sample: TrainSample,
    prompts: PromptPair,
    tau: float = 0.07,
    eps: float = 1.0,
    mode: str = "paper",
) -> float:
    """Dice on the aggregated per-point channels vs. the point labels."""
    cells, _ = _view_probs(sample, prompts, tau)
    _, s_a, s_n, _ = _point_channels(sample, [c[0] for c in cells], mode)
    y = sample.labels.labels.astype(np.float64)
    return dice_loss(s_n, 1.0 - y, eps) + dice_loss(s_a, y, eps)


def loss_2d_local(
    sample: TrainSample,
    prompts: PromptPair,
    tau: float = 0.07,
    alpha: float = 1.0,
    gamma: float = 2.0,
    eps: float = 1.0,
) -> float:
    """Mean over views of Focal + two Dice terms on the upsampled maps."""
    cells, _ = _view_probs(sample, prompts, tau)
    H, W = sample.views[0].gt_mask.shape
    terms = []
    for (p_a, *_), view in zip(cells, sample.views):
        u_a = upsample_bilinear(p_a, H, W)
        u_n = 1.0 - u_a
        gt = view.gt_mask.astype(np.float64)
        terms.append(
            focal_loss(u_n, u_a, view.gt_mask, alpha, gamma)
            + dice_loss(u_n, 1.0 - gt, eps)
            + dice_loss(u_a, gt, eps)
        )
    return float(np.mean(terms))


def hybrid_loss(
    batch: Sequence[TrainSample], prompts: PromptPair, hyper: TrainConfig = TrainConfig()
) -> LossBreakdown:
    """Batch means of the four weighted terms; total is their sum."""
    if not batch:
        raise ValidationError("empty batch")
    w3g, w3l, w2g, w2l = hyper.weights
    l3g = w3g * float(np.mean([loss_3d_global(s, prompts, hyper.tau) for s in batch]))
    l3l = w3l * float(
        np.mean(
            [
                loss_3d_local(s, prompts, hyper.tau, hyper.eps, hyper.aggregate_mode)
                for s in batch
            ]
        )
    )
    l2g = w2g * float(np.mean([loss_2d_global(s, prompts, hyper.tau) for s in batch]))
    l2l = w2l * float(
        np.mean(
            [
                loss_2d_local(s, prompts, hyper.tau, hyper.alpha, hyper.gamma, hyper.eps)
                for s in batch
            ]
        )
    )
    return breakdown(l3g, l3l, l2g, l2l)


# ---------------------------------------------------------------------------
# analytic gradient

def loss_and_grad(
    batch: Sequence[TrainSample], prompts: PromptPair, hyper: TrainConfig = TrainConfig()
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Fused forward + backward pass.

    Returns (LossBreakdown, dL/dg_n, dL/dg_a) for the batch-mean hybrid loss.
    """
    if not batch:
        raise ValidationError("empty batch")
    w3g, w3l, w2g, w2l = hyper.weights
    tau = hyper.tau

    # accumulators over all classification sites s:
    #   acc_f  = sum_s (c_s / |f_s|) f_s      with c_s = dL/dp_a(s) * p_a p_n / tau
    #   acc_ba = sum_s c_s cos_a(s),  acc_bn = sum_s c_s cos_n(s)
    acc_f = np.zeros(prompts.d)
    acc_ba = 0.0
    acc_bn = 0.0
    parts = np.zeros(4)

    for sample in batch:
        K = sample.K
        H, W = sample.views[0].gt_mask.shape
        cells, glob = _view_probs(sample, prompts, tau)
        bps, s_a, s_n, point_weight = _point_channels(
            sample, [c[0] for c in cells], hyper.aggregate_mode
        )
        y3d = sample.labels.labels.astype(np.float64)

        # forward
        p_mean = float(np.mean([g[0] for g in glob]))
        l3g = _ce(p_mean, sample.global_label)
        l2g = float(
            np.mean([_ce(g[0], y) for g, y in zip(glob, sample.per_view_labels)])
        )
        l3l = dice_loss(s_n, 1.0 - y3d, hyper.eps) + dice_loss(s_a, y3d, hyper.eps)
        u_a_maps = [upsample_bilinear(c[0], H, W) for c in cells]
        l2l_terms = []
        for u_a, view in zip(u_a_maps, sample.views):
            gt = view.gt_mask.astype(np.float64)
            l2l_terms.append(
                focal_loss(1.0 - u_a, u_a, view.gt_mask, hyper.alpha, hyper.gamma)
                + dice_loss(1.0 - u_a, 1.0 - gt, hyper.eps)
                + dice_loss(u_a, gt, hyper.eps)
            )
        l2l = float(np.mean(l2l_terms))
        parts += (w3g * l3g, w3l * l3l, w2g * l2g, w2l * l2l)

        # backward: dL/dS_a for the 3D local term (S_n = V - S_a)
        ds_a = w3l * (
            _dice_grad(s_a, y3d, hyper.eps) - _dice_grad(s_n, 1.0 - y3d, hyper.eps)
        )
        ce_mean_grad = _ce_grad(p_mean, sample.global_label)

        for k in range(K):
            p_a_cells, cos_n_c, cos_a_c, fnorm_c, grid = cells[k]
            view = sample.views[k]
            gt = view.gt_mask.astype(np.float64)
            u_a = u_a_maps[k]

            # 2D local: per-pixel dL/dU_a (focal + both dice terms), /K for
            # the view mean
            p_t = np.where(view.gt_mask == 1, u_a, 1.0 - u_a)
            sign = np.where(view.gt_mask == 1, 1.0, -1.0)
            d_u = _focal_grad_pt(p_t, hyper.alpha, hyper.gamma) * sign / (H * W)
            d_u += _dice_grad(u_a, gt, hyper.eps)
            d_u -= _dice_grad(1.0 - u_a, 1.0 - gt, hyper.eps)
            d_u *= w2l / K

            # 3D local: scatter dL/dS_a * view weight at visible points'
            # pixels (the adjoint of the visibility gather)
            scatter = np.zeros((H, W))
            visible = view.vis_mask == 1
            pix = view.pixel_map[visible]
            np.add.at(scatter, (pix[:, 0], pix[:, 1]), (ds_a * point_weight)[visible])

            # adjoint of bilinear upsampling: Wr^T G Wc
            wr = bilinear_weights(p_a_cells.shape[0], H)
            wc = bilinear_weights(p_a_cells.shape[1], W)
            d_cells = wr.T @ (d_u + scatter) @ wc

            # per-cell chain through the softmax and both cosines
            c_cells = d_cells * p_a_cells * (1.0 - p_a_cells) / tau
            acc_f += (c_cells / fnorm_c).ravel() @ grid.reshape(-1, prompts.d)
            acc_ba += float((c_cells * cos_a_c).sum())
            acc_bn += float((c_cells * cos_n_c).sum())

            # global sites: contributions from both cross-entropy terms
            p_a_g, gcos_n, gcos_a, gnorm, gfeat = glob[k]
            d_p_g = w3g * ce_mean_grad / K + w2g * _ce_grad(
                p_a_g, sample.per_view_labels[k]
            ) / K
            c_g = d_p_g * p_a_g * (1.0 - p_a_g) / tau
            acc_f += (c_g / gnorm) * gfeat
            acc_ba += c_g * gcos_a
            acc_bn += c_g * gcos_n

    b = float(len(batch))
    parts /= b
    acc_f /= b
    acc_ba /= b
    acc_bn /= b

    norm_a = np.linalg.norm(prompts.g_a)
    norm_n = np.linalg.norm(prompts.g_n)
    # d cos(g, f)/dg = f / (|f| |g|) - cos * g / |g|^2, summed with site
    # coefficients c_s (sign flips for g_n because dp_a/dcos_n = -p_a p_n/tau)
    grad_a = acc_f / norm_a - acc_ba * prompts.g_a / norm_a**2
    grad_n = -acc_f / norm_n + acc_bn * prompts.g_n / norm_n**2
    return breakdown(*parts), grad_n, grad_a


def grad_prompts(
    batch: Sequence[TrainSample], prompts: PromptPair, hyper: TrainConfig = TrainConfig()
) -> tuple[np.ndarray, np.ndarray]:
    _, grad_n, grad_a = loss_and_grad(batch, prompts, hyper)
    return grad_n, grad_a


# ---------------------------------------------------------------------------
# Adam

def optimize_prompts(
    dataset: Sequence[TrainSample],
    hyper: TrainConfig = TrainConfig(),
    init: PromptPair | None = None,
) -> tuple[PromptPair, list[LossBreakdown]]:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) on the prompt pair.

    Deterministic given the seed: initialization and batch order come from
    one seeded generator. Returns the per-epoch mean LossBreakdown.
    """
    if not dataset:
        raise ValidationError("empty dataset")
    rng = np.random.default_rng(hyper.seed)
    d = dataset[0].features[0][0].shape[0]
    if init is None:
        g_n = rng.standard_normal(d)
        g_a = rng.standard_normal(d)
        prompts = PromptPair(g_n / np.linalg.norm(g_n), g_a / np.linalg.norm(g_a))
    else:
        prompts = init

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    m = np.zeros((2, d))
    v = np.zeros((2, d))
    t = 0
    history: list[LossBreakdown] = []
    n = len(dataset)

    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_parts = np.zeros(4)
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            batch = [dataset[i] for i in idx]
            bd, grad_n, grad_a = loss_and_grad(batch, prompts, hyper)
            epoch_parts += len(idx) * np.array(
                [bd.l3d_global, bd.l3d_local, bd.l2d_global, bd.l2d_local]
            )
            grad = np.stack([grad_n, grad_a])
            t += 1
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad**2
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            step = hyper.lr * m_hat / (np.sqrt(v_hat) + adam_eps)
            prompts = PromptPair(prompts.g_n - step[0], prompts.g_a - step[1])
        history.append(breakdown(*(epoch_parts / n)))
    return prompts, history


# ---------------------------------------------------------------------------
# artifacts

def save_history_csv(path: str | Path, history: Sequence[LossBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l3d_global", "l3d_local", "l2d_global", "l2d_local", "total"])
        for epoch, bd in enumerate(history, start=1):
            writer.writerow(
                [
                    epoch,
                    f"{bd.l3d_global:.17g}",
                    f"{bd.l3d_local:.17g}",
                    f"{bd.l2d_global:.17g}",
                    f"{bd.l2d_local:.17g}",
                    f"{bd.total:.17g}",
                ]
            )


def save_prompts(path_base: str | Path, prompts: PromptPair) -> tuple[Path, Path]:
    """Checkpoint as two feature files with h = w = 1."""
    base = Path(path_base)
    path_n = base.with_name(base.name + "_n.padf")
    path_a = base.with_name(base.name + "_a.padf")
    save_features(path_n, prompts.g_n, prompts.g_n.reshape(1, 1, -1))
    save_features(path_a, prompts.g_a, prompts.g_a.reshape(1, 1, -1))
    return path_n, path_a


def load_prompts(path_base: str | Path) -> PromptPair:
    base = Path(path_base)
    path_n = base.with_name(base.name + "_n.padf")
    path_a = base.with_name(base.name + "_a.padf")
    if not path_n.is_file() or not path_a.is_file():
        raise DataIOError(f"no prompt checkpoint at {base}(_n/_a).padf")
    g_n, grid_n = load_features(path_n)
    g_a, grid_a = load_features(path_a)
    if grid_n.shape[:2] != (1, 1) or grid_a.shape[:2] != (1, 1):
        raise DataIOError(f"{base}: prompt checkpoints must have h = w = 1")
    return PromptPair(g_n, g_a)
