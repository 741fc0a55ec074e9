"""Hybrid loss terms, analytic prompt gradients, and the Adam loop.

Closed forms exercised below:
  dice(pred, target) = 1 - (2 sum(pt) + eps) / (sum p + sum t + eps);
  with 4 target pixels, 2 predicted at 1.0 (both on target), eps -> 0:
  1 - 4/6 = 1/3.
  focal at a single anomalous pixel with p_a = 0.9, alpha = 1, gamma = 2:
  -(0.1)^2 ln 0.9 = 1.0536051565782628e-3.
  view-mean probability 0.8 vs label 1: -ln 0.8 = 0.22314355131420976.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from cloudmark.encoder import PromptPair, init_prompts
from cloudmark.errors import ValidationError
from cloudmark.learning import (
    LossBreakdown,
    TrainConfig,
    breakdown,
    dice_loss,
    focal_loss,
    grad_prompts,
    hybrid_loss,
    load_prompts,
    loss_2d_global,
    loss_2d_local,
    loss_3d_global,
    loss_3d_local,
    loss_and_grad,
    optimize_prompts,
    save_history_csv,
    save_prompts,
)
from cloudmark.oracles import fd_gradient
from cloudmark.render import ViewConfig
from cloudmark.synthetic import PlantedEncoder, planted_dataset
from conftest import sample_with_global_pa

# ── Helpers ──


def _tiny_dataset(n_clouds=4, seed=0):
    cfg = ViewConfig(K=2, H=32, W=32, h=4, w=4)
    provider = PlantedEncoder(seed=seed, d=8, h=4, w=4, noise=0.2)
    return planted_dataset(
        n_clouds, cfg, provider, seed=seed, points_range=(40, 60)
    ), provider


# ── Elementary losses ──


class TestDice:
    def test_known_value(self):
        # overlap 2 of 4 target pixels: 1 - 4/6 = 1/3
        target = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
        pred = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        assert dice_loss(pred, target, eps=1e-12) == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_default_eps(self):
        # same counts with eps = 1: 1 - 5/7 = 2/7
        target = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
        pred = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        assert dice_loss(pred, target) == pytest.approx(2.0 / 7.0, abs=1e-15)

    def test_perfect_and_empty(self):
        t = np.array([1.0, 0.0, 1.0])
        assert dice_loss(t, t, eps=1e-9) == pytest.approx(0.0, abs=1e-8)
        # both empty: eps saves the ratio, loss 0
        z = np.zeros(4)
        assert dice_loss(z, z) == 0.0

    def test_validation(self):
        with pytest.raises(ValidationError):
            dice_loss(np.zeros(3), np.zeros(4))
        with pytest.raises(ValidationError):
            dice_loss(np.zeros(3), np.zeros(3), eps=0.0)


class TestFocal:
    def test_known_value(self):
        # -(1 - 0.9)^2 ln 0.9 at one pixel
        p_a = np.array([[0.9]])
        target = np.array([[1]])
        got = focal_loss(1.0 - p_a, p_a, target, alpha=1.0, gamma=2.0)
        assert got == pytest.approx(0.01 * -math.log(0.9), abs=1e-15)
        assert got == pytest.approx(1.0536051565782628e-3, abs=1e-9)

    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(0)
        p_a = rng.uniform(0.05, 0.95, size=(4, 4))
        target = (rng.random((4, 4)) < 0.5).astype(np.uint8)
        got = focal_loss(1.0 - p_a, p_a, target, alpha=1.0, gamma=0.0)
        p_t = np.where(target == 1, p_a, 1.0 - p_a)
        assert got == pytest.approx(float(-np.log(p_t).mean()), abs=1e-12)

    def test_alpha_scales(self):
        p_a = np.array([[0.7, 0.3]])
        target = np.array([[1, 0]])
        one = focal_loss(1.0 - p_a, p_a, target, alpha=1.0)
        assert focal_loss(1.0 - p_a, p_a, target, alpha=2.5) == pytest.approx(2.5 * one)

    def test_confident_pixels_vanish(self):
        # p_t = 1 gives exactly 0 regardless of the log clamp
        p_a = np.array([[1.0]])
        assert focal_loss(1.0 - p_a, p_a, np.array([[1]])) == 0.0

    def test_clamped_log_is_finite(self):
        p_a = np.array([[0.0]])
        got = focal_loss(1.0 - p_a, p_a, np.array([[1]]))
        assert np.isfinite(got)
        assert got == pytest.approx(-math.log(1e-12), abs=1e-6)


# ── Loss operators on engineered samples ──


class TestGlobalLosses:
    def test_3d_global_closed_form(self):
        # per-view global p_a = (0.9, 0.7), mean 0.8, cloud label 1
        sample = sample_with_global_pa([0.9, 0.7], tau=0.5, point_labels=[1, 0])
        got = loss_3d_global(sample, _plane(), tau=0.5)
        assert got == pytest.approx(-math.log(0.8), abs=1e-9)
        assert got == pytest.approx(0.22314355131420976, abs=1e-9)

    def test_2d_global_all_views_anomalous(self):
        # both views show the anomaly: 1/2 (-ln 0.9 - ln 0.7)
        sample = sample_with_global_pa([0.9, 0.7], tau=0.5, point_labels=[1, 0])
        got = loss_2d_global(sample, _plane(), tau=0.5)
        assert got == pytest.approx(0.5 * (-math.log(0.9) - math.log(0.7)), abs=1e-9)

    def test_2d_global_mixed_views(self):
        # engineered per-view labels (1, 0) with p_a = (0.9, 0.2):
        # 1/2 (-ln 0.9 - ln 0.8) = 0.164252033486018
        base = sample_with_global_pa([0.9, 0.2], tau=0.5, point_labels=[1, 0])
        sample = dataclasses.replace(base, per_view_labels=(1, 0))
        got = loss_2d_global(sample, _plane(), tau=0.5)
        assert got == pytest.approx(0.164252033486018, abs=1e-9)

    def test_normal_cloud(self):
        # label 0 with mean p_a = 0.25: -ln(0.75)
        sample = sample_with_global_pa([0.3, 0.2], tau=0.5, point_labels=[0, 0])
        got = loss_3d_global(sample, _plane(), tau=0.5)
        assert got == pytest.approx(-math.log(0.75), abs=1e-9)


def _plane() -> PromptPair:
    return PromptPair(g_n=np.array([0.0, 1.0]), g_a=np.array([1.0, 0.0]))


class TestLocalLosses:
    def test_3d_local_bounds(self):
        dataset, _ = _tiny_dataset()
        for s in dataset:
            got = loss_3d_local(s, init_prompts(8, seed=5), tau=0.5)
            assert 0.0 <= got <= 2.0

    def test_2d_local_finite(self):
        dataset, _ = _tiny_dataset()
        got = loss_2d_local(dataset[0], init_prompts(8, seed=5), tau=0.5)
        assert np.isfinite(got) and got >= 0.0

    def test_aggregate_mode_changes_value(self):
        dataset, _ = _tiny_dataset()
        prompts = init_prompts(8, seed=5)
        a = loss_3d_local(dataset[0], prompts, tau=0.5, mode="paper")
        b = loss_3d_local(dataset[0], prompts, tau=0.5, mode="visibility_normalized")
        assert a != b


# ── Hybrid loss ──


class TestHybrid:
    def test_total_is_sum(self):
        dataset, _ = _tiny_dataset()
        bd = hybrid_loss(dataset, init_prompts(8, seed=3), TrainConfig(tau=0.5))
        assert bd.total == pytest.approx(
            bd.l3d_global + bd.l3d_local + bd.l2d_global + bd.l2d_local, abs=1e-15
        )

    def test_matches_standalone_ops(self):
        dataset, _ = _tiny_dataset()
        prompts = init_prompts(8, seed=3)
        hyper = TrainConfig(tau=0.5, weights=(2.0, 0.5, 1.0, 0.25))
        bd = hybrid_loss(dataset, prompts, hyper)
        l3g = np.mean([loss_3d_global(s, prompts, 0.5) for s in dataset])
        l3l = np.mean([loss_3d_local(s, prompts, 0.5, 1.0, "paper") for s in dataset])
        l2g = np.mean([loss_2d_global(s, prompts, 0.5) for s in dataset])
        l2l = np.mean([loss_2d_local(s, prompts, 0.5, 1.0, 2.0, 1.0) for s in dataset])
        assert bd.l3d_global == pytest.approx(2.0 * l3g, abs=1e-12)
        assert bd.l3d_local == pytest.approx(0.5 * l3l, abs=1e-12)
        assert bd.l2d_global == pytest.approx(1.0 * l2g, abs=1e-12)
        assert bd.l2d_local == pytest.approx(0.25 * l2l, abs=1e-12)

    def test_zero_weight_removes_term(self):
        dataset, _ = _tiny_dataset()
        bd = hybrid_loss(
            dataset, init_prompts(8, seed=3), TrainConfig(tau=0.5, weights=(0, 1, 0, 1))
        )
        assert bd.l3d_global == 0.0 and bd.l2d_global == 0.0

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            hybrid_loss([], init_prompts(8, seed=3))

    def test_breakdown_guard(self):
        with pytest.raises(ValidationError):
            LossBreakdown(1.0, 1.0, 1.0, 1.0, 3.0)
        bd = breakdown(0.1, 0.2, 0.3, 0.4)
        assert bd.total == pytest.approx(1.0)


# ── Gradients ──


class TestGradients:
    def test_forward_value_matches_hybrid(self):
        dataset, _ = _tiny_dataset()
        prompts = init_prompts(8, seed=4)
        hyper = TrainConfig(tau=0.5)
        bd_fused, _, _ = loss_and_grad(dataset, prompts, hyper)
        bd_plain = hybrid_loss(dataset, prompts, hyper)
        assert bd_fused.total == pytest.approx(bd_plain.total, abs=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for trial in range(4):
            cfg = ViewConfig(K=2, H=32, W=32, h=4, w=4)
            provider = PlantedEncoder(seed=trial, d=6, h=4, w=4, noise=0.25)
            dataset = planted_dataset(2, cfg, provider, seed=trial, points_range=(30, 40))
            g_n = rng.standard_normal(6)
            g_a = rng.standard_normal(6)
            prompts = PromptPair(g_n / np.linalg.norm(g_n), g_a / np.linalg.norm(g_a))
            mode = "paper" if trial % 2 == 0 else "visibility_normalized"
            hyper = TrainConfig(tau=0.5, aggregate_mode=mode)
            grad_n, grad_a = grad_prompts(dataset, prompts, hyper)
            fd_n, fd_a = fd_gradient(dataset, prompts, hyper)
            for got, ref in ((grad_n, fd_n), (grad_a, fd_a)):
                rel = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-8)
                assert rel.max() < 1e-4

    def test_zero_weights_zero_grad(self):
        dataset, _ = _tiny_dataset()
        hyper = TrainConfig(tau=0.5, weights=(0.0, 0.0, 0.0, 0.0))
        grad_n, grad_a = grad_prompts(dataset, init_prompts(8, seed=4), hyper)
        np.testing.assert_array_equal(grad_n, np.zeros(8))
        np.testing.assert_array_equal(grad_a, np.zeros(8))


# ── Optimizer ──


class TestOptimize:
    def test_deterministic(self):
        dataset, _ = _tiny_dataset()
        hyper = TrainConfig(tau=0.5, epochs=2, seed=7)
        p1, h1 = optimize_prompts(dataset, hyper)
        p2, h2 = optimize_prompts(dataset, hyper)
        np.testing.assert_array_equal(p1.g_n, p2.g_n)
        np.testing.assert_array_equal(p1.g_a, p2.g_a)
        assert [b.total for b in h1] == [b.total for b in h2]

    def test_seed_matters(self):
        dataset, _ = _tiny_dataset()
        p1, _ = optimize_prompts(dataset, TrainConfig(tau=0.5, epochs=1, seed=7))
        p2, _ = optimize_prompts(dataset, TrainConfig(tau=0.5, epochs=1, seed=8))
        assert not np.array_equal(p1.g_n, p2.g_n)

    def test_loss_decreases(self):
        dataset, _ = _tiny_dataset(n_clouds=8, seed=2)
        _, history = optimize_prompts(dataset, TrainConfig(tau=0.5, epochs=6, seed=0))
        assert history[-1].total < history[0].total

    def test_zero_epochs_returns_init(self):
        dataset, _ = _tiny_dataset()
        init = init_prompts(8, seed=9)
        prompts, history = optimize_prompts(dataset, TrainConfig(epochs=0), init=init)
        np.testing.assert_array_equal(prompts.g_n, init.g_n)
        assert history == []

    def test_history_length(self):
        dataset, _ = _tiny_dataset()
        _, history = optimize_prompts(dataset, TrainConfig(tau=0.5, epochs=3, seed=0))
        assert len(history) == 3


# ── Artifacts ──


class TestArtifacts:
    def test_prompt_round_trip(self, tmp_path):
        prompts = init_prompts(16, seed=1)
        save_prompts(tmp_path / "ckpt", prompts)
        back = load_prompts(tmp_path / "ckpt")
        # checkpoints are float32 on disk
        np.testing.assert_array_equal(back.g_n, prompts.g_n.astype(np.float32))
        np.testing.assert_array_equal(back.g_a, prompts.g_a.astype(np.float32))

    def test_history_csv(self, tmp_path):
        hist = [breakdown(0.1, 0.2, 0.3, 0.4), breakdown(0.05, 0.1, 0.15, 0.2)]
        path = tmp_path / "h.csv"
        save_history_csv(path, hist)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,l3d_global,l3d_local,l2d_global,l2d_local,total"
        assert len(lines) == 3
        assert lines[1].startswith("1,")


# ── Config guards ──


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.tau == 0.07 and cfg.lr == 0.001
        assert cfg.epochs == 15 and cfg.batch == 4

    def test_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(tau=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(gamma=-1.0)
        with pytest.raises(ValidationError):
            TrainConfig(batch=0)
        with pytest.raises(ValidationError):
            TrainConfig(weights=(1, 1, -1, 1))
