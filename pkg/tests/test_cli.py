"""End-to-end command-line workflow on a small synthetic dataset.

Exit codes: 0 success, 2 validation problem, 3 missing or unreadable data,
4 numeric failure (also used by a failing selftest).
"""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from cloudmark.cli import main
from cloudmark.cloud import save_labels, save_point_cloud
from cloudmark.encoder import MockEncoder, save_features
from cloudmark.render import render_views
from cloudmark.config import RunConfig, load_config, save_config
from cloudmark.synthetic import sphere_cloud

# ── Dataset scaffolding ──

CFG_TEXT = """
views.k = 2
resolution.image_h = 48
resolution.image_w = 48
resolution.grid_h = 6
resolution.grid_w = 6
classifier.tau = 0.5
smoothing.sigma_3d = 0.05
provider.dim = 8
optimizer.epochs = 2
optimizer.batch = 2
eval.region_radius = 0.2
"""


@pytest.fixture()
def workspace(tmp_path):
    """Six clouds (three anomalous), train and test manifests, a config."""
    data = tmp_path / "data"
    data.mkdir()
    items = []
    for i in range(6):
        cloud, labels = sphere_cloud(60, seed=i, n_regions=1 if i % 2 else 0)
        save_point_cloud(data / f"c{i}.xyz", cloud)
        save_labels(data / f"c{i}.labels", labels)
        items.append(
            {"name": f"c{i}", "cloud": f"c{i}.xyz", "labels": f"c{i}.labels"}
        )
    (data / "train.json").write_text(json.dumps({"split": "train", "items": items}))
    (data / "test.json").write_text(json.dumps({"split": "test", "items": items}))
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CFG_TEXT)
    return tmp_path


def _args(workspace, cmd, manifest="train.json", **extra):
    argv = [
        cmd,
        "--config", str(workspace / "run.cfg"),
        "--manifest", str(workspace / "data" / manifest),
    ]
    for flag, value in extra.items():
        argv += [f"--{flag}", str(value)]
    return argv


def _train(workspace, out="model", **extra):
    rc = main(_args(workspace, "train", out=str(workspace / out), **extra))
    assert rc == 0
    return workspace / out / "prompts"


# ── Render ──


class TestRender:
    def test_writes_view_directories(self, workspace):
        rc = main(_args(workspace, "render", out=str(workspace / "views")))
        assert rc == 0
        for i in range(6):
            for k in range(2):
                vdir = workspace / "views" / f"c{i}" / f"view{k:02d}"
                for name in ("image.pgm", "gt_mask.pgm", "depth.f32",
                             "pixel_map.csv", "view.json"):
                    assert (vdir / name).is_file()
        # provenance copy of the effective config
        assert (workspace / "views" / "config.txt").is_file()

    def test_missing_manifest_is_io_error(self, workspace):
        rc = main(_args(workspace, "render", manifest="ghost.json"))
        assert rc == 3


# ── Train ──


class TestTrain:
    def test_writes_checkpoint_and_history(self, workspace):
        base = _train(workspace)
        assert base.with_name("prompts_n.padf").is_file()
        assert base.with_name("prompts_a.padf").is_file()
        history = (workspace / "model" / "history.csv").read_text().splitlines()
        assert history[0].startswith("epoch,")
        assert len(history) == 3  # header + 2 epochs

    def test_rejects_test_split(self, workspace):
        rc = main(_args(workspace, "train", manifest="test.json"))
        assert rc == 2

    def test_seed_changes_checkpoint(self, workspace):
        a = _train(workspace, out="m1", seed=1).with_name("prompts_n.padf").read_bytes()
        b = _train(workspace, out="m2", seed=2).with_name("prompts_n.padf").read_bytes()
        assert a != b

    def test_workers_do_not_change_result(self, workspace):
        a = _train(workspace, out="m1").with_name("prompts_n.padf").read_bytes()
        b = _train(workspace, out="m2", workers="3").with_name("prompts_n.padf").read_bytes()
        assert a == b


# ── Infer ──


class TestInfer:
    def test_writes_scores_and_meta(self, workspace):
        ckpt = _train(workspace)
        rc = main(
            _args(workspace, "infer", manifest="test.json",
                  out=str(workspace / "scores"), checkpoint=ckpt)
        )
        assert rc == 0
        for i in range(6):
            item = workspace / "scores" / f"c{i}"
            scores = np.loadtxt(item / "scores.csv", delimiter=",", skiprows=1, ndmin=2)
            assert scores.shape == (60, 5)
            assert ((scores[:, 4] >= 0) & (scores[:, 4] <= 1)).all()
            meta = json.loads((item / "meta.json").read_text())
            assert 0.0 <= meta["global_score"] <= 1.0
            assert len(meta["per_view_probs"]) == 2
            assert (item / "view00_score.pgm").is_file()
            assert (item / "view01_score.f32").is_file()

    def test_deterministic_output_bytes(self, workspace):
        ckpt = _train(workspace)
        for out in ("s1", "s2"):
            main(_args(workspace, "infer", manifest="test.json",
                       out=str(workspace / out), checkpoint=ckpt))
        a = (workspace / "s1" / "c1" / "scores.csv").read_bytes()
        b = (workspace / "s2" / "c1" / "scores.csv").read_bytes()
        assert a == b

    def test_missing_checkpoint(self, workspace):
        rc = main(
            _args(workspace, "infer", manifest="test.json",
                  out=str(workspace / "scores"), checkpoint=workspace / "nope")
        )
        assert rc == 3


# ── Eval ──


class TestEval:
    def _pipeline(self, workspace):
        ckpt = _train(workspace)
        main(_args(workspace, "infer", manifest="test.json",
                   out=str(workspace / "scores"), checkpoint=ckpt))
        rc = main(_args(workspace, "eval", manifest="test.json",
                        out=str(workspace / "report"), scores=str(workspace / "scores")))
        assert rc == 0
        return json.loads((workspace / "report" / "metrics.json").read_text())

    def test_metric_keys(self, workspace):
        result = self._pipeline(workspace)
        for key in ("i_auroc", "ap", "p_auroc", "aupro"):
            assert key in result
            assert result[key] is None or 0.0 <= result[key] <= 1.0

    def test_missing_scores_dir(self, workspace):
        rc = main(_args(workspace, "eval", manifest="test.json",
                        out=str(workspace / "report"), scores=str(workspace / "void")))
        assert rc == 3


# ── Multimodal ──


class TestMultimodal:
    def test_fused_outputs_and_metrics(self, workspace, tmp_path):
        # second modality: a different mock encoder applied to the same views
        cfg = load_config(workspace / "run.cfg")
        rgb_dir = workspace / "rgb"
        rgb_dir.mkdir()
        other = MockEncoder(seed=77, d=8, h=6, w=6)
        items = []
        for i in range(6):
            from cloudmark.cloud import load_point_cloud, normalize_cloud

            cloud = normalize_cloud(load_point_cloud(workspace / "data" / f"c{i}.xyz"))
            views = render_views(cloud, None, cfg.view_config())
            paths = []
            for k, view in enumerate(views):
                g, grid = other.encode(view.image)
                p = rgb_dir / f"c{i}_view{k:02d}.padf"
                save_features(p, g, grid)
                paths.append(str(p))
            items.append({
                "name": f"c{i}",
                "cloud": str(workspace / "data" / f"c{i}.xyz"),
                "labels": str(workspace / "data" / f"c{i}.labels"),
                "rgb_features": paths,
            })
        manifest = workspace / "data" / "mm.json"
        manifest.write_text(json.dumps({"split": "test", "items": items}))

        ckpt = _train(workspace)
        rc = main(["infer", "--config", str(workspace / "run.cfg"),
                   "--manifest", str(manifest),
                   "--out", str(workspace / "scores"),
                   "--checkpoint", str(ckpt)])
        assert rc == 0
        item = workspace / "scores" / "c0"
        assert (item / "fused_scores.csv").is_file()
        meta = json.loads((item / "meta.json").read_text())
        assert "fused_global_score" in meta and "rgb_global_score" in meta

        rc = main(["eval", "--config", str(workspace / "run.cfg"),
                   "--manifest", str(manifest),
                   "--out", str(workspace / "report"),
                   "--scores", str(workspace / "scores")])
        assert rc == 0
        result = json.loads((workspace / "report" / "metrics.json").read_text())
        for key in ("i_auroc_mod", "ap_mod", "p_auroc_mod", "aupro_mod"):
            assert key in result


# ── Config plumbing ──


class TestConfigPlumbing:
    def test_env_var_fallback(self, workspace, monkeypatch):
        monkeypatch.setenv("CLOUDMARK_CONFIG", str(workspace / "run.cfg"))
        rc = main(["render",
                   "--manifest", str(workspace / "data" / "train.json"),
                   "--out", str(workspace / "views")])
        assert rc == 0
        echoed = load_config(workspace / "views" / "config.txt")
        assert echoed.views_k == 2  # came from the env-named file

    def test_flag_beats_env(self, workspace, monkeypatch, tmp_path):
        other = tmp_path / "other.cfg"
        save_config(other, RunConfig(views_k=1, image_h=48, image_w=48,
                                     grid_h=6, grid_w=6, provider_dim=8))
        monkeypatch.setenv("CLOUDMARK_CONFIG", str(other))
        rc = main(_args(workspace, "render", out=str(workspace / "views")))
        assert rc == 0
        echoed = load_config(workspace / "views" / "config.txt")
        assert echoed.views_k == 2

    def test_seed_flag_sets_both_seeds(self, workspace):
        rc = main(_args(workspace, "render", out=str(workspace / "views"), seed="9"))
        assert rc == 0
        echoed = load_config(workspace / "views" / "config.txt")
        assert echoed.seed == 9 and echoed.provider_seed == 9

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "cloudmark.cli", "render", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "--manifest" in proc.stdout


# ── Selftest ──


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        rc = main(["selftest"])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.count("PASS") == 5
        assert "FAIL" not in out
