"""Command-line front end.

Commands: render, train, infer, eval, selftest. Configuration comes from a
"section.key = value" file (--config, or the CLOUDMARK_CONFIG environment
variable), with a few flag overrides. Exit codes: 0 ok, 2 validation error,
3 I/O error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from cloudmark import config as config_mod
from cloudmark import learning, metrics, oracles, scoring, synthetic
from cloudmark.cloud import load_labels, load_point_cloud, normalize_cloud
from cloudmark.encoder import FileFeatureProvider, MockEncoder, init_prompts
from cloudmark.errors import CloudmarkError, DataIOError, ValidationError
from cloudmark.manifest import DatasetManifest, ManifestItem, load_manifest
from cloudmark.render import ViewConfig, rasterize, render_views, save_view_bundle, view_angles


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudmark",
        description="Zero-shot 3D anomaly detection over multi-view renderings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        p.add_argument("--config", help="config file (default: $CLOUDMARK_CONFIG or built-ins)")
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        p.add_argument("--out", help="output directory (overrides paths.output)")
        p.add_argument("--seed", type=int, help="override optimizer and provider seeds")
        p.add_argument("--workers", type=int, default=1, help="parallel per-cloud workers")
        p.add_argument(
            "--provider", choices=("mock", "files"), help="feature provider override"
        )

    p_render = sub.add_parser("render", help="write per-view rendering directories")
    common(p_render)
    p_render.set_defaults(func=cmd_render)

    p_train = sub.add_parser("train", help="optimize the prompt pair")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="score clouds with a prompt checkpoint")
    common(p_infer)
    p_infer.add_argument("--checkpoint", required=True, help="prompt checkpoint base path")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="compute metrics from scores and labels")
    common(p_eval)
    p_eval.add_argument("--scores", required=True, help="directory written by infer")
    p_eval.set_defaults(func=cmd_eval)

    p_self = sub.add_parser("selftest", help="run the built-in oracle cross-checks")
    common(p_self, manifest=False)
    p_self.set_defaults(func=cmd_selftest)
    return parser


def _load_cfg(args: argparse.Namespace) -> config_mod.RunConfig:
    path = args.config or os.environ.get(config_mod.ENV_CONFIG)
    cfg = config_mod.load_config(path) if path else config_mod.RunConfig()
    overrides = {}
    if args.out:
        overrides["output"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["provider_seed"] = args.seed
    if getattr(args, "provider", None):
        overrides["provider_kind"] = args.provider
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


def _provider(cfg: config_mod.RunConfig):
    if cfg.provider_kind == "mock":
        return MockEncoder(
            seed=cfg.provider_seed, d=cfg.provider_dim, h=cfg.grid_h, w=cfg.grid_w
        )
    return FileFeatureProvider(cfg.provider_dir)


def _angles(cfg: config_mod.RunConfig) -> np.ndarray:
    if cfg.views_angles is not None:
        return np.asarray(cfg.views_angles, dtype=np.float64)
    return view_angles(cfg.views_k)


def _load_item(item: ManifestItem, need_labels: bool):
    cloud = normalize_cloud(load_point_cloud(item.cloud))
    labels = None
    if item.labels is not None:
        labels = load_labels(item.labels, cloud.n)
    elif need_labels:
        raise ValidationError(f"item {item.name!r} has no labels")
    return cloud, labels


def _item_features(item, views, provider, cfg):
    """Per-view features: mock encodes renderings, files replays exports."""
    if cfg.provider_kind == "files":
        return [
            provider.features_at(Path(item.name) / f"view{k:02d}.padf")
            for k in range(len(views))
        ]
    return [provider.encode(v.image) for v in views]


def _echo_config(out: Path, cfg: config_mod.RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    config_mod.save_config(out / "config.txt", cfg)


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands

def cmd_render(args: argparse.Namespace, cfg: config_mod.RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(cfg.output)
    _echo_config(out, cfg)
    view_cfg = cfg.view_config()
    angles = _angles(cfg)
    need_labels = manifest.split == "train"

    def work(item: ManifestItem) -> None:
        cloud, labels = _load_item(item, need_labels)
        views = render_views(cloud, labels, view_cfg, angles)
        for k, view in enumerate(views):
            save_view_bundle(out / item.name / f"view{k:02d}", view)

    _pool_map(work, manifest.items, args.workers)
    print(f"rendered {len(manifest.items)} clouds x {view_cfg.K} views -> {out}")
    return 0


def _build_samples(manifest: DatasetManifest, cfg: config_mod.RunConfig, provider, workers: int):
    view_cfg = cfg.view_config()
    angles = _angles(cfg)

    def work(item: ManifestItem) -> learning.TrainSample:
        cloud, labels = _load_item(item, need_labels=True)
        views = render_views(cloud, labels, view_cfg, angles)
        features = _item_features(item, views, provider, cfg)
        return learning.make_sample(cloud, labels, views, features)

    return _pool_map(work, manifest.items, workers)


def cmd_train(args: argparse.Namespace, cfg: config_mod.RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    if manifest.split != "train":
        raise ValidationError("train expects a manifest with split = train")
    out = Path(cfg.output)
    _echo_config(out, cfg)
    provider = _provider(cfg)
    samples = _build_samples(manifest, cfg, provider, args.workers)
    prompts, history = learning.optimize_prompts(samples, cfg.train_config())
    learning.save_prompts(out / "prompts", prompts)
    learning.save_history_csv(out / "history.csv", history)
    print(f"trained {cfg.epochs} epochs on {len(samples)} clouds -> {out / 'prompts'}(_n/_a).padf")
    return 0


def cmd_infer(args: argparse.Namespace, cfg: config_mod.RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    prompts = learning.load_prompts(args.checkpoint)
    out = Path(cfg.output)
    _echo_config(out, cfg)
    provider = _provider(cfg)
    view_cfg = cfg.view_config()
    angles = _angles(cfg)

    def work(item: ManifestItem) -> None:
        cloud, _ = _load_item(item, need_labels=False)
        views = render_views(cloud, None, view_cfg, angles)
        features = _item_features(item, views, provider, cfg)
        item_dir = out / item.name
        item_dir.mkdir(parents=True, exist_ok=True)
        for k, (_, grid) in enumerate(features):
            cell_probs = scoring.segment(prompts, grid, "abnormal", cfg.tau)
            s2d = scoring.upsample_bilinear(cell_probs, view_cfg.H, view_cfg.W)
            scoring.save_score_map(item_dir / f"view{k:02d}_score", s2d)
        res = scoring.infer_3d(
            cloud,
            prompts,
            provider=None,
            cfg=view_cfg,
            tau=cfg.tau,
            sigma=cfg.sigma_3d,
            k_nn=cfg.k_nn,
            mode=cfg.aggregate_mode,
            views=views,
            features=features,
        )
        scoring.save_scores_csv(item_dir / "scores.csv", cloud, res.point_map)
        meta = {
            "global_score": res.global_score,
            "per_view_probs": res.per_view_probs.tolist(),
        }
        if item.rgb_features is not None:
            if len(item.rgb_features) != len(views):
                raise ValidationError(
                    f"item {item.name!r}: expected {len(views)} RGB feature files, "
                    f"got {len(item.rgb_features)}"
                )
            from cloudmark.encoder import load_features

            rgb_feats = [load_features(p) for p in item.rgb_features]
            res_rgb = scoring.infer_3d(
                cloud,
                prompts,
                provider=None,
                cfg=view_cfg,
                tau=cfg.tau,
                sigma=cfg.sigma_3d,
                k_nn=cfg.k_nn,
                mode=cfg.aggregate_mode,
                views=views,
                features=rgb_feats,
            )
            fused_map, fused_global = scoring.fuse_multimodal(
                res, res_rgb.point_map, res_rgb.global_score, cloud,
                sigma=cfg.sigma_3d, k_nn=cfg.k_nn,
            )
            scoring.save_scores_csv(item_dir / "fused_scores.csv", cloud, fused_map)
            meta["rgb_global_score"] = res_rgb.global_score
            meta["fused_global_score"] = fused_global
        (item_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    _pool_map(work, manifest.items, args.workers)
    print(f"scored {len(manifest.items)} clouds -> {out}")
    return 0


def _metric_or_reason(result: dict, key: str, fn) -> None:
    try:
        result[key] = fn()
    except CloudmarkError as exc:
        result[key] = None
        result[f"{key}_reason"] = str(exc)


def cmd_eval(args: argparse.Namespace, cfg: config_mod.RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    scores_dir = Path(args.scores)
    out = Path(cfg.output)
    _echo_config(out, cfg)

    global_scores, fused_globals, cloud_labels = [], [], []
    point_maps, fused_maps, point_labels, region_sets = [], [], [], []
    have_fused = True
    for item in manifest.items:
        cloud, labels = _load_item(item, need_labels=True)
        item_dir = scores_dir / item.name
        score_file = item_dir / "scores.csv"
        if not score_file.is_file():
            raise DataIOError(f"missing score file for cloud {item.name!r} ({score_file})")
        scores = scoring.load_scores_csv(score_file)
        if scores.shape != (cloud.n,):
            raise ValidationError(f"cloud {item.name!r}: score count does not match points")
        meta = json.loads((item_dir / "meta.json").read_text())
        global_scores.append(float(meta["global_score"]))
        cloud_labels.append(int(labels.any_anomalous))
        point_maps.append(scores)
        point_labels.append(labels.labels)
        region_sets.append(metrics.connected_regions(labels, cloud, cfg.region_radius))
        fused_file = item_dir / "fused_scores.csv"
        if fused_file.is_file() and "fused_global_score" in meta:
            fused_maps.append(scoring.load_scores_csv(fused_file))
            fused_globals.append(float(meta["fused_global_score"]))
        else:
            have_fused = False

    result: dict = {}
    _metric_or_reason(result, "i_auroc", lambda: metrics.auroc(global_scores, cloud_labels))
    _metric_or_reason(result, "ap", lambda: metrics.average_precision(global_scores, cloud_labels))
    _metric_or_reason(
        result,
        "p_auroc",
        lambda: metrics.pooled_point_auroc(point_maps, point_labels, cfg.p_auroc_per_cloud),
    )
    _metric_or_reason(
        result, "aupro", lambda: metrics.aupro(point_maps, region_sets, cfg.fpr_limit)
    )
    if have_fused and fused_maps:
        _metric_or_reason(
            result, "i_auroc_mod", lambda: metrics.auroc(fused_globals, cloud_labels)
        )
        _metric_or_reason(
            result, "ap_mod", lambda: metrics.average_precision(fused_globals, cloud_labels)
        )
        _metric_or_reason(
            result,
            "p_auroc_mod",
            lambda: metrics.pooled_point_auroc(fused_maps, point_labels, cfg.p_auroc_per_cloud),
        )
        _metric_or_reason(
            result, "aupro_mod", lambda: metrics.aupro(fused_maps, region_sets, cfg.fpr_limit)
        )
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    (out / "metrics.json").write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# selftest

def cmd_selftest(args: argparse.Namespace, cfg: config_mod.RunConfig) -> int:
    checks = [
        ("visibility mask vs brute-force z-buffer", _selftest_vis),
        ("bilinear upsampling vs direct evaluation", _selftest_bilinear),
        ("feature-space scoring vs per-point route", _selftest_eq2),
        ("analytic gradients vs finite differences", _selftest_grad),
        ("ranking metrics vs exhaustive oracles", _selftest_metrics),
    ]
    failed = 0
    for name, fn in checks:
        try:
            fn()
            print(f"PASS {name}")
        except AssertionError as exc:
            failed += 1
            print(f"FAIL {name}: {exc}")
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
        return 4
    print(f"all {len(checks)} checks passed")
    return 0


def _selftest_vis() -> None:
    view_cfg = ViewConfig(K=3, H=64, W=64, h=8, w=8)
    rng = np.random.default_rng(7)
    for i in range(5):
        cloud, labels = synthetic.sphere_cloud(int(rng.integers(100, 400)), seed=i, n_regions=1)
        for angle in view_angles(3):
            bundle = rasterize(cloud, labels, float(angle), view_cfg)
            oracle = oracles.brute_force_vis_mask(cloud, float(angle), view_cfg)
            assert np.array_equal(bundle.vis_mask, oracle), "mask mismatch"


def _selftest_bilinear() -> None:
    rng = np.random.default_rng(11)
    cells = rng.random((5, 7))
    fast = scoring.upsample_bilinear(cells, 20, 21)
    slow = oracles.bilinear_oracle(cells, 20, 21)
    assert np.abs(fast - slow).max() < 1e-12, "interpolation mismatch"


def _selftest_eq2() -> None:
    view_cfg = ViewConfig(K=3, H=96, W=96, h=12, w=12)
    provider = synthetic.PlantedEncoder(seed=3, d=16, h=12, w=12)
    cloud, labels = synthetic.sphere_cloud(300, seed=5, n_regions=1)
    sample = synthetic.planted_sample(cloud, labels, view_cfg, provider)
    prompts = init_prompts(16, seed=2)
    fast = scoring.infer_3d(
        cloud, prompts, None, view_cfg, tau=0.07, sigma=0.0,
        views=list(sample.views), features=list(sample.features),
    ).point_map
    naive = oracles.naive_point_scores(sample.views, sample.features, prompts, 0.07)
    assert np.abs(fast - naive).max() < 1e-6, "score mismatch"


def _selftest_grad() -> None:
    view_cfg = ViewConfig(K=3, H=48, W=48, h=6, w=6)
    provider = synthetic.PlantedEncoder(seed=1, d=8, h=6, w=6)
    hyper = learning.TrainConfig(tau=0.5, gamma=2.0)
    cloud, labels = synthetic.sphere_cloud(50, seed=9, n_regions=1)
    sample = synthetic.planted_sample(cloud, labels, view_cfg, provider)
    prompts = init_prompts(8, seed=4)
    grad_n, grad_a = learning.grad_prompts([sample], prompts, hyper)
    fd_n, fd_a = oracles.fd_gradient([sample], prompts, hyper)
    for got, want in ((grad_n, fd_n), (grad_a, fd_a)):
        rel = np.abs(got - want) / np.maximum(np.abs(want), 1e-8)
        assert rel.max() < 1e-4, f"gradient relative error {rel.max():.2e}"


def _selftest_metrics() -> None:
    rng = np.random.default_rng(13)
    for _ in range(20):
        scores = rng.integers(0, 5, size=10).astype(float)
        labels = rng.integers(0, 2, size=10)
        if labels.sum() in (0, len(labels)):
            continue
        assert abs(metrics.auroc(scores, labels) - oracles.auroc_oracle(scores, labels)) < 1e-12
        assert (
            abs(metrics.average_precision(scores, labels) - oracles.ap_oracle(scores, labels))
            < 1e-12
        )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return args.func(args, cfg)
    except CloudmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
