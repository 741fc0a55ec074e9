"""Run configuration: a flat "section.key = value" text format with typed
fields, defaults, strict validation, and an exact round trip."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from cloudmark.errors import DataIOError, ValidationError
from cloudmark.learning import TrainConfig
from cloudmark.render import ViewConfig

ENV_CONFIG = "CLOUDMARK_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    views_k: int = 9
    views_angles: tuple[float, ...] | None = None  # override; default view_angles(K)
    image_h: int = 336
    image_w: int = 336
    grid_h: int = 24
    grid_w: int = 24
    splat_radius: int = 0
    shading: str = "depth"
    tau: float = 0.07
    sigma_2d: float = 4.0
    sigma_3d: float = 0.05
    k_nn: int = 8
    alpha: float = 1.0
    gamma: float = 2.0
    eps: float = 1.0
    w_3d_global: float = 1.0
    w_3d_local: float = 1.0
    w_2d_global: float = 1.0
    w_2d_local: float = 1.0
    lr: float = 0.001
    epochs: int = 15
    batch: int = 4
    seed: int = 0
    aggregate_mode: str = "paper"
    provider_kind: str = "mock"
    provider_seed: int = 0
    provider_dim: int = 64
    provider_dir: str = ""
    region_radius: float = 0.05
    fpr_limit: float = 0.3
    p_auroc_per_cloud: bool = False
    output: str = "out"

    def view_config(self) -> ViewConfig:
        return ViewConfig(
            K=self.views_k,
            H=self.image_h,
            W=self.image_w,
            h=self.grid_h,
            w=self.grid_w,
            splat_radius=self.splat_radius,
            shading=self.shading,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            tau=self.tau,
            alpha=self.alpha,
            gamma=self.gamma,
            eps=self.eps,
            weights=(self.w_3d_global, self.w_3d_local, self.w_2d_global, self.w_2d_local),
            aggregate_mode=self.aggregate_mode,
            lr=self.lr,
            epochs=self.epochs,
            batch=self.batch,
            seed=self.seed,
        )

    def validate(self) -> "RunConfig":
        self.view_config()
        self.train_config()
        if self.views_angles is not None and len(self.views_angles) != self.views_k:
            raise ValidationError("views.angles must list exactly views.k angles")
        if self.sigma_2d < 0 or self.sigma_3d < 0:
            raise ValidationError("smoothing sigmas must be >= 0")
        if self.k_nn < 1:
            raise ValidationError("smoothing.k_nn must be >= 1")
        if self.aggregate_mode not in ("paper", "visibility_normalized"):
            raise ValidationError(f"unknown aggregate mode {self.aggregate_mode!r}")
        if self.provider_kind not in ("mock", "files"):
            raise ValidationError(f"provider.kind must be mock or files, got {self.provider_kind!r}")
        if self.provider_kind == "files" and not self.provider_dir:
            raise ValidationError("provider.dir is required when provider.kind = files")
        if self.provider_dim < 2:
            raise ValidationError("provider.dim must be >= 2")
        if self.region_radius <= 0:
            raise ValidationError("eval.region_radius must be positive")
        if not 0 < self.fpr_limit <= 1:
            raise ValidationError("eval.fpr_limit must be in (0, 1]")
        return self


# dotted key <-> field
_KEYMAP = {
    "views.k": "views_k",
    "views.angles": "views_angles",
    "resolution.image_h": "image_h",
    "resolution.image_w": "image_w",
    "resolution.grid_h": "grid_h",
    "resolution.grid_w": "grid_w",
    "render.splat_radius": "splat_radius",
    "render.shading": "shading",
    "classifier.tau": "tau",
    "smoothing.sigma_2d": "sigma_2d",
    "smoothing.sigma_3d": "sigma_3d",
    "smoothing.k_nn": "k_nn",
    "loss.alpha": "alpha",
    "loss.gamma": "gamma",
    "loss.eps": "eps",
    "loss.w_3d_global": "w_3d_global",
    "loss.w_3d_local": "w_3d_local",
    "loss.w_2d_global": "w_2d_global",
    "loss.w_2d_local": "w_2d_local",
    "optimizer.lr": "lr",
    "optimizer.epochs": "epochs",
    "optimizer.batch": "batch",
    "optimizer.seed": "seed",
    "aggregate.mode": "aggregate_mode",
    "provider.kind": "provider_kind",
    "provider.seed": "provider_seed",
    "provider.dim": "provider_dim",
    "provider.dir": "provider_dir",
    "eval.region_radius": "region_radius",
    "eval.fpr_limit": "fpr_limit",
    "eval.p_auroc_per_cloud": "p_auroc_per_cloud",
    "paths.output": "output",
}
_FIELDMAP = {v: k for k, v in _KEYMAP.items()}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, field: str, raw: str):
    kind = _TYPES[field]
    try:
        if field == "views_angles":
            if raw.lower() in ("", "none"):
                return None
            return tuple(float(x) for x in raw.split(","))
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ValidationError(f"config key {key}: cannot parse value {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno}: expected 'section.key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _KEYMAP:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        field = _KEYMAP[key]
        if field in values:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        values[field] = _parse_value(key, field, raw)
    return RunConfig(**values).validate()


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key in _KEYMAP:
        field = _KEYMAP[key]
        value = getattr(cfg, field)
        if field == "views_angles":
            value = "none" if value is None else ",".join(f"{a:.17g}" for a in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"no config file at {path}")
    return parse_config(path.read_text())


def save_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(serialize_config(cfg))
