"""Dataset manifests: JSON lists of cloud/label/feature paths with a split
tag. Every referenced file must exist at load time; train-split entries must
carry labels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from cloudmark.errors import DataIOError, ValidationError


@dataclass(frozen=True)
class ManifestItem:
    name: str
    cloud: Path
    labels: Path | None = None
    rgb_features: tuple[Path, ...] | None = None  # one feature file per view


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    items: tuple[ManifestItem, ...]

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be train or test, got {self.split!r}")
        if not self.items:
            raise ValidationError("manifest has no items")
        names = [item.name for item in self.items]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate item names in manifest")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataIOError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "split" not in doc or "items" not in doc:
        raise ValidationError(f"{path}: manifest must have 'split' and 'items'")
    base = path.parent
    items = []
    for i, entry in enumerate(doc["items"]):
        if not isinstance(entry, dict) or "cloud" not in entry:
            raise ValidationError(f"{path}: item {i} must be an object with a 'cloud' path")
        cloud = (base / entry["cloud"]).resolve()
        labels = entry.get("labels")
        labels = (base / labels).resolve() if labels else None
        rgb = entry.get("rgb_features")
        rgb_features = tuple((base / p).resolve() for p in rgb) if rgb else None
        name = entry.get("name") or Path(entry["cloud"]).stem
        items.append(ManifestItem(name, cloud, labels, rgb_features))
    manifest = DatasetManifest(doc["split"], tuple(items))
    _validate_files(path, manifest)
    return manifest


def _validate_files(origin: Path, manifest: DatasetManifest) -> None:
    for item in manifest.items:
        if not item.cloud.is_file():
            raise ValidationError(f"{origin}: missing cloud file {item.cloud} (item {item.name!r})")
        if item.labels is not None and not item.labels.is_file():
            raise ValidationError(f"{origin}: missing labels file {item.labels} (item {item.name!r})")
        if manifest.split == "train" and item.labels is None:
            raise ValidationError(f"{origin}: train-split item {item.name!r} has no labels")
        if item.rgb_features:
            for p in item.rgb_features:
                if not p.is_file():
                    raise ValidationError(f"{origin}: missing RGB feature file {p} (item {item.name!r})")


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    path = Path(path)
    base = path.parent
    doc = {
        "split": manifest.split,
        "items": [
            {
                "name": item.name,
                "cloud": _relativize(item.cloud, base),
                **({"labels": _relativize(item.labels, base)} if item.labels else {}),
                **(
                    {"rgb_features": [_relativize(p, base) for p in item.rgb_features]}
                    if item.rgb_features
                    else {}
                ),
            }
            for item in manifest.items
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _relativize(p: Path, base: Path) -> str:
    try:
        return str(p.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p.resolve())
