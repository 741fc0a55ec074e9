"""Point-cloud and per-point label containers with file I/O and normalization.

Coordinates are float64 throughout. Point order is identity: index j in the
cloud is the same point everywhere downstream (labels, visibility masks,
score maps).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cloudmark.errors import DataIOError, ValidationError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of n >= 1 points, shape (n, 3)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValidationError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PointLabels:
    """Per-point binary anomaly labels, optionally with region ids (0 = normal)."""

    labels: np.ndarray
    region_ids: np.ndarray | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1:
            raise ValidationError("labels must be a flat sequence")
        if not np.isin(lab, (0, 1)).all():
            raise ValidationError("labels must be 0 or 1")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.uint8)))
        if self.region_ids is not None:
            reg = np.asarray(self.region_ids, dtype=np.int64)
            if reg.shape != lab.shape:
                raise ValidationError("region_ids length must match labels")
            if (reg < 0).any():
                raise ValidationError("region_ids must be non-negative")
            if not np.array_equal(reg > 0, lab == 1):
                raise ValidationError("region_id inconsistency: label 1 <=> region_id > 0")
            object.__setattr__(self, "region_ids", _frozen(reg))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def any_anomalous(self) -> bool:
        return bool(self.labels.max(initial=0))


def load_point_cloud(path: str | Path) -> PointCloud:
    """Load an ASCII XYZ file or the supported ASCII-PLY vertex subset."""
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"no such file: {path}")
    with open(path, "r") as fh:
        first = fh.readline()
    if first.strip() == "ply":
        return _load_ply(path)
    return _load_xyz(path)


def _parse_floats(parts: list[str], lineno: int, path: Path) -> tuple[float, float, float]:
    if len(parts) != 3:
        raise DataIOError(
            f"{path}: malformed line {lineno}: expected 3 coordinates, got {len(parts)}"
        )
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise DataIOError(f"{path}: malformed line {lineno}: not a number") from None
    if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(c)):
        raise DataIOError(f"{path}: non-finite coordinate at line {lineno}")
    return a, b, c


def _load_xyz(path: Path) -> PointCloud:
    pts = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            pts.append(_parse_floats(stripped.split(), lineno, path))
    if not pts:
        raise DataIOError(f"{path}: empty point-cloud file")
    return PointCloud(np.array(pts, dtype=np.float64))


_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}


def _load_ply(path: Path) -> PointCloud:
    """ASCII PLY with a single vertex element carrying float x, y, z only."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataIOError(f"{path}: not a PLY file")
    n_vertices = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise DataIOError(f"{path}: only ASCII PLY is supported")
        elif line.startswith("element"):
            parts = line.split()
            if parts[1] == "vertex":
                n_vertices = int(parts[2])
                in_vertex = True
            else:
                if len(parts) > 2 and int(parts[2]) > 0:
                    raise DataIOError(f"{path}: unsupported PLY element '{parts[1]}'")
                in_vertex = False
        elif line.startswith("property"):
            if in_vertex:
                parts = line.split()
                if parts[1] not in _PLY_FLOAT_TYPES:
                    raise DataIOError(f"{path}: unsupported vertex property type '{parts[1]}'")
                props.append(parts[-1])
        elif line == "end_header":
            body_start = i
            break
    if body_start is None or n_vertices is None:
        raise DataIOError(f"{path}: incomplete PLY header")
    if props != ["x", "y", "z"]:
        raise DataIOError(f"{path}: vertex properties must be exactly x, y, z (got {props})")
    body = [l for l in lines[body_start:] if l.strip()]
    if len(body) < n_vertices:
        raise DataIOError(f"{path}: expected {n_vertices} vertices, found {len(body)}")
    if n_vertices == 0:
        raise DataIOError(f"{path}: empty point-cloud file")
    pts = [
        _parse_floats(body[j].split(), body_start + 1 + j, path) for j in range(n_vertices)
    ]
    return PointCloud(np.array(pts, dtype=np.float64))


def save_point_cloud(path: str | Path, cloud: PointCloud) -> None:
    """Write ASCII XYZ with enough digits to round-trip float64 exactly."""
    with open(path, "w") as fh:
        for a, b, c in cloud.points:
            fh.write(f"{a:.17g} {b:.17g} {c:.17g}\n")


def load_labels(path: str | Path, n: int) -> PointLabels:
    """Load per-point labels: one integer per line, optional region id column."""
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"no such file: {path}")
    labels: list[int] = []
    regions: list[int] = []
    n_cols = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) not in (1, 2):
                raise DataIOError(f"{path}: malformed line {lineno}")
            if n_cols is None:
                n_cols = len(parts)
            elif len(parts) != n_cols:
                raise DataIOError(f"{path}: inconsistent column count at line {lineno}")
            try:
                values = [int(p) for p in parts]
            except ValueError:
                raise DataIOError(f"{path}: malformed line {lineno}: not an integer") from None
            if values[0] not in (0, 1):
                raise DataIOError(f"{path}: label outside {{0,1}} at line {lineno}")
            labels.append(values[0])
            if len(values) == 2:
                regions.append(values[1])
    if len(labels) != n:
        raise DataIOError(f"{path}: expected {n} labels, found {len(labels)}")
    try:
        return PointLabels(
            np.array(labels), np.array(regions) if regions else None
        )
    except ValidationError as exc:
        raise DataIOError(f"{path}: {exc}") from None


def save_labels(path: str | Path, labels: PointLabels) -> None:
    with open(path, "w") as fh:
        if labels.region_ids is not None:
            for lab, reg in zip(labels.labels, labels.region_ids):
                fh.write(f"{lab} {reg}\n")
        else:
            for lab in labels.labels:
                fh.write(f"{lab}\n")


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center at the centroid, scale so the max absolute coordinate is 1.

    Uniform scaling plus translation only, so pairwise distance ratios are
    preserved. A single-point cloud maps to the origin. Idempotent.
    """
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.abs(pts).max()
    if scale > 0:
        pts = pts / scale
    return PointCloud(pts)
