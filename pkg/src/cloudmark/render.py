"""Multi-view orthographic rendering of point clouds.

Each view rotates the cloud about the X-axis, projects (a, b) onto the image
plane, and resolves per-pixel visibility with a minimum-depth z-buffer over
the rotated c coordinate. The outputs per view are the rendered image, the
depth buffer, the point-to-pixel map, the visibility mask, and the rendered
ground-truth mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cloudmark._kernels import zbuffer_argmin
from cloudmark.cloud import PointCloud, PointLabels
from cloudmark.errors import DataIOError, ValidationError

# pixel_map value for points that project outside the image
OFFSCREEN = -1

# normalized coords [-1, 1] land in [MARGIN*H, (1-MARGIN)*H) so splats never clip
MARGIN = 0.05


@dataclass(frozen=True)
class ViewConfig:
    K: int = 9
    H: int = 336
    W: int = 336
    h: int = 24
    w: int = 24
    splat_radius: int = 0
    shading: str = "depth"

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        for name in ("H", "W", "h", "w"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        # the rendering transform scale h/H must be exact
        if self.H % self.h or self.W % self.w:
            raise ValidationError("H must be divisible by h and W by w")
        if self.splat_radius < 0:
            raise ValidationError("splat_radius must be >= 0")
        if self.shading not in ("depth", "constant"):
            raise ValidationError(f"unknown shading mode {self.shading!r}")


@dataclass(frozen=True)
class ViewBundle:
    angle: float
    image: np.ndarray       # H x W, grayscale in [0, 1]
    depth: np.ndarray       # H x W, +inf where empty
    pixel_map: np.ndarray   # n x 2 int64, (u, v) or OFFSCREEN
    vis_mask: np.ndarray    # n uint8
    gt_mask: np.ndarray     # H x W uint8
    rotated: np.ndarray = field(repr=False, default=None)  # n x 3 rotated coords

    @property
    def n(self) -> int:
        return self.pixel_map.shape[0]


def view_angles(K: int) -> np.ndarray:
    """K angles circularly and evenly spaced with step 2*pi/(K+1), centered on 0."""
    if K < 1:
        raise ValidationError("K must be >= 1")
    j = np.arange(K, dtype=np.float64)
    return (j - (K - 1) / 2.0) * (2.0 * np.pi / (K + 1))


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotate_cloud(cloud: PointCloud, angle: float) -> PointCloud:
    """Right-handed rotation about the X-axis; point order preserved."""
    return PointCloud(cloud.points @ rotation_x(angle).T)


def rendering_scale(cfg: ViewConfig) -> float:
    """Scale between pixel and feature-grid coordinates."""
    return cfg.h / cfg.H


def pixel_to_cell(pixel_map: np.ndarray, cfg: ViewConfig) -> np.ndarray:
    """Map per-point pixels to feature-grid cells: (u*h/H, v*w/W), floored."""
    cell = np.empty_like(pixel_map)
    cell[:, 0] = pixel_map[:, 0] * cfg.h // cfg.H
    cell[:, 1] = pixel_map[:, 1] * cfg.w // cfg.W
    cell[pixel_map[:, 0] < 0] = OFFSCREEN
    return cell


def _project_axis(coord: np.ndarray, size: int) -> np.ndarray:
    scaled = MARGIN * size + (coord + 1.0) * 0.5 * (1.0 - 2.0 * MARGIN) * size
    return np.floor(scaled).astype(np.int64)


def _splat_disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius**2


def rasterize(
    cloud: PointCloud,
    labels: PointLabels | None,
    angle: float,
    cfg: ViewConfig,
) -> ViewBundle:
    """Render one view. Pure and deterministic; ties at a pixel go to the
    lowest point index."""
    if labels is not None and labels.n != cloud.n:
        raise ValidationError("labels length must match cloud size")
    rotated = rotate_cloud(cloud, angle).points
    u = _project_axis(rotated[:, 0], cfg.H)
    v = _project_axis(rotated[:, 1], cfg.W)
    depth_vals = rotated[:, 2]

    onscreen = (u >= 0) & (u < cfg.H) & (v >= 0) & (v < cfg.W)
    pixel_map = np.full((cloud.n, 2), OFFSCREEN, dtype=np.int64)
    pixel_map[onscreen, 0] = u[onscreen]
    pixel_map[onscreen, 1] = v[onscreen]

    ids = np.flatnonzero(onscreen).astype(np.int64)
    flat_pix = np.ascontiguousarray(u[onscreen] * cfg.W + v[onscreen])
    winners = zbuffer_argmin(
        flat_pix,
        np.ascontiguousarray(depth_vals[onscreen]),
        ids,
        cfg.H * cfg.W,
    )

    occupied = np.flatnonzero(winners >= 0)
    win_ids = winners[occupied]

    vis_mask = np.zeros(cloud.n, dtype=np.uint8)
    vis_mask[win_ids] = 1

    depth = np.full(cfg.H * cfg.W, np.inf)
    depth[occupied] = depth_vals[win_ids]
    depth = depth.reshape(cfg.H, cfg.W)

    gt_mask = np.zeros(cfg.H * cfg.W, dtype=np.uint8)
    if labels is not None:
        gt_mask[occupied] = labels.labels[win_ids]
    gt_mask = gt_mask.reshape(cfg.H, cfg.W)

    image = _shade(depth, occupied, depth_vals[win_ids], cfg)

    for arr in (image, depth, pixel_map, vis_mask, gt_mask, rotated):
        arr.setflags(write=False)
    return ViewBundle(float(angle), image, depth, pixel_map, vis_mask, gt_mask, rotated)


def _shade(depth: np.ndarray, occupied: np.ndarray, win_depths: np.ndarray, cfg: ViewConfig) -> np.ndarray:
    image = np.zeros(cfg.H * cfg.W)
    if occupied.size:
        if cfg.shading == "constant":
            image[occupied] = 1.0
        else:
            # near (small depth) renders bright
            lo, hi = win_depths.min(), win_depths.max()
            if hi > lo:
                image[occupied] = (hi - win_depths) / (hi - lo)
            else:
                image[occupied] = 1.0
    image = image.reshape(cfg.H, cfg.W)
    if cfg.splat_radius > 0 and occupied.size:
        from scipy.ndimage import grey_dilation

        # dilation widens the drawn points only; depth and masks keep the
        # single-pixel geometry
        image = grey_dilation(image, footprint=_splat_disk(cfg.splat_radius))
    return image


def render_views(
    cloud: PointCloud,
    labels: PointLabels | None,
    cfg: ViewConfig,
    angles: np.ndarray | None = None,
) -> list[ViewBundle]:
    """All K views of one (normalized) cloud."""
    if angles is None:
        angles = view_angles(cfg.K)
    return [rasterize(cloud, labels, float(a), cfg) for a in angles]


# ---------------------------------------------------------------------------
# view export

def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM; input values clipped to [0, 1]."""
    img8 = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    img8 = np.round(img8 * 255.0).astype(np.uint8)
    hdr = f"P5\n{img8.shape[1]} {img8.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(hdr + img8.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM back to floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DataIOError(f"{path}: not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise DataIOError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise DataIOError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def save_view_bundle(view_dir: str | Path, bundle: ViewBundle) -> None:
    """Directory layout consumed by the feature-export bridge and by tests."""
    view_dir = Path(view_dir)
    view_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(view_dir / "image.pgm", bundle.image)
    write_pgm(view_dir / "gt_mask.pgm", bundle.gt_mask.astype(np.float64))
    depth = bundle.depth.astype(np.float32)
    depth.tofile(view_dir / "depth.f32")
    np.savetxt(
        view_dir / "pixel_map.csv",
        np.column_stack(
            [np.arange(bundle.n), bundle.pixel_map, bundle.vis_mask.astype(np.int64)]
        ),
        fmt="%d",
        delimiter=",",
        header="index,u,v,visible",
        comments="",
    )
    meta = {
        "angle": bundle.angle,
        "H": int(bundle.image.shape[0]),
        "W": int(bundle.image.shape[1]),
        "n": int(bundle.n),
    }
    (view_dir / "view.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_view_bundle(view_dir: str | Path) -> ViewBundle:
    view_dir = Path(view_dir)
    meta_path = view_dir / "view.json"
    if not meta_path.is_file():
        raise DataIOError(f"no view metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    image = read_pgm(view_dir / "image.pgm")
    gt_mask = (read_pgm(view_dir / "gt_mask.pgm") > 0.5).astype(np.uint8)
    depth = np.fromfile(view_dir / "depth.f32", dtype=np.float32)
    if depth.size != meta["H"] * meta["W"]:
        raise DataIOError(f"{view_dir}: depth buffer size mismatch")
    depth = depth.reshape(meta["H"], meta["W"]).astype(np.float64)
    table = np.loadtxt(view_dir / "pixel_map.csv", dtype=np.int64, delimiter=",", skiprows=1)
    table = table.reshape(-1, 4)
    if table.shape[0] != meta["n"]:
        raise DataIOError(f"{view_dir}: pixel_map row count mismatch")
    pixel_map = table[:, 1:3].copy()
    vis_mask = table[:, 3].astype(np.uint8)
    for arr in (image, depth, pixel_map, vis_mask, gt_mask):
        arr.setflags(write=False)
    return ViewBundle(float(meta["angle"]), image, depth, pixel_map, vis_mask, gt_mask)
