"""Feature providers, prompt embeddings, and the cosine-softmax classifier.

Features are plain arrays: a global feature is a d-vector, a feature grid is
an (h, w, d) tensor. Providers turn a rendered image into both; the mock
provider is a deterministic stand-in for a real vision backbone, and the
file provider replays features exported to disk in the binary format below.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.special import expit

from cloudmark.errors import DataIOError, NumericError, ValidationError

TAU_DEFAULT = 0.07


@dataclass(frozen=True)
class PromptPair:
    """Learnable normality/abnormality embeddings g_n, g_a."""

    g_n: np.ndarray
    g_a: np.ndarray

    def __post_init__(self):
        for name in ("g_n", "g_a"):
            vec = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if vec.ndim != 1:
                raise ValidationError(f"{name} must be a vector")
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{name} contains non-finite values")
            if not np.linalg.norm(vec) > 0:
                raise ValidationError(f"{name} must have nonzero norm")
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if self.g_n.shape != self.g_a.shape:
            raise ValidationError("g_n and g_a must have the same dimension")

    @property
    def d(self) -> int:
        return self.g_n.shape[0]


def init_prompts(d: int, seed: int) -> PromptPair:
    """Random unit-Gaussian initialization, normalized."""
    rng = np.random.default_rng(seed)
    g_n = rng.standard_normal(d)
    g_a = rng.standard_normal(d)
    return PromptPair(g_n / np.linalg.norm(g_n), g_a / np.linalg.norm(g_a))


class EncoderProvider(Protocol):
    d: int
    h: int
    w: int

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """image (H, W) in [0,1] -> (global d-vector, (h, w, d) grid)."""
        ...


# ---------------------------------------------------------------------------
# classifier

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def class_probability(
    prompts: PromptPair, f: np.ndarray, tau: float = TAU_DEFAULT
) -> tuple[float, float]:
    """Two-way softmax over cosine similarities at temperature tau.

    Equivalent to the max-shifted softmax over (cos_n/tau, cos_a/tau); the
    two probabilities sum to 1 exactly.
    """
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    gap = cosine(prompts.g_a, f) - cosine(prompts.g_n, f)
    p_a = float(expit(gap / tau))
    return 1.0 - p_a, p_a


# ---------------------------------------------------------------------------
# mock provider

class MockEncoder:
    """Deterministic test double for a frozen vision backbone.

    Each feature-grid cell looks only at its own pixel patch: the feature is
    a unit vector mixing a projection of the patch statistics (mean,
    variance, mean gradients) with a per-cell random direction, both drawn
    once from the seed. The global feature is the normalized mean of the
    grid.
    """

    def __init__(self, seed: int = 0, d: int = 64, h: int = 24, w: int = 24):
        if d < 2 or h < 1 or w < 1:
            raise ValidationError("mock encoder needs d >= 2 and positive grid dims")
        self.seed = seed
        self.d = d
        self.h = h
        self.w = w
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((4, d))
        cell_dirs = rng.standard_normal((h, w, d))
        self._cell_dirs = cell_dirs / np.linalg.norm(cell_dirs, axis=2, keepdims=True)
        self._mix = 0.25 + 0.5 * rng.random()

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ValidationError("image must be 2-D")
        H, W = image.shape
        if H % self.h or W % self.w:
            raise ValidationError("image size must be divisible by the grid size")
        ph, pw = H // self.h, W // self.w
        patches = image.reshape(self.h, ph, self.w, pw).transpose(0, 2, 1, 3)

        mean = patches.mean(axis=(2, 3))
        var = patches.var(axis=(2, 3))
        # mean forward differences inside the patch; no cross-patch leakage
        gu = np.diff(patches, axis=2).mean(axis=(2, 3)) if ph > 1 else np.zeros_like(mean)
        gv = np.diff(patches, axis=3).mean(axis=(2, 3)) if pw > 1 else np.zeros_like(mean)
        stats = np.stack([mean, var, gu, gv], axis=-1)  # (h, w, 4)

        stat_dirs = stats @ self._proj  # (h, w, d)
        norms = np.linalg.norm(stat_dirs, axis=2, keepdims=True)
        scale = np.where(norms > 1e-12, norms, 1.0)
        blend = np.where(
            norms > 1e-12,
            self._mix * (stat_dirs / scale) + (1.0 - self._mix) * self._cell_dirs,
            self._cell_dirs,
        )
        grid = blend / np.linalg.norm(blend, axis=2, keepdims=True)

        g = grid.mean(axis=(0, 1))
        g = g / np.linalg.norm(g)
        return g, grid


def mock_encode(
    image: np.ndarray, seed: int, d: int = 64, h: int = 24, w: int = 24
) -> tuple[np.ndarray, np.ndarray]:
    return MockEncoder(seed=seed, d=d, h=h, w=w).encode(image)


# ---------------------------------------------------------------------------
# binary feature format
#
# little-endian: magic "PADF" | u32 version=1 | u32 h | u32 w | u32 d |
# h*w*d float32 row-major (row, col, channel) | d float32 global feature

MAGIC = b"PADF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def save_features(path: str | Path, global_feat: np.ndarray, grid: np.ndarray) -> None:
    global_feat = np.asarray(global_feat, dtype=np.float32)
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3:
        raise ValidationError(f"feature grid must be (h, w, d), got shape {grid.shape}")
    h, w, d = grid.shape
    if global_feat.shape != (d,):
        raise ValidationError("global feature dimension must match the grid's d")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, d))
        fh.write(np.ascontiguousarray(grid).astype("<f4").tobytes())
        fh.write(np.ascontiguousarray(global_feat).astype("<f4").tobytes())


def load_features(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"no feature file at {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataIOError(f"{path}: truncated header")
        magic, version, h, w, d = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DataIOError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise DataIOError(f"{path}: unsupported version {version}")
        if h < 1 or w < 1 or d < 1:
            raise DataIOError(f"{path}: invalid dimensions ({h}, {w}, {d})")
        payload = fh.read(4 * (h * w * d + d) + 1)
    if len(payload) < 4 * (h * w * d + d):
        raise DataIOError(f"{path}: truncated payload")
    if len(payload) > 4 * (h * w * d + d):
        raise DataIOError(f"{path}: trailing bytes after payload")
    flat = np.frombuffer(payload, dtype="<f4")
    grid = flat[: h * w * d].reshape(h, w, d).astype(np.float64)
    global_feat = flat[h * w * d :].astype(np.float64)
    grid.setflags(write=False)
    global_feat.setflags(write=False)
    return global_feat, grid


def image_key(image: np.ndarray) -> str:
    """Content hash used to pair an in-memory image with its feature file."""
    image = np.ascontiguousarray(image, dtype=np.float64)
    digest = hashlib.sha256()
    digest.update(np.int64(image.shape[0]).tobytes())
    digest.update(np.int64(image.shape[1]).tobytes())
    digest.update(image.tobytes())
    return digest.hexdigest()[:24]


def save_encoded(root: str | Path, image: np.ndarray, global_feat: np.ndarray, grid: np.ndarray) -> Path:
    """Store features under the image's content key for FileFeatureProvider."""
    path = Path(root) / f"{image_key(image)}.padf"
    save_features(path, global_feat, grid)
    return path


class FileFeatureProvider:
    """Replays features saved with save_encoded, keyed by image content."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DataIOError(f"feature directory not found: {self.root}")
        self.d: int | None = None
        self.h: int | None = None
        self.w: int | None = None

    def _check_dims(self, grid: np.ndarray, origin: Path) -> None:
        h, w, d = grid.shape
        if self.d is None:
            self.h, self.w, self.d = h, w, d
        elif (h, w, d) != (self.h, self.w, self.d):
            raise DataIOError(
                f"{origin}: feature dimensions ({h}, {w}, {d}) disagree with "
                f"earlier files ({self.h}, {self.w}, {self.d})"
            )

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        path = self.root / f"{image_key(image)}.padf"
        if not path.is_file():
            raise DataIOError(f"no stored features for this rendering ({path})")
        global_feat, grid = load_features(path)
        self._check_dims(grid, path)
        return global_feat, grid

    def features_at(self, relpath: str | Path) -> tuple[np.ndarray, np.ndarray]:
        global_feat, grid = load_features(self.root / relpath)
        self._check_dims(grid, self.root / relpath)
        return global_feat, grid
