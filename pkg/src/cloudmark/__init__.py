"""cloudmark: zero-shot 3D anomaly detection.

Renders point clouds into multi-view depth images, scores them against a
learnable normality/abnormality prompt pair through a pluggable feature
encoder, back-projects the 2D scores to per-point anomaly maps, optimizes
the prompts with a hybrid global/local loss, and evaluates with standard
anomaly-detection metrics.
"""

from cloudmark._kernels import BACKEND as KERNEL_BACKEND
from cloudmark.cloud import PointCloud, PointLabels, load_point_cloud, normalize_cloud
from cloudmark.encoder import MockEncoder, PromptPair, load_features, save_features
from cloudmark.learning import TrainConfig, hybrid_loss, optimize_prompts
from cloudmark.render import ViewBundle, ViewConfig, rasterize, render_views, view_angles
from cloudmark.scoring import InferenceResult, fuse_multimodal, infer_3d

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "PointCloud",
    "PointLabels",
    "load_point_cloud",
    "normalize_cloud",
    "MockEncoder",
    "PromptPair",
    "load_features",
    "save_features",
    "TrainConfig",
    "hybrid_loss",
    "optimize_prompts",
    "ViewBundle",
    "ViewConfig",
    "rasterize",
    "render_views",
    "view_angles",
    "InferenceResult",
    "fuse_multimodal",
    "infer_3d",
    "__version__",
]
