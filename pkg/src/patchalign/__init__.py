"""Patch-level adversarial domain adaptation for semantic segmentation.

A small, dependency-light library: a reverse-mode autodiff tensor core, a
procedural two-domain segmentation benchmark, K-means discovery of patch
label modes, and an adversarial training loop that aligns target patch
representations with the discovered source modes. The `patchalign` CLI
exposes the pipeline end to end.
"""

from .tensor import Tensor, no_grad
from .rng import CounterRng
from .synthdata import SceneConfig, Shift, generate_domain_pair, read_dataset, write_dataset
from .patchmodes import PatchGrid, kmeans_fit, cluster_map, sample_patches
from .nets import GConfig, HConfig, DConfig, init_params
from .losses import LossWeights, EntropyConfig
from .trainer import TrainConfig, Trainer, run_training, load_checkpoint
from .config import RunConfig, parse_config
from .metrics import iou_from_confusion, confusion_matrix

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "CounterRng",
    "SceneConfig", "Shift", "generate_domain_pair", "read_dataset", "write_dataset",
    "PatchGrid", "kmeans_fit", "cluster_map", "sample_patches",
    "GConfig", "HConfig", "DConfig", "init_params",
    "LossWeights", "EntropyConfig",
    "TrainConfig", "Trainer", "run_training", "load_checkpoint",
    "RunConfig", "parse_config",
    "iou_from_confusion", "confusion_matrix",
    "__version__",
]
