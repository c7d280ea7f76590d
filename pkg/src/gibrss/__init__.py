"""Graph-information-bottleneck segmentation on KNN patch graphs."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward
from .bottleneck import (GibConfig, GibTerms, aib_term, exact_mi_oracle,
                         gib_objective, joint_view_loss, structure_mi_estimate,
                         task_mi_estimate, xib_term)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledImage, load_dataset, save_dataset, synth_dataset
from .errors import ContractError, DimensionError, FileFormatError, NumericError
from .estimator import GraphSegmenter
from .graph import (PatchGraph, PatchSet, downsample_graph, embed_patches,
                    knn_graph, split_patches, upsample_nodes)
from .masking import (MaskParams, MaskSample, edge_masked_view, encode_views,
                      node_masked_view, sample_mask)
from .metrics import ConfusionMatrix, confusion, metrics
from .model import (SegModel, SegModelConfig, build_model, forward, predict,
                    total_loss, train)
from .optim import AdamW, OptimizerState, adamw_step, cosine_lr
from .rng import RngStream

__all__ = [
    "Tensor", "backward", "RngStream",
    "AdamW", "OptimizerState", "adamw_step", "cosine_lr",
    "PatchSet", "PatchGraph", "split_patches", "embed_patches", "knn_graph",
    "downsample_graph", "upsample_nodes",
    "MaskParams", "MaskSample", "sample_mask", "node_masked_view",
    "edge_masked_view", "encode_views",
    "GibConfig", "GibTerms", "aib_term", "xib_term", "structure_mi_estimate",
    "task_mi_estimate", "gib_objective", "joint_view_loss", "exact_mi_oracle",
    "SegModel", "SegModelConfig", "build_model", "forward", "predict",
    "total_loss", "train",
    "save_checkpoint", "load_checkpoint",
    "LabeledImage", "synth_dataset", "save_dataset", "load_dataset",
    "ConfusionMatrix", "confusion", "metrics",
    "GraphSegmenter",
    "ContractError", "DimensionError", "NumericError", "FileFormatError",
]
