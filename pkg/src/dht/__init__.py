"""Differentiable hierarchical superpixel tokenization."""
from .encoder import EncoderConfig, EncoderState, TrainHyper, init_state, load_checkpoint, save_checkpoint, train
from .hierarchy import Hierarchy, MergeLevel, build_hierarchy
from .imagegraph import GridGraph, Image, LabelMap, load_image, region_stats
from .kernels import KernelSpec, kernel_eval
from .metrics import MetricReport, mse, psnr, ssim
from .pipeline import tokenize
from .selection import ICConfig, PrunedPartition, prune
from .tokens import TokenSet, extract_tokens, positional_histogram, token_dump, token_load
from .vectorize import VectorDoc, score_vectorization, vectorize

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "EncoderState",
    "GridGraph",
    "Hierarchy",
    "ICConfig",
    "Image",
    "KernelSpec",
    "LabelMap",
    "MergeLevel",
    "MetricReport",
    "PrunedPartition",
    "TokenSet",
    "TrainHyper",
    "VectorDoc",
    "build_hierarchy",
    "extract_tokens",
    "init_state",
    "kernel_eval",
    "load_checkpoint",
    "load_image",
    "mse",
    "positional_histogram",
    "prune",
    "psnr",
    "region_stats",
    "save_checkpoint",
    "score_vectorization",
    "ssim",
    "token_dump",
    "token_load",
    "tokenize",
    "train",
    "vectorize",
]
