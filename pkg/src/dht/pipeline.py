"""End-to-end tokenization, reconstruction scoring and ablation cells."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoder import (
    EncoderConfig,
    EncoderState,
    TrainHyper,
    encode_tensor,
    forward,
    init_state,
    mean_inject,
    predicted_means,
    region_features,
    train,
)
from .hierarchy import MAX_LEVELS, Hierarchy, build_hierarchy
from .imagegraph import Image
from .kernels import KernelSpec
from .metrics import MetricReport, report
from .selection import ICConfig, PrunedPartition, prune
from .tokens import TokenSet, extract_tokens
from .vectorize import VectorDoc, vectorize


def _array(img) -> np.ndarray:
    x = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


@dataclass
class Tokenized:
    tokens: TokenSet
    hierarchy: Hierarchy
    pruned: PrunedPartition
    x_hat: np.ndarray
    reconstruction: np.ndarray  # piecewise-constant W f_* image


def partition(img, state: EncoderState, kernel: KernelSpec, ic: ICConfig, max_levels: int = MAX_LEVELS):
    """Encode, merge and prune; returns ``(f0, hierarchy, pruned)`` as arrays."""
    x = _array(img)
    h, w, _ = x.shape
    f0 = encode_tensor(x, state.config, state.tensors(requires_grad=False)).value.reshape(h * w, -1)
    hier = build_hierarchy(f0, (h, w), kernel, max_levels)
    pruned = prune(hier, x.reshape(h * w, -1) if ic.on_raw_pixels else f0, ic)
    return f0, hier, pruned


def tokenize(
    img,
    state: EncoderState,
    kernel: KernelSpec = KernelSpec(),
    ic: ICConfig = ICConfig(),
    q: int | None = None,
    p: int = 24,
    max_levels: int = MAX_LEVELS,
) -> Tokenized:
    """encode -> build_hierarchy -> prune -> mean_inject -> extract_tokens."""
    x = _array(img)
    if x.shape[2] != state.channels:
        raise ValueError(f"image has {x.shape[2]} channels, encoder expects {state.channels}")
    h, w, c = x.shape
    f0, hier, pruned = partition(x, state, kernel, ic, max_levels)
    fstar = region_features(ad.Tensor(f0), hier, pruned, kernel)
    proj = state.params["proj"]
    labels = pruned.labels.labels
    x_hat = mean_inject(x, labels, fstar, proj).value
    recon = predicted_means(labels, fstar, proj).value.reshape(h, w, c)
    tokens = extract_tokens(x_hat, pruned.labels, state, q=q, p=p)
    return Tokenized(tokens, hier, pruned, x_hat, recon)


def reconstruct(img, state: EncoderState, kernel: KernelSpec, ic: ICConfig, max_levels: int = MAX_LEVELS):
    """Piecewise-constant reconstruction ``W f_*(v)`` and the selected partition."""
    x = _array(img)
    fw = forward(x, state.config, state.tensors(requires_grad=False), kernel, ic, max_levels)
    rec = predicted_means(fw.pruned.labels.labels, fw.fstar, state.params["proj"]).value.reshape(x.shape)
    return rec, fw.pruned


def vectorize_image(
    img,
    state: EncoderState,
    kernel: KernelSpec = KernelSpec(),
    ic: ICConfig = ICConfig(),
    tol: float = 0.75,
    coarse_level: int | None = None,
    max_levels: int = MAX_LEVELS,
) -> VectorDoc:
    x = _array(img)
    _, hier, pruned = partition(x, state, kernel, ic, max_levels)
    return vectorize(x, hier, pruned, tol=tol, coarse_level=coarse_level)


# --------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class Cell:
    kernel: str
    d: int
    criterion: str
    gn_shape: float = 2.0

    @property
    def name(self) -> str:
        tag = f"{self.kernel}-d{self.d}-{self.criterion}"
        return tag + (f"-b{self.gn_shape:g}" if self.criterion == "GN" else "")

    def kernel_spec(self, sigma: float = 1.0) -> KernelSpec:
        return KernelSpec(self.kernel, sigma)

    def ic_config(self, df_scale: float = 1.0, on_raw_pixels: bool = False) -> ICConfig:
        return ICConfig(self.criterion, self.gn_shape, df_scale, on_raw_pixels)


def grid(kernels, dims, criteria, gn_shapes=(2.0,)) -> list[Cell]:
    cells = []
    for k, d, crit in itertools.product(kernels, dims, criteria):
        shapes = gn_shapes if crit == "GN" else (2.0,)
        cells.extend(Cell(k, int(d), crit, float(b)) for b in shapes)
    return cells


@dataclass(frozen=True)
class ImageScore:
    tokens: int
    metrics: MetricReport


def score_images(corpus, state, kernel, ic, max_levels=MAX_LEVELS, threads: int = 1) -> list[ImageScore]:
    """Reconstruction metrics per image, in corpus order."""

    def one(img):
        x = _array(img)
        rec, pruned = reconstruct(x, state, kernel, ic, max_levels)
        return ImageScore(pruned.region_count, report(x, rec))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, corpus))
    return [one(img) for img in corpus]


def cell_state(
    cell: Cell,
    corpus,
    hyper: TrainHyper | None,
    seed: int = 0,
    q: int = 16,
    max_levels: int = MAX_LEVELS,
    threads: int = 1,
    sigma: float = 1.0,
) -> EncoderState:
    """Encoder for a grid cell: trained on ``corpus`` or, with ``hyper=None``, the initialisation."""
    cfg = EncoderConfig(d=cell.d, seed=seed)
    channels = _array(corpus[0]).shape[2]
    if hyper is None:
        return init_state(cfg, channels, q)
    xs = [_array(im) for im in corpus]
    return train(xs, cfg, hyper, cell.kernel_spec(sigma), cell.ic_config(), max_levels, q=q, threads=threads).state


def summarize(scores: list[ImageScore]) -> dict:
    return {
        "tokens": float(np.mean([s.tokens for s in scores])),
        "mse": float(np.mean([s.metrics.mse for s in scores])),
        "psnr": float(np.mean([s.metrics.psnr for s in scores])),
        "ssim": float(np.mean([s.metrics.ssim for s in scores])),
    }
