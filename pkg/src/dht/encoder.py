"""Pixel encoder, mean injection, reconstruction loss and tokenizer pretraining.

The discrete structure of a forward pass (merge picks, components, the
pruned cut) is computed from primal values and then held fixed; gradients
flow through the encoder, the kernel weights of every merge, the projection
``W`` and, for token features, the blend ``lambda`` and background ``beta``.
"""
from __future__ import annotations

import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hierarchy import MAX_LEVELS, Hierarchy, build_hierarchy
from .imagegraph import Image
from .kernels import KernelSpec
from .selection import ICConfig, PrunedPartition, prune

log = logging.getLogger(__name__)

DOWNSAMPLE = 4
CKPT_MAGIC = b"DHTCKPT\x00"
CKPT_VERSION = 1
DECAYED = ("res_w", "conv1_w", "conv2_w", "proj")


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 8
    arch: str = "conv"  # "conv" or "linear"
    conv_kernel: int = 3  # 3 (padded) or 2, both stride 2
    relu: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("feature dimension must be >= 1")
        if self.arch not in ("conv", "linear"):
            raise ValueError(f"unknown encoder arch {self.arch!r}")
        if self.conv_kernel not in (2, 3):
            raise ValueError("conv_kernel must be 2 or 3")


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    epochs: int = 10
    batch: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class EncoderState:
    """Learnable parameters plus AdamW moments."""

    config: EncoderConfig
    channels: int
    q: int
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epochs_done: int = 0

    def copy(self) -> "EncoderState":
        return EncoderState(
            self.config,
            self.channels,
            self.q,
            {k: a.copy() for k, a in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
            self.epochs_done,
        )

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(a.copy(), requires_grad=requires_grad, name=k) for k, a in self.params.items()}

    @property
    def lam(self) -> float:
        return float(np.clip(self.params["lam"], 0.0, 1.0))


def init_state(cfg: EncoderConfig, channels: int, q: int = 16) -> EncoderState:
    """Kaiming-uniform convs, zero biases, ``W`` the pseudo-inverse of the residual lift."""
    rng = np.random.default_rng(cfg.seed)
    c, d, k = channels, cfg.d, cfg.conv_kernel

    def kaiming(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    res_w = kaiming((d, c), c)
    params = {
        "res_w": res_w,
        "res_b": np.zeros(d),
        "conv1_w": kaiming((d, c, k, k), c * k * k),
        "conv1_b": np.zeros(d),
        "conv2_w": kaiming((d, d, k, k), d * k * k),
        "conv2_b": np.zeros(d),
        "proj": np.linalg.pinv(res_w),  # (c, d); proj @ res_w == I when d >= c
        "lam": np.array(0.5),
        "beta": np.zeros((c, q, q)),
    }
    return EncoderState(cfg, channels, q, params)


# --------------------------------------------------------------------------
# forward pieces


def encode_tensor(x, cfg: EncoderConfig, params: dict[str, Tensor]) -> Tensor:
    """``(h, w, c)`` image -> ``(h, w, d)`` features on the tape."""
    x = ad.as_tensor(x)
    h, w = x.shape[:2]
    res = ad.linear(x, params["res_w"], params["res_b"])
    if cfg.arch == "linear":
        return res
    if h < DOWNSAMPLE or w < DOWNSAMPLE:
        log.warning("image %dx%d below downsampling factor; using residual branch only", h, w)
        return res
    pad = 1 if cfg.conv_kernel == 3 else 0
    z = ad.conv2d(ad.pad_edge(x, pad), params["conv1_w"], params["conv1_b"], stride=2)
    if cfg.relu:
        z = ad.relu(z)
    z = ad.conv2d(ad.pad_edge(z, pad), params["conv2_w"], params["conv2_b"], stride=2)
    return res + ad.resize_bilinear(z, h, w)


def encode(img: Image | np.ndarray, cfg: EncoderConfig, state: EncoderState) -> np.ndarray:
    x = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return encode_tensor(x, cfg, state.tensors(requires_grad=False)).value


def replay_features(f0: Tensor, hier: Hierarchy, upto: int, spec: KernelSpec, sigma=None) -> list[Tensor]:
    """Recompute level features ``0..upto`` on the tape with the recorded merge structure."""
    feats = [f0]
    for t in range(upto):
        lv, nxt = hier.levels[t], hier.levels[t + 1]
        f = feats[-1]
        k = ad.kernel(spec, f, ad.gather_rows(f, lv.picks), sigma)
        ratio = lv.sizes / nxt.sizes[lv.parent]
        w = ad.reshape(ad.mul(ratio, k), (-1, 1))
        feats.append(ad.segment_sum(ad.mul(w, f), lv.parent, nxt.region_count))
    return feats


def region_features(f0: Tensor, hier: Hierarchy, pruned: PrunedPartition, spec: KernelSpec, sigma=None) -> Tensor:
    """``(R, d)`` features of the pruned regions, differentiable w.r.t. ``f0``."""
    upto = int(pruned.level.max())
    feats = replay_features(f0, hier, upto, spec, sigma)
    pieces, order = [], []
    for t in np.unique(pruned.level):
        sel = np.flatnonzero(pruned.level == t)
        pieces.append(ad.gather_rows(feats[t], pruned.node[sel]))
        order.append(sel)
    order = np.concatenate(order)
    cat = pieces[0] if len(pieces) == 1 else _concat(pieces)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return ad.gather_rows(cat, inv)


def _concat(pieces: list[Tensor]) -> Tensor:
    sizes = [p.shape[0] for p in pieces]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return [g[bounds[i] : bounds[i + 1]] for i in range(len(pieces))]

    return ad._node(np.concatenate([p.value for p in pieces]), pieces, back)


def region_means(x: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    from ._segment import segment_sum

    flat = labels.ravel()
    xs = x.reshape(len(flat), -1)
    return segment_sum(xs, flat, n) / np.bincount(flat, minlength=n)[:, None]


def predicted_means(labels: np.ndarray, fstar: Tensor, proj) -> Tensor:
    """``W f_*(v)`` for every pixel, ``(h*w, c)``."""
    return ad.linear(ad.gather_rows(fstar, labels.ravel()), proj)


def mean_inject(x, labels: np.ndarray, fstar, proj) -> Tensor:
    """``x + (W f_* - mean_S x)`` per pixel; the region mean is a detached constant."""
    x = np.asarray(ad.value(x))
    h, w, c = x.shape
    labels = np.asarray(labels)
    n = int(labels.max()) + 1
    fstar = ad.as_tensor(fstar)
    if fstar.shape[0] != n:
        raise ValueError(f"{n} regions but {fstar.shape[0]} feature vectors")
    xbar = region_means(x, labels, n)[labels.ravel()]
    shift = ad.sub(predicted_means(labels, fstar, proj), xbar)
    return ad.reshape(ad.add(x.reshape(h * w, c), shift), (h, w, c))


def reconstruction_loss(x, labels: np.ndarray, fstar, proj) -> Tensor:
    """``(1/|V|) sum_v ||x(v) - W f_*(v)||^2``."""
    x = np.asarray(ad.value(x))
    h, w, c = x.shape
    pred = predicted_means(labels, ad.as_tensor(fstar), proj)
    return ad.mul(ad.sum_all(ad.square(ad.sub(x.reshape(h * w, c), pred))), 1.0 / (h * w))


# --------------------------------------------------------------------------
# full differentiable pass


@dataclass
class Forward:
    x: np.ndarray
    f0: Tensor
    hierarchy: Hierarchy
    pruned: PrunedPartition
    fstar: Tensor
    loss: Tensor

    @property
    def structure(self) -> tuple[Hierarchy, PrunedPartition]:
        return self.hierarchy, self.pruned


def forward(
    x: np.ndarray,
    enc: EncoderConfig,
    params: dict[str, Tensor],
    kernel: KernelSpec,
    ic: ICConfig,
    max_levels: int = MAX_LEVELS,
    sigma=None,
    structure: tuple[Hierarchy, PrunedPartition] | None = None,
) -> Forward:
    """Encode, merge, prune and score reconstruction.

    Pass ``structure`` to reuse a previous hierarchy and cut (as finite
    difference checks do); otherwise it is rebuilt from the primal features.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w, _ = x.shape
    f0 = ad.reshape(encode_tensor(x, enc, params), (h * w, -1))
    if structure is None:
        spec = kernel if sigma is None else KernelSpec(kernel.kind, float(ad.value(sigma)))
        hier = build_hierarchy(f0.value, (h, w), spec, max_levels)
        ic_feats = x.reshape(h * w, -1) if ic.on_raw_pixels else f0.value
        pruned = prune(hier, ic_feats, ic)
    else:
        hier, pruned = structure
    fstar = region_features(f0, hier, pruned, kernel, sigma)
    loss = reconstruction_loss(x, pruned.labels.labels, fstar, params["proj"])
    return Forward(x, f0, hier, pruned, fstar, loss)


# --------------------------------------------------------------------------
# training


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, state: EncoderState):
        super().__init__(msg)
        self.state = state


@dataclass
class TrainResult:
    state: EncoderState
    epoch_losses: list[float]
    step_losses: list[float]


def _image_grad(x, state, kernel, ic, max_levels):
    params = state.tensors()
    fw = forward(x, state.config, params, kernel, ic, max_levels)
    fw.loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in params.items()}
    return float(fw.loss.value), grads


def adamw_step(state: EncoderState, grads: dict[str, np.ndarray], hyper: TrainHyper) -> None:
    b1, b2 = hyper.betas
    state.step += 1
    t = state.step
    for k, p in state.params.items():
        g = grads[k]
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        if k in DECAYED:
            p = p - hyper.lr * hyper.weight_decay * p
        state.params[k] = p - hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)
    state.params["lam"] = np.clip(state.params["lam"], 0.0, 1.0)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(
    corpus: list[np.ndarray],
    cfg: EncoderConfig,
    hyper: TrainHyper = TrainHyper(),
    kernel: KernelSpec = KernelSpec(),
    ic: ICConfig = ICConfig(),
    max_levels: int = MAX_LEVELS,
    state: EncoderState | None = None,
    q: int = 16,
    threads: int = 1,
    max_steps: int | None = None,
    on_epoch=None,
) -> TrainResult:
    """Pretrain encoder and projection on reconstruction with AdamW.

    Training resumes from ``state.epochs_done`` when a state is given.  The
    batch gradient is the mean of per-image gradients, reduced in corpus
    order so results do not depend on ``threads``.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    corpus = [np.asarray(c.data if isinstance(c, Image) else c, dtype=np.float64) for c in corpus]
    channels = corpus[0].shape[2]
    if any(c.shape[2] != channels for c in corpus):
        raise ValueError("all training images must share a channel count")
    state = state.copy() if state is not None else init_state(cfg, channels, q)
    epoch_losses: list[float] = []
    step_losses: list[float] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(state.epochs_done, hyper.epochs):
            order = epoch_order(len(corpus), cfg.seed, epoch)
            seen = []
            for start in range(0, len(order), hyper.batch):
                if max_steps is not None and len(step_losses) >= max_steps:
                    break
                batch = [corpus[i] for i in order[start : start + hyper.batch]]
                job = lambda x: _image_grad(x, state, kernel, ic, max_levels)  # noqa: E731
                results = list(pool.map(job, batch)) if pool else [job(x) for x in batch]
                losses = [r[0] for r in results]
                if not all(np.isfinite(losses)):
                    raise TrainingDiverged(f"non-finite loss at step {state.step}", state.copy())
                grads = {k: sum(r[1][k] for r in results) / len(results) for k in state.params}
                adamw_step(state, grads, hyper)
                step_losses.append(float(np.mean(losses)))
                seen.extend(losses)
            state.epochs_done = epoch + 1
            epoch_losses.append(float(np.mean(seen)) if seen else float("nan"))
            if on_epoch is not None:
                on_epoch(epoch, epoch_losses[-1], state)
            if max_steps is not None and len(step_losses) >= max_steps:
                break
    finally:
        if pool:
            pool.shutdown()
    return TrainResult(state, epoch_losses, step_losses)


def mean_loss(
    corpus, state: EncoderState, kernel: KernelSpec, ic: ICConfig, max_levels: int = MAX_LEVELS
) -> float:
    params = state.tensors(requires_grad=False)
    vals = []
    for x in corpus:
        x = np.asarray(x.data if isinstance(x, Image) else x, dtype=np.float64)
        vals.append(float(forward(x, state.config, params, kernel, ic, max_levels).loss.value))
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: EncoderState, extra: dict | None = None) -> None:
    """Versioned binary: magic, header length, JSON header, float64 LE blob."""
    entries, blobs, offset = [], [], 0
    for group, arrays in (("param", state.params), ("m", state.m), ("v", state.v)):
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype="<f8", order="C")
            entries.append({"group": group, "name": name, "shape": list(a.shape), "offset": offset})
            blobs.append(a.tobytes())
            offset += a.nbytes
    header = {
        "version": CKPT_VERSION,
        "encoder": asdict(state.config),
        "channels": state.channels,
        "q": state.q,
        "step": state.step,
        "epochs_done": state.epochs_done,
        "arrays": entries,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[EncoderState, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{os.fspath(path)}: not a tokenizer checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    blob = raw[16 + hlen :]
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        groups[e["group"]][e["name"]] = a.astype(np.float64)
    cfg = EncoderConfig(**header["encoder"])
    state = EncoderState(
        cfg,
        header["channels"],
        header["q"],
        groups["param"],
        groups["m"],
        groups["v"],
        header["step"],
        header["epochs_done"],
    )
    return state, header["extra"]
