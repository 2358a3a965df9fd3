"""ViT-compatible token features for irregular regions.

Each region's bounding box is resampled to ``q x q``; pixels outside the
region are blended towards a shared background patch ``beta`` through
``lambda``.  Positions are encoded as bilinearly splatted 2-D histograms of
the region's pixel coordinates over the whole image.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imagegraph import LabelMap, region_bboxes
from .resample import resize

TOKEN_MAGIC = b"DHTTOK\x00\x00"
TOKEN_VERSION = 1


@dataclass(frozen=True)
class TokenSet:
    features: np.ndarray  # (N, c, q, q)
    positions: np.ndarray  # (N, p, p)
    region_ids: np.ndarray  # (N,)
    pixel_counts: np.ndarray  # (N,)
    bboxes: np.ndarray  # (N, 4) row0, col0, row1, col1
    q: int
    p: int

    def __len__(self) -> int:
        return len(self.region_ids)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


def _labels(labels) -> np.ndarray:
    return labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)


def foreground_mask(labels: np.ndarray, region: int, bbox, q: int) -> np.ndarray:
    """Soft ``q x q`` mask: bilinear resample of the region indicator over its bbox."""
    r0, c0, r1, c1 = bbox
    ind = (labels[r0:r1, c0:c1] == region).astype(np.float64)
    return resize(ind, q, q)


def token_features(x_hat, labels, lam, beta, q: int) -> Tensor:
    """``(N, c, q, q)`` blended features ``(M+ + lam M-) x_hat + (1 - lam) M- beta``.

    ``lam`` is clamped to [0, 1] at use; ``beta`` is ``(c, q, q)``.
    """
    x_hat = ad.as_tensor(x_hat)
    labels = _labels(labels)
    n = int(labels.max()) + 1
    bboxes = region_bboxes(labels, n)
    lam = ad.clamp(ad.as_tensor(lam), 0.0, 1.0)
    beta_hwc = ad.transpose(ad.as_tensor(beta), (1, 2, 0))
    one_minus = ad.sub(1.0, lam)
    toks = []
    for rid in range(n):
        r0, c0, r1, c1 = bboxes[rid]
        crop = ad.index(x_hat, (slice(r0, r1), slice(c0, c1)))
        s = ad.resize_bilinear(crop, q, q)
        m_fg = foreground_mask(labels, rid, bboxes[rid], q)
        m_bg = (1.0 - m_fg)[:, :, None]
        a = ad.add(m_fg[:, :, None], ad.mul(lam, m_bg))
        f = ad.add(ad.mul(a, s), ad.mul(ad.mul(one_minus, m_bg), beta_hwc))
        toks.append(ad.transpose(f, (2, 0, 1)))
    return ad.stack(toks, axis=0)


def positional_histograms(labels, p: int) -> np.ndarray:
    """``(R, p, p)`` normalised coordinate histograms with bilinear bin sharing.

    Coordinates are pixel centres normalised to the full image; mass falling
    outside the outer bin centres folds into the edge bins.
    """
    labels = _labels(labels)
    h, w = labels.shape
    n = int(labels.max()) + 1
    flat = labels.ravel()

    def axis_weights(size):
        u = (np.arange(size) + 0.5) / size * p - 0.5
        i0 = np.floor(u).astype(np.int64)
        f = u - i0
        return np.clip(i0, 0, p - 1), np.clip(i0 + 1, 0, p - 1), 1.0 - f, f

    ra, rb, rwa, rwb = axis_weights(h)
    ca, cb, cwa, cwb = axis_weights(w)
    rows, cols = np.divmod(np.arange(h * w), w)
    hist = np.zeros(n * p * p)
    for rbin, rw in ((ra, rwa), (rb, rwb)):
        for cbin, cw in ((ca, cwa), (cb, cwb)):
            key = (flat * p + rbin[rows]) * p + cbin[cols]
            hist += np.bincount(key, weights=rw[rows] * cw[cols], minlength=n * p * p)
    hist = hist.reshape(n, p, p)
    return hist / hist.sum(axis=(1, 2), keepdims=True)


def positional_histogram(labels, region: int, p: int) -> np.ndarray:
    """Histogram of a single region (see :func:`positional_histograms`)."""
    labels = _labels(labels)
    if not (labels == region).any():
        raise ValueError(f"region {region} is empty")
    return positional_histograms(np.where(labels == region, 0, 1), p)[0]


def extract_tokens(x_hat, labels, state, q: int | None = None, p: int = 24) -> TokenSet:
    """Token features and positions for every region of ``labels``.

    ``lambda`` and ``beta`` come from the encoder ``state``; ``q`` defaults to
    the background patch size stored there.
    """
    beta = state.params["beta"]
    q = beta.shape[1] if q is None else q
    if q < 1 or p < 1:
        raise ValueError("q and p must be positive")
    if beta.shape[1:] != (q, q):
        raise ValueError(f"state holds a {beta.shape[1]}x{beta.shape[2]} background patch, q={q} requested")
    lab = _labels(labels)
    n = int(lab.max()) + 1
    feats = token_features(x_hat, lab, state.params["lam"], beta, q)
    return TokenSet(
        features=feats.value,
        positions=positional_histograms(lab, p),
        region_ids=np.arange(n),
        pixel_counts=np.bincount(lab.ravel(), minlength=n),
        bboxes=region_bboxes(lab, n),
        q=q,
        p=p,
    )


# --------------------------------------------------------------------------
# serialization


def token_dump(tokens: TokenSet, path) -> None:
    """Binary ``path`` (header, float32 F, float32 P) and JSON manifest ``path.json``."""
    n, c, q = len(tokens), tokens.channels, tokens.q
    p = tokens.p
    with open(path, "wb") as fh:
        fh.write(TOKEN_MAGIC)
        fh.write(struct.pack("<5I", TOKEN_VERSION, n, c, q, p))
        fh.write(np.ascontiguousarray(tokens.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(tokens.positions, dtype="<f4").tobytes())
    manifest = {
        "version": TOKEN_VERSION,
        "count": n,
        "channels": c,
        "q": q,
        "p": p,
        "regions": [
            {"id": int(r), "pixels": int(k), "bbox": [int(v) for v in b]}
            for r, k, b in zip(tokens.region_ids, tokens.pixel_counts, tokens.bboxes)
        ],
    }
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def token_load(path) -> TokenSet:
    with open(os.fspath(path) + ".json") as fh:
        manifest = json.load(fh)
    if not manifest or not manifest.get("count") or not manifest.get("regions"):
        raise ValueError(f"{os.fspath(path)}: empty token manifest")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != TOKEN_MAGIC:
        raise ValueError(f"{os.fspath(path)}: not a token file")
    version, n, c, q, p = struct.unpack("<5I", raw[8:28])
    if version != TOKEN_VERSION:
        raise ValueError(f"unsupported token file version {version}")
    if n != manifest["count"] or len(manifest["regions"]) != n:
        raise ValueError("token count in manifest does not match the binary")
    nf = n * c * q * q
    feats = np.frombuffer(raw, dtype="<f4", count=nf, offset=28).reshape(n, c, q, q)
    pos = np.frombuffer(raw, dtype="<f4", count=n * p * p, offset=28 + 4 * nf).reshape(n, p, p)
    regions = manifest["regions"]
    return TokenSet(
        features=feats.copy(),
        positions=pos.copy(),
        region_ids=np.array([r["id"] for r in regions]),
        pixel_counts=np.array([r["pixels"] for r in regions]),
        bboxes=np.array([r["bbox"] for r in regions]),
        q=q,
        p=p,
    )
