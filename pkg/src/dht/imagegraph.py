"""Images, the 4-connected pixel grid graph, and region bookkeeping.

Pixel ``(r, c)`` has flat index ``r * w + c``.  All label maps are dense
``(h, w)`` integer arrays whose ids run ``0..R-1``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import png
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _sp_components

from ._segment import segment_sum

EPS_VAR = 1e-6
_INDEX_MAX = np.iinfo(np.int32).max


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


class InvalidPartition(ValueError):
    """Raised when a label map is not a connected, covering partition."""


@dataclass(frozen=True)
class Image:
    """A ``c``-channel raster with values in [0, 1], stored as ``(h, w, c)`` float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"image data must be (h, w, c), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


# --------------------------------------------------------------------------
# I/O


def _read_pnm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported PNM variant {magic!r}")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header") from exc
    if not 0 < maxval <= 65535:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    c = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = h * w * c
    body = raw[pos : pos + n * dtype.itemsize]
    if len(body) != n * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w, c)
    return arr.astype(np.float64) / maxval


def _read_png(path: str) -> np.ndarray:
    try:
        w, h, rows, info = png.Reader(filename=path).asDirect()
        arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    depth = info["bitdepth"]
    if depth not in (8, 16):
        raise ImageFormatError(f"{path}: unsupported bit depth {depth}")
    planes = info["planes"]
    arr = arr.reshape(h, w, planes).astype(np.float64) / (2**depth - 1)
    if info.get("alpha"):
        arr = arr[:, :, :-1]
    return arr


def load_image(path: str | os.PathLike) -> Image:
    """Read a PNG or binary PPM/PGM file, scaled to [0, 1]. Alpha is dropped."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageFormatError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        arr = _read_png(path)
    elif head[:2] in (b"P5", b"P6"):
        arr = _read_pnm(path)
    else:
        raise ImageFormatError(f"{path}: not a PNG or binary PNM file")
    return Image(arr)


def save_png(path: str | os.PathLike, arr: np.ndarray, bitdepth: int = 8) -> None:
    """Write an ``(h, w)`` or ``(h, w, c)`` array (floats in [0,1] or ints) as PNG."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ValueError("only 1- or 3-channel PNG output is supported")
    if np.issubdtype(arr.dtype, np.floating):
        arr = np.rint(np.clip(arr, 0, 1) * (2**bitdepth - 1))
    arr = arr.astype(np.uint16 if bitdepth == 16 else np.uint8)
    writer = png.Writer(w, h, greyscale=(c == 1), bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, arr.reshape(h, w * c).tolist())


def save_image(path: str | os.PathLike, img: Image) -> None:
    save_png(path, img.data)


def save_feature_dump(path: str | os.PathLike, feats: np.ndarray) -> None:
    """Flat little-endian float32 dump plus a ``<path>.json`` sidecar."""
    feats = np.asarray(feats)
    if feats.ndim == 2:
        feats = feats[:, :, None]
    h, w, c = feats.shape
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
    meta = {"h": h, "w": w, "c": c, "dtype": "float32", "order": "row-major"}
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_feature_dump(path: str | os.PathLike) -> np.ndarray:
    with open(os.fspath(path) + ".json") as fh:
        meta = json.load(fh)
    if meta.get("dtype") != "float32" or meta.get("order") != "row-major":
        raise ImageFormatError(f"{path}: unsupported dump layout {meta}")
    arr = np.fromfile(path, dtype="<f4")
    return arr.reshape(meta["h"], meta["w"], meta["c"])


# --------------------------------------------------------------------------
# Grid graph


def _grid_edges(h: int, w: int) -> np.ndarray:
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert], axis=0)


@dataclass(frozen=True)
class GridGraph:
    """Implicit 4-connected grid; edges are horizontal pairs then vertical pairs, row-major."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")
        if self.height * self.width > _INDEX_MAX:
            raise OverflowError("grid too large for 32-bit vertex ids")

    @property
    def n_vertices(self) -> int:
        return self.height * self.width

    @property
    def n_edges(self) -> int:
        h, w = self.height, self.width
        return h * (w - 1) + w * (h - 1)

    @cached_property
    def edges(self) -> np.ndarray:
        e = _grid_edges(self.height, self.width)
        e.setflags(write=False)
        return e

    def neighbors(self, v: int) -> list[int]:
        r, c = divmod(v, self.width)
        out = []
        if r > 0:
            out.append(v - self.width)
        if c > 0:
            out.append(v - 1)
        if c < self.width - 1:
            out.append(v + 1)
        if r < self.height - 1:
            out.append(v + self.width)
        return out


def grid_graph(h: int, w: int) -> GridGraph:
    return GridGraph(h, w)


# --------------------------------------------------------------------------
# Label maps


def compact_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel to ``0..R-1`` ordered by each region's smallest pixel index."""
    flat = np.asarray(labels).ravel()
    uniq, first, inv = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    return rank[inv].reshape(np.shape(labels)).astype(np.int32), len(uniq)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    region_count: int = field(default=-1)

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.ndim != 2:
            raise ValueError("labels must be 2-D")
        n = int(lab.max()) + 1 if self.region_count < 0 else self.region_count
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "region_count", n)

    @classmethod
    def from_array(cls, labels: np.ndarray) -> "LabelMap":
        lab, n = compact_labels(labels)
        return cls(lab, n)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def connected_region_count(labels: np.ndarray) -> int:
    """Number of 4-connected components of equal-label pixels."""
    labels = np.asarray(labels)
    h, w = labels.shape
    e = GridGraph(h, w).edges
    flat = labels.ravel()
    same = flat[e[:, 0]] == flat[e[:, 1]]
    e = e[same]
    n = h * w
    adj = coo_matrix((np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])), shape=(n, n))
    return int(_sp_components(adj, directed=False)[0])


def validate_partition(labels: np.ndarray) -> None:
    """Check dense ids, coverage and 4-connectivity of every region."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size == 0:
        raise InvalidPartition("label map must be a non-empty 2-D array")
    if labels.min() < 0:
        raise InvalidPartition("negative region id")
    n = int(labels.max()) + 1
    present = np.bincount(labels.ravel(), minlength=n)
    if np.any(present == 0):
        raise InvalidPartition("region ids are not dense")
    comps = connected_region_count(labels)
    if comps != n:
        raise InvalidPartition(f"{n} regions but {comps} connected pieces")


def is_valid_partition(labels: np.ndarray) -> bool:
    try:
        validate_partition(labels)
    except InvalidPartition:
        return False
    return True


# --------------------------------------------------------------------------
# Region statistics


@dataclass(frozen=True)
class RegionStats:
    count: np.ndarray  # (R,)
    sum: np.ndarray  # (R, d)
    sumsq: np.ndarray  # (R, d)
    mean: np.ndarray  # (R, d)
    var: np.ndarray  # (R, d), floored at eps_var
    vol: np.ndarray  # (R,) internal edge count
    bbox: np.ndarray  # (R, 4) row0, col0, row1, col1 (exclusive)

    @property
    def region_count(self) -> int:
        return len(self.count)


def internal_volume(labels: np.ndarray, n_regions: int | None = None) -> np.ndarray:
    """Per-region count of grid edges with both endpoints inside the region."""
    labels = np.asarray(labels)
    h, w = labels.shape
    flat = labels.ravel()
    e = GridGraph(h, w).edges
    a, b = flat[e[:, 0]], flat[e[:, 1]]
    n = int(flat.max()) + 1 if n_regions is None else n_regions
    return np.bincount(a[a == b], minlength=n).astype(np.int64)


def region_bboxes(labels: np.ndarray, n_regions: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    h, w = labels.shape
    flat = labels.ravel()
    n = int(flat.max()) + 1 if n_regions is None else n_regions
    rows, cols = np.divmod(np.arange(h * w), w)
    bbox = np.empty((n, 4), dtype=np.int64)
    bbox[:, 0] = h
    bbox[:, 1] = w
    bbox[:, 2] = 0
    bbox[:, 3] = 0
    np.minimum.at(bbox[:, 0], flat, rows)
    np.minimum.at(bbox[:, 1], flat, cols)
    np.maximum.at(bbox[:, 2], flat, rows + 1)
    np.maximum.at(bbox[:, 3], flat, cols + 1)
    return bbox


def region_stats(labels: np.ndarray | LabelMap, feats: np.ndarray, eps_var: float = EPS_VAR) -> RegionStats:
    """Pixel count, mean, floored per-channel variance, volume and bbox per region."""
    if isinstance(labels, LabelMap):
        n = labels.region_count
        labels = labels.labels
    else:
        labels = np.asarray(labels)
        n = int(labels.max()) + 1
    h, w = labels.shape
    feats = np.asarray(feats, dtype=np.float64).reshape(h * w, -1)
    flat = labels.ravel()
    if flat.min() < 0 or flat.max() >= n:
        raise IndexError("label id out of range")
    count = np.bincount(flat, minlength=n).astype(np.float64)
    sums = segment_sum(feats, flat, n)
    sumsq = segment_sum(feats * feats, flat, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / count[:, None]
    # two-pass variance; E[f^2]-E[f]^2 cancels badly on near-constant regions
    dev = feats - mean[flat]
    m2 = segment_sum(dev * dev, flat, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.maximum(m2 / count[:, None], eps_var)
    return RegionStats(
        count=count.astype(np.int64),
        sum=sums,
        sumsq=sumsq,
        mean=mean,
        var=var,
        vol=internal_volume(labels, n),
        bbox=region_bboxes(labels, n),
    )
