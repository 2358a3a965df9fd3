"""Hierarchical vertex merging on the pixel grid.

Each level pairs every region with its most similar neighbour, contracts the
connected components of those picks, and aggregates features with
kernel-weighted sums.  Level 0 is the pixel partition; construction stops at
a single region or after ``max_levels`` contractions.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from ._segment import segment_sum
from .imagegraph import GridGraph
from .kernels import KernelSpec, kernel_eval

MAX_LEVELS = 64
HIER_MAGIC = b"DHTHIER\x00"
HIER_VERSION = 1


@dataclass(frozen=True)
class MergeLevel:
    """One partition of the hierarchy.

    ``picks``, ``pick_weights`` and ``parent`` describe the contraction to the
    next level and are ``None`` on the top level.
    """

    labels: np.ndarray  # (h, w) pixel -> region id
    features: np.ndarray  # (R, d)
    sizes: np.ndarray  # (R,) pixel counts
    edges: np.ndarray  # (E_t, 2) unique region pairs, u < v
    picks: np.ndarray | None = None
    pick_weights: np.ndarray | None = None
    parent: np.ndarray | None = None

    @property
    def region_count(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class Hierarchy:
    levels: tuple[MergeLevel, ...]
    kernel: KernelSpec
    shape: tuple[int, int]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, t: int) -> MergeLevel:
        return self.levels[t]

    @property
    def region_counts(self) -> list[int]:
        return [lv.region_count for lv in self.levels]


def argmax_neighbors(level: MergeLevel, spec: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Most similar neighbour of every region and its kernel score.

    Ties go to the smallest neighbour id.
    """
    n = level.region_count
    e = level.edges
    if len(e) == 0:
        raise RuntimeError("argmax over an empty edge set")
    f = level.features
    score = kernel_eval(spec, f[e[:, 0]], f[e[:, 1]])
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    sc = np.concatenate([score, score])
    order = np.lexsort((dst, -sc, src))
    src, dst, sc = src[order], dst[order], sc[order]
    first = np.ones(len(src), dtype=bool)
    first[1:] = src[1:] != src[:-1]
    if first.sum() != n:
        raise RuntimeError("isolated region in merge graph")
    return dst[first], sc[first]


def connected_components(edges: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Components of the undirected closure of ``edges`` over ``n`` vertices.

    Union-find by parallel hooking (every root is hooked onto the smaller
    root across each edge) and pointer jumping.  Roots end up as the
    smallest member id, so compacted labels are ordered by smallest member.
    """
    parent = np.arange(n, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    while True:
        pu, pv = parent[u], parent[v]
        lo, hi = np.minimum(pu, pv), np.maximum(pu, pv)
        live = lo != hi
        if not live.any():
            break
        np.minimum.at(parent, hi[live], lo[live])
        while True:
            nxt = parent[parent]
            if np.array_equal(nxt, parent):
                break
            parent = nxt
    roots, labels = np.unique(parent, return_inverse=True)
    return labels.astype(np.int64), len(roots)


def contract_edges(edges: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    e = mapping[edges]
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


def aggregate(
    features: np.ndarray,
    sizes: np.ndarray,
    picks: np.ndarray,
    parent: np.ndarray,
    n_next: int,
    spec: KernelSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-weighted feature update for the contracted level.

    ``f'[S] = sum_{u in S} (|u| / |S|) * k(f[u], f[pick(u)]) * f[u]``; the
    weights are deliberately not renormalised.
    """
    next_sizes = np.bincount(parent, weights=sizes, minlength=n_next)
    k = kernel_eval(spec, features, features[picks])
    w = sizes / next_sizes[parent] * k
    return segment_sum(w[:, None] * features, parent, n_next), next_sizes


def merge_step(level: MergeLevel, spec: KernelSpec) -> tuple[MergeLevel, MergeLevel]:
    """Contract one level.  Returns ``(level annotated with picks/parent, next level)``."""
    if level.region_count < 2:
        raise ValueError("cannot merge a single-region level")
    picks, weights = argmax_neighbors(level, spec)
    n = level.region_count
    pick_edges = np.stack([np.arange(n), picks], axis=1)
    parent, n_next = connected_components(pick_edges, n)
    feats, next_sizes = aggregate(level.features, level.sizes, picks, parent, n_next, spec)
    nxt = MergeLevel(
        labels=parent[level.labels],
        features=feats,
        sizes=next_sizes,
        edges=contract_edges(level.edges, parent),
    )
    done = dataclasses.replace(level, picks=picks, pick_weights=weights, parent=parent)
    return done, nxt


def pixel_level(f0: np.ndarray, shape: tuple[int, int]) -> MergeLevel:
    h, w = shape
    feats = np.asarray(f0, dtype=np.float64).reshape(h * w, -1)
    return MergeLevel(
        labels=np.arange(h * w, dtype=np.int64).reshape(h, w),
        features=feats,
        sizes=np.ones(h * w),
        edges=np.asarray(GridGraph(h, w).edges, dtype=np.int64),
    )


def build_hierarchy(
    f0: np.ndarray,
    shape: tuple[int, int] | None = None,
    spec: KernelSpec | None = None,
    max_levels: int = MAX_LEVELS,
) -> Hierarchy:
    """Merge from pixels up to a single region (or ``max_levels`` contractions).

    ``f0`` is ``(h, w, d)``, or ``(h*w, d)`` together with ``shape``.
    """
    spec = spec or KernelSpec()
    if shape is None:
        shape = f0.shape[:2]
    shape = (int(shape[0]), int(shape[1]))
    level = pixel_level(f0, shape)
    levels = []
    while level.region_count > 1 and len(levels) < max_levels:
        done, level = merge_step(level, spec)
        levels.append(done)
    levels.append(level)
    truncated = level.region_count > 1
    return Hierarchy(tuple(levels), spec, shape, truncated)


# --------------------------------------------------------------------------
# dump format: magic, then raw little-endian arrays; layout in ``path.json``

_DUMP_FIELDS = (
    ("labels", "<i4"),
    ("features", "<f8"),
    ("sizes", "<f8"),
    ("edges", "<i4"),
    ("picks", "<i4"),
    ("pick_weights", "<f8"),
    ("parent", "<i4"),
)


def save_hierarchy(path, hier: Hierarchy) -> None:
    """Binary dump of every level plus a JSON manifest describing the layout."""
    entries, offset = [], len(HIER_MAGIC)
    with open(path, "wb") as fh:
        fh.write(HIER_MAGIC)
        for t, lv in enumerate(hier.levels):
            for name, dtype in _DUMP_FIELDS:
                a = getattr(lv, name)
                if a is None:
                    continue
                a = np.ascontiguousarray(a, dtype=dtype)
                fh.write(a.tobytes())
                entries.append({"level": t, "field": name, "dtype": dtype, "shape": list(a.shape), "offset": offset})
                offset += a.nbytes
    manifest = {
        "version": HIER_VERSION,
        "height": hier.shape[0],
        "width": hier.shape[1],
        "kernel": {"kind": hier.kernel.kind, "sigma": hier.kernel.sigma},
        "truncated": hier.truncated,
        "region_counts": hier.region_counts,
        "arrays": entries,
    }
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_hierarchy(path) -> Hierarchy:
    with open(os.fspath(path) + ".json") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != HIER_VERSION:
        raise ValueError(f"unsupported hierarchy dump version {manifest.get('version')}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(HIER_MAGIC)] != HIER_MAGIC:
        raise ValueError(f"{os.fspath(path)}: not a hierarchy dump")
    per_level: dict[int, dict] = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype=e["dtype"], count=n, offset=e["offset"]).reshape(e["shape"])
        per_level.setdefault(e["level"], {})[e["field"]] = a.astype(np.float64 if e["dtype"] == "<f8" else np.int64)
    levels = tuple(MergeLevel(**per_level[t]) for t in range(len(per_level)))
    k = manifest["kernel"]
    return Hierarchy(levels, KernelSpec(k["kind"], k["sigma"]), (manifest["height"], manifest["width"]), manifest["truncated"])
