"""Information-criterion pruning of a merge hierarchy.

Every node of the merge forest (a region at some level) is scored with
``-2 log L + g(df)`` over the pixel features it covers, and a bottom-up pass
keeps a node whenever its own score does not exceed the best cut of its
subtree.  The resulting antichain is the selected partition.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._segment import segment_sum
from .hierarchy import Hierarchy
from .imagegraph import EPS_VAR, LabelMap, compact_labels, internal_volume, region_bboxes, save_png

CRITERIA = ("AIC", "AICC", "BIC", "GN")
EPS_AICC = 0.5
LOG_2PI_E = np.log(2 * np.pi * np.e)


@dataclass(frozen=True)
class ICConfig:
    criterion: str = "AICC"
    gn_shape: float = 2.0
    df_scale: float = 1.0
    on_raw_pixels: bool = False

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if not self.gn_shape > 0:
            raise ValueError("generalized-normal shape must be positive")
        if not self.df_scale > 0:
            raise ValueError("df_scale must be positive")

    @property
    def shape(self) -> float:
        """Residual shape parameter actually used by the likelihood."""
        return self.gn_shape if self.criterion == "GN" else 2.0


@dataclass(frozen=True)
class PrunedPartition:
    labels: LabelMap
    level: np.ndarray  # (R,) hierarchy level each region was taken from
    node: np.ndarray  # (R,) region id within that level
    ic: np.ndarray  # (R,) per-region IC contribution
    total_ic: float
    features: np.ndarray  # (R, d) hierarchy features of the chosen nodes

    @property
    def region_count(self) -> int:
        return len(self.level)


def _gn_min_scale(b: float, eps_var: float = EPS_VAR) -> float:
    # scale of a generalized normal whose variance equals eps_var
    return float(np.sqrt(eps_var * np.exp(gammaln(1 / b) - gammaln(3 / b))))


def region_neg2loglik(count, var, b: float = 2.0, abs_moment=None, eps_var: float = EPS_VAR):
    """``-2 log L`` of a region under a diagonal per-channel model.

    ``count`` is ``(R,)`` and ``var`` ``(R, d)`` (already floored).  For
    ``b == 2`` this is the Gaussian ``|S| (d log(2 pi e) + sum log var)``.
    Other shapes need ``abs_moment`` (``(R, d)``, the mean of ``|f - mean|**b``),
    from which the generalized-normal scale is fitted by moment matching.
    """
    count = np.asarray(count, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if b == 2.0 and abs_moment is None:
        d = var.shape[-1]
        return count * (d * LOG_2PI_E + np.sum(np.log(var), axis=-1))
    if abs_moment is None:
        raise ValueError("non-Gaussian shape needs the absolute residual moment")
    scale = np.maximum((b * np.asarray(abs_moment)) ** (1.0 / b), _gn_min_scale(b, eps_var))
    per_ch = 2.0 * (np.log(2.0 * scale / b) + gammaln(1.0 / b)) + 2.0 / b
    return count * np.sum(per_ch, axis=-1)


def region_df(vol, total_edges: int, df_scale: float = 1.0):
    """Degrees of freedom ``|E| / (Vol + 1)``; larger regions cost less."""
    return df_scale * total_edges / (np.asarray(vol, dtype=np.float64) + 1.0)


def ic_penalty(df, count, criterion: str):
    df = np.asarray(df, dtype=np.float64)
    count = np.asarray(count, dtype=np.float64)
    if criterion == "AIC":
        return 2.0 * df
    if criterion == "BIC":
        return df * np.log(count)
    if criterion in ("AICC", "GN"):
        return 2.0 * df + 2.0 * df * (df + 1.0) / np.maximum(count - df - 1.0, EPS_AICC)
    raise ValueError(f"unknown criterion {criterion!r}")


def region_ic(count, var, vol, cfg: ICConfig, total_edges: int, abs_moment=None):
    nll = region_neg2loglik(count, var, cfg.shape, abs_moment if cfg.shape != 2.0 else None)
    return nll + ic_penalty(region_df(vol, total_edges, cfg.df_scale), count, cfg.criterion)


def _level_ic(labels, n, f0, cfg: ICConfig, total_edges: int):
    flat = labels.ravel()
    count = np.bincount(flat, minlength=n).astype(np.float64)
    mean = segment_sum(f0, flat, n) / count[:, None]
    dev = f0 - mean[flat]
    var = np.maximum(segment_sum(dev * dev, flat, n) / count[:, None], EPS_VAR)
    vol = internal_volume(labels, n)
    b = cfg.shape
    absm = None
    if b != 2.0:
        absm = segment_sum(np.abs(dev) ** b, flat, n) / count[:, None]
    return region_ic(count, var, vol, cfg, total_edges, absm)


def node_ic_table(hier: Hierarchy, f0: np.ndarray, cfg: ICConfig) -> list[np.ndarray]:
    """IC of every node, level by level, computed over the pixel features ``f0``."""
    h, w = hier.shape
    f0 = np.asarray(f0, dtype=np.float64).reshape(h * w, -1)
    total_edges = h * (w - 1) + w * (h - 1)
    return [_level_ic(lv.labels, lv.region_count, f0, cfg, total_edges) for lv in hier.levels]


def prune(hier: Hierarchy, f0: np.ndarray, cfg: ICConfig | None = None) -> PrunedPartition:
    """Minimum-IC cut of the merge forest by bottom-up dynamic programming.

    Ties keep the coarser node.
    """
    cfg = cfg or ICConfig()
    levels = hier.levels
    ics = node_ic_table(hier, f0, cfg)
    T = len(levels)

    cost = ics[0]
    choose = [np.ones(levels[0].region_count, dtype=bool)]
    for t in range(1, T):
        child = segment_sum(cost, levels[t - 1].parent, levels[t].region_count)
        keep = ics[t] <= child
        choose.append(keep)
        cost = np.where(keep, ics[t], child)

    # walk down from the roots; a node is selected if active and kept
    h, w = hier.shape
    node_key = np.full(h * w, -1, dtype=np.int64)
    offsets = np.cumsum([0] + [lv.region_count for lv in levels])
    active = np.ones(levels[-1].region_count, dtype=bool)
    for t in range(T - 1, -1, -1):
        sel = active & choose[t]
        px = sel[levels[t].labels.ravel()]
        node_key[px] = offsets[t] + levels[t].labels.ravel()[px]
        if t > 0:
            active = (active & ~choose[t])[levels[t - 1].parent]

    labels, n = compact_labels(node_key.reshape(h, w))
    first = np.unique(labels.ravel(), return_index=True)[1]
    keys = node_key[first]
    level = np.searchsorted(offsets, keys, side="right") - 1
    node = keys - offsets[level]
    ic = np.array([ics[t][i] for t, i in zip(level, node)])
    feats = np.stack([levels[t].features[i] for t, i in zip(level, node)])
    return PrunedPartition(
        labels=LabelMap(labels, n),
        level=level,
        node=node,
        ic=ic,
        total_ic=float(ic.sum()),
        features=feats,
    )


def save_partition(path, pruned: PrunedPartition) -> None:
    """16-bit PNG of region ids plus a JSON region table at ``path.json``."""
    lab = pruned.labels.labels
    n = pruned.region_count
    if n > 65536:
        raise ValueError(f"{n} regions do not fit a 16-bit label map")
    save_png(path, lab.astype(np.uint16), bitdepth=16)
    counts = np.bincount(lab.ravel(), minlength=n)
    table = {
        "regions": n,
        "total_ic": pruned.total_ic,
        "table": [
            {
                "id": i,
                "pixels": int(counts[i]),
                "bbox": [int(v) for v in bb],
                "level": int(pruned.level[i]),
                "node": int(pruned.node[i]),
                "ic": float(pruned.ic[i]),
            }
            for i, bb in enumerate(region_bboxes(lab, n))
        ],
    }
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(table, fh, indent=1)
