"""Bilinear resampling as explicit linear operators (half-pixel / align-corners=False)."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=512)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` interpolation matrix; rows sum to one."""
    m = _bilinear_matrix(int(n_in), int(n_out))
    m.setflags(write=False)
    return m


def resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an ``(h, w, ...)`` array bilinearly."""
    r = bilinear_matrix(arr.shape[0], out_h)
    c = bilinear_matrix(arr.shape[1], out_w)
    return np.einsum("ai,ij...,bj->ab...", r, arr, c)
