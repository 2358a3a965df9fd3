"""Edge-wise similarity kernels on feature vectors.

All functions broadcast over leading axes: ``a`` and ``b`` are ``(..., d)``
and results are ``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_NORM = 1e-8
KINDS = ("gaussian", "cosine", "tanimoto")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KINDS}")
        if not self.sigma > 0:
            raise ValueError("kernel bandwidth must be positive")


def _check(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("feature dimension mismatch")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("NaN in kernel input")
    return a, b


def kernel_eval(spec: KernelSpec, a, b, sigma: float | None = None) -> np.ndarray:
    """Similarity in [0, 1]; symmetric in ``a`` and ``b``."""
    a, b = _check(a, b)
    if spec.kind == "gaussian":
        s = spec.sigma if sigma is None else sigma
        diff = a - b
        return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * s * s))
    ab = np.sum(a * b, axis=-1)
    na2 = np.sum(a * a, axis=-1)
    nb2 = np.sum(b * b, axis=-1)
    if spec.kind == "cosine":
        return np.maximum(0.0, ab / (np.sqrt(na2) * np.sqrt(nb2) + EPS_NORM))
    # tanimoto; clamped at 0 like cosine, and two zero vectors count as identical
    k = np.maximum(0.0, ab / (na2 + nb2 - ab + EPS_NORM))
    return np.where((na2 == 0) & (nb2 == 0), 1.0, k)


def kernel_grad(spec: KernelSpec, a, b, sigma: float | None = None):
    """Return ``(dk/da, dk/db, dk/dsigma)``.

    ``dk/dsigma`` is zero for the parameter-free kernels.  At the clamp
    boundary (negative raw cosine/tanimoto score) the gradient is zero.
    """
    a, b = _check(a, b)
    if spec.kind == "gaussian":
        s = spec.sigma if sigma is None else sigma
        diff = a - b
        sq = np.sum(diff * diff, axis=-1)
        k = np.exp(-sq / (2.0 * s * s))
        ga = -(k / (s * s))[..., None] * diff
        return ga, -ga, k * sq / (s**3)

    ab = np.sum(a * b, axis=-1)
    na2 = np.sum(a * a, axis=-1)
    nb2 = np.sum(b * b, axis=-1)
    zero_s = np.zeros(ab.shape)
    if spec.kind == "cosine":
        na, nb = np.sqrt(na2), np.sqrt(nb2)
        den = na * nb + EPS_NORM
        raw = ab / den
        with np.errstate(invalid="ignore", divide="ignore"):
            ua = np.where(na[..., None] > 0, a / na[..., None], 0.0)
            ub = np.where(nb[..., None] > 0, b / nb[..., None], 0.0)
        ga = b / den[..., None] - (ab / den**2)[..., None] * nb[..., None] * ua
        gb = a / den[..., None] - (ab / den**2)[..., None] * na[..., None] * ub
        live = (raw > 0)[..., None]
        return np.where(live, ga, 0.0), np.where(live, gb, 0.0), zero_s

    den = na2 + nb2 - ab + EPS_NORM
    raw = ab / den
    # d(ab/den)/da = b/den - ab (2a - b)/den^2
    ga = b / den[..., None] - (ab / den**2)[..., None] * (2 * a - b)
    gb = a / den[..., None] - (ab / den**2)[..., None] * (2 * b - a)
    live = ((raw > 0) & ~((na2 == 0) & (nb2 == 0)))[..., None]
    return np.where(live, ga, 0.0), np.where(live, gb, 0.0), zero_s
