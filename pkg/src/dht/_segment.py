import numpy as np


def segment_sum(values: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets given by ``ids`` (fixed, sequential order)."""
    values = np.asarray(values, dtype=np.float64)
    ids = np.asarray(ids).ravel()
    if values.ndim == 1:
        return np.bincount(ids, weights=values, minlength=n)
    flat = values.reshape(len(values), -1)
    out = np.empty((n, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.bincount(ids, weights=flat[:, j], minlength=n)
    return out.reshape((n,) + values.shape[1:])
