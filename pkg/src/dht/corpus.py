"""Small natural-image corpora for training and benchmarks.

The bundled photographs of scikit-image are used so that no download is
needed; scikit-image is an optional dependency imported on first use.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imagegraph import Image, ImageFormatError, load_image

TOY_SOURCES = (
    "astronaut",
    "coffee",
    "chelsea",
    "rocket",
    "immunohistochemistry",
    "hubble_deep_field",
    "retina",
    "stereo_motorcycle",
)
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


def _skimage():
    try:
        import skimage.data
        import skimage.transform
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("the toy corpus needs scikit-image (pip install scikit-image)") from exc
    return skimage


def toy_corpus(size: int = 64, per_image: int = 4) -> list[np.ndarray]:
    """``len(TOY_SOURCES) * per_image`` RGB crops of ``size x size`` in [0, 1].

    Each photograph is centre-cropped to a square, area-downsampled to
    ``2 * size`` and split into its four quadrants (``per_image`` <= 4).
    """
    sk = _skimage()
    out = []
    for name in TOY_SOURCES:
        img = getattr(sk.data, name)()
        if isinstance(img, tuple):
            img = img[0]
        img = np.asarray(img, dtype=np.float64)[..., :3] / 255.0
        h, w = img.shape[:2]
        s = min(h, w)
        r0, c0 = (h - s) // 2, (w - s) // 2
        sq = sk.transform.resize(img[r0 : r0 + s, c0 : c0 + s], (2 * size, 2 * size), anti_aliasing=True, order=1)
        quads = [sq[:size, :size], sq[:size, size:], sq[size:, :size], sq[size:, size:]]
        out.extend(np.clip(q, 0.0, 1.0) for q in quads[:per_image])
    return out


def constant_corpus(n: int = 4, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [np.broadcast_to(rng.random(3), (size, size, 3)).copy() for _ in range(n)]


def corpus_files(directory) -> list[Path]:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return files


def load_corpus(directory) -> tuple[list[Path], list[Image]]:
    """All readable images in ``directory`` (sorted by name); unreadable ones are skipped."""
    paths, images = [], []
    for p in corpus_files(directory):
        try:
            images.append(load_image(p))
        except (ImageFormatError, OSError):
            continue
        paths.append(p)
    return paths, images
