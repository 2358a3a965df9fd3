"""Raster-to-vector conversion of superpixel partitions into layered SVG.

Region boundaries are traced along pixel cracks, so contour vertices sit on
integer pixel-corner coordinates ``(x, y) = (col, row)``.  Outer contours have
positive shoelace area in that frame, holes negative.  Polylines are then
thinned with a closed-curve Douglas-Peucker pass that never introduces a
self-crossing.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import Hierarchy
from .imagegraph import Image, LabelMap
from .metrics import MetricReport, report
from .selection import PrunedPartition

DEFAULT_TOL = 0.75
SVG_NS = "http://www.w3.org/2000/svg"

# direction codes: 0 east, 1 south, 2 west, 3 north (y grows downwards)
_DX = np.array([1, 0, -1, 0])
_DY = np.array([0, 1, 0, -1])


@dataclass(frozen=True)
class VectorPath:
    region: int
    layer: str  # "coarse" or "fine"
    fill: tuple[float, float, float]
    contours: list[np.ndarray] = field(default_factory=list)  # each (n, 2) closed, int or float xy

    @property
    def fill_hex(self) -> str:
        return to_hex(self.fill)


@dataclass(frozen=True)
class VectorDoc:
    width: int
    height: int
    paths: list[VectorPath]
    tol: float

    def layer(self, name: str) -> list[VectorPath]:
        return [p for p in self.paths if p.layer == name]

    def to_svg(self) -> str:
        return to_svg(self)


def to_hex(rgb) -> str:
    v = np.clip(np.rint(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*v)


def shoelace(contour) -> float:
    c = np.asarray(contour, dtype=np.float64)
    x, y = c[:, 0], c[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# --------------------------------------------------------------------------
# tracing


def _boundary_edges(mask: np.ndarray):
    """Directed crack edges of ``mask`` as (x0, y0, dir) arrays."""
    h, w = mask.shape
    pad = np.zeros((h + 2, w + 2), dtype=bool)
    pad[1:-1, 1:-1] = mask
    inside = pad[1:-1, 1:-1]
    xs, ys, ds = [], [], []
    # top side runs east from (c, r); right side south from (c+1, r);
    # bottom side west from (c+1, r+1); left side north from (c, r+1)
    for nb, dx0, dy0, d in (
        (pad[:-2, 1:-1], 0, 0, 0),
        (pad[1:-1, 2:], 1, 0, 1),
        (pad[2:, 1:-1], 1, 1, 2),
        (pad[1:-1, :-2], 0, 1, 3),
    ):
        r, c = np.nonzero(inside & ~nb)
        xs.append(c + dx0)
        ys.append(r + dy0)
        ds.append(np.full(len(r), d))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ds)


def trace_mask(mask: np.ndarray) -> list[np.ndarray]:
    """Closed crack contours of a boolean mask, collinear vertices removed.

    At a vertex shared by two diagonal pixels the walk turns towards the
    region, keeping 4-connected pieces apart.  Contours are listed in order of
    their starting edge (row-major), so the first is the outer boundary of
    the topmost-leftmost pixel.
    """
    x0, y0, d = _boundary_edges(np.asarray(mask, dtype=bool))
    if len(x0) == 0:
        return []
    h, w = mask.shape
    stride = w + 1
    start = y0 * stride + x0
    # at most two outgoing edges per vertex
    order = np.lexsort((d, start))
    start_sorted = start[order]
    first = np.searchsorted(start_sorted, np.arange((h + 1) * stride))
    count = np.searchsorted(start_sorted, np.arange((h + 1) * stride), side="right") - first
    end = (y0 + _DY[d]) * stride + (x0 + _DX[d])

    # rank edges by (row, col, dir) for deterministic contour starts
    seeds = np.lexsort((d, x0, y0))
    used = np.zeros(len(x0), dtype=bool)
    contours = []
    for e0 in seeds:
        if used[e0]:
            continue
        pts = []
        e = e0
        while not used[e]:
            used[e] = True
            pts.append((x0[e], y0[e]))
            v = end[e]
            k, n = first[v], count[v]
            if n == 1:
                e = order[k]
            else:
                # pinch vertex: take the right turn (towards the region)
                a, b = order[k], order[k + 1]
                e = a if (d[a] - d[e]) % 4 == 1 else b
        contours.append(_drop_collinear(np.array(pts, dtype=np.int64)))
    return contours


def trace_region(labels, region: int) -> list[np.ndarray]:
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    return trace_mask(lab == region)


def _drop_collinear(c: np.ndarray) -> np.ndarray:
    """Remove repeated vertices and vertices where the path runs straight on."""
    if len(c) < 3:
        return c
    for _ in range(2):
        keep = np.any(c != np.roll(c, 1, axis=0), axis=1)
        if keep.sum() < 3:
            return c
        c = c[keep]
        u = c - np.roll(c, 1, axis=0)
        v = np.roll(c, -1, axis=0) - c
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        dot = np.sum(u * v, axis=1)
        keep = (cross != 0) | (dot < 0)
        if keep.sum() < 3:
            return c
        c = c[keep]
    return c


# --------------------------------------------------------------------------
# simplification


def _seg_dist(p, a, b):
    """Distance from points ``p`` (n, 2) to segment ``ab``."""
    ab = b - a
    L = float(ab @ ab)
    if L == 0.0:
        return np.hypot(*(p - a).T)
    t = np.clip(((p - a) @ ab) / L, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def _dp_open(pts: np.ndarray, tol: float) -> list[int]:
    """Indices kept by Douglas-Peucker on an open chain (endpoints always kept)."""
    keep = [0, len(pts) - 1]
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        dist = _seg_dist(pts[i + 1 : j].astype(np.float64), pts[i].astype(np.float64), pts[j].astype(np.float64))
        k = int(np.argmax(dist))
        if dist[k] > tol:
            m = i + 1 + k
            keep.append(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(keep)


def _orient(a, b, c):
    return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))


def is_simple(contour) -> bool:
    """No two non-adjacent edges of the closed polyline cross or overlap.

    Touching at a shared vertex (a pinch in the pixel lattice) is allowed.
    """
    c = np.asarray(contour)
    n = len(c)
    if n < 4:
        return n == 3 and shoelace(c) != 0
    a = c
    b = np.roll(c, -1, axis=0)
    u = b - a
    v = np.roll(u, -1, axis=0)
    if np.any(np.all(u == 0, axis=1)):
        return False
    # consecutive edges folding back onto each other
    if np.any((u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0] == 0) & (np.sum(u * v, axis=1) < 0)):
        return False
    for i in range(n - 2):
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if len(j) == 0:
            continue
        p1, p2 = a[i], b[i]
        q1, q2 = a[j], b[j]
        # cheap bbox rejection
        lo = np.minimum(p1, p2)
        hi = np.maximum(p1, p2)
        qlo = np.minimum(q1, q2)
        qhi = np.maximum(q1, q2)
        near = np.all((qlo <= hi) & (qhi >= lo), axis=1)
        if not near.any():
            continue
        q1, q2 = q1[near], q2[near]
        o1 = _orient(p1, p2, q1)
        o2 = _orient(p1, p2, q2)
        o3 = _orient(q1, q2, p1)
        o4 = _orient(q1, q2, p2)
        if np.any((o1 * o2 < 0) & (o3 * o4 < 0)):
            return False
        # touching configurations: an endpoint lying on the other segment's interior
        for s, t, u in ((p1, q1, q2), (p2, q1, q2)):
            on = (_orient(t, u, s) == 0) & _strictly_between(s, t, u)
            if np.any(on):
                return False
        for pts in (q1, q2):
            on = (_orient(p1, p2, pts) == 0) & _strictly_between(pts, p1, p2)
            if np.any(on):
                return False
    return True


def _strictly_between(s, t, u):
    """``s`` lies strictly inside the segment ``tu`` (given collinearity)."""
    s, t, u = np.broadcast_arrays(np.asarray(s), np.asarray(t), np.asarray(u))
    d = u - t
    num = np.sum((s - t) * d, axis=-1)
    den = np.sum(d * d, axis=-1)
    return (num > 0) & (num < den)


def simplify(contour, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Closed-curve Douglas-Peucker.

    The chain is split at its first vertex and the vertex farthest from it.
    If the result self-intersects the tolerance is halved, then dropped to 0.
    Contours with fewer than 3 vertices are returned unchanged.
    """
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    c = np.asarray(contour)
    if len(c) < 3:
        return c
    c = _drop_collinear(c)
    if tol == 0 or len(c) <= 4:
        return c
    for t in (tol, tol / 2.0):
        out = _dp_closed(c, t)
        if len(out) >= 3 and shoelace(out) != 0 and is_simple(out):
            return out
    return c


def _dp_closed(c: np.ndarray, tol: float) -> np.ndarray:
    n = len(c)
    far = int(np.argmax(np.hypot(*(c - c[0]).T.astype(np.float64))))
    ring = np.vstack([c, c[:1]])
    left = _dp_open(ring[: far + 1], tol)
    right = _dp_open(ring[far:], tol)
    idx = left + [far + k for k in right[1:]]
    idx = [i % n for i in idx[:-1]]
    return _drop_collinear(c[idx])


def max_deviation(original, simplified, samples: int = 8) -> float:
    """Largest distance from densely sampled points of ``original`` to ``simplified``."""
    o = np.asarray(original, dtype=np.float64)
    s = np.asarray(simplified, dtype=np.float64)
    t = np.linspace(0.0, 1.0, samples, endpoint=False)
    nxt = np.roll(o, -1, axis=0)
    pts = (o[:, None, :] + t[None, :, None] * (nxt - o)[:, None, :]).reshape(-1, 2)
    sn = np.roll(s, -1, axis=0)
    best = np.full(len(pts), np.inf)
    for a, b in zip(s, sn):
        best = np.minimum(best, _seg_dist(pts, a, b))
    return float(best.max())


# --------------------------------------------------------------------------
# documents


def region_mean_colors(x: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    flat = labels.ravel()
    xs = x.reshape(flat.size, -1)
    cnt = np.bincount(flat, minlength=n).astype(np.float64)
    sums = np.stack([np.bincount(flat, weights=xs[:, k], minlength=n) for k in range(xs.shape[1])], axis=1)
    mean = sums / cnt[:, None]
    if mean.shape[1] == 1:
        mean = np.repeat(mean, 3, axis=1)
    return mean[:, :3]


def _layer_paths(x, labels, n, layer, tol):
    colors = region_mean_colors(x, labels, n)
    paths = []
    for rid in range(n):
        contours = [simplify(c, tol) for c in trace_mask(labels == rid)]
        paths.append(VectorPath(region=rid, layer=layer, fill=tuple(float(v) for v in colors[rid]), contours=contours))
    return paths


def vectorize(
    img: Image | np.ndarray,
    hier: Hierarchy,
    pruned: PrunedPartition,
    tol: float = DEFAULT_TOL,
    coarse_level: int | None = None,
) -> VectorDoc:
    """Two-layer vector document: a coarse hierarchy level under the selected partition.

    ``coarse_level`` indexes the hierarchy; ``None`` picks the coarsest level
    and ``0`` disables the coarse layer.
    """
    x = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    h, w = x.shape[:2]
    if coarse_level is None:
        coarse_level = len(hier) - 1
    if not 0 <= coarse_level < len(hier):
        raise ValueError(f"coarse level {coarse_level} outside 0..{len(hier) - 1}")
    paths = []
    if coarse_level > 0:
        lv = hier[coarse_level]
        paths += _layer_paths(x, lv.labels, lv.region_count, "coarse", tol)
    paths += _layer_paths(x, pruned.labels.labels, pruned.labels.region_count, "fine", tol)
    return VectorDoc(width=w, height=h, paths=paths, tol=tol)


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else f"{v:.3f}".rstrip("0")


def _path_data(contours) -> str:
    parts = []
    for c in contours:
        pts = " L".join(f"{_fmt(px)} {_fmt(py)}" for px, py in c)
        parts.append(f"M{pts} Z")
    return " ".join(parts)


def to_svg(doc: VectorDoc) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="{SVG_NS}" version="1.1" width="{doc.width}" height="{doc.height}" '
        f'viewBox="0 0 {doc.width} {doc.height}">',
    ]
    for layer in ("coarse", "fine"):
        paths = doc.layer(layer)
        if not paths:
            continue
        lines.append(f'<g id="{layer}">')
        for p in paths:
            lines.append(f'<path d="{_path_data(p.contours)}" fill="{p.fill_hex}" fill-rule="evenodd" stroke="none"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# rasterization


def _parse_path(d: str) -> list[np.ndarray]:
    contours, cur = [], []
    for tok in d.replace("M", " M ").replace("L", " L ").replace("Z", " Z ").split():
        if tok == "M":
            cur = []
        elif tok == "Z":
            contours.append(np.array(cur, dtype=np.float64).reshape(-1, 2))
            cur = []
        elif tok != "L":
            cur.append(float(tok))
    return contours


def parse_svg(text: str) -> VectorDoc:
    """Read back the subset of SVG written by :func:`to_svg`."""
    root = ET.fromstring(text)
    w = int(float(root.get("width")))
    h = int(float(root.get("height")))
    paths = []
    for g in root.findall(f"{{{SVG_NS}}}g"):
        layer = g.get("id", "fine")
        for i, el in enumerate(g.findall(f"{{{SVG_NS}}}path")):
            hexv = el.get("fill").lstrip("#")
            rgb = tuple(int(hexv[k : k + 2], 16) / 255.0 for k in (0, 2, 4))
            paths.append(VectorPath(region=i, layer=layer, fill=rgb, contours=_parse_path(el.get("d"))))
    return VectorDoc(width=w, height=h, paths=paths, tol=float("nan"))


def rasterize_contours(contours, height: int, width: int) -> np.ndarray:
    """Even-odd coverage of pixel centres by a set of closed polylines."""
    if isinstance(contours, np.ndarray) and contours.ndim == 2:
        contours = [contours]
    diff = np.zeros((height, width + 1), dtype=np.int64)
    xs_all, rows_all = [], []
    for c in contours:
        c = np.asarray(c, dtype=np.float64)
        if len(c) < 3:
            continue
        a, b = c, np.roll(c, -1, axis=0)
        ya, yb = a[:, 1], b[:, 1]
        ok = ya != yb
        a, b, ya, yb = a[ok], b[ok], ya[ok], yb[ok]
        ylo, yhi = np.minimum(ya, yb), np.maximum(ya, yb)
        r0 = np.clip(np.ceil(ylo - 0.5).astype(np.int64), 0, height)
        r1 = np.clip(np.ceil(yhi - 0.5).astype(np.int64), 0, height)
        cnt = r1 - r0
        if cnt.sum() == 0:
            continue
        e = np.repeat(np.arange(len(a)), cnt)
        rows = np.repeat(r0, cnt) + (np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt))
        yc = rows + 0.5
        t = (yc - ya[e]) / (yb[e] - ya[e])
        xs_all.append(a[e, 0] + t * (b[e, 0] - a[e, 0]))
        rows_all.append(rows)
    if not xs_all:
        return np.zeros((height, width), dtype=bool)
    xs = np.concatenate(xs_all)
    rows = np.concatenate(rows_all)
    order = np.lexsort((xs, rows))
    xs, rows = xs[order], rows[order]
    xa, xb, rr = xs[0::2], xs[1::2], rows[0::2]
    c0 = np.clip(np.ceil(xa - 0.5).astype(np.int64), 0, width)
    c1 = np.clip(np.ceil(xb - 0.5).astype(np.int64), 0, width)
    np.add.at(diff, (rr, c0), 1)
    np.add.at(diff, (rr, c1), -1)
    return np.cumsum(diff, axis=1)[:, :width] > 0


def rasterize(doc: VectorDoc, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Paint paths in document order (painter's algorithm), one sample per pixel."""
    out = np.empty((doc.height, doc.width, 3))
    out[:] = background
    for p in doc.paths:
        m = rasterize_contours(p.contours, doc.height, doc.width)
        out[m] = np.asarray(p.fill)
    return out


def rasterize_svg(text: str) -> np.ndarray:
    return rasterize(parse_svg(text))


def score_vectorization(original, rendered) -> MetricReport:
    a = original.data if isinstance(original, Image) else np.asarray(original, dtype=np.float64)
    b = rendered.data if isinstance(rendered, Image) else np.asarray(rendered, dtype=np.float64)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"image sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    if a.ndim == 2:
        a = a[..., None]
    if b.ndim == 2:
        b = b[..., None]
    if a.shape[2] == 1 and b.shape[2] == 3:
        a = np.repeat(a, 3, axis=2)
    return report(a, b)
