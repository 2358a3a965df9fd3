"""Turn a raster into layered SVG and check it against the source.

Run:  python3 demos/03_vectorize.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from dht.corpus import toy_corpus
from dht.encoder import EncoderConfig, init_state
from dht.kernels import KernelSpec
from dht.pipeline import vectorize_image
from dht.selection import ICConfig
from dht.vectorize import rasterize_svg, score_vectorization

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

n = 64
yy, xx = np.mgrid[0:n, 0:n]
r = np.hypot(yy - 31.5, xx - 31.5)
ring = np.zeros((n, n, 3))
ring[:] = [0.1, 0.1, 0.2]
ring[(r >= 12) & (r < 24)] = [0.95, 0.7, 0.2]

state = init_state(EncoderConfig(d=8), 3)
kernel, ic = KernelSpec("gaussian"), ICConfig("AICC")

for name, x in (("ring", ring), ("photo", toy_corpus()[5])):
    for tol in (0.0, 0.75, 2.0):
        doc = vectorize_image(x, state, kernel, ic, tol=tol)
        svg = doc.to_svg()
        verts = sum(len(c) for p in doc.paths for c in p.contours)
        rep = score_vectorization(x, rasterize_svg(svg))
        print(
            f"{name:>5} tol {tol:4}: {len(doc.layer('coarse'))} coarse + {len(doc.layer('fine'))} fine paths, "
            f"{verts} vertices, {len(svg) / 1024:.1f} KiB, psnr {rep.psnr:.2f}"
        )
        (out / f"{name}_tol{tol}.svg").write_text(svg)

# The annulus needs a hole: its path carries two subpaths.
doc = vectorize_image(ring, state, kernel, ic, tol=0.75, coarse_level=0)
print("ring subpaths per path:", [len(p.contours) for p in doc.paths])
