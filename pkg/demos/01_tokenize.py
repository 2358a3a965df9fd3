"""Walk one photo through the tokenizer and look at what comes out.

Run:  python3 demos/01_tokenize.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from dht.corpus import toy_corpus
from dht.encoder import EncoderConfig, init_state
from dht.imagegraph import save_png
from dht.kernels import KernelSpec
from dht.metrics import report
from dht.pipeline import tokenize
from dht.selection import ICConfig, save_partition

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# one 64x64 crop of a standard test photo
x = toy_corpus()[0]
state = init_state(EncoderConfig(d=8), channels=3)

res = tokenize(x, state, KernelSpec("gaussian"), ICConfig("AICC"), q=16, p=24)

# Every merge level shrinks the region count several-fold.
print("regions per level:", res.hierarchy.region_counts)

# The selected cut may take nodes from different levels.
levels, counts = np.unique(res.pruned.level, return_counts=True)
print("selected regions by level:", dict(zip(levels.tolist(), counts.tolist())))
print(f"tokens: {len(res.tokens)}  (a 16px ViT grid would give {(64 // 16) ** 2})")
print("token features", res.tokens.features.shape, "positions", res.tokens.positions.shape)

sizes = res.tokens.pixel_counts
print(f"region sizes: min {sizes.min()}, median {int(np.median(sizes))}, max {sizes.max()}")

# Piecewise-constant reconstruction from the projected region features.
print("reconstruction:", report(x, res.reconstruction).as_dict())

save_png(out / "photo.png", x)
save_png(out / "reconstruction.png", np.clip(res.reconstruction, 0, 1))
save_partition(out / "labels.png", res.pruned)
print("wrote", sorted(p.name for p in out.iterdir()))
