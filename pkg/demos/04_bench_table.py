"""Summarise a ``dht bench`` CSV as one row per grid cell.

Run:  dht bench --toy --untrained --out bench.csv
      python3 demos/04_bench_table.py bench.csv
"""
import csv
import sys
from collections import defaultdict

import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else "bench.csv"
cells = defaultdict(list)
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        key = (row["kernel"], row["d"], row["criterion"], row["gn_shape"])
        cells[key].append([float(row[k]) for k in ("tokens", "mse", "psnr", "ssim")])

print(f"{'kernel':<9} {'d':>3} {'IC':<5} {'b':>4} {'tokens':>7} {'mse':>9} {'psnr':>7} {'ssim':>6}")
for key, vals in sorted(cells.items(), key=lambda kv: np.mean([v[1] for v in kv[1]])):
    t, m, p, s = np.mean(vals, axis=0)
    print(f"{key[0]:<9} {key[1]:>3} {key[2]:<5} {key[3]:>4} {t:7.1f} {m:9.5f} {p:7.2f} {s:6.3f}")
