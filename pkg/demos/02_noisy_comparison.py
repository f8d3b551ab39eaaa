"""
Three extractors under noise
============================

A small version of the benchmark sweep: the endpoint method, the
volume-regularized fit and the adapted minimum-volume NMF, all run on the
same bags. Each algorithm is scored at its best weight per SNR. The full
grid runs behind ``fgextract sweep``.
"""

from fgextract.io import run_config_from_dict
from fgextract.sweep import run_sweep

cfg = run_config_from_dict({
    "grids": {"epfit": [0], "minvolfit": [1e-3, 1e-4], "minvolnmf": [0.01, 0.1, 1.0]},
    "snr": [1e3, 1e5],
    "n_bags": 3,
    "iterations": {"epfit": 50_000, "minvolfit": 100_000, "minvolnmf": 10_000},
    "continuation_iters": 20_000,
})
out = run_sweep(cfg)

# %%
# ``summary`` holds one row per (algorithm, weight, SNR) cell with its median error.
best = {}
for row in out.summary:
    key = row["algorithm"], row["snr"]
    best[key] = min(best.get(key, float("inf")), row["median"])

print(f"{'':10}" + "".join(f"{'SNR %.0e' % s:>12}" for s in cfg.snr))
for algo in cfg.grids:
    print(f"{algo:10}" + "".join(f"{best[algo, s]:12.3f}" for s in cfg.snr))
