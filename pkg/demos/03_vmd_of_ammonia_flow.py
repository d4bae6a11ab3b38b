#!/usr/bin/env python3
"""Split the ammonia-flow column into modes and pick the mode count.

K grows from 2 until the last mode barely correlates with the signal; that
mode is treated as noise and dropped before modelling.
"""
import warnings

import numpy as np

from scr_dynpredict import decompose, generate_synthetic, prune_last_mode, select_mode_count
from scr_dynpredict.dataset import SynthConfig

warnings.simplefilter("ignore")

table, truth = generate_synthetic(SynthConfig(n=4000, seed=0))
q = table.column("Q")

search = select_mode_count(q, corr_threshold=0.1)
for K in sorted(search.correlations):
    print(f"K={K:2d}  corr(IMF_K, Q) = {search.correlations[K]:.3f}")
print(f"chosen K={search.K}, planted tones at {[f for f, *_ in truth.tones]} cycles/sample")

ms = search.mode_set
print("centre frequencies:", np.round(ms.omegas, 4))
kept = prune_last_mode(ms)
print(f"kept {kept.K} modes, residual energy {np.sum(kept.residual ** 2) / np.sum(q ** 2):.3f}")

# two clean tones, for comparison
t = np.arange(2048)
two = decompose(np.cos(2 * np.pi * 0.02 * t) + np.cos(2 * np.pi * 0.10 * t), 2)
print("two-tone check:", np.round(two.omegas, 5))
