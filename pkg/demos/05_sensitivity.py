#!/usr/bin/env python3
"""Which input matters most?  Replace each one by its mean and retrain.

CO has zero weight in the synthetic response; it is forced into the model
so the probe shows what an irrelevant column does to the error.
"""
import warnings

from scr_dynpredict import PipelineConfig, fit, generate_synthetic, sensitivity, split
from scr_dynpredict.dataset import SynthConfig

warnings.simplefilter("ignore")

table, _ = generate_synthetic(SynthConfig(n=4000, seed=0))
train, test = split(table, 3200)
model = fit(train, PipelineConfig(seed=0, forced=("NOx", "CO"), ec=False))

rows = sensitivity(train, test, model=model)
base = rows[0]
print(f"baseline MAPE {base['MAPE']:.3f}%")
for r in sorted(rows[1:], key=lambda r: -r["growth_pct"]):
    bar = "#" * max(0, int(r["growth_pct"] / 5))
    print(f"{r['feature']:>6}  MAPE {r['MAPE']:7.3f}%  growth {r['growth_pct']:+7.1f}%  {bar}")
