#!/usr/bin/env python3
"""Rank delay-aligned inputs with three tree ensembles and keep the strong ones.

CART, a random forest and gradient boosting each score every input; the
scores are min-max scaled, averaged, and thresholded at 0.2.
"""
import warnings

import numpy as np

from scr_dynpredict import (estimate_delays, feature_importances, generate_synthetic,
                            reconstruct, select_features, split)
from scr_dynpredict.dataset import SynthConfig, apply_normalization, fit_normalization

warnings.simplefilter("ignore")

table, truth = generate_synthetic(SynthConfig(n=4000, seed=1))
train, _ = split(table, 3200)
tn = apply_normalization(train, fit_normalization(train))
aligned = reconstruct(tn, estimate_delays(tn))

inputs = [lab for lab in aligned.labels if lab != "Y"]
X = np.column_stack([aligned.column(lab) for lab in inputs])
report = feature_importances(X, aligned.column("Y"), inputs)

order = np.argsort(report.combined)[::-1]
for i in order:
    tag = "*" if inputs[i] in truth.relevant_features else " "
    print(f"{tag} {inputs[i]:>6}  cart {report.cart[i]:.2f}  forest {report.forest[i]:.2f}  "
          f"gbt {report.boosted[i]:.2f}  combined {report.combined[i]:.3f}")

chosen = select_features(report, 0.2, ("NOx",))
print("\nselected:", ", ".join(chosen))
print("planted :", ", ".join(truth.relevant_features))
