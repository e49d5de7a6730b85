#!/usr/bin/env python3
"""The four COD scores on hand-made predictions.

S-alpha mixes region and object structure, E-phi is the enhanced alignment
averaged over 255 thresholds, weighted F down-weights errors far from the
object, and MAE is the plain pixel error.

Run:  python demos/03_metrics.py
"""
import numpy as np
from scipy import ndimage

from camorect import metrics as M

gt = np.zeros((64, 64), bool)
yy, xx = np.mgrid[:64, :64]
gt[(yy - 30) ** 2 / 300 + (xx - 34) ** 2 / 150 < 1] = True

rng = np.random.default_rng(0)
candidates = {
    "perfect": gt.astype(float),
    "blurred": ndimage.gaussian_filter(gt.astype(float), 2.0),
    "shifted": np.roll(gt, 6, axis=1).astype(float),
    "noisy": np.clip(gt + rng.normal(0, 0.3, gt.shape), 0, 1),
    "all zero": np.zeros(gt.shape),
    "all 0.5": np.full(gt.shape, 0.5),
}

print(f"{'prediction':<10}" + "".join(f"{k:>10}" for k in M.METRIC_KEYS))
for name, pred in candidates.items():
    m = M.all_metrics(pred, gt)
    print(f"{name:<10}" + "".join(f"{m[k]:10.4f}" for k in M.METRIC_KEYS))

# Empty ground truth is a special case for every structural score.
empty = np.zeros_like(gt)
print("empty gt, prediction 0.25:", {k: round(v, 4) for k, v in M.all_metrics(np.full(gt.shape, 0.25), empty).items()})
