#!/usr/bin/env python3
"""End to end at toy scale: corpus, Leader, Follower, sampling, scores, a
small ablation and its bar chart. Takes a couple of minutes on one CPU core.

Run:  python demos/05_train_and_evaluate.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import torch

from camorect import training as T
from camorect.plotting import load_series, plot_series
from camorect.synth import build_corpus

torch.set_num_threads(1)
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="camorect_e2e_"))
corpus = out / "corpus"
if not (corpus / "manifest.json").exists():
    build_corpus(40, (64, 64), corpus, seed=0)

small = dict(leader_widths=[8, 8, 8, 8], den_widths=[8, 8, 8, 8], cond_channels=8, dim=16, depth=4,
             stem_width=4, time_dim=16)
cfg = T.TrainConfig(corpus=str(corpus), resolution=64, epochs=8, batch_size=8, lr=3e-3, arch=small,
                    tce_mode=None, scale=4)

# 1. Leader on clean images.
lead = T.train_leader(cfg, out / "leader")
print("leader epoch losses:", [round(x, 3) for x in lead.epoch_losses])
rep, _ = T.evaluate_model(lead.model, cfg, use_hq=True)
print("leader on HQ test images:", {k: round(v, 3) for k, v in rep.aggregate.items()})

# 2. Follower on 4x degraded images, rectified by the frozen Leader.
fol = T.train_follower(cfg, lead.checkpoint, out / "follower")
print("follower audit:", fol.audit)
rep, preds = T.evaluate_model(fol.model, cfg)
rep.write(out / "follower")
print("follower on LQ test images:", {k: round(v, 3) for k, v in rep.aggregate.items()})

# 3. Two-row ablation and a chart.
rows = [
    {"name": "baseline", "rectification": {"cdc_enabled": False, "hdc_enabled": False, "cc_enabled": False}},
    {"name": "+CDC", "rectification": {"cdc_enabled": True, "hdc_enabled": False, "cc_enabled": False}},
]
table = T.run_ablation(cfg, rows, lead.checkpoint, out / "ablation")
for r in table:
    print(f"  {r['name']:<10} S={r.get('s_alpha', float('nan')):.4f}  {r.get('error', '')}")
paths = plot_series(load_series([out / "ablation" / "table.json"]), out / "plots")
print("charts:", [p.name for p in paths])
print("artifacts in", out)
