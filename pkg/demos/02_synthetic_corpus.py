#!/usr/bin/env python3
"""Procedural camouflage scenes and their degraded copies.

Every sample is a textured background with one object whose colour matches
the background but whose texture is busier. Low-quality versions are made by
bicubic downsampling at 2x, 4x and 8x.

Run:  python demos/02_synthetic_corpus.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from camorect import synth as S  # noqa: E402

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="camorect_demo_"))
out.mkdir(parents=True, exist_ok=True)

s = S.gen_sample(seed=3, size=(128, 128))
print("hq", s.image_hq.shape, "mask fraction", round(float(s.mask.mean()), 3))
for n in S.SCALES:
    print(f"lq {n}x", s.image_lq[n].shape)

# How well hidden is the object?  Colour distance is small, texture is not.
print("camouflage stats:", {k: round(v, 4) for k, v in S.camouflage_stats(s).items()})

# Degradation gets harder with the factor: PSNR of the upsampled LQ image.
for n in S.SCALES:
    up = S.upsample(s.image_lq[n], 128, 128)
    mse = float(np.mean((up - s.image_hq) ** 2))
    print(f"{n}x  PSNR {10 * np.log10(1 / mse):.2f} dB")

# Two views for the cross-consistency loss: a plain one and an augmented one.
hq, lq = S.augment_pair(s, 4, rng_seed=7)
print("augmentation of view A:", hq.aug_params_A.to_dict())

def show(img):
    # CHW colour image or HW mask
    return img if img.ndim == 2 else np.clip(img.transpose(1, 2, 0), 0, 1)


panels = {"HQ": s.image_hq, "mask": s.mask}
panels.update({f"{n}x": S.upsample(s.image_lq[n], 128, 128) for n in S.SCALES})
panels["view A"] = hq.view_A[0]
fig, ax = plt.subplots(1, len(panels), figsize=(15, 2.8))
for a, (title, img) in zip(ax, panels.items()):
    a.imshow(show(img), cmap="gray")
    a.set_title(title)
    a.axis("off")
fig.tight_layout()
fig.savefig(out / "sample.png", dpi=80)
print("figure:", out / "sample.png")

# A small on-disk corpus with a fixed 70/10/20 split.
corpus = S.build_corpus(10, (64, 64), out / "corpus", seed=0)
print({k: len(corpus.ids(k)) for k in ("train", "val", "test")})
