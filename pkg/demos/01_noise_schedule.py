#!/usr/bin/env python3
"""Mask diffusion in a few lines: the schedule, the forward process and the
strided sampler.

Run:  python demos/01_noise_schedule.py
"""
import math

import torch

from camorect import diffusion as D

# The training default: 100 steps, betas from 1e-3 to 0.2.
sched = D.make_schedule(100, "linear", 1e-3, 0.2)
print("T =", sched.T)
print("alpha_bar at t = 1, 10, 50, 100:", [round(sched.abar(t), 4) for t in (1, 10, 50, 100)])

# A cosine schedule keeps more signal around the middle of the chain.
cos = D.make_schedule(100, "cosine")
print("cosine alpha_bar at t = 50:", round(cos.abar(50), 4))

# Forward noising of a binary mask. Masks live in [-1, 1] inside the chain.
mask = torch.zeros(1, 1, 8, 8)
mask[..., 2:6, 3:7] = 1
x0 = D.mask_to_signal(mask)
g = torch.Generator().manual_seed(0)
for t in (1, 25, 100):
    eps = torch.randn(x0.shape, generator=g)
    xt = D.forward_noise(x0, t, eps, sched).values
    corr = torch.corrcoef(torch.stack([xt.flatten(), x0.flatten()]))[0, 1].item()
    print(f"t={t:3d}  corr(x_t, x_0) = {corr:+.3f}")

# Empirical check of the marginal: mean sqrt(ab) * x0, std sqrt(1 - ab).
n, t, v = 200_000, 40, 0.6
eps = torch.randn(n, generator=g, dtype=torch.float64)
xt = D.forward_noise(torch.full((n,), v, dtype=torch.float64), t, eps, sched).values
ab = sched.abar(t)
print(f"mean {xt.mean():.4f} vs {math.sqrt(ab) * v:.4f},  std {xt.std():.4f} vs {math.sqrt(1 - ab):.4f}")

# Sampling visits 10 of the 100 timesteps.
print("sampling timesteps:", D.sampling_timesteps(10, 100))


# An oracle denoiser that always knows the answer recovers the mask exactly,
# which makes the sampler easy to sanity-check.
def oracle(x_t, t, cond):
    return x0


out = D.sample(oracle, None, steps=10, shape=x0.shape, rng_seed=1, schedule=sched)
print("oracle sampler recovers mask:", bool(((out > 0.5).float() == mask).all()))

# Closed-form Gaussian KL, the quantity that the KL distance builds on.
print("KL(N(0,1) || N(1,4)) =", round(D.kl_gaussian(0.0, 1.0, 1.0, 4.0).item(), 6))
