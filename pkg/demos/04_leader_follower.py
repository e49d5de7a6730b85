#!/usr/bin/env python3
"""Leader and Follower networks and the rectification losses between them.

The Leader reads the clean image and produces a multi-level condition; the
Follower reads the degraded image, optionally with time tokens in its
transformer encoder, and is pulled towards the Leader's condition (CDC) and
decoder features (HDC).

Run:  python demos/04_leader_follower.py
"""
import torch

from camorect import diffusion as D
from camorect import synth as S
from camorect.models import ArchConfig, TCE_MODES, build_model, time_token_plan
from camorect.rectification import METRIC_NAMES, RectificationConfig, cdc_loss, dist_metric, hdc_loss
from camorect.training import follower_step_loss

arch = ArchConfig(resolution=64)
leader = build_model(arch, "leader", seed=0).freeze()
follower = build_model(arch, "follower", tce_mode="EL", seed=1)
count = lambda m: sum(p.numel() for p in m.parameters())  # noqa: E731
print(f"leader params {count(leader):,}  follower params {count(follower):,}")

# Where the time token enters the 8-layer encoder in each mode.
for mode in TCE_MODES:
    print(f"  {mode}: {time_token_plan(mode, arch.depth)}")

s = S.gen_sample(0, (64, 64))
x_h = torch.from_numpy(s.image_hq)[None]
x_l = torch.from_numpy(S.upsample(s.image_lq[4], 64, 64))[None]
m0 = D.mask_to_signal(torch.from_numpy(s.mask.astype("float32"))[None, None])

sched = D.make_schedule(100, "linear", 1e-3, 0.2)
t = torch.tensor([40])
eps = torch.randn(m0.shape, generator=torch.Generator().manual_seed(0))
m_t = D.forward_noise(m0, t, eps, sched).values

with torch.no_grad():
    c_h = leader.encode(x_h)
    _, d_h = leader.denoise(m_t, t, c_h)
c_l = follower.encode(x_l, t)
_, d_l = follower.denoise(m_t, t, c_l)
print("condition levels:", c_l.shapes())
print("hybrid layers:   ", d_l.shapes())

# The six distances, applied to the coarsest condition level.
for name in METRIC_NAMES:
    print(f"  D_{name:<3} = {dist_metric(name, c_l.levels[-1], c_h.levels[-1]).item():.4f}")

print("CDC (KL):", round(cdc_loss(c_l, c_h, "KL").item(), 4))
print("HDC (KL, layers 2,3):", round(hdc_loss(d_l, d_h, (2, 3), "KL").item(), 4))

# One full Follower step: structure loss on both views plus rectification.
rect = RectificationConfig()
mask = torch.from_numpy(s.mask.astype("float32"))[None, None]
x_h2, x_l2, mask2 = (torch.cat([v, v.flip(-1)]) for v in (x_h, x_l, mask))
loss, parts = follower_step_loss(follower, leader, x_h2, x_l2, mask2, t.repeat(2), torch.tensor([40, 70]),
                                 torch.cat([eps, eps.flip(-1)]), sched, rect, n_views=2)
loss.backward()
print("step loss", round(loss.item(), 4), {k: round(v, 4) for k, v in parts.items()})
print("leader received gradients:", any(p.grad is not None for p in leader.parameters()))
