"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``. The training criteria build a 200-sample
64x64 corpus and a 60-epoch Leader, so the whole file takes a while on CPU.
Set ``CAMORECT_ACCEPT_DIR`` to keep (and reuse) the artifacts between runs.
"""
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

import oracles as O  # noqa: E402
import test_gradients as G  # noqa: E402
from conftest import TOY_ARCH  # noqa: E402
from camorect import diffusion as D  # noqa: E402
from camorect import metrics as M  # noqa: E402
from camorect import training as T  # noqa: E402
from camorect.models import ArchConfig  # noqa: E402
from camorect.rectification import METRIC_NAMES  # noqa: E402
from camorect.synth import build_corpus  # noqa: E402

RES = 64
EPOCHS = 60
LR = 1e-3
SEED = 0
OFF = dict(cdc_enabled=False, hdc_enabled=False, cc_enabled=False)
TREND_ROWS = [
    dict(name="baseline", rectification=OFF),
    dict(name="+CDC", rectification=dict(OFF, cdc_enabled=True)),
    dict(name="+CDC+HDC", rectification=dict(OFF, cdc_enabled=True, hdc_enabled=True)),
    dict(name="+CDC+HDC+CC", rectification=dict(cdc_enabled=True, hdc_enabled=True, cc_enabled=True)),
]
HDC_SUBSETS = [(1,), (2,), (3,), (1, 2), (2, 3), (1, 2, 3)]


_CAPSYS = []


@pytest.fixture(autouse=True)
def _verdict_channel(capsys):
    _CAPSYS[:] = [capsys]
    yield


def report(n, ok, detail):
    # bypass output capture so the verdict lines always reach the terminal
    with _CAPSYS[0].disabled():
        print(f"\nacceptance {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    return ok


# ---- shared desk-scale artifacts ---------------------------------------------


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    env = os.environ.get("CAMORECT_ACCEPT_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("accept")
    root.mkdir(parents=True, exist_ok=True)
    return root


@pytest.fixture(scope="module")
def corpus(work):
    root = work / "corpus200"
    if not (root / "manifest.json").exists():
        build_corpus(200, (RES, RES), root, seed=SEED)
    return root


def base_config(corpus, **kw):
    cfg = dict(corpus=str(corpus), resolution=RES, epochs=EPOCHS, lr=LR, seed=SEED, tce_mode=None)
    cfg.update(kw)
    return T.TrainConfig(**cfg)


@pytest.fixture(scope="module")
def leader(work, corpus):
    out = work / "leader"
    ck = out / T.CHECKPOINT_NAME
    if not ck.exists():
        T.train_leader(base_config(corpus), out)
    return ck


def ablation(cfg, rows, leader, out):
    """Run (or reload) an ablation table."""
    table = out / "table.json"
    if table.exists():
        done = json.loads(table.read_text())
        if [r["name"] for r in done] == [r["name"] for r in rows] and not any("error" in r for r in done):
            return done
    return T.run_ablation(cfg, rows, leader, out)


@pytest.fixture(scope="module")
def trend_table(work, corpus, leader):
    return ablation(base_config(corpus, scale=4), TREND_ROWS, leader, work / "trend_x4")


# ---- 1-5: properties with oracles -----------------------------------------------


def test_c01_forward_marginal():
    sched = D.make_schedule(100)
    rng = np.random.default_rng(11)
    n = 100_000
    t0 = time.time()
    ok, worst = True, 0.0
    for case in range(3):
        x0 = float(rng.uniform(-1, 1))
        t = int(rng.integers(1, 101))
        eps = torch.from_numpy(rng.standard_normal(n))
        xt = D.forward_noise(torch.full((n,), x0, dtype=torch.float64), t, eps, sched).values
        ab = sched.abar(t)
        mu, sd = math.sqrt(ab) * x0, math.sqrt(1 - ab)
        z_mean = abs(xt.mean().item() - mu) / (sd / math.sqrt(n))
        z_std = abs(xt.std().item() - sd) / (sd / math.sqrt(2 * n))
        worst = max(worst, z_mean, z_std)
        ok &= z_mean < 3 and z_std < 3
    dt = time.time() - t0
    ok &= dt < 30
    assert report(1, ok, f"max |z| = {worst:.2f} (< 3), {dt:.1f}s")


def test_c02_kl_monte_carlo():
    rng = np.random.default_rng(12)
    n = 1_000_000
    t0 = time.time()
    worst = 0.0
    for case in range(10):
        m1, m2 = rng.uniform(-2, 2, size=2)
        m2 = m1 + np.sign(m2 - m1 + 1e-9) * rng.uniform(1.0, 3.0)
        v1, v2 = rng.uniform(0.3, 2.0, size=2)
        g = torch.Generator().manual_seed(100 + case)
        x = m1 + math.sqrt(v1) * torch.randn(n, generator=g, dtype=torch.float64)
        logp = -0.5 * (math.log(2 * math.pi * v1) + (x - m1) ** 2 / v1)
        logq = -0.5 * (math.log(2 * math.pi * v2) + (x - m2) ** 2 / v2)
        mc = (logp - logq).mean().item()
        exact = D.kl_gaussian(m1, v1, m2, v2).item()
        worst = max(worst, abs(mc - exact) / exact)
    dt = time.time() - t0
    ok = worst < 0.01 and dt < 60
    assert report(2, ok, f"max rel err {worst:.4%} (< 1%), {dt:.1f}s")


def test_c03_gradient_suite():
    t0 = time.time()
    checks = [("structure_loss", G.test_structure_loss_grad)]
    checks += [(f"dist_metric[{m}]", lambda m=m: G.test_dist_metric_grad(m)) for m in METRIC_NAMES]
    checks += [("cdc_loss", G.test_cdc_grad), ("hdc_loss", G.test_hdc_grad),
               ("follower step", lambda: G.test_full_follower_step_grad(ArchConfig(**TOY_ARCH)))]
    failed = []
    for name, fn in checks:
        try:
            fn()
        except AssertionError:
            failed.append(name)
    dt = time.time() - t0
    ok = not failed and dt < 300
    assert report(3, ok, f"{len(checks) - len(failed)}/{len(checks)} gradient checks, {dt:.1f}s {failed or ''}")


def test_c04_frozen_leader(work, corpus, leader):
    before = leader.read_bytes()
    cfg = base_config(corpus, epochs=3, tce_mode="EL")
    res = T.train_follower(cfg, leader, work / "frozen_run")
    same = leader.read_bytes() == before
    audit = res.audit
    ok = same and audit["steps_audited"] > 0 and audit["leader_grad_nonzero"] == 0
    assert report(4, ok, f"bytes identical={same}, audited steps={audit['steps_audited']}, "
                         f"nonzero leader grads={audit['leader_grad_nonzero']}")


def _metric_pairs():
    rng = np.random.default_rng(2024)
    out = []
    for i in range(50):
        gt = rng.random((16, 16)) < rng.uniform(0.1, 0.6)
        kind = i % 10
        if kind == 0:
            gt[:] = False
        elif kind == 1:
            gt[:] = True
        elif kind == 2:
            gt[:] = False
            gt[rng.integers(16), rng.integers(16)] = True
        pred = rng.random((16, 16))
        if kind == 3:
            pred = gt.astype(float)
        elif kind == 4:
            pred = np.zeros((16, 16))
        elif kind > 4:
            pred = np.clip(gt * rng.uniform(0.3, 0.9) + pred * 0.5, 0, 1)
        out.append((pred, gt))
    return out


def test_c05_metric_oracle():
    t0 = time.time()
    worst = 0.0
    for pred, gt in _metric_pairs():
        for name in ("s_measure", "e_measure", "weighted_f", "mae"):
            worst = max(worst, abs(getattr(M, name)(pred, gt) - getattr(O, name)(pred, gt)))
    dt = time.time() - t0
    ok = worst < 1e-6 and dt < 60
    assert report(5, ok, f"max |diff| {worst:.2e} over 50 pairs x 4 metrics, {dt:.1f}s")


# ---- 6-10: desk-scale training harness --------------------------------------------


def test_c06_rectification_trend(trend_table):
    s = [r.get("s_alpha", float("nan")) for r in trend_table]
    ok = s[0] < s[1] <= s[2] <= s[3] and (s[3] - s[0]) * 100 >= 2.0
    detail = "  ".join(f"{r['name']}={v:.4f}" for r, v in zip(trend_table, s))
    assert report(6, ok, detail)


def test_c07_degradation_order(work, corpus, leader, trend_table):
    full = TREND_ROWS[-1]
    s = {4: trend_table[-1]["s_alpha"]}
    for n in (2, 8):
        t = ablation(base_config(corpus, scale=n), [full], leader, work / f"full_x{n}")
        s[n] = t[0].get("s_alpha", float("nan"))
    ok = s[2] > s[4] > s[8]
    assert report(7, ok, f"S(2x)={s[2]:.4f}  S(4x)={s[4]:.4f}  S(8x)={s[8]:.4f}")


def test_c08_cdc_metric_variants(work, corpus, leader):
    rows = [dict(name=f"CDC-{m}", rectification=dict(OFF, cdc_enabled=True, metric_cdc=m)) for m in METRIC_NAMES]
    table = ablation(base_config(corpus, epochs=2), rows, leader, work / "cdc_metrics")
    tsv = (work / "cdc_metrics" / "table.tsv").read_text().splitlines()
    finite = all("error" not in r and math.isfinite(r["final_loss"]) for r in table)
    ok = len(table) == 6 and len(tsv) == 7 and finite
    detail = "  ".join(f"{r['name']}={r.get('s_alpha', float('nan')):.4f}" for r in table)
    assert report(8, ok, f"{len(table)} rows, all finite={finite}: {detail}")


def test_c09_determinism(work, corpus, leader):
    cfg = base_config(corpus, epochs=1, tce_mode="EL", threads=1)
    outs = [work / "det_a", work / "det_b"]
    for o in outs:
        for f in (T.LOG_NAME, T.CHECKPOINT_NAME):
            (o / f).unlink(missing_ok=True)
        T.train_follower(cfg, leader, o)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in (T.LOG_NAME, T.CHECKPOINT_NAME))
    assert report(9, same, f"loss log and checkpoint bit-identical={same}")


def test_c10_hdc_subsets(work, corpus, leader):
    rows = [dict(name="HDC-" + "".join(map(str, s)),
                 rectification=dict(OFF, cdc_enabled=True, hdc_enabled=True, hdc_layers=list(s)))
            for s in HDC_SUBSETS]
    table = ablation(base_config(corpus, epochs=2), rows, leader, work / "hdc_subsets")
    ok = len(table) == 6 and all("error" not in r for r in table) and (work / "hdc_subsets/table.tsv").exists()
    detail = "  ".join(f"{r['name']}={r.get('s_alpha', float('nan')):.4f}" for r in table)
    assert report(10, ok, f"{len(table)} rows: {detail}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
