import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from camorect import diffusion as D


@pytest.fixture
def sched():
    return D.make_schedule(100)


def test_linear_schedule_endpoints(sched):
    assert sched.beta[0] == pytest.approx(1e-4)
    assert sched.beta[-1] == pytest.approx(0.02)
    # alpha_bar is a running product
    np.testing.assert_allclose(sched.alpha_bar, np.cumprod(1 - sched.beta), rtol=0, atol=0)
    assert sched.abar(0) == 1.0


def test_schedule_arrays_read_only(sched):
    with pytest.raises(ValueError):
        sched.beta[0] = 0.5


def test_cosine_schedule_monotone():
    s = D.make_schedule(50, "cosine")
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.beta > 0) & (s.beta <= 0.999))


@pytest.mark.parametrize("bad", [dict(T=0), dict(T=10, kind="quadratic"), dict(T=10, beta_min=0.5, beta_max=0.1)])
def test_schedule_rejects(bad):
    with pytest.raises(ValueError):
        D.make_schedule(**bad)


def test_forward_noise_zero_eps_scales_x0(sched):
    x0 = torch.tensor([[1.0, -1.0]])
    out = D.forward_noise(x0, 30, torch.zeros_like(x0), sched)
    assert torch.allclose(out.values, math.sqrt(sched.abar(30)) * x0)


def test_forward_noise_per_sample_t(sched):
    x0 = torch.ones(3, 1, 2, 2)
    eps = torch.full_like(x0, 0.5)
    t = torch.tensor([1, 50, 100])
    v = D.forward_noise(x0, t, eps, sched).values
    for i, ti in enumerate(t.tolist()):
        ab = sched.abar(ti)
        assert v[i, 0, 0, 0].item() == pytest.approx(math.sqrt(ab) + 0.5 * math.sqrt(1 - ab), rel=1e-6)


def test_forward_noise_bad_t(sched):
    x = torch.zeros(2)
    with pytest.raises(ValueError):
        D.forward_noise(x, 0, x, sched)
    with pytest.raises(ValueError):
        D.forward_noise(x, 101, x, sched)


def test_posterior_matches_bayes_oracle(sched):
    # q(x_{t-1}|x_t, x0) from completing the square of two Gaussians
    t = 40
    ab_prev, ab_t = sched.abar(t - 1), sched.abar(t)
    beta = 1 - ab_t / ab_prev
    prior_m = lambda x0: math.sqrt(ab_prev) * x0  # noqa: E731
    prior_v = 1 - ab_prev
    lik_v = beta
    a = math.sqrt(1 - beta)
    post_v = 1 / (1 / prior_v + a * a / lik_v)
    x0, xt = 0.3, -0.7
    post_m = post_v * (prior_m(x0) / prior_v + a * xt / lik_v)
    mean, var = D.posterior_params(torch.tensor([x0], dtype=torch.float64), torch.tensor([xt], dtype=torch.float64),
                                   t, sched)
    assert var == pytest.approx(post_v, rel=1e-12)
    assert mean.item() == pytest.approx(post_m, rel=1e-12)


def test_strided_posterior_reduces_to_one_step(sched):
    x0 = torch.randn(5, dtype=torch.float64)
    xt = torch.randn(5, dtype=torch.float64)
    m1, v1 = D.posterior_params(x0, xt, 20, sched)
    m2, v2 = D.posterior_params(x0, xt, 20, sched, prev_t=19)
    assert torch.equal(m1, m2) and v1 == v2


def test_posterior_rejects_t1(sched):
    x = torch.zeros(3)
    with pytest.raises(ValueError):
        D.posterior_params(x, x, 1, sched)


def test_ancestral_step_final_returns_x0(sched):
    x0 = torch.rand(4)
    out = D.ancestral_step(torch.randn(4), x0, 1, sched, torch.randn(4))
    assert torch.equal(out, x0)


def test_sampling_timesteps():
    assert D.sampling_timesteps(10, 100) == [100, 89, 78, 67, 56, 45, 34, 23, 12, 1]
    assert D.sampling_timesteps(1, 100) == [100]
    assert D.sampling_timesteps(5, 5) == [5, 4, 3, 2, 1]
    with pytest.raises(ValueError):
        D.sampling_timesteps(101, 100)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300), st.data())
def test_sampling_timesteps_strictly_decreasing(T, data):
    steps = data.draw(st.integers(1, T))
    ts = D.sampling_timesteps(steps, T)
    assert len(ts) == steps and ts[0] == T
    assert all(a > b for a, b in zip(ts, ts[1:]))
    if steps > 1:
        assert ts[-1] == 1


def test_sample_oracle_denoiser_recovers_mask(sched):
    target = torch.zeros(1, 1, 4, 4)
    target[..., 1:3, 1:3] = 1
    sig = D.mask_to_signal(target)
    out = D.sample(lambda x, t, c: sig, None, 10, (1, 1, 4, 4), 0, sched)
    assert torch.equal(out, target)


def test_sample_is_seeded(sched):
    den = lambda x, t, c: torch.tanh(x)  # noqa: E731
    a = D.sample(den, None, 5, (2, 1, 3, 3), 11, sched)
    b = D.sample(den, None, 5, (2, 1, 3, 3), 11, sched)
    c = D.sample(den, None, 5, (2, 1, 3, 3), 12, sched)
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_kl_gaussian_closed_form():
    # KL(N(0,1) || N(1,4)) = log 2 + (1 + 1)/8 - 1/2
    assert D.kl_gaussian(0.0, 1.0, 1.0, 4.0).item() == pytest.approx(math.log(2) + 0.25 - 0.5, rel=1e-12)
    assert D.kl_gaussian(torch.zeros(3), 1.0, torch.zeros(3), 1.0).item() == 0.0
    with pytest.raises(ValueError):
        D.kl_gaussian(0.0, 0.0, 0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 5), st.floats(-3, 3), st.floats(0.05, 5))
def test_kl_gaussian_nonnegative(m1, v1, m2, v2):
    assert D.kl_gaussian(m1, v1, m2, v2).item() >= -1e-12


def test_mask_signal_round_trip():
    m = torch.tensor([0.0, 1.0, 0.25])
    assert torch.allclose(D.signal_to_mask(D.mask_to_signal(m)), m)
    assert D.signal_to_mask(torch.tensor([5.0, -5.0])).tolist() == [1.0, 0.0]
