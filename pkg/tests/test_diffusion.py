import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpcc.diffnet import grad_check, init_params
from diffpcc.diffnet import tensor as tt
from diffpcc.diffusion import (build_schedule, decode, decode_batch, diffusion_loss, forward_chain,
                               forward_sample, posterior_mean, reverse_step)
from diffpcc.errors import ContractError


def _zero_denoiser(params):
    last = len(params.config.denoiser_widths)
    for suffix in ("wh", "wc", "b"):
        key = f"den.layer{last}.{suffix}"
        params.values[key] = np.zeros_like(params.values[key])
    return params


def test_schedule_endpoints_exact(paper_schedule):
    assert paper_schedule.beta[0] == 1e-4
    assert paper_schedule.beta[-1] == 0.05
    assert paper_schedule.alpha[0] == 0.9999
    assert paper_schedule.alpha_bar[0] == 0.9999


def test_schedule_interpolation_oracle(paper_schedule):
    # independent evaluation of b1 + (t-1)/(T-1)(bT - b1), exact rationals then rounded
    from fractions import Fraction
    b1, bT = Fraction(1, 10000), Fraction(5, 100)
    for t in (1, 2, 50, 100, 150, 199, 200):
        exact = b1 + Fraction(t - 1, 199) * (bT - b1)
        assert abs(paper_schedule.beta[t - 1] - float(exact)) <= 2 * np.spacing(float(exact))
    # the commonly quoted 0.0249266 is a rounding slip; the interpolant is 0.024924623...
    assert abs(paper_schedule.beta[99] - 0.02492462311557789) < 1e-15
    assert abs(paper_schedule.beta[99] - 0.0249266) < 5e-6


def test_schedule_identities_exact(paper_schedule):
    s = paper_schedule
    assert np.array_equal(s.alpha, 1.0 - s.beta)
    prod = 1.0
    for t in range(s.T):
        prod *= s.alpha[t]
        assert s.alpha_bar[t] == prod
    assert np.all(np.diff(s.beta) > 0)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_schedule_is_read_only(paper_schedule):
    with pytest.raises(ValueError):
        paper_schedule.beta[0] = 0.5


@pytest.mark.parametrize("args", [(1, 1e-4, 0.05), (10, 0.0, 0.05), (10, 0.1, 0.05), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_forward_sample_t1_vector(paper_schedule):
    out = forward_sample(np.array([1.0, 0.0, 0.0]), 1, np.ones(3), paper_schedule)
    expected = np.array([math.sqrt(0.9999) + math.sqrt(0.0001), math.sqrt(0.0001), math.sqrt(0.0001)])
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)
    # rounded figure 1.00995 sits 1.25e-9 from the exact value
    assert abs(out[0] - 1.00995) < 2e-9
    np.testing.assert_allclose(out[1:], 0.01, rtol=0, atol=1e-12)


def test_forward_sample_trivial_cases(paper_schedule, rng):
    x0 = rng.standard_normal(3)
    eps = rng.standard_normal(3)
    for t in (1, 77, 200):
        ab = paper_schedule.alpha_bar[t - 1]
        assert np.array_equal(forward_sample(x0, t, np.zeros(3), paper_schedule), np.sqrt(ab) * x0)
        assert np.array_equal(forward_sample(np.zeros(3), t, eps, paper_schedule), np.sqrt(1 - ab) * eps)


@pytest.mark.parametrize("t", [0, 201, 1.5])
def test_forward_sample_rejects_bad_t(paper_schedule, t):
    with pytest.raises(ValueError):
        forward_sample(np.zeros(3), np.asarray(t), np.zeros(3), paper_schedule)


def test_forward_chain_single_step_matches(paper_schedule, rng):
    x0, eps = rng.standard_normal(3), rng.standard_normal(3)
    chain = forward_chain(x0, 1, paper_schedule, noise=[eps])
    # sqrt(beta_1) and sqrt(1 - alpha_bar_1) differ by rounding only
    np.testing.assert_allclose(chain, forward_sample(x0, 1, eps, paper_schedule), rtol=1e-14, atol=1e-15)


def test_forward_chain_seeded_reproducible(paper_schedule):
    x0 = np.ones((5, 3))
    assert np.array_equal(forward_chain(x0, 30, paper_schedule, seed=4), forward_chain(x0, 30, paper_schedule, seed=4))


def test_reverse_step_exact_recovery(paper_schedule, rng):
    for _ in range(20):
        x0, eps = rng.standard_normal(3), rng.standard_normal(3)
        x1 = forward_sample(x0, 1, eps, paper_schedule)
        assert np.max(np.abs(reverse_step(x1, 1, eps, np.zeros(3), paper_schedule) - x0)) <= 1e-12


def test_reverse_step_zero_prediction(paper_schedule, rng):
    x = rng.standard_normal(3)
    for t in (1, 100, 200):
        out = reverse_step(x, t, np.zeros(3), np.zeros(3), paper_schedule)
        np.testing.assert_allclose(out, x / np.sqrt(paper_schedule.alpha[t - 1]), rtol=1e-15)


def test_reverse_step_closed_form_oracle(paper_schedule, rng):
    # mu rewritten as sqrt(1/alpha) x - (1 - alpha)/sqrt(alpha (1 - alpha_bar)) eps
    for t in (2, 57, 200):
        x, eh, z = rng.standard_normal((3, 3))
        a = 1 - (1e-4 + (t - 1) / 199 * (0.05 - 1e-4))
        ab = float(np.prod([1 - (1e-4 + (s - 1) / 199 * (0.05 - 1e-4)) for s in range(1, t + 1)]))
        mu = math.sqrt(1 / a) * x - (1 - a) / math.sqrt(a * (1 - ab)) * eh
        expected = mu + math.sqrt(1 - a) * z
        np.testing.assert_allclose(reverse_step(x, t, eh, z, paper_schedule), expected, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(posterior_mean(x, t, eh, paper_schedule), mu, rtol=1e-12, atol=1e-13)


def test_reverse_step_final_noise_contract(paper_schedule):
    with pytest.raises(ContractError):
        reverse_step(np.zeros(3), 1, np.zeros(3), np.array([0.0, 1e-3, 0.0]), paper_schedule)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_exact_recovery_property(vals):
    sched = build_schedule(200, 1e-4, 0.05)
    x0, eps = np.array(vals[:3]), np.array(vals[3:])
    x1 = forward_sample(x0, 1, eps, sched)
    assert np.max(np.abs(reverse_step(x1, 1, eps, np.zeros(3), sched) - x0)) <= 1e-12


# decoding


def test_decode_deterministic_and_shaped(tiny_params, rng):
    sched = build_schedule(tiny_params.config.T, tiny_params.config.beta_1, tiny_params.config.beta_T)
    z = rng.standard_normal(8)
    a = decode(tiny_params, z, 37, sched, seed=9)
    assert a.shape == (37, 3) and np.all(np.isfinite(a))
    assert np.array_equal(a, decode(tiny_params, z, 37, sched, seed=9))
    assert not np.array_equal(a, decode(tiny_params, z, 37, sched, seed=10))


def test_decode_batch_matches_single(tiny_params, rng):
    sched = build_schedule(tiny_params.config.T, tiny_params.config.beta_1, tiny_params.config.beta_T)
    z = rng.standard_normal((3, 8))
    batch = decode_batch(tiny_params, z, 11, sched, [0, 1, 2])
    for i in range(3):
        np.testing.assert_allclose(batch[i], decode(tiny_params, z[i], 11, sched, seed=i), rtol=0, atol=1e-12)


def test_decode_zero_denoiser_mean(tiny_config, rng):
    params = _zero_denoiser(init_params(tiny_config, seed=0))
    sched = build_schedule(tiny_config.T, tiny_config.beta_1, tiny_config.beta_T)
    out = decode(params, rng.standard_normal(8), 10_000, sched, seed=0)
    assert np.all(np.abs(out.mean(axis=0)) < 0.1)


def test_decode_zero_denoiser_scale(tiny_config):
    # with eps_hat = 0 each step divides by sqrt(alpha) and adds sqrt(beta) z
    params = _zero_denoiser(init_params(tiny_config, seed=0))
    sched = build_schedule(tiny_config.T, tiny_config.beta_1, tiny_config.beta_T)
    a = np.sqrt(sched.alpha)
    var = 1.0
    for t in range(sched.T, 0, -1):
        var = var / a[t - 1] ** 2 + (sched.beta[t - 1] if t > 1 else 0.0)
    out = decode(params, np.zeros(8), 20_000, sched, seed=1)
    assert abs(out.var() / var - 1) < 0.05


def test_decode_rejects_schedule_mismatch(tiny_params, paper_schedule):
    with pytest.raises(ValueError):
        decode(tiny_params, np.zeros(8), 4, paper_schedule)


# loss


def test_loss_zero_denoiser_unit_noise(tiny_config, rng):
    params = _zero_denoiser(init_params(tiny_config, seed=0))
    sched = build_schedule(tiny_config.T, tiny_config.beta_1, tiny_config.beta_T)
    x0 = rng.standard_normal((2, 9, 3))
    z = tt.Tensor(rng.standard_normal((2, 8)))
    ones = np.ones_like(x0)
    assert float(diffusion_loss(params.constants(), x0, z, np.array([1, 5]), ones, sched, tiny_config).data) == 3.0
    zeros = np.zeros_like(x0)
    assert float(diffusion_loss(params.constants(), x0, z, np.array([1, 5]), zeros, sched, tiny_config).data) == 0.0


def test_loss_nonnegative_and_shape_checked(tiny_params, rng):
    cfg = tiny_params.config
    sched = build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    x0 = rng.standard_normal((2, 5, 3))
    z = tt.Tensor(rng.standard_normal((2, 8)))
    val = diffusion_loss(tiny_params.constants(), x0, z, np.array([2, 3]), rng.standard_normal(x0.shape), sched, cfg)
    assert float(val.data) >= 0
    with pytest.raises(ValueError):
        diffusion_loss(tiny_params.constants(), x0, z, np.array([2, 3]), np.zeros((2, 4, 3)), sched, cfg)
    with pytest.raises(ValueError):
        diffusion_loss(tiny_params.constants(), x0, z, np.array([2]), np.zeros_like(x0), sched, cfg)


def test_loss_gradcheck(tiny_config):
    sched = build_schedule(tiny_config.T, tiny_config.beta_1, tiny_config.beta_T)
    names = [n for n in init_params(tiny_config).names() if n.startswith("den.")]
    t = np.array([1, 10])

    def make(rng):
        p = init_params(tiny_config, seed=int(rng.integers(1 << 30)))
        out = {n: p[n] for n in names}
        out["x0"] = rng.standard_normal((2, 4, 3))
        out["eps"] = rng.standard_normal((2, 4, 3))
        out["z"] = rng.standard_normal((2, 8))
        return out

    report = grad_check(lambda i: diffusion_loss(i, i["x0"].data, i["z"], t, i["eps"].data, sched, tiny_config),
                        make, trials=10, wrt=names + ["z"])
    assert report.passed, report
