import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from queueseq.timedist import (
    NegativeTime,
    RiemannDist,
    choose_grid,
    exp_head,
    exp_nll,
    exp_nll_grad,
    exp_sq_error,
    riemann_bin_index,
    riemann_entropy,
    riemann_logpdf,
    riemann_sample,
    riemann_samples,
)

D3 = RiemannDist(1.0, 3, np.array([0.5, 0.3, 0.2]))


def test_logpdf_inside_bin():
    assert riemann_logpdf(D3, 0.5) == pytest.approx(math.log(0.5))


def test_bin_edge_belongs_to_next_bin():
    assert riemann_logpdf(D3, 1.0) == pytest.approx(math.log(0.3))


def test_negative_time():
    with pytest.raises(NegativeTime):
        riemann_logpdf(D3, -0.1)


def test_tail_is_half_normal():
    d = RiemannDist(0.5, 3, np.array([0.2, 0.3, 0.5]), tail_scale=2.0)
    x = 0.7
    ref = math.log(0.5) + 0.5 * math.log(2 / math.pi) - math.log(2.0) - 0.5 * (x / 2.0) ** 2
    assert riemann_logpdf(d, 1.0 + x) == pytest.approx(ref)


def test_tail_scale_defaults_to_width():
    assert RiemannDist(0.25, 4, np.full(4, 0.25)).tail_scale == 0.25


def _integral(d):
    body = sum(math.exp(riemann_logpdf(d, (k + 0.5) * d.w)) * d.w for k in range(d.n - 1))
    tail, _ = integrate.quad(lambda t: math.exp(riemann_logpdf(d, t)), d.tail_start, np.inf, epsabs=1e-12)
    return body + tail


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_density_integrates_to_one(seed):
    rs = np.random.default_rng(seed)
    n = int(rs.integers(2, 60))
    p = rs.dirichlet(np.ones(n))
    d = RiemannDist(float(rs.uniform(0.01, 2.0)), n, p, tail_scale=float(rs.uniform(0.1, 3.0)))
    assert _integral(d) == pytest.approx(1.0, abs=1e-6)


def test_bin_index():
    d = RiemannDist(0.1, 10, np.full(10, 0.1))
    assert riemann_bin_index(d, 0.0) == 0
    assert riemann_bin_index(d, 0.9) == 9
    assert riemann_bin_index(d, 1e9) == 9


def test_one_hot_first_bin():
    d = RiemannDist(0.2, 5, np.array([1.0, 0, 0, 0, 0]))
    xs = riemann_samples(d, 2000, 1)
    assert xs.min() >= 0 and xs.max() < 0.2


def test_tail_only():
    d = RiemannDist(0.2, 5, np.array([0, 0, 0, 0, 1.0]))
    assert riemann_samples(d, 2000, 2).min() >= 0.8


def test_sample_lands_in_its_bin():
    d = RiemannDist(0.3, 6, np.array([0.1, 0.2, 0.3, 0.1, 0.2, 0.1]))
    xs = riemann_samples(d, 20_000, 3)
    freq = np.bincount([riemann_bin_index(d, x) for x in xs], minlength=6) / len(xs)
    np.testing.assert_allclose(freq, d.probs, atol=0.01)


def test_sampling_is_seeded():
    assert riemann_sample(D3, 42) == riemann_sample(D3, 42)


def test_entropy_matches_sample_nll():
    d = RiemannDist(0.5, 5, np.array([0.3, 0.25, 0.2, 0.15, 0.1]), tail_scale=0.8)
    xs = riemann_samples(d, 200_000, 4)
    nll = -np.mean([riemann_logpdf(d, x) for x in xs])
    assert nll == pytest.approx(riemann_entropy(d), rel=0.01)


def test_validation():
    with pytest.raises(ValueError):
        RiemannDist(1.0, 3, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        RiemannDist(1.0, 2, np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        RiemannDist(0.0, 2, np.array([0.5, 0.5]))


def test_choose_grid_covers_quantile():
    dts = np.random.default_rng(0).exponential(1.0, 10_000)
    w, n = choose_grid(dts, 200)
    assert n == 200
    assert (n - 1) * w >= np.quantile(dts, 0.999) - 1e-12


def test_exp_head_values():
    assert exp_head(0.0) == pytest.approx(math.log(2), abs=2e-6)
    assert exp_head(50.0) == pytest.approx(50.0)
    assert exp_head(-800.0) > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-8, 8), st.floats(0, 20))
def test_nll_gradient_matches_fd(raw, t):
    h = 1e-5
    fd = (exp_nll(raw + h, t) - exp_nll(raw - h, t)) / (2 * h)
    g = exp_nll_grad(raw, t)
    assert abs(fd - g) <= 1e-5 * max(1.0, abs(g))


def test_sq_error_metric():
    r = exp_head(1.0)
    assert exp_sq_error(1.0, 2.0) == pytest.approx((1 / r - 2.0) ** 2)
