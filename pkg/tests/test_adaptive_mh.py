import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from adaptrunc.adaptive_mh import TRANSFORMS, AdaptiveScale, mh_step


def test_adapt_unchanged_at_target():
    s = AdaptiveScale(log_var=0.7, target=0.3)
    s.adapt_step(0.3)
    assert s.log_var == pytest.approx(0.7)
    assert s.iteration == 2


def test_adapt_first_step():
    s = AdaptiveScale(log_var=0.0, c=0.55, target=0.3)
    s.adapt_step(0.8)
    assert s.log_var == pytest.approx(0.5)


def test_adapt_clamp():
    s = AdaptiveScale(log_var=50.0, bound=50.0)
    s.adapt_step(1.0)
    assert s.log_var == 50.0


def test_adapt_rejects_bad_probability():
    with pytest.raises(ValueError):
        AdaptiveScale().adapt_step(1.5)
    with pytest.raises(ValueError):
        AdaptiveScale(c=0.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(-60, 60))
def test_adapt_bounded_and_counts(probs, start):
    s = AdaptiveScale(log_var=start, bound=50.0)
    for i, p in enumerate(probs):
        s.adapt_step(p)
        assert abs(s.log_var) <= 50.0
        assert s.iteration == i + 2


def test_take_and_append():
    s = AdaptiveScale.full((3, 2), log_var=1.0)
    s.adapt_step(np.ones((3, 2)))
    t = s.take([2, 2, 0])
    assert t.shape == (3, 2) and np.all(t.iteration == 2)
    u = s.append(2, log_var=-1.0)
    assert u.shape == (3, 4)
    np.testing.assert_array_equal(u.iteration[:, 2:], 1)
    np.testing.assert_array_equal(u.log_var[:, 2:], -1.0)


def test_zero_variance_limit():
    rng = np.random.default_rng(0)
    s = AdaptiveScale(log_var=-50.0)
    x = np.array(0.3)
    new, acc, _ = mh_step(x, lambda v: stats.norm.logpdf(v), s, rng)
    assert acc == pytest.approx(1.0, abs=1e-9)
    assert new == pytest.approx(0.3, abs=1e-9)


def test_invalid_current():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        mh_step(np.array(-1.0), lambda v: -v, AdaptiveScale(), rng, transform="log")
    with pytest.raises(ValueError):
        mh_step(np.array(1.0), lambda v: np.full_like(v, -np.inf), AdaptiveScale(), rng)


@pytest.mark.parametrize(
    "name, x", [("log", np.array([0.1, 2.0])), ("logit", np.array([0.2, 0.9])), ("fisher_rho", np.array([-0.7, 0.4]))]
)
def test_jacobians_numerically(name, x):
    tr = TRANSFORMS[name]
    h = 1e-6
    u = tr.forward(x)
    dx_du = (tr.inverse(u + h) - tr.inverse(u - h)) / (2 * h)
    np.testing.assert_allclose(tr.log_jac(x), np.log(dx_du), rtol=1e-6)
    np.testing.assert_allclose(tr.inverse(u), x, rtol=1e-12)


def test_acceptance_rate_standard_normal():
    rng = np.random.default_rng(1)
    s = AdaptiveScale(log_var=0.0, c=0.55, target=0.3)
    x = np.array(0.0)
    lp = None
    acc = np.empty(100_000)
    for i in range(acc.size):
        x, a, lp = mh_step(x, stats.norm.logpdf, s, rng, current_logp=lp)
        acc[i] = a
    assert abs(acc.mean() - 0.3) < 0.03


def test_logit_beta_mean():
    # 100 chains x 10^4 steps = 10^6 draws
    rng = np.random.default_rng(2)
    s = AdaptiveScale.full(100)
    x = np.full(100, 0.5)
    lp = None
    total = 0.0
    for _ in range(10_000):
        x, _, lp = mh_step(x, lambda v: stats.beta.logpdf(v, 2, 2), s, rng, transform="logit", current_logp=lp)
        total += x.sum()
    assert abs(total / 1e6 - 0.5) < 0.01


@pytest.mark.parametrize(
    "name, dist",
    [("identity", stats.norm(1.0, 2.0)), ("log", stats.gamma(3.0)), ("logit", stats.beta(2.0, 5.0)),
     ("fisher_rho", stats.beta(3.0, 2.0, loc=-1.0, scale=2.0))],
)  # fmt: skip
def test_invariance_frozen_scale(name, dist):
    # exact draws from the target stay exact under the kernel; compare binned counts
    rng = np.random.default_rng(3)
    n = 20_000
    x = dist.rvs(size=n, random_state=rng)
    for _ in range(25):
        s = AdaptiveScale.full(n, log_var=0.0)  # fresh scale each step: no adaptation between steps
        x, _, _ = mh_step(x, dist.logpdf, s, rng, transform=name)
    edges = dist.ppf(np.linspace(0, 1, 21))
    obs, _ = np.histogram(x, edges)
    assert stats.chisquare(obs).pvalue > 0.01
