import numpy as np
import pytest
from scipy import stats

from adaptrunc.datasets import load_galaxy
from adaptrunc.diagnostics import batch_means_se, geweke_test, gold_standard_run, mixture_stats
from adaptrunc.mixtures import NormalMixtureHyper, NormalMixtureModel

# -- batch means ---------------------------------------------------------------


def test_batch_means_iid_scaling():
    rng = np.random.default_rng(0)
    se = {n: np.mean([batch_means_se(rng.standard_normal(n)) for _ in range(40)]) for n in (2_500, 250_000)}
    assert se[2_500] / se[250_000] == pytest.approx(10.0, rel=0.1)
    assert se[250_000] == pytest.approx(1 / np.sqrt(250_000), rel=0.1)


def test_batch_means_ar1():
    # AR(1) with coefficient phi: the long-run variance is (1 + phi) / (1 - phi) for unit innovations scaled to unit marginal
    phi, n = 0.8, 200_000
    rng = np.random.default_rng(1)
    e = rng.standard_normal(n) * np.sqrt(1 - phi**2)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    assert batch_means_se(x) == pytest.approx(np.sqrt((1 + phi) / (1 - phi) / n), rel=0.25)


def test_batch_means_columns_and_errors():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((900, 3)) * np.array([1.0, 2.0, 0.5])
    se = batch_means_se(x, n_batches=30)
    assert se.shape == (3,)
    assert se[1] / se[0] == pytest.approx(2.0, rel=0.5)
    with pytest.raises(ValueError):
        batch_means_se(np.zeros(3))
    with pytest.raises(ValueError):
        batch_means_se(np.zeros(10), n_batches=6)


# -- Geweke harness on a conjugate toy ---------------------------------------------
#   theta ~ N(0, 1), y | theta ~ N(theta, 1): theta | y ~ N(y / 2, 1 / 2)


def _toy_geweke(update_sd, seed, n_iter=4000, thin=5):
    def draw_prior(n, r):
        return r.standard_normal(n)

    def simulate(theta, r):
        return theta[0] + r.standard_normal()

    def update(theta, y, r):
        return np.array([y / 2 + update_sd * r.standard_normal()])

    return geweke_test(draw_prior, simulate, update, lambda th: {"theta": th}, n_iter, np.random.default_rng(seed), thin=thin)


def test_geweke_exact_kernel_passes():
    res = _toy_geweke(np.sqrt(0.5), 3)["theta"]
    assert res.pvalue > 0.01
    assert res.n_joint == res.n_prior == 800


def test_geweke_false_rejection_rate():
    # exact two-sample KS p-values are discrete and slightly conservative: check the level, not uniformity
    p = np.array([_toy_geweke(np.sqrt(0.5), seed, n_iter=1000)["theta"].pvalue for seed in range(300)])
    for level in (0.05, 0.2):
        assert np.mean(p < level) < level + 3 * np.sqrt(level * (1 - level) / p.size)
    assert np.mean(p < 0.5) > 0.3


def test_geweke_detects_wrong_kernel():
    # posterior sd 1 instead of sqrt(1/2): the chain's stationary theta marginal is too wide
    assert _toy_geweke(1.0, 4, n_iter=20_000)["theta"].pvalue < 1e-4


def test_geweke_burn_in_and_thinning():
    seen = []

    def update(theta, y, r):
        seen.append(1)
        return theta

    res = geweke_test(lambda n, r: r.standard_normal(n), lambda th, r: 0.0, update,
                      lambda th: {"t": th}, 100, np.random.default_rng(0), thin=7, burn_in=30, n_prior=50)  # fmt: skip
    assert len(seen) == 100
    assert res["t"].n_joint == len(range(30, 100, 7)) and res["t"].n_prior == 50


# -- gold standard -----------------------------------------------------------------------


class _IidModel:
    """Every sweep is an exact independent draw: M ~ Ga(2, 1)."""

    n_init = 1

    def prior_state(self, n, rng):
        return np.zeros(n)

    def sweep(self, state, rng):
        return rng.gamma(2.0, size=state.shape)

    def predictive_density(self, state, grid):
        return np.tile(stats.norm.pdf(grid), (state.size, 1))


def test_gold_standard_iid_stream():
    rng = np.random.default_rng(5)
    gs = gold_standard_run(_IidModel(), 5, 20_000, rng, burn_in=0, n_chains=4,
                           grid=np.linspace(-3, 3, 7), stats=lambda m, st: {"M": st})  # fmt: skip
    assert gs.n_iter == 20_000 and gs.n_chains == 4
    assert gs.se["M"] == pytest.approx(np.sqrt(2.0 / 80_000), rel=0.3)
    assert abs(gs.means["M"] - 2.0) < 4 * gs.se["M"]
    np.testing.assert_allclose(gs.density, stats.norm.pdf(gs.grid))
    np.testing.assert_allclose(gs.density_se, 0.0, atol=1e-15)


def test_gold_standard_rejects_short_runs():
    with pytest.raises(ValueError):
        gold_standard_run(_IidModel(), 5, 50, np.random.default_rng(0), n_batches=50)


def test_two_gold_runs_agree():
    y = load_galaxy()
    model = NormalMixtureModel(y, NormalMixtureHyper.from_data(y), prior="dp", truncation="rsb", n_init=30)
    grid = np.linspace(y.min(), y.max(), 50)
    runs = [gold_standard_run(model, 30, 3000, np.random.default_rng(seed), burn_in=500, n_chains=8, grid=grid,
                              n_batches=30, density_every=10) for seed in (6, 7)]  # fmt: skip
    a, b = runs
    for k in a.means:
        assert abs(a.means[k] - b.means[k]) < 3 * np.hypot(a.se[k], b.se[k]), k
    z = np.abs(a.density - b.density) / np.hypot(a.density_se, b.density_se)
    assert np.mean(z < 3) > 0.95
    assert np.trapezoid(a.density, grid) == pytest.approx(1.0, abs=0.05)


def test_mixture_stats_keys():
    y = load_galaxy()[:20]
    rng = np.random.default_rng(8)
    for prior, keys in (("dp", {"M", "K"}), ("py", {"M", "a", "K"})):
        model = NormalMixtureModel(y, NormalMixtureHyper.from_data(y), prior=prior, truncation="rsb", n_init=5)
        out = mixture_stats(model, model.prior_state(3, rng))
        assert set(out) == keys and all(v.shape == (3,) for v in out.values())
