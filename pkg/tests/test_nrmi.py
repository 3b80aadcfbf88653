import numpy as np
import pytest
from oracles import RecordingRNG, inverse_cdf_jumps, normalized_density
from scipy import integrate, special, stats

from adaptrunc import smc
from adaptrunc.datasets import load_galaxy
from adaptrunc.mixtures import NormalMixtureHyper
from adaptrunc.nrmi import (
    CppState,
    NrmiMixtureModel,
    cpp_transition,
    level_schedule,
    sample_tilted_band,
    tilted_tail_mass,
    update_allocations,
    update_occupied_jumps,
    update_unoccupied_jumps,
    update_v,
)


def eta(x, M=1.0):
    return M * np.exp(-x) / x


def band_mass(f, lo, hi):
    return integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-12, limit=200)[0]


def _state(S, J, level, v=0.5, M=1.3, n=1):
    J = np.tile(np.asarray(J, dtype=float), (S, 1))
    return CppState(J=J, mu=np.zeros_like(J), tau=np.ones_like(J), active=np.isfinite(J),
                    s=np.zeros((S, n), dtype=np.int64), v=np.full(S, v), M=np.full(S, M), level=level)  # fmt: skip


# -- occupied jumps ----------------------------------------------------------


@pytest.mark.parametrize("m, v, L", [(3, 1.0, 0.3), (1, 0.0, 1e-12), (2, 0.4, 2.5)])
def test_occupied_jump_conditional_cdf(m, v, L):
    u = np.array([0.05, 0.25, 0.5, 0.75, 0.95])
    rng = RecordingRNG(uniform=lambda size: u.reshape(size))
    J = np.full((5, 1), L + 1.0)
    x = update_occupied_jumps(J, np.full((5, 1), m), np.full(5, v), L, rng)[:, 0]
    assert np.all(x > L)

    def target(t):
        return eta(t) * t**m * np.exp(-v * t)

    total = band_mass(target, L, np.inf)
    tail = np.array([band_mass(target, xi, np.inf) for xi in x])
    np.testing.assert_allclose(tail / total, u, rtol=1e-6)


def test_occupied_jump_density_on_grid():
    # Ga(3, 2) restricted to (L, inf); the inverse map is differentiated numerically
    m, v, L = 3, 1.0, 0.4
    target = lambda t: (m - 1) * np.log(t) - (1 + v) * t  # eta(t) t^m e^{-vt}, up to a constant  # noqa: E731
    u = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    h = 1e-7

    def inv(uu):
        rng = RecordingRNG(uniform=lambda size: uu.reshape(size))
        return update_occupied_jumps(np.ones((uu.size, 1)), np.full((uu.size, 1), m), np.full(uu.size, v), L, rng)[:, 0]

    x = inv(u)
    dens = h / (inv(u - h / 2) - inv(u + h / 2))
    np.testing.assert_allclose(dens, normalized_density(target, L, np.inf, x, center=1.0), rtol=1e-6)


def test_occupied_exp1_special_case():
    rng = np.random.default_rng(0)
    S = 100_000
    x = update_occupied_jumps(np.ones((S, 1)), np.ones((S, 1)), np.zeros(S), 1e-300, rng)[:, 0]
    assert stats.kstest(x, stats.expon.cdf).pvalue > 0.01


def test_occupied_underflow_falls_back_to_metropolis():
    rng = np.random.default_rng(1)
    L = 800.0
    with pytest.warns(RuntimeWarning, match="underflow"):
        x = update_occupied_jumps(np.full((3, 1), 801.0), np.ones((3, 1)), np.ones(3), L, rng)
    assert np.all(x > L)


def test_occupied_leaves_unoccupied_alone():
    J = np.array([[0.9, 0.5, np.nan]])
    out = update_occupied_jumps(J, np.array([[2, 0, 0]]), np.ones(1), 0.2, np.random.default_rng(0))
    assert out[0, 1] == 0.5 and np.isnan(out[0, 2])


# -- unoccupied jumps and the band proposal ----------------------------------


def test_tilted_band_count_and_law():
    # M = 1, v = 1, L = 0.1: expected count int x^-1 e^-2x dx over (0.1, inf)
    rng = np.random.default_rng(2)
    S = 100_000
    J, c = sample_tilted_band(np.ones(S), np.ones(S), 0.1, np.inf, rng)
    f = lambda x: np.exp(-x) * eta(x)  # noqa: E731
    mean = band_mass(f, 0.1, np.inf)
    assert mean == pytest.approx(tilted_tail_mass(1.0, 0.1, 1.0), rel=1e-10)
    assert abs(c.mean() - mean) < 3 * np.sqrt(mean / S)
    x = J[np.isfinite(J)]
    assert np.all(x > 0.1)
    grid = np.concatenate([np.geomspace(0.1, 1.0, 150), np.linspace(1.0, 25.0, 300)[1:]])
    cdf_grid = np.array([1 - band_mass(f, g, np.inf) / mean for g in grid])
    assert stats.kstest(x[:20_000], lambda t: np.interp(t, grid, cdf_grid)).pvalue > 0.01


def test_tilted_band_v0_is_cpp_count():
    rng = np.random.default_rng(3)
    S = 50_000
    _, c = sample_tilted_band(np.full(S, 2.0), np.zeros(S), 0.5, np.inf, rng)
    lam = 2.0 * band_mass(eta, 0.5, np.inf)
    k = np.arange(6)
    obs = np.append(np.bincount(c, minlength=6)[:5], np.sum(c >= 5))
    exp = S * np.append(stats.poisson.pmf(k[:5], lam), stats.poisson.sf(4, lam))
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_unoccupied_refresh_compacts():
    rng = np.random.default_rng(4)
    hyper = NormalMixtureHyper(0.0, 1.0, 2.0, 1.0)
    J = np.array([[2.0, 0.6, 1.1, np.nan], [0.9, 0.4, np.nan, np.nan]])
    mu = np.array([[1.0, 2.0, 3.0, 0.0], [4.0, 5.0, 0.0, 0.0]])
    counts = np.array([[0, 3, 1, 0], [2, 0, 0, 0]])
    Jo, muo, tauo, act = update_unoccupied_jumps(J, mu, np.ones_like(J), np.isfinite(J), counts, np.ones(2),
                                                 np.ones(2), 0.3, hyper, rng)  # fmt: skip
    np.testing.assert_array_equal(Jo[0, :2], [0.6, 1.1])
    np.testing.assert_array_equal(muo[0, :2], [2.0, 3.0])
    assert Jo[1, 0] == 0.9 and muo[1, 0] == 4.0
    # active columns form a prefix and every active jump exceeds the level
    assert np.all(np.diff(act.astype(int), axis=1) <= 0)
    assert np.all(Jo[act] > 0.3) and np.all(np.isnan(Jo[~act]))


# -- allocations and v -------------------------------------------------------


def test_allocations_direct_normalization():
    J = np.array([[0.8, 0.3, 1.5, np.nan]])
    mu = np.array([[0.0, 1.0, -1.0, 9.0]])
    tau = np.array([[1.0, 2.0, 0.5, 1.0]])
    y = np.array([0.4, -2.0, 1.2])
    act = np.isfinite(J)
    p = J[0, :3] * stats.norm.pdf(y[:, None], mu[0, :3], 1 / np.sqrt(tau[0, :3]))
    p /= p.sum(axis=1, keepdims=True)

    def draw(u):
        rng = RecordingRNG(uniform=lambda size: u.reshape(size))
        return update_allocations(J, mu, tau, act, y, rng)[0]

    cdf = inverse_cdf_jumps(draw, 3, n_particles=3)
    np.testing.assert_allclose(cdf[:, :2], np.cumsum(p, axis=1)[:, :2], atol=1e-9)
    np.testing.assert_allclose(cdf[:, 2], 1.0, atol=1e-9)  # the inactive column is never chosen


def test_allocations_equal_kernels_and_single_jump():
    J = np.array([[0.5, 2.0]])
    act = np.ones_like(J, dtype=bool)

    def draw(u):
        rng = RecordingRNG(uniform=lambda size: u.reshape(size))
        return update_allocations(J, np.zeros((1, 2)), np.ones((1, 2)), act, np.zeros(1), rng)[0]

    assert inverse_cdf_jumps(draw, 1)[0, 0] == pytest.approx(0.2, abs=1e-9)
    s = update_allocations(np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1), bool),
                           np.linspace(-3, 3, 9), np.random.default_rng(0))  # fmt: skip
    assert np.all(s == 0)


def test_update_v_conditional():
    J = np.array([[1.0, 0.75, 0.5, 0.25, np.nan]])  # sum 2.5
    rng = RecordingRNG(0)
    update_v(J, np.isfinite(J), 10, rng)
    (shape, scale), = rng.gammas()
    law = stats.gamma(shape[0], scale=scale[0])
    assert law.mean() == pytest.approx(4.0)
    x = law.ppf([0.1, 0.3, 0.5, 0.7, 0.9])
    ref = normalized_density(lambda t: 9 * np.log(t) - 2.5 * t, 0, np.inf, x, center=4.0)
    np.testing.assert_allclose(law.pdf(x), ref, rtol=1e-6)
    v = update_v(np.tile(J, (100_000, 1)), np.tile(np.isfinite(J), (100_000, 1)), 10, np.random.default_rng(1))
    assert abs(v.mean() - 4.0) < 3 * law.std() / np.sqrt(v.size)


def test_v_augmentation_marginal():
    # integrating v out of v^{n-1} prod J_{s_i} exp(-v sum J) / Gamma(n) gives prod J_{s_i} / (sum J)^n
    J = np.array([0.7, 1.9])
    n = 2
    total = 0.0
    for s in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        prod = np.prod(J[list(s)])
        val = band_mass(lambda v: v ** (n - 1) * prod * np.exp(-v * J.sum()) / special.gamma(n), 0, np.inf)
        assert val == pytest.approx(prod / J.sum() ** n, rel=1e-10)
        total += val
    assert total == pytest.approx(1.0, rel=1e-10)


# -- level transitions -------------------------------------------------------


def test_cpp_transition_band_count():
    S = 100_000
    state = _state(S, [1.0], level=0.2, v=0.5, M=1.3)
    new = cpp_transition(state, 0.1, NormalMixtureHyper(0.0, 1.0, 2.0, 1.0), np.random.default_rng(5))
    added = new.active.sum(axis=1) - 1
    lam = band_mass(lambda x: np.exp(-0.5 * x) * eta(x, 1.3), 0.1, 0.2)
    assert abs(added.mean() - lam) < 3 * np.sqrt(lam / S)
    x = new.J[:, 1:][new.active[:, 1:]]
    assert np.all((x > 0.1) & (x < 0.2))
    assert new.level == 0.1 and new.k == 2


def test_cpp_transition_edges():
    state = _state(3, [1.0], level=0.2)
    hyper = NormalMixtureHyper(0.0, 1.0, 2.0, 1.0)
    same = cpp_transition(state, 0.2, hyper, np.random.default_rng(0))
    np.testing.assert_array_equal(same.J, state.J)
    with pytest.raises(ValueError):
        cpp_transition(state, 0.3, hyper, np.random.default_rng(0))


def test_incremental_weight_is_band_integral():
    model = NrmiMixtureModel(np.array([0.1, 0.2]), M=1.3, n_init=3)
    state = _state(1, [1.0], level=0.2, v=0.7, M=1.3)
    lo = dict(vars(state))
    lo["level"] = 0.05
    diff = model.loglik(CppState(**lo))[0] - model.loglik(state)[0]
    ref = -band_mass(lambda x: (1 - np.exp(-0.7 * x)) * eta(x, 1.3), 0.05, 0.2)
    assert diff == pytest.approx(ref, rel=1e-9)


def test_level_schedule():
    L1 = 0.3
    L = [level_schedule(L1, k) for k in range(1, 6)]
    np.testing.assert_allclose(np.diff(special.exp1(L)), 1.0, rtol=1e-10)
    assert level_schedule(L1, 4, scheme="geometric", xi=0.5) == pytest.approx(0.3 * np.exp(-1.5))
    with pytest.raises(ValueError):
        level_schedule(L1, 2, scheme="geometric")


def test_default_first_level_matches_n_init():
    model = NrmiMixtureModel(np.arange(3.0), n_init=10)
    assert special.exp1(model.L1) == pytest.approx(10.0, rel=1e-10)


# -- the model ---------------------------------------------------------------


def test_sweep_invariants():
    rng = np.random.default_rng(6)
    y = load_galaxy()
    model = NrmiMixtureModel(y, n_init=5)
    state = model.prior_state(40, rng, k=3)
    for _ in range(15):
        state = model.sweep(state, rng)
        J = np.where(state.active, state.J, np.inf)
        assert np.all(J > state.level)
        assert np.all(np.take_along_axis(state.active, state.s, 1))
        assert np.all(np.diff(state.active.astype(int), axis=1) <= 0)
        assert np.all(state.v > 0) and np.all(state.M > 0)
        np.testing.assert_allclose(model.weights(state).sum(axis=1), 1.0)


def test_smc_run_on_galaxy():
    model = NrmiMixtureModel(load_galaxy(), n_init=10)
    res = smc.run(model, smc.SmcConfig(n_particles=100, epsilon=1e-2, burn_in=200, thin=2, n_chains=4,
                                       max_iters=200, seed=3))  # fmt: skip
    assert res.converged
    w = res.system.weights
    M = smc.estimate(res.system, lambda st: st.M)
    assert 0.2 < M < 3.0
    assert w.sum() == pytest.approx(1.0)
