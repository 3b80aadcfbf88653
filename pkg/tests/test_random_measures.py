import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from adaptrunc.random_measures import (
    BetaStickParams,
    GammaProcess,
    LevyDensity,
    TruncatedMeasure,
    cpp_level_sequence,
    cpp_sample,
    fk_extend,
    fk_jumps,
    log_beta_sample,
    log_stick_weights,
    rsb_weights,
    sample_sticks,
    sb_weights,
    stick_beta_params,
    stick_from_logit,
    stick_logit,
)


def zeta_quad(x, M=1.0):
    """Gamma-process tail mass by direct quadrature of M exp(-y)/y."""
    val, _ = integrate.quad(lambda y: M * np.exp(-y) / y, x, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def bisect(f, target, lo, hi, tol=1e-14):
    """Root of the decreasing function f(x) = target by plain bisection."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


class TestSticks:
    def test_stick_params(self):
        assert stick_beta_params(3, 2.0) == (1.0, 2.0)
        a, b = stick_beta_params(np.arange(1, 4), 0.5, 0.25)
        np.testing.assert_allclose(a, 0.75)
        np.testing.assert_allclose(b, [0.75, 1.0, 1.25])

    def test_beta_stick_params_validation(self):
        with pytest.raises(ValueError):
            BetaStickParams("dp", M=1.0, a=0.2)
        with pytest.raises(ValueError):
            BetaStickParams("py", M=-1.0)
        with pytest.raises(ValueError):
            BetaStickParams("py", M=1.0, a=1.0)
        with pytest.raises(ValueError):
            BetaStickParams("nope")

    def test_sb_examples(self):
        np.testing.assert_allclose(sb_weights([1.0]), [1.0])
        np.testing.assert_allclose(sb_weights([0.3, 1.0]), [0.3, 0.7])
        np.testing.assert_allclose(sb_weights([0.5, 0.5, 1.0]), [0.5, 0.25, 0.25])

    def test_sb_domain(self):
        with pytest.raises(ValueError):
            sb_weights([0.5, 0.5])
        with pytest.raises(ValueError):
            sb_weights([1.2, 1.0])
        with pytest.raises(ValueError):
            sb_weights([0.0, 1.0])

    def test_rsb_examples(self):
        np.testing.assert_allclose(rsb_weights([0.5, 0.5]), [2 / 3, 1 / 3])
        np.testing.assert_allclose(rsb_weights([0.9]), [1.0])
        # raw sticks 0.2, 0.16, 0.128 renormalized by hand
        raw = np.array([0.2, 0.8 * 0.2, 0.8 * 0.8 * 0.2])
        np.testing.assert_allclose(rsb_weights([0.2, 0.2, 0.2]), raw / raw.sum(), rtol=1e-14)

    def test_rsb_degenerate(self):
        with pytest.raises(ValueError):
            rsb_weights([0.0, 0.0])
        with pytest.raises(ValueError):
            rsb_weights([0.5, 1.0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=40))
    def test_weights_sum_to_one(self, V):
        V = np.array(V)
        assert abs(rsb_weights(V).sum() - 1.0) < 1e-12
        assert abs(sb_weights(np.append(V, 1.0)).sum() - 1.0) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=20))
    def test_log_weights_match(self, V):
        V = np.array(V)
        np.testing.assert_allclose(np.exp(log_stick_weights(V)), sb_weights(np.append(V, 1.0))[:-1], rtol=1e-10)

    def test_rsb_stochastic_ordering(self):
        rng = np.random.default_rng(0)
        V = rng.beta(1.0, 2.0, size=(100_000, 6))
        p = rsb_weights(V)
        m, se = p.mean(axis=0), p.std(axis=0) / np.sqrt(len(p))
        gaps = m[:-1] - m[1:]
        assert np.all(gaps > 3 * np.hypot(se[:-1], se[1:]))

    def test_truncated_measure(self):
        tm = TruncatedMeasure([0.25, 0.75], [0.0, 1.0])
        assert len(tm) == 2
        with pytest.raises(ValueError):
            TruncatedMeasure([0.5, 0.6], [0, 1])
        with pytest.raises(ValueError):
            TruncatedMeasure([1.0, 0.0], [0, 1])
        with pytest.raises(ValueError):
            TruncatedMeasure([1.0], [0, 1])


class TestLogSpaceSticks:
    def test_log_beta_moments(self):
        rng = np.random.default_rng(1)
        lv, l1 = log_beta_sample(np.full(200_000, 2.0), 3.0, rng)
        V = np.exp(lv)
        np.testing.assert_allclose(np.exp(l1), 1 - V, atol=1e-12)
        assert stats.kstest(V, stats.beta(2, 3).cdf).pvalue > 0.01

    def test_tiny_shape_is_exact(self):
        # Be(0.01, 1): log V is -Exp(1)/0.01 exactly, far below double range
        rng = np.random.default_rng(2)
        lv, _ = log_beta_sample(np.full(50_000, 0.01), 1.0, rng)
        assert np.all(np.isfinite(lv))
        assert stats.kstest(-0.01 * lv, "expon").pvalue > 0.01

    def test_sticks_near_one(self):
        # Be(1, 1e-3): 1 - V is U^1000, which rounds to zero in V itself
        rng = np.random.default_rng(3)
        V, l1 = sample_sticks(np.ones(50_000), 1e-3, rng)
        assert np.all(l1 < 0) and np.all(np.isfinite(l1))
        assert stats.kstest(-1e-3 * l1, "expon").pvalue > 0.01

    def test_tiny_sticks_keep_product_below_one(self):
        rng = np.random.default_rng(4)
        V, l1 = sample_sticks(np.full(1000, 1e-4), 50.0, rng)
        assert np.all(V >= 1e-300) and np.all(l1 < 0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-700, 700))
    def test_logit_roundtrip(self, u):
        V, L = stick_from_logit(np.array([u]))
        assert L[0] < 0
        if -600 < u < 600:
            np.testing.assert_allclose(stick_logit(V, L), [u], rtol=1e-9, atol=1e-9)


class TestGammaProcess:
    @pytest.mark.parametrize("x", [1e-4, 0.1, 1.0, 3.0, 20.0])
    def test_tail_mass_vs_quadrature(self, x):
        np.testing.assert_allclose(GammaProcess(1.0).tail_mass(x), zeta_quad(x), rtol=1e-9)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_quadrature_fallback_matches_closed_form(self):
        class Generic(LevyDensity):
            def density(self, x):
                return np.exp(-x) / x

        g = Generic()
        np.testing.assert_allclose(g.tail_mass(np.array([0.5, 2.0])), GammaProcess().tail_mass([0.5, 2.0]), rtol=1e-8)
        np.testing.assert_allclose(g.inverse_tail_mass(0.219384), GammaProcess().inverse_tail_mass(0.219384), rtol=1e-9)

    def test_zeta_one(self):
        assert abs(zeta_quad(1.0) - 0.219384) < 1e-6

    def test_fk_inverts_zeta_one(self):
        t = zeta_quad(1.0)
        J = fk_jumps(GammaProcess(1.0), [t])
        assert abs(J[0] - 1.0) < 1e-8

    def test_fk_mass_scaling(self):
        t = np.array([0.3, 1.0, 2.5, 7.0])
        np.testing.assert_allclose(fk_jumps(GammaProcess(2.0), t), fk_jumps(GammaProcess(1.0), t / 2), rtol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=15))
    def test_fk_decreasing(self, gaps):
        t = np.cumsum(gaps)
        J = fk_jumps(GammaProcess(1.0), t)
        assert np.all(np.diff(J) < 0)

    def test_fk_domain(self):
        with pytest.raises(ValueError):
            fk_jumps(GammaProcess(), [1.0, 0.5])
        with pytest.raises(ValueError):
            fk_jumps(GammaProcess(), [0.0])

    def test_finite_activity_out_of_range(self):
        class Finite(LevyDensity):
            def density(self, x):
                return np.exp(-x)

        with pytest.raises(ValueError):
            fk_jumps(Finite(), [0.5, 1.5])


class TestFkExtend:
    def test_decreasing_and_exponential_increment(self):
        levy = GammaProcess(1.0)
        rng = np.random.default_rng(5)
        J = fk_extend(levy, np.ones(100_000), rng)
        assert np.all(J < 1.0)
        d = levy.tail_mass(J) - levy.tail_mass(1.0)
        assert abs(d.mean() - 1.0) < 3 * d.std() / np.sqrt(d.size)

    def test_conditional_law(self):
        # P(J_next <= x | J_prev = 1) = exp(-(zeta(x) - zeta(1))), zeta by quadrature
        levy = GammaProcess(1.0)
        rng = np.random.default_rng(6)
        J = fk_extend(levy, np.ones(100_000), rng)
        grid = np.geomspace(1e-6, 1.0, 400)
        z1 = zeta_quad(1.0)
        cdf_grid = np.array([np.exp(-(zeta_quad(x) - z1)) for x in grid])
        cdf = lambda x: np.interp(np.log(x), np.log(grid), cdf_grid)  # noqa: E731
        assert stats.kstest(J[J > 1e-6], cdf).pvalue > 0.01

    def test_requires_positive(self):
        with pytest.raises(ValueError):
            fk_extend(GammaProcess(), np.array([0.0]), np.random.default_rng())


class TestCpp:
    def test_zeta_point_one(self):
        assert abs(zeta_quad(0.1) - 1.8229) < 1e-4

    def test_count_mean_and_support(self):
        levy = GammaProcess(1.0)
        rng = np.random.default_rng(7)
        counts = np.empty(100_000)
        for i in range(counts.size):
            J = cpp_sample(levy, 0.1, rng)
            counts[i] = J.size
            if J.size:
                assert J.min() > 0.1
        z = zeta_quad(0.1)
        assert abs(counts.mean() - z) < 3 * np.sqrt(z / counts.size)
        # Poisson(zeta(L)) goodness of fit, upper tail pooled
        k = np.arange(7)
        obs = np.append(np.bincount(counts.astype(int), minlength=7)[:6], np.sum(counts >= 6))
        exp = counts.size * np.append(stats.poisson.pmf(k[:6], z), stats.poisson.sf(5, z))
        assert stats.chisquare(obs, exp).pvalue > 0.01

    def test_jump_law(self):
        # inverse-CDF oracle of eta / zeta(L) on (L, inf), tabulated by quadrature
        levy = GammaProcess(1.0)
        rng = np.random.default_rng(8)
        jumps = np.concatenate([cpp_sample(levy, 0.1, rng) for _ in range(60_000)])
        grid = np.concatenate([np.geomspace(0.1, 1.0, 200), np.linspace(1.0, 40.0, 400)[1:]])
        zL = zeta_quad(0.1)
        cdf_grid = np.array([1 - zeta_quad(x) / zL for x in grid])
        u = np.sort(rng.uniform(size=jumps.size))
        oracle = np.interp(u, cdf_grid, grid)
        assert stats.ks_2samp(jumps, oracle).pvalue > 0.01

    def test_level_sequences(self):
        assert abs(cpp_level_sequence(1.0, 3, scheme="geometric", xi=np.log(2)) - 0.25) < 1e-15
        levy = GammaProcess(1.0)
        L2 = cpp_level_sequence(0.1, 2, levy)
        assert abs(zeta_quad(L2) - (zeta_quad(0.1) + 1)) < 1e-8
        oracle = bisect(zeta_quad, zeta_quad(0.1) + 1, 1e-6, 0.1)
        assert abs(L2 - oracle) < 1e-9
        Ls = [cpp_level_sequence(0.1, k, levy) for k in range(1, 8)]
        assert np.all(np.diff(Ls) < 0)
        Lg = [cpp_level_sequence(0.1, k, scheme="geometric", xi=0.3) for k in range(1, 8)]
        assert np.all(np.diff(Lg) < 0)

    def test_level_errors(self):
        with pytest.raises(ValueError):
            cpp_level_sequence(0.1, 2, scheme="geometric")
        with pytest.raises(ValueError):
            cpp_level_sequence(-1.0, 2, GammaProcess())
        with pytest.raises(ValueError):
            cpp_level_sequence(0.1, 2, GammaProcess(), scheme="other")
