"""Nonparametric time series: random-walk trend plus a stationary mixture process.

    y_t = alpha_t + eps_t,        alpha_t = alpha_{t-1} + nu_t

The increments ``nu_t`` follow a Dirichlet process mixture
``sum_j p_j N(mu_j, a_a s2_a)`` with centring measure ``N(0, (1 - a_a) s2_a)``,
handled through the Polya urn (allocations ``s_a`` and distinct values
``mu_a``).  The stationary part is the centred version ``eps = eps~ - E[eps~]``
of a Markov process whose pairs ``(eps~_{t-1}, eps~_t)`` follow the mixture

    sum_j p_j N2((mu_j, mu_j), A [[1, rho_j], [rho_j, 1]]),   A = a_e s2_e,

so the transition density is the ratio of that joint to its marginal and the
stationary law is ``sum_j p_j N(mu_j, A)``.  Its weights use the
re-normalized stick-breaking truncation, and only this block grows with the
truncation index.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._batch import ParticleBatch, chunk_rows, sample_initial
from .adaptive_mh import AdaptiveScale, mh_step
from .lmm import FoldedTPrior, rsb_log_weights
from .random_measures import sample_sticks, stick_from_logit, stick_logit
from .mixtures import categorical_sample
from .smc import weighted_quantile

__all__ = [
    "TsPriors",
    "TsState",
    "TsModel",
    "stationary_terms",
    "collapsed_loglik_ts",
    "transition_density",
    "stationary_density",
    "simulate_stationary",
    "polya_urn_logits",
    "mu_alpha_conditional",
    "compact_labels",
    "smc_transition_ts",
    "moving_average",
]

_LOG_2PI = np.log(2.0 * np.pi)
_V_MAX = 1.0 - np.finfo(float).epsneg


@dataclass(frozen=True)
class TsPriors:
    """Hyperpriors of the trend (``*_a``) and stationary (``*_e``) blocks."""

    a_alpha: tuple = (1.0, 19.0)
    s2_alpha: FoldedTPrior = field(default_factory=lambda: FoldedTPrior(1.0, 0.01))
    M_alpha: tuple = (1.0, 1.0)
    a_eps: tuple = (1.0, 19.0)
    s2_eps: FoldedTPrior = field(default_factory=lambda: FoldedTPrior(1.0, 1.0))
    M_eps: tuple = (1.0, 1.0)
    alpha1_var: float = 1.0


@dataclass
class TsState(ParticleBatch):
    alpha: np.ndarray  # (S, T)
    V: np.ndarray  # (S, N)
    log1m_V: np.ndarray  # log(1 - V)
    mu: np.ndarray  # (S, N)
    rho: np.ndarray  # (S, N)
    a_e: np.ndarray  # (S,)
    s2_e: np.ndarray
    M_e: np.ndarray
    s_a: np.ndarray  # (S, T-1) labels in 0..K_a-1
    mu_a: np.ndarray  # (S, T-1), slots >= K_a unused (zero)
    K_a: np.ndarray  # (S,)
    a_a: np.ndarray
    s2_a: np.ndarray
    M_a: np.ndarray
    sc_mu: AdaptiveScale
    sc_V: AdaptiveScale
    sc_rho: AdaptiveScale
    sc_ae: AdaptiveScale
    sc_s2e: AdaptiveScale
    sc_alpha: AdaptiveScale
    sc_aa: AdaptiveScale
    sc_s2a: AdaptiveScale
    sc_Ma: AdaptiveScale
    sc_level: AdaptiveScale

    @property
    def n_atoms(self):
        return self.V.shape[1]


# ---------------------------------------------------------------------------
# stationary block
# ---------------------------------------------------------------------------


def _lse(x):
    mx = x.max(axis=-1)
    with np.errstate(invalid="ignore"):
        return mx + np.log(np.exp(x - mx[..., None]).sum(axis=-1))


def stationary_terms(eps, log_p, mu, rho, A):
    """Per-time pieces of the stationary log density.

    Parameters
    ----------
    eps : (S, T)
        Centred stationary series ``y - alpha``.
    log_p, mu, rho : (S, N)
    A : (S,)
        Component variance ``a_e s2_e``.

    Returns
    -------
    m : (S, T)
        ``log sum_j p_j exp(-b_tj^2 / 2A)``.
    J : (S, T-1)
        ``log sum_j p_j (1-rho_j^2)^{-1/2} exp(-Q_tj / 2A(1-rho_j^2))`` for the
        pair ``(t, t+1)``.
    """
    S, T = eps.shape
    N = mu.shape[1]
    mubar = (np.exp(log_p) * mu).sum(axis=1)
    m = np.empty((S, T))
    J = np.empty((S, T - 1))
    one_m = 1.0 - rho**2
    for sl in chunk_rows(S, T * N):
        b = eps[sl, :, None] - mu[sl, None, :] + mubar[sl, None, None]
        a2 = 2.0 * A[sl, None, None]
        lp = log_p[sl, None, :]
        m[sl] = _lse(lp - b**2 / a2)
        q = b[:, 1:] ** 2 + b[:, :-1] ** 2 - 2.0 * rho[sl, None, :] * b[:, 1:] * b[:, :-1]
        om = one_m[sl, None, :]
        J[sl] = _lse(lp - 0.5 * np.log(om) - q / (a2 * om))
    return m, J


def collapsed_loglik_ts(eps, V, mu, rho, A, log1m_V=None):
    """Log density of the stationary series ``eps`` (one value per particle).

    The initial value has the stationary mixture density and each further
    value the transition density; the trend enters only through
    ``eps = y - alpha``.
    """
    eps = np.asarray(eps, dtype=float)
    T = eps.shape[1]
    with np.errstate(divide="ignore"):
        m, J = stationary_terms(eps, rsb_log_weights(V, log1m_V), mu, rho, A)
    out = m[:, 0] + (J - m[:, :-1]).sum(axis=1) - 0.5 * T * (np.log(A) + _LOG_2PI)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite stationary log-likelihood")
    return out


def _centred(p, mu):
    return mu - (p * mu).sum(axis=-1, keepdims=True)


def stationary_density(p, mu, A, grid):
    """``sum_j p_j N(x | mu_j - mubar, A)`` per particle; ``(S, G)``."""
    mc = _centred(p, mu)
    sd = np.sqrt(A)[:, None, None]
    z = (np.asarray(grid, dtype=float)[None, :, None] - mc[:, None, :]) / sd
    return np.einsum("sgj,sj->sg", np.exp(-0.5 * z**2) / (sd * np.sqrt(2 * np.pi)), p)


def transition_density(p, mu, rho, A, e_prev, e_next):
    """``p(eps_t = e_next | eps_{t-1} = e_prev)`` per particle.

    ``e_prev`` and ``e_next`` are 1-d grids; returns ``(S, len(e_prev), len(e_next))``.
    """
    mc = _centred(p, mu)
    e_prev = np.asarray(e_prev, dtype=float)
    e_next = np.asarray(e_next, dtype=float)
    sd = np.sqrt(A)[:, None, None]
    z1 = (e_prev[None, :, None] - mc[:, None, :]) / sd  # (S, G1, N)
    with np.errstate(divide="ignore"):
        lw = np.log(p)[:, None, :] - 0.5 * z1**2
    w = np.exp(lw - special.logsumexp(lw, axis=-1, keepdims=True))
    cmean = mc[:, None, :] + rho[:, None, :] * (e_prev[None, :, None] - mc[:, None, :])  # (S, G1, N)
    csd = np.sqrt(A[:, None] * (1.0 - rho**2))[:, None, None, :]  # (S, 1, 1, N)
    z2 = (e_next[None, None, :, None] - cmean[:, :, None, :]) / csd
    dens = np.exp(-0.5 * z2**2) / (csd * np.sqrt(2 * np.pi))
    return np.einsum("sgj,sghj->sgh", w, dens)


def simulate_stationary(p, mu, rho, A, T, rng):
    """Paths of the centred stationary process, shape ``(S, T)``."""
    S, N = p.shape
    mc = _centred(p, mu)
    sd = np.sqrt(A)
    out = np.empty((S, T))
    rows = np.arange(S)
    j = categorical_sample(np.log(p), rng)
    out[:, 0] = mc[rows, j] + sd * rng.standard_normal(S)
    for t in range(1, T):
        prev = out[:, t - 1]
        lw = np.log(p) - 0.5 * ((prev[:, None] - mc) / sd[:, None]) ** 2
        j = categorical_sample(lw, rng)
        r = rho[rows, j]
        out[:, t] = mc[rows, j] + r * (prev - mc[rows, j]) + sd * np.sqrt(1.0 - r**2) * rng.standard_normal(S)
    return out


# ---------------------------------------------------------------------------
# trend block (Polya urn)
# ---------------------------------------------------------------------------


def polya_urn_logits(nu_t, counts, mu_a, M, a, s2):
    """Log probabilities (unnormalized) of ``s_t`` over existing slots and a new one.

    ``counts`` and ``mu_a`` have shape ``(S, K)``; empty slots get ``-inf``.
    The last column is the new-cluster option.
    """
    A = (a * s2)[:, None]
    with np.errstate(divide="ignore"):
        old = np.log(counts) - 0.5 * np.log(a)[:, None] - 0.5 * (nu_t[:, None] - mu_a) ** 2 / A
        new = np.log(M) - 0.5 * nu_t**2 / s2
    old = np.where(counts > 0, old, -np.inf)
    return np.column_stack([old, new])


def mu_alpha_conditional(nu, s, a, s2):
    """Mean and variance of ``mu_a[j] | rest`` for every slot ``j``.

    Slots without members get the prior ``N(0, (1 - a) s2)``.
    """
    S, width = s.shape[0], s.shape[1]
    cnt = np.zeros((S, width))
    tot = np.zeros((S, width))
    rows = np.repeat(np.arange(S), width)
    np.add.at(cnt, (rows, s.ravel()), 1.0)
    np.add.at(tot, (rows, s.ravel()), nu.ravel())
    prec = cnt / a[:, None] + 1.0 / (1.0 - a[:, None])
    mean = (tot / a[:, None]) / prec
    var = s2[:, None] / prec
    return mean, var


def compact_labels(s, mu_a, counts):
    """Drop empty slots, keeping the order of the occupied ones.

    Returns relabeled ``s``, re-ordered ``mu_a`` and ``counts`` (unused
    slots zero) and ``K``.
    """
    occ = counts > 0
    new_idx = np.cumsum(occ, axis=1) - 1
    s = np.take_along_axis(new_idx, s, 1)
    order = np.argsort(~occ, axis=1, kind="stable")
    mu_a = np.take_along_axis(mu_a, order, 1)
    counts = np.take_along_axis(counts, order, 1)
    K = occ.sum(axis=1)
    unused = np.arange(mu_a.shape[1])[None, :] >= K[:, None]
    mu_a = np.where(unused, 0.0, mu_a)
    return s, mu_a, counts, K


def _slot_counts(s, width):
    S = s.shape[0]
    counts = np.zeros((S, width), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(S), s.shape[1]), s.ravel()), 1)
    return counts


# ---------------------------------------------------------------------------
# SMC transition
# ---------------------------------------------------------------------------


def smc_transition_ts(state, rng):
    """Append one stationary atom: ``V ~ Be(1, M_e)``, ``mu ~ N(0, (1-a_e) s2_e)``, ``rho ~ U(-1, 1)``."""
    S = state.V.shape[0]
    V_new, L_new = sample_sticks(1.0, state.M_e, rng)
    mu_new = np.sqrt((1.0 - state.a_e) * state.s2_e) * rng.standard_normal(S)
    rho_new = rng.uniform(-1.0, 1.0, size=S)
    return dataclasses.replace(
        state,
        V=np.column_stack([state.V, V_new]),
        log1m_V=np.column_stack([state.log1m_V, L_new]),
        mu=np.column_stack([state.mu, mu_new]),
        rho=np.column_stack([state.rho, rho_new]),
        sc_mu=state.sc_mu.append(1),
        sc_V=state.sc_V.append(1),
        sc_rho=state.sc_rho.append(1),
    )


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


def moving_average(y, width=None):
    """Centred moving average with edge padding; ``width`` defaults to about ``T/7`` (odd, at least 3)."""
    y = np.asarray(y, dtype=float)
    if width is None:
        width = max(3, (y.size // 7) | 1)
    width = min(int(width) | 1, 2 * (y.size // 2) - 1) if y.size > 2 else 1
    h = width // 2
    return np.convolve(np.pad(y, h, mode="edge"), np.ones(width) / width, mode="valid")


class TsModel:
    """Trend plus stationary nonparametric model for a univariate series.

    Parameters
    ----------
    y : array_like
        The series (standardize it first for the default priors).
    priors : TsPriors, optional
    n_init : int
        Initial number of stationary atoms.
    """

    def __init__(self, y, priors=None, n_init=10):
        if n_init < 1:
            raise ValueError("n_init must be at least 1")
        self.priors = priors or TsPriors()
        self.n_init = int(n_init)
        self.set_data(y)

    def set_data(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size < 3:
            raise ValueError("y must be a series of length at least 3")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        self.y = y
        self.T = y.size

    # -- initialization ----------------------------------------------------

    def prior_state(self, n_particles, rng):
        """Chain starting points.

        Hyperparameters come from their priors where those are proper.  The
        trend starts at a moving average of ``y`` with one increment cluster;
        with improper folded-t priors ``s2_a`` and ``s2_e`` start at the
        variances of its increments and of the residuals.  A flat start lets
        the stationary block absorb level shifts and the chain rarely leaves
        that mode.
        """
        S, T, N = n_particles, self.T, self.n_init
        pr = self.priors
        smooth = moving_average(self.y)
        v_res = max(float(np.var(self.y - smooth)), 1e-8)
        v_inc = max(float(np.var(np.diff(smooth))), 1e-3 * v_res)
        s2_e = pr.s2_eps.sample(S, rng) if pr.s2_eps.proper else np.full(S, v_res)
        s2_a = pr.s2_alpha.sample(S, rng) if pr.s2_alpha.proper else np.full(S, v_inc)
        a_e = rng.beta(*pr.a_eps, size=S)
        a_a = rng.beta(*pr.a_alpha, size=S)
        M_e = rng.gamma(pr.M_eps[0], 1.0 / pr.M_eps[1], size=S)
        M_a = rng.gamma(pr.M_alpha[0], 1.0 / pr.M_alpha[1], size=S)
        V, L = sample_sticks(np.ones((S, N)), M_e[:, None], rng)
        mu = np.sqrt((1.0 - a_e) * s2_e)[:, None] * rng.standard_normal((S, N))
        rho = rng.uniform(-1.0, 1.0, size=(S, N))
        full = AdaptiveScale.full
        return TsState(
            alpha=np.tile(smooth, (S, 1)), V=V, log1m_V=L, mu=mu, rho=rho,
            a_e=a_e, s2_e=s2_e, M_e=M_e,
            s_a=np.zeros((S, T - 1), dtype=np.int64), mu_a=np.zeros((S, T - 1)),
            K_a=np.ones(S, dtype=np.int64), a_a=a_a, s2_a=s2_a, M_a=M_a,
            sc_mu=full((S, N)), sc_V=full((S, N)), sc_rho=full((S, N)),
            sc_ae=full(S), sc_s2e=full(S), sc_alpha=full((S, T), -4.0),
            sc_aa=full(S), sc_s2a=full(S), sc_Ma=full(S), sc_level=full(S, -4.0),
        )  # fmt: skip

    def sample_prior(self, n_particles, rng):
        """Exact draws from the joint prior (requires proper scale priors)."""
        pr = self.priors
        if not (pr.s2_eps.proper and pr.s2_alpha.proper):
            raise ValueError("prior sampling needs proper folded-t priors (nu > 1)")
        st = self.prior_state(n_particles, rng)
        S, T = n_particles, self.T
        s = np.zeros((S, T - 1), dtype=np.int64)
        mu_a = np.zeros((S, T - 1))
        counts = np.zeros((S, T - 1))
        rows = np.arange(S)
        sd0 = np.sqrt((1.0 - st.a_a) * st.s2_a)
        for t in range(T - 1):
            logits = np.column_stack([np.where(counts[:, : t + 1] > 0, np.log(np.maximum(counts[:, : t + 1], 1)), -np.inf),
                                      np.log(st.M_a)])  # fmt: skip
            c = categorical_sample(logits, rng)
            K = (counts > 0).sum(axis=1)
            new = c == t + 1
            c = np.where(new, K, c)
            mu_a[rows[new], K[new]] = sd0[new] * rng.standard_normal(new.sum())
            counts[rows, c] += 1
            s[:, t] = c
        nu = mu_a[rows[:, None], s] + np.sqrt(st.a_a * st.s2_a)[:, None] * rng.standard_normal((S, T - 1))
        alpha1 = np.sqrt(pr.alpha1_var) * rng.standard_normal(S)
        alpha = np.column_stack([alpha1, alpha1[:, None] + np.cumsum(nu, axis=1)])
        return dataclasses.replace(st, alpha=alpha, s_a=s, mu_a=mu_a, K_a=(counts > 0).sum(axis=1))

    # -- likelihood pieces -------------------------------------------------

    def eps(self, state, alpha=None):
        return self.y[None, :] - (state.alpha if alpha is None else alpha)

    def loglik(self, state):
        return collapsed_loglik_ts(self.eps(state), state.V, state.mu, state.rho, state.a_e * state.s2_e, state.log1m_V)

    def nu(self, alpha):
        return np.diff(alpha, axis=1)

    def trend_mean(self, state):
        """``mu_a[s_t]`` for ``t = 2..T``; ``(S, T-1)``."""
        return np.take_along_axis(state.mu_a, state.s_a, 1)

    # -- stationary MH targets ------------------------------------------------

    def _lf(self, state, V=None, mu=None, rho=None, A=None, log1m_V=None):
        return collapsed_loglik_ts(
            self.eps(state),
            state.V if V is None else V,
            state.mu if mu is None else mu,
            state.rho if rho is None else rho,
            state.a_e * state.s2_e if A is None else A,
            state.log1m_V if log1m_V is None else log1m_V,
        )

    def _safe_lf(self, *args, **kwargs):
        try:
            with np.errstate(all="ignore"):
                return self._lf(*args, **kwargs)
        except FloatingPointError:
            return np.full(args[0].a_e.shape, -np.inf)

    @staticmethod
    def _target(lf_of, prior_of):
        """``lf_of(x) + prior_of(x)``, keeping the prior part reachable for caching."""

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                return lf_of(x) + prior_of(x)

        logp.prior = prior_of
        return logp

    def target_mu(self, state, j):
        prior_var = (1.0 - state.a_e) * state.s2_e

        def lf_of(x):
            mu = state.mu.copy()
            mu[:, j] = x
            return self._safe_lf(state, mu=mu)

        return self._target(lf_of, lambda x: -0.5 * x**2 / prior_var)

    def target_V(self, state, j):
        """Target of ``u = logit(V_j)``; the prior part carries the Jacobian."""

        def lf_of(u):
            v, l1 = stick_from_logit(u)
            V = state.V.copy()
            L = state.log1m_V.copy()
            V[:, j] = v
            L[:, j] = l1
            return self._safe_lf(state, V=V, log1m_V=L)

        def prior_of(u):
            v, l1 = stick_from_logit(u)
            return state.M_e * l1 + np.log(v)

        return self._target(lf_of, prior_of)

    def target_rho(self, state, j):
        def lf_of(x):
            rho = state.rho.copy()
            rho[:, j] = x
            return self._safe_lf(state, rho=rho)

        return self._target(lf_of, lambda x: np.zeros_like(x))

    def target_a_e(self, state):
        N = state.n_atoms
        ss = (state.mu**2).sum(axis=1)
        ba, bb = self.priors.a_eps

        def prior_of(x):
            pv = (1.0 - x) * state.s2_e
            return -0.5 * N * np.log(pv) - 0.5 * ss / pv + (ba - 1.0) * np.log(x) + (bb - 1.0) * np.log1p(-x)

        return self._target(lambda x: self._safe_lf(state, A=x * state.s2_e), prior_of)

    def target_s2_e(self, state):
        N = state.n_atoms
        ss = (state.mu**2).sum(axis=1)

        def prior_of(x):
            pv = (1.0 - state.a_e) * x
            return -0.5 * N * np.log(pv) - 0.5 * ss / pv + self.priors.s2_eps.logpdf(x)

        return self._target(lambda x: self._safe_lf(state, A=state.a_e * x), prior_of)

    @staticmethod
    def _cached_step(current, target, scale, rng, lf_cur, transform="identity", index=Ellipsis):
        """MH step that reuses the known ``log f`` at the current value; returns ``(new, lf_new)``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            cur_logp = lf_cur + target.prior(current)
        new, _, logp = mh_step(current, target, scale, rng, transform=transform, current_logp=cur_logp, index=index)
        with np.errstate(divide="ignore", invalid="ignore"):
            return new, logp - target.prior(new)

    def update_M_e(self, log1m_V, rng):
        """``M_e ~ Ga(shape + N, rate - sum log(1 - V_j))`` given ``log(1 - V)``."""
        shape, rate = self.priors.M_eps
        return rng.gamma(shape + log1m_V.shape[1], 1.0 / (rate - np.sum(log1m_V, axis=1)))

    # -- trend targets ----------------------------------------------------------

    def alpha_site_logp(self, state, alpha, sites):
        """Log target of ``alpha[:, sites]`` given everything else.

        ``sites`` must not contain neighbours, so the per-site targets do not
        overlap and the result has shape ``(S, len(sites))``.
        """
        sites = np.asarray(sites)
        A = state.a_e * state.s2_e
        with np.errstate(divide="ignore"):
            m, J = stationary_terms(self.eps(state, alpha), rsb_log_weights(state.V, state.log1m_V), state.mu, state.rho, A)
        left = np.column_stack([m[:, :1], J])  # pair (t-1, t) or the initial density
        right = np.column_stack([J - m[:, :-1], np.zeros(alpha.shape[0])])  # pair (t, t+1) over its marginal
        out = left[:, sites] + right[:, sites]
        tau = state.a_a * state.s2_a
        dev = self.nu(alpha) - self.trend_mean(state)  # (S, T-1), index t-1 for increment t
        q = -0.5 * dev**2 / tau[:, None]
        inc_in = np.column_stack([np.zeros(alpha.shape[0]), q])  # increment ending at t
        inc_out = np.column_stack([q, np.zeros(alpha.shape[0])])  # increment starting at t
        out = out + inc_in[:, sites] + inc_out[:, sites]
        first = sites == 0
        if first.any():
            out[:, first] -= 0.5 * alpha[:, :1] ** 2 / self.priors.alpha1_var
        return out

    def update_alpha(self, state, rng):
        alpha = state.alpha.copy()
        for sites in (np.arange(0, self.T, 2), np.arange(1, self.T, 2)):

            def logp(x, sites=sites):
                a = alpha.copy()
                a[:, sites] = x
                return self.alpha_site_logp(state, a, sites)

            alpha[:, sites], _, _ = mh_step(alpha[:, sites], logp, state.sc_alpha, rng, index=(slice(None), sites))
        return alpha

    def target_level(self, state):
        """Target of ``alpha_1`` with the increments held fixed, i.e. a shift of the whole trend."""

        def logp(x):
            alpha = state.alpha + (x - state.alpha[:, 0])[:, None]
            return self._safe_lf(dataclasses.replace(state, alpha=alpha)) - 0.5 * x**2 / self.priors.alpha1_var

        return logp

    def update_s_alpha(self, state, alpha, rng):
        """Polya-urn sweep over ``t = 2..T`` with new values for new clusters."""
        nu = self.nu(alpha)
        S, W = nu.shape
        rows = np.arange(S)
        s = state.s_a.copy()
        mu_a = state.mu_a.copy()
        counts = _slot_counts(s, W)
        a, s2, M = state.a_a, state.s2_a, state.M_a
        for t in range(W):
            counts[rows, s[:, t]] -= 1
            logits = polya_urn_logits(nu[:, t], counts, mu_a, M, a, s2)
            c = categorical_sample(logits, rng)
            new = c == W
            if new.any():
                slot = np.argmin(counts[new] > 0, axis=1)  # first empty slot
                c[new] = slot
                an = a[new]
                mu_a[rows[new], slot] = (1.0 - an) * nu[new, t] + np.sqrt(an * (1.0 - an) * s2[new]) * rng.standard_normal(new.sum())
            s[:, t] = c
            counts[rows, c] += 1
        s, mu_a, counts, K = compact_labels(s, mu_a, counts)
        return s, mu_a, K

    def update_mu_alpha(self, s, K, alpha, a, s2, rng):
        mean, var = mu_alpha_conditional(self.nu(alpha), s, a, s2)
        draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return np.where(np.arange(s.shape[1])[None, :] < K[:, None], draw, 0.0)

    def _trend_quad(self, state):
        dev = self.nu(state.alpha) - self.trend_mean(state)
        used = np.arange(state.mu_a.shape[1])[None, :] < state.K_a[:, None]
        return (dev**2).sum(axis=1), (np.where(used, state.mu_a, 0.0) ** 2).sum(axis=1)

    def target_a_alpha(self, state):
        q, ss = self._trend_quad(state)
        K = state.K_a
        n = self.T - 1
        ba, bb = self.priors.a_alpha
        s2 = state.s2_a

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                return (
                    -0.5 * n * np.log(x)
                    - 0.5 * q / (x * s2)
                    - 0.5 * K * np.log1p(-x)
                    - 0.5 * ss / ((1.0 - x) * s2)
                    + (ba - 1.0) * np.log(x)
                    + (bb - 1.0) * np.log1p(-x)
                )

        return logp

    def target_s2_alpha(self, state):
        q, ss = self._trend_quad(state)
        K = state.K_a
        n = self.T - 1
        a = state.a_a

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                return (
                    -0.5 * (n + K) * np.log(x)
                    - 0.5 * q / (a * x)
                    - 0.5 * ss / ((1.0 - a) * x)
                    + self.priors.s2_alpha.logpdf(x)
                )

        return logp

    def target_M_alpha(self, state):
        K = state.K_a
        n = self.T - 1
        shape, rate = self.priors.M_alpha

        def logp(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                return (
                    special.gammaln(x)
                    - special.gammaln(x + n)
                    + K * np.log(x)
                    + (shape - 1.0) * np.log(x)
                    - rate * x
                )

        return logp

    # -- sweep --------------------------------------------------------------------

    def sweep(self, state, rng):
        st = state
        N = st.n_atoms
        lf = self.loglik(st)
        mu = st.mu.copy()
        for j in range(N):
            st = dataclasses.replace(st, mu=mu)
            mu[:, j], lf = self._cached_step(mu[:, j], self.target_mu(st, j), st.sc_mu, rng, lf, index=(slice(None), j))
        st = dataclasses.replace(st, mu=mu)
        V = st.V.copy()
        L = st.log1m_V.copy()
        for j in range(N):
            st = dataclasses.replace(st, V=V, log1m_V=L)
            u, lf = self._cached_step(stick_logit(V[:, j], L[:, j]), self.target_V(st, j), st.sc_V, rng, lf, index=(slice(None), j))
            V[:, j], L[:, j] = stick_from_logit(u)
        st = dataclasses.replace(st, V=V, log1m_V=L)
        lf = self.loglik(st)
        rho = st.rho.copy()
        for j in range(N):
            st = dataclasses.replace(st, rho=rho)
            rho[:, j], lf = self._cached_step(
                rho[:, j], self.target_rho(st, j), st.sc_rho, rng, lf, transform="fisher_rho", index=(slice(None), j)
            )
        rho = np.clip(rho, -_V_MAX, _V_MAX)
        st = dataclasses.replace(st, rho=rho, M_e=self.update_M_e(L, rng))
        lf = self.loglik(st)
        a_e, lf = self._cached_step(st.a_e, self.target_a_e(st), st.sc_ae, rng, lf, transform="logit")
        st = dataclasses.replace(st, a_e=a_e)
        s2_e, _ = self._cached_step(st.s2_e, self.target_s2_e(st), st.sc_s2e, rng, lf, transform="log")
        st = dataclasses.replace(st, s2_e=s2_e)
        # trend block
        alpha = self.update_alpha(st, rng)
        # single-site moves shift the level slowly when the increments are tight
        st = dataclasses.replace(st, alpha=alpha)
        a1, _, _ = mh_step(alpha[:, 0], self.target_level(st), st.sc_level, rng)
        alpha = alpha + (a1 - alpha[:, 0])[:, None]
        s_a, mu_a, K_a = self.update_s_alpha(st, alpha, rng)
        mu_a = self.update_mu_alpha(s_a, K_a, alpha, st.a_a, st.s2_a, rng)
        st = dataclasses.replace(st, alpha=alpha, s_a=s_a, mu_a=mu_a, K_a=K_a)
        a_a, _, _ = mh_step(st.a_a, self.target_a_alpha(st), st.sc_aa, rng, transform="logit")
        st = dataclasses.replace(st, a_a=a_a)
        s2_a, _, _ = mh_step(st.s2_a, self.target_s2_alpha(st), st.sc_s2a, rng, transform="log")
        st = dataclasses.replace(st, s2_a=s2_a)
        M_a, _, _ = mh_step(st.M_a, self.target_M_alpha(st), st.sc_Ma, rng, transform="log")
        return dataclasses.replace(st, M_a=M_a)

    def refresh(self, state):
        return state

    # -- SMC protocol ------------------------------------------------------------

    def initial_state(self, n_particles, rng, burn_in=5000, thin=5, n_chains=1):
        return sample_initial(self, n_particles, rng, burn_in, thin, n_chains)

    def extend(self, state, rng):
        return smc_transition_ts(state, rng)

    def rejuvenate(self, state, n_sweeps, rng):
        for _ in range(n_sweeps):
            state = self.sweep(state, rng)
        return state

    def take(self, state, indices):
        return state.take(indices)

    def truncation_size(self, state):
        return state.n_atoms

    # -- simulation and summaries ------------------------------------------------

    def simulate(self, state, rng):
        """New series ``alpha + eps`` for every particle; ``(S, T)``."""
        p = np.exp(rsb_log_weights(state.V, state.log1m_V))
        return state.alpha + simulate_stationary(p, state.mu, state.rho, state.a_e * state.s2_e, self.T, rng)

    def increment_density(self, state, grid):
        """Polya-urn predictive density of the next trend increment; ``(S, G)``."""
        grid = np.asarray(grid, dtype=float)
        n = self.T - 1
        counts = _slot_counts(state.s_a, n).astype(float)
        sd_in = np.sqrt(state.a_a * state.s2_a)[:, None, None]
        z = (grid[None, :, None] - state.mu_a[:, None, :]) / sd_in
        old = np.einsum("sgk,sk->sg", np.exp(-0.5 * z**2) / (sd_in * np.sqrt(2 * np.pi)), counts)
        sd0 = np.sqrt(state.s2_a)[:, None]
        new = state.M_a[:, None] * np.exp(-0.5 * (grid[None, :] / sd0) ** 2) / (sd0 * np.sqrt(2 * np.pi))
        return (old + new) / (n + state.M_a)[:, None]

    def summaries(self, state, weights, grid_nu, grid_eps, quantiles=(0.025, 0.5, 0.975)):
        """Trend quantiles, posterior-mean densities and the mean transition density.

        Returns a dict with ``trend_quantiles`` ``(len(quantiles), T)``,
        ``nu_density``, ``eps_density`` and ``transition`` ``(G, G)`` where
        ``transition[g, h] = p(eps_t = grid_eps[h] | eps_{t-1} = grid_eps[g])``.
        """
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        p = np.exp(rsb_log_weights(state.V, state.log1m_V))
        A = state.a_e * state.s2_e
        trans = np.zeros((len(grid_eps), len(grid_eps)))
        for sl in chunk_rows(state.V.shape[0], len(grid_eps) ** 2 * state.n_atoms):
            trans += np.tensordot(w[sl], transition_density(p[sl], state.mu[sl], state.rho[sl], A[sl], grid_eps, grid_eps), axes=(0, 0))
        return {
            "trend_quantiles": weighted_quantile(state.alpha, w, quantiles),
            "nu_density": w @ self.increment_density(state, grid_nu),
            "eps_density": w @ stationary_density(p, state.mu, A, grid_eps),
            "transition": trans,
        }
