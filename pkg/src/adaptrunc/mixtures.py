"""Normal mixtures under Dirichlet process and Pitman-Yor priors.

Three truncations of the mixing measure are supported:

``rsb``
    stick-breaking weights re-normalized by ``1 - prod(1 - V_j)``; sampled
    with the help of geometric latent variables ``z_i``.
``sb``
    plain stick-breaking with the last stick fixed to one.
``fk``
    Ferguson-Klass: the ``N`` largest jumps of a Gamma process, normalized
    (Dirichlet process only).

Every particle holds ``N`` atoms ``(mu_j, tau_j)`` (``tau`` is a precision)
drawn from the centring measure ``N(mu | mu0, sigma2) Ga(tau | alpha, beta)``.
All updates act on a batch of particles at once; the state arrays have the
particle index on their first axis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._batch import ParticleBatch, chunk_rows, sample_initial
from .adaptive_mh import AdaptiveScale, mh_step
from .random_measures import GammaProcess, log_stick_weights, sample_sticks

__all__ = [
    "NormalMixtureHyper",
    "MixtureState",
    "NormalMixtureModel",
    "normal_logpdf",
    "categorical_sample",
    "update_s",
    "update_z",
    "update_V",
    "update_theta",
    "update_M",
    "update_M_fk",
    "update_py_params",
    "py_collapsed_log_target",
    "update_py_params_collapsed",
    "fk_jump_sweep",
    "fk_mcmc_sweep",
    "mixture_density",
    "mise",
]

_LOG_2PI = np.log(2.0 * np.pi)
_UNIT_GAMMA = GammaProcess(1.0)


@dataclass(frozen=True)
class NormalMixtureHyper:
    """Centring measure ``N(mu | mu0, sigma2) x Ga(tau | alpha, beta)`` (rate ``beta``)."""

    mu0: float
    sigma2: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not np.isfinite(self.mu0):
            raise ValueError("mu0 must be finite")
        for name in ("sigma2", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_data(cls, y, sigma2=10.0, alpha=3.0, scale=0.1):
        """``mu0 = mean(y)``, ``beta = scale (alpha - 1) var(y)``."""
        y = np.asarray(y, dtype=float)
        return cls(float(y.mean()), sigma2, alpha, scale * (alpha - 1.0) * float(y.var(ddof=1)))

    def sample(self, shape, rng):
        mu = self.mu0 + np.sqrt(self.sigma2) * rng.standard_normal(shape)
        tau = rng.gamma(self.alpha, 1.0 / self.beta, size=shape)
        return mu, tau


@dataclass
class MixtureState(ParticleBatch):
    """Batched mixture state.

    ``V`` holds sticks for ``rsb``/``sb`` and jumps (decreasing) for ``fk``;
    ``log1m_V`` is ``log(1 - V)`` for the sticks (``None`` for ``fk``), kept
    separately because sticks of a small-mass prior round to one.
    ``log_head`` and ``log_tail`` cache, per particle and observation, the
    log of the unnormalized mixture density over atoms ``1..N-1`` and of
    atom ``N`` alone; they are only valid right after :meth:`refresh`.
    """

    V: np.ndarray
    log1m_V: np.ndarray | None
    mu: np.ndarray
    tau: np.ndarray
    s: np.ndarray
    z: np.ndarray
    M: np.ndarray
    a: np.ndarray
    log_head: np.ndarray
    log_tail: np.ndarray
    scale_M: AdaptiveScale
    scale_a: AdaptiveScale
    scale_J: AdaptiveScale | None = None
    scale_M_marg: AdaptiveScale | None = None
    scale_a_marg: AdaptiveScale | None = None

    @property
    def n_atoms(self):
        return self.V.shape[1]


# ---------------------------------------------------------------------------
# elementary pieces
# ---------------------------------------------------------------------------


def normal_logpdf(y, mu, tau):
    """``log N(y | mu, 1/tau)`` with broadcasting."""
    return 0.5 * (np.log(tau) - _LOG_2PI) - 0.5 * tau * (y - mu) ** 2


def categorical_sample(logits, rng):
    """One draw per row of ``logits`` (last axis), by inversion."""
    logits = np.asarray(logits, dtype=float)
    m = logits.max(axis=-1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise FloatingPointError("all categorical masses are zero")
    cum = np.cumsum(np.exp(logits - m), axis=-1)
    u = rng.uniform(size=logits.shape[:-1] + (1,)) * cum[..., -1:]
    idx = (cum < u).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)


def _counts(s, n_atoms):
    S = s.shape[0]
    flat = s + n_atoms * np.arange(S)[:, None]
    return np.bincount(flat.ravel(), minlength=S * n_atoms).reshape(S, n_atoms)


def _cluster_sums(s, y, n_atoms, weights_power=1):
    S = s.shape[0]
    flat = (s + n_atoms * np.arange(S)[:, None]).ravel()
    yy = np.broadcast_to(y, s.shape).ravel() ** weights_power
    return np.bincount(flat, weights=yy, minlength=S * n_atoms).reshape(S, n_atoms)


def _stick_ab(n_atoms, M, a):
    j = np.arange(1, n_atoms + 1)
    return (1.0 - a)[:, None] * np.ones(n_atoms), M[:, None] + a[:, None] * j


# ---------------------------------------------------------------------------
# Gibbs updates
# ---------------------------------------------------------------------------


def update_s(log_weights, mu, tau, y, rng):
    """Allocations ``p(s_i = j) propto p_j N(y_i | mu_j, 1/tau_j)``.

    ``log_weights``, ``mu`` and ``tau`` have shape ``(S, N)``; the weights
    need not be normalized.  Returns ``(S, n)`` zero-based labels.
    """
    S, N = mu.shape
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    y2 = np.broadcast_to(y, (S, n))
    s = np.empty((S, n), dtype=np.int64)
    for sl in chunk_rows(S, n * N):
        logits = log_weights[sl, None, :] + normal_logpdf(y2[sl, :, None], mu[sl, None, :], tau[sl, None, :])
        s[sl] = categorical_sample(logits, rng)
    return s


def update_z(log1m_V, n, rng):
    """Geometric latents on ``{0, 1, ...}`` with success ``1 - prod(1 - V_j)``.

    Drawn by inversion, ``floor(log U / sum log(1 - V_j))``, and returned as
    floats: when every stick is tiny the counts exceed the integer range.
    """
    log_q = np.sum(log1m_V, axis=-1)[:, None]
    u = 1.0 - rng.random((log1m_V.shape[0], n))
    return np.floor(np.log(u) / log_q)


def update_V(s, z, M, a, n_atoms, rng, truncation="rsb"):
    """Sticks from ``Be(a_j + n_j, b_j + n_{>j} [+ sum z])``.

    For ``sb`` the last stick stays at one and ``z`` is ignored.  Returns
    ``(V, log(1 - V))``.
    """
    counts = _counts(s, n_atoms)
    above = counts[:, ::-1].cumsum(axis=1)[:, ::-1] - counts
    aj, bj = _stick_ab(n_atoms, M, a)
    a_post = aj + counts
    b_post = bj + above
    if truncation == "rsb":
        b_post = b_post + z.sum(axis=1, keepdims=True)
    V, log1m = sample_sticks(a_post, b_post, rng)
    if truncation == "sb":
        V[:, -1] = 1.0
        log1m[:, -1] = -np.inf
    return V, log1m


def update_theta(s, y, mu, tau, hyper, rng, known_var=False):
    """Two-block Gibbs step for the atoms: ``mu_j | tau_j`` then ``tau_j | mu_j``.

    Empty clusters are drawn from the centring measure (the same formulas
    with zero counts).
    """
    S, N = mu.shape
    cnt = _counts(s, N)
    sy = _cluster_sums(s, y, N)
    prec = 1.0 / hyper.sigma2 + cnt * tau
    mean = (hyper.mu0 / hyper.sigma2 + tau * sy) / prec
    mu = mean + rng.standard_normal((S, N)) / np.sqrt(prec)
    if not known_var:
        syy = _cluster_sums(s, y, N, weights_power=2)
        ss = syy - 2.0 * mu * sy + cnt * mu**2
        ss = np.maximum(ss, 0.0)
        tau = rng.gamma(hyper.alpha + 0.5 * cnt, 1.0 / (hyper.beta + 0.5 * ss))
    return mu, tau


def update_M(log1m_V, rng, n_random=None):
    """DP mass with an Exp(1) prior: ``Ga(1 + N, 1 - sum log(1 - V_j))``.

    Takes ``log(1 - V)``; ``n_random`` limits the sum to the first sticks
    (the SB truncation has a fixed last stick).
    """
    Lr = log1m_V if n_random is None else log1m_V[:, :n_random]
    rate = 1.0 - np.sum(Lr, axis=1)
    return rng.gamma(1.0 + Lr.shape[1], 1.0 / rate)


def update_M_fk(J, rng):
    """DP mass given the ``N`` largest Gamma-process jumps, Exp(1) prior.

    The ordered-jump density is ``M^N prod(e^{-J_j}/J_j) exp(-M E1(J_N))``.
    """
    return rng.gamma(1.0 + J.shape[1], 1.0 / (1.0 + special.exp1(J[:, -1])))


def py_log_target(V, log1m_V, M, a, n_random=None):
    """``sum_j log Be(V_j | 1-a, M + a j)`` plus log priors ``U(0,1)`` and ``Exp(1)``."""
    Vr = V if n_random is None else V[:, :n_random]
    Lr = log1m_V if n_random is None else log1m_V[:, :n_random]
    M = np.asarray(M, dtype=float)
    a = np.asarray(a, dtype=float)
    aj, bj = _stick_ab(Vr.shape[1], np.atleast_1d(M), np.atleast_1d(a))
    with np.errstate(invalid="ignore", divide="ignore"):
        lp = (aj - 1.0) * np.log(Vr) + (bj - 1.0) * Lr - special.betaln(aj, bj)
    return lp.sum(axis=1) - M


def update_py_params(V, log1m_V, M, a, scale_M, scale_a, rng, n_random=None):
    """Adaptive MH on ``logit(a)`` then ``log(M)``."""
    a, _, _ = mh_step(a, lambda x: py_log_target(V, log1m_V, M, x, n_random), scale_a, rng, transform="logit")
    M, _, _ = mh_step(M, lambda x: py_log_target(V, log1m_V, x, a, n_random), scale_M, rng, transform="log")
    return M, a


def py_collapsed_log_target(counts, Z, M, a, n_random=None):
    """Log ``p(s, z | a, M)`` with the sticks integrated out, plus the log priors.

    ``sum_j [log B(1-a+n_j, M+a j+n_{>j}+Z) - log B(1-a, M+a j)] - M`` over
    the random sticks; ``Z`` is the sum of the geometric latents (zero for
    the SB truncation).
    """
    N = counts.shape[1] if n_random is None else n_random
    above = counts[:, ::-1].cumsum(axis=1)[:, ::-1] - counts
    M = np.atleast_1d(np.asarray(M, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    aj, bj = _stick_ab(N, M, a)
    Z = np.asarray(Z, dtype=float).reshape(-1, 1)
    with np.errstate(invalid="ignore"):
        lp = special.betaln(aj + counts[:, :N], bj + above[:, :N] + Z) - special.betaln(aj, bj)
    return lp.sum(axis=1) - M


def update_py_params_collapsed(counts, Z, M, a, scale_M, scale_a, rng, n_random=None, fixed=()):
    """Adaptive MH on ``logit(a)`` then ``log(M)`` with the sticks integrated out.

    Must be followed by a fresh draw of the sticks.  Names in ``fixed``
    (``"a"``, ``"M"``) are left unchanged.
    """
    if "a" not in fixed:
        a, _, _ = mh_step(
            a, lambda x: py_collapsed_log_target(counts, Z, M, x, n_random), scale_a, rng, transform="logit"
        )
    if "M" not in fixed:
        M, _, _ = mh_step(
            M, lambda x: py_collapsed_log_target(counts, Z, x, a, n_random), scale_M, rng, transform="log"
        )
    return M, a


def fk_log_target_j(J, j, counts, M):
    """Log full conditional of jump ``j`` (columns of ``J`` other than ``j`` fixed).

    Gamma-process ordered-jump prior times ``J_j^{n_j} / (sum J)^n``;
    ``-inf`` outside the ordering constraint.
    """
    N = J.shape[1]
    n = counts.sum(axis=1)
    others = J.sum(axis=1) - J[:, j]

    def logp(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = -np.log(x) - x + counts[:, j] * np.log(x) - n * np.log(others + x)
        if j == N - 1:
            lp = lp - M * special.exp1(x)
        ok = x > 0
        if j > 0:
            ok &= x < J[:, j - 1]
        if j < N - 1:
            ok &= x > J[:, j + 1]
        return np.where(ok, lp, -np.inf)

    return logp


def fk_jump_sweep(J, s, M, scale_J, rng):
    """One adaptive MH move on ``log J_j`` for each jump in turn."""
    J = J.copy()
    counts = _counts(s, J.shape[1])
    for j in range(J.shape[1]):
        logp = fk_log_target_j(J, j, counts, M)
        J[:, j], _, _ = mh_step(J[:, j], logp, scale_J, rng, transform="log", index=(slice(None), j))
    return J


def fk_mcmc_sweep(state, y, hyper, rng, known_var=False, fixed_M=None):
    """Gibbs sweep of the FK-truncated DP mixture: s, atoms, jumps, M."""
    s = update_s(np.log(state.V), state.mu, state.tau, y, rng)
    mu, tau = update_theta(s, y, state.mu, state.tau, hyper, rng, known_var)
    J = fk_jump_sweep(state.V, s, state.M, state.scale_J, rng)
    M = state.M if fixed_M is not None else update_M_fk(J, rng)
    return dataclasses.replace(state, V=J, mu=mu, tau=tau, s=s, M=M)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _log_mixture_terms(log_w, mu, tau, x, sl):
    return log_w[sl, None, :] + normal_logpdf(x[sl, :, None], mu[sl, None, :], tau[sl, None, :])


def mixture_density(weights, mu, tau, grid):
    """Per-particle mixture densities ``sum_j p_j N(x | mu_j, 1/tau_j)``; shape ``(S, G)``."""
    grid = np.asarray(grid, dtype=float)
    S, N = mu.shape
    out = np.empty((S, grid.size))
    for sl in chunk_rows(S, grid.size * N):
        dens = np.exp(normal_logpdf(grid[None, :, None], mu[sl, None, :], tau[sl, None, :]))
        out[sl] = np.einsum("sgj,sj->sg", dens, weights[sl])
    return out


def mise(run_densities, reference, grid):
    """Mean over runs of ``int (f_i - f_ref)^2 dx`` (trapezoid rule)."""
    grid = np.asarray(grid, dtype=float)
    reference = np.asarray(reference, dtype=float)
    runs = np.atleast_2d(np.asarray(run_densities, dtype=float))
    if reference.shape != grid.shape or runs.shape[1] != grid.size:
        raise ValueError("densities and grid have mismatched shapes")
    return float(np.mean(np.trapezoid((runs - reference) ** 2, grid, axis=1)))


# ---------------------------------------------------------------------------
# the SMC model
# ---------------------------------------------------------------------------


class NormalMixtureModel:
    """Univariate normal mixture with a DP or Pitman-Yor mixing measure.

    Parameters
    ----------
    y : array_like
        Observations.
    hyper : NormalMixtureHyper, optional
        Defaults to :meth:`NormalMixtureHyper.from_data`.
    prior : {"dp", "py"}
    truncation : {"rsb", "sb", "fk"}
    n_init : int
        Initial truncation size ``N_1``.
    M, a : float, optional
        Fix the mass / discount instead of learning them (priors ``Exp(1)``
        and ``U(0, 1)``).
    known_var : float, optional
        Fix every atom variance to this value (atom precisions are not
        updated).
    """

    def __init__(self, y, hyper=None, prior="dp", truncation="rsb", n_init=10, M=None, a=None, known_var=None):
        if prior not in ("dp", "py"):
            raise ValueError("prior must be 'dp' or 'py'")
        if truncation not in ("rsb", "sb", "fk"):
            raise ValueError("truncation must be 'rsb', 'sb' or 'fk'")
        if truncation == "fk" and prior != "dp":
            raise ValueError("the FK truncation is only available for the Dirichlet process")
        if n_init < 1:
            raise ValueError("initial truncation size must be at least 1")
        if prior == "dp" and a not in (None, 0, 0.0):
            raise ValueError("the Dirichlet process has no discount parameter")
        if M is not None and not M > 0:
            raise ValueError("M must be positive")
        if a is not None and not 0 <= a < 1:
            raise ValueError("a must lie in [0, 1)")
        self.set_data(y)
        self.hyper = hyper or NormalMixtureHyper.from_data(self.y)
        self.prior = prior
        self.truncation = truncation
        self.n_init = int(n_init)
        self.fixed_M = M
        self.fixed_a = 0.0 if prior == "dp" else a
        self.known_var = known_var

    def set_data(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size == 0 or not np.all(np.isfinite(y)):
            raise ValueError("y must be a non-empty 1-d array of finite values")
        self.y = y

    @property
    def n(self):
        return self.y.size

    # -- prior -------------------------------------------------------------

    def _n_random_sticks(self, N):
        return N - 1 if self.truncation == "sb" else N

    def prior_state(self, n_particles, rng, n_atoms=None):
        """Independent draws from the truncated prior (allocations from the prior too)."""
        S = n_particles
        N = self.n_init if n_atoms is None else n_atoms
        M = np.full(S, float(self.fixed_M)) if self.fixed_M is not None else rng.exponential(1.0, S)
        if self.fixed_a is not None:
            a = np.full(S, float(self.fixed_a))
        else:
            a = rng.uniform(size=S)
        log1m = None
        if self.truncation == "fk":
            t = np.cumsum(rng.standard_exponential((S, N)), axis=1) / M[:, None]
            V = _UNIT_GAMMA.inverse_tail_mass(t)
        else:
            aj, bj = _stick_ab(N, M, a)
            V, log1m = sample_sticks(aj, bj, rng)
            if self.truncation == "sb":
                V[:, -1] = 1.0
                log1m[:, -1] = -np.inf
        mu, tau = self.hyper.sample((S, N), rng)
        if self.known_var is not None:
            tau = np.full((S, N), 1.0 / self.known_var)
        logw = self.log_weights(V, log1m)
        s = categorical_sample(np.broadcast_to(logw[:, None, :], (S, self.n, N)), rng)
        z = np.zeros((S, self.n))
        if self.truncation == "rsb":
            z = update_z(log1m, self.n, rng)
        state = MixtureState(
            V=V,
            log1m_V=log1m,
            mu=mu,
            tau=tau,
            s=s,
            z=z,
            M=M,
            a=a,
            log_head=np.zeros((S, self.n)),
            log_tail=np.zeros((S, self.n)),
            scale_M=AdaptiveScale.full(S),
            scale_a=AdaptiveScale.full(S),
            scale_J=AdaptiveScale.full((S, N), log_var=-2.0) if self.truncation == "fk" else None,
            scale_M_marg=AdaptiveScale.full(S) if self.prior == "py" else None,
            scale_a_marg=AdaptiveScale.full(S) if self.prior == "py" else None,
        )
        return state

    def log_weights(self, V, log1m_V=None):
        """Unnormalized log mixture weights of a batch of truncations."""
        if self.truncation == "fk":
            return np.log(V)
        return log_stick_weights(V, log1m_V)

    def weights(self, state):
        logw = self.log_weights(state.V, state.log1m_V)
        return np.exp(logw - special.logsumexp(logw, axis=1, keepdims=True))

    # -- MCMC --------------------------------------------------------------

    def sweep(self, state, rng):
        """One Gibbs sweep (allocations, latents, sticks or jumps, atoms, hyperparameters)."""
        y = self.y
        if self.truncation == "fk":
            return fk_mcmc_sweep(state, y, self.hyper, rng, self.known_var is not None, self.fixed_M)
        N = state.n_atoms
        s = update_s(self.log_weights(state.V, state.log1m_V), state.mu, state.tau, y, rng)
        z = update_z(state.log1m_V, self.n, rng) if self.truncation == "rsb" else state.z
        M, a = state.M, state.a
        n_random = self._n_random_sticks(N)
        fixed = tuple(k for k, v in (("M", self.fixed_M), ("a", self.fixed_a)) if v is not None)
        if self.prior == "py" and n_random > 0 and len(fixed) < 2:
            # sticks integrated out; with them held fixed, a mixes poorly near one
            Z = z.sum(axis=1) if self.truncation == "rsb" else np.zeros(z.shape[0])
            M, a = update_py_params_collapsed(
                _counts(s, N), Z, M, a, state.scale_M_marg, state.scale_a_marg, rng, n_random, fixed
            )
        V, log1m = update_V(s, z, M, a, N, rng, self.truncation)
        mu, tau = update_theta(s, y, state.mu, state.tau, self.hyper, rng, self.known_var is not None)
        if self.prior == "dp":
            if self.fixed_M is None and n_random > 0:
                M = update_M(log1m, rng, n_random)
        elif n_random > 0:
            if self.fixed_a is not None:
                M, _, _ = mh_step(
                    M, lambda x: py_log_target(V, log1m, x, a, n_random), state.scale_M, rng, transform="log"
                )
            elif self.fixed_M is not None:
                a, _, _ = mh_step(
                    a, lambda x: py_log_target(V, log1m, M, x, n_random), state.scale_a, rng, transform="logit"
                )
            else:
                M, a = update_py_params(V, log1m, M, a, state.scale_M, state.scale_a, rng, n_random)
        return dataclasses.replace(state, V=V, log1m_V=log1m, mu=mu, tau=tau, s=s, z=z, M=M, a=a)

    def refresh(self, state):
        """Recompute the cached per-observation mixture terms."""
        S, N = state.mu.shape
        logw = self.log_weights(state.V, state.log1m_V)
        y2 = np.broadcast_to(self.y, (S, self.n))
        head = np.full((S, self.n), -np.inf)
        tail = np.empty((S, self.n))
        for sl in chunk_rows(S, self.n * N):
            terms = _log_mixture_terms(logw, state.mu, state.tau, y2, sl)
            if N > 1:
                head[sl] = special.logsumexp(terms[..., :-1], axis=-1)
            tail[sl] = terms[..., -1]
        state.log_head = head
        state.log_tail = tail
        return state

    # -- SMC protocol ------------------------------------------------------

    def initial_state(self, n_particles, rng, burn_in=5000, thin=5, n_chains=1):
        return sample_initial(self, n_particles, rng, burn_in, thin, n_chains)

    def loglik(self, state):
        ll = np.logaddexp(state.log_head, state.log_tail).sum(axis=1)
        if self.truncation == "rsb":
            ll -= self.n * np.log(-np.expm1(np.sum(state.log1m_V, axis=1)))
        elif self.truncation == "fk":
            ll -= self.n * np.log(state.V.sum(axis=1))
        return ll

    def extend(self, state, rng):
        """Append one atom drawn from its conditional prior and update the cache."""
        S, N = state.mu.shape
        mu_new, tau_new = self.hyper.sample(S, rng)
        if self.known_var is not None:
            tau_new = np.full(S, 1.0 / self.known_var)
        lk_new = normal_logpdf(self.y[None, :], mu_new[:, None], tau_new[:, None])
        scale_J = state.scale_J
        log1m = state.log1m_V
        if self.truncation == "fk":
            t_next = special.exp1(state.V[:, -1]) + rng.standard_exponential(S) / state.M
            J_new = _UNIT_GAMMA.inverse_tail_mass(t_next)
            # bisection tolerance must not break the strict ordering
            J_new = np.minimum(J_new, np.nextafter(state.V[:, -1], 0.0))
            V = np.column_stack([state.V, J_new])
            head = np.logaddexp(state.log_head, state.log_tail)
            tail = np.log(J_new)[:, None] + lk_new
            scale_J = scale_J.append(1, log_var=-2.0)
        elif self.truncation == "rsb":
            aj, bj = stick_params_at(N + 1, state.M, state.a)
            V_new, l1_new = sample_sticks(aj, bj, rng)
            log_rem = np.sum(state.log1m_V, axis=1)
            V = np.column_stack([state.V, V_new])
            log1m = np.column_stack([state.log1m_V, l1_new])
            head = np.logaddexp(state.log_head, state.log_tail)
            tail = (log_rem + np.log(V_new))[:, None] + lk_new
        else:
            # SB: the fixed last stick becomes random and a new last atom takes the remainder
            aj, bj = stick_params_at(N, state.M, state.a)
            V_last, l1_last = sample_sticks(aj, bj, rng)
            log_rem = np.sum(state.log1m_V[:, :-1], axis=1)
            lk_last = normal_logpdf(self.y[None, :], state.mu[:, -1:], state.tau[:, -1:])
            head = np.logaddexp(state.log_head, (log_rem + np.log(V_last))[:, None] + lk_last)
            tail = (log_rem + l1_last)[:, None] + lk_new
            V = np.column_stack([state.V[:, :-1], V_last, np.ones(S)])
            log1m = np.column_stack([state.log1m_V[:, :-1], l1_last, np.full(S, -np.inf)])
        return dataclasses.replace(
            state,
            V=V,
            log1m_V=log1m,
            mu=np.column_stack([state.mu, mu_new]),
            tau=np.column_stack([state.tau, tau_new]),
            log_head=head,
            log_tail=tail,
            scale_J=scale_J,
        )

    def rejuvenate(self, state, n_sweeps, rng):
        for _ in range(n_sweeps):
            state = self.sweep(state, rng)
        return self.refresh(state)

    def take(self, state, indices):
        return state.take(indices)

    def truncation_size(self, state):
        return state.n_atoms

    def predictive_density(self, state, grid):
        return mixture_density(self.weights(state), state.mu, state.tau, grid)

    # -- summaries ---------------------------------------------------------

    def simulate(self, state, rng):
        """New observations given each particle's atoms and allocations; ``(S, n)``."""
        mu = np.take_along_axis(state.mu, state.s, 1)
        tau = np.take_along_axis(state.tau, state.s, 1)
        return mu + rng.standard_normal(mu.shape) / np.sqrt(tau)

    def occupied(self, state):
        """Number of atoms with at least one allocated observation, per particle."""
        return (_counts(state.s, state.n_atoms) > 0).sum(axis=1)


def stick_params_at(j, M, a):
    """Beta parameters of stick ``j`` (1-based) for a batch of ``(M, a)``."""
    return 1.0 - a, M + a * j
