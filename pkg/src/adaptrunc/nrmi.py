"""Normalized Gamma-process (Dirichlet) mixtures under the CPP truncation.

The mixing measure keeps the jumps of a Gamma process ``eta(x) = M e^{-x}/x``
that exceed a level ``L``; the SMC lowers ``L`` along a schedule and adds the
jumps that appear in each new band.  The sampler is the slice-type scheme
with allocations ``s`` and a latent ``v`` whose augmented prior is
``v^{n-1} prod_i J_{s_i} exp(-v sum_j J_j)``.

Particles hold different numbers of jumps, so jumps and atoms live in padded
``(S, K)`` arrays with an ``active`` mask.  Allocations index columns.

Transition weights.  Given ``v`` the new band is proposed from the Poisson
process with intensity ``e^{-vx} eta(x)``; the augmented target has intensity
``eta`` times ``e^{-vx}`` from the ``v`` factor, so the incremental weight is
``exp(-int_band (1 - e^{-vx}) eta(x) dx)``.  The model therefore reports

    loglik(state) = -int_L^inf (1 - e^{-vx}) eta(x) dx = -M [E1(L) - E1((1+v) L)]

whose difference between consecutive levels is that log-weight.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._batch import ParticleBatch, chunk_rows, sample_initial
from .adaptive_mh import AdaptiveScale, mh_step
from .mixtures import (
    NormalMixtureHyper,
    _counts,
    categorical_sample,
    mixture_density,
    normal_logpdf,
    update_theta,
)
from .random_measures import GammaProcess

__all__ = [
    "CppState",
    "NrmiMixtureModel",
    "tilted_tail_mass",
    "sample_tilted_band",
    "update_occupied_jumps",
    "update_unoccupied_jumps",
    "update_allocations",
    "update_v",
    "cpp_transition",
    "level_schedule",
]

_UNIT_GAMMA = GammaProcess(1.0)


def tilted_tail_mass(M, L, v):
    """``int_L^inf e^{-vx} M e^{-x} / x dx = M E1((1+v) L)``."""
    return M * special.exp1((1.0 + v) * L)


def sample_tilted_band(M, v, lo, hi, rng):
    """Poisson process with intensity ``e^{-vx} M e^{-x}/x`` on ``(lo, hi)``, per particle.

    Uses exact inversion of the tilted tail mass; ``hi`` may be ``inf``.
    Returns ``(jumps, counts)`` with jumps padded into an ``(S, max(counts))``
    array (padding is ``nan``).
    """
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    r = 1.0 + v
    z_lo = special.exp1(r * lo)
    z_hi = np.zeros_like(z_lo) if np.isinf(hi) else special.exp1(r * hi)
    counts = rng.poisson(M * (z_lo - z_hi))
    width = int(counts.max(initial=0))
    out = np.full((M.size, width), np.nan)
    if width == 0:
        return out, counts
    mask = np.arange(width)[None, :] < counts[:, None]
    rows = np.nonzero(mask)[0]
    u = rng.uniform(size=rows.size)
    t = z_hi[rows] + (z_lo - z_hi)[rows] * (1.0 - u)
    x = _UNIT_GAMMA.inverse_tail_mass(t) / r[rows]
    # bisection tolerance may step outside the band by a relative 1e-10
    upper = hi if np.isinf(hi) else np.nextafter(hi, 0.0)
    out[mask] = np.clip(x, np.nextafter(lo, np.inf), upper)
    return out, counts


def level_schedule(L1, k, M_ref=1.0, scheme="one_atom", xi=None):
    """Level ``L_k`` (``k`` is 1-based) for a Gamma process with mass ``M_ref``."""
    if scheme == "geometric":
        if xi is None or not xi > 0:
            raise ValueError("geometric schedule needs xi > 0")
        return L1 * np.exp(-(k - 1) * xi)
    if scheme != "one_atom":
        raise ValueError(f"unknown level scheme {scheme!r}")
    if k == 1:
        return float(L1)
    return float(_UNIT_GAMMA.inverse_tail_mass(special.exp1(L1) + (k - 1) / M_ref))


@dataclass
class CppState(ParticleBatch):
    J: np.ndarray  # (S, K), nan where inactive
    mu: np.ndarray
    tau: np.ndarray
    active: np.ndarray
    s: np.ndarray  # (S, n) column indices
    v: np.ndarray
    M: np.ndarray
    level: float = 1.0
    k: int = 1

    @property
    def n_jumps(self):
        return self.active.sum(axis=1)

    _PAD = {"J": np.nan, "mu": 0.0, "tau": 1.0, "active": False}

    @classmethod
    def concat(cls, batches):
        width = max(b.J.shape[1] for b in batches)
        padded = []
        for b in batches:
            extra = width - b.J.shape[1]
            fields = {
                name: np.pad(getattr(b, name), ((0, 0), (0, extra)), constant_values=fill)
                for name, fill in cls._PAD.items()
            }
            padded.append(dataclasses.replace(b, **fields))
        return super().concat(padded)


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------


def _truncated_gamma(shape, rate, L, rng):
    """``Ga(shape, rate)`` restricted to ``(L, inf)`` by inversion of the upper tail."""
    q = special.gammaincc(shape, rate * L)
    u = rng.uniform(size=np.shape(shape))
    ok = q > 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        x = special.gammainccinv(shape, np.where(ok, u * q, 0.5)) / rate
    x = np.where(ok, np.maximum(x, np.nextafter(L, np.inf)), np.nan)
    return x, ok


def update_occupied_jumps(J, counts, v, L, rng):
    """Occupied jumps from ``eta(J) J^m e^{-vJ}`` on ``(L, inf)``: ``Ga(m, 1 + v)`` truncated.

    Where the truncated region has no numerically representable mass the
    jump is moved by random-walk Metropolis on ``log J`` instead.
    """
    occ = counts > 0
    rows, cols = np.nonzero(occ)
    m = counts[rows, cols].astype(float)
    rate = 1.0 + v[rows]
    new, ok = _truncated_gamma(m, rate, L, rng)
    if not ok.all():
        warnings.warn("truncated gamma mass underflow; using Metropolis for some jumps", RuntimeWarning, stacklevel=2)
        bad = ~ok
        mb, rb = m[bad], rate[bad]

        def logp(x):
            return np.where(x > L, (mb - 1.0) * np.log(x) - rb * x, -np.inf)

        cur = J[rows[bad], cols[bad]]
        for _ in range(20):
            cur, _, _ = mh_step(cur, logp, AdaptiveScale.full(cur.shape, log_var=-4.0), rng, transform="log")
        new[bad] = cur
    J = J.copy()
    J[rows, cols] = new
    return J


def update_unoccupied_jumps(J, mu, tau, active, counts, M, v, L, hyper, rng, known_tau=None):
    """Discard unoccupied jumps and draw a fresh set from the tilted Poisson process.

    Returns compacted arrays with the occupied columns first and the mask
    of active columns.
    """
    S, K = J.shape
    occ = (counts > 0) & active
    order = np.argsort(~occ, axis=1, kind="stable")
    n_occ = occ.sum(axis=1)
    new_J, new_counts = sample_tilted_band(M, v, L, np.inf, rng)
    width = int((n_occ + new_counts).max())
    Jo = np.full((S, width), np.nan)
    muo = np.zeros((S, width))
    tauo = np.ones((S, width))
    keep = min(K, width)
    take = np.take_along_axis
    Jo[:, :keep] = take(J, order, 1)[:, :keep]
    muo[:, :keep] = take(mu, order, 1)[:, :keep]
    tauo[:, :keep] = take(tau, order, 1)[:, :keep]
    col = np.arange(width)[None, :]
    act = col < (n_occ + new_counts)[:, None]
    fresh = act & (col >= n_occ[:, None])
    # fresh jumps fill columns n_occ .. n_occ + c - 1
    src = np.clip(col - n_occ[:, None], 0, max(new_J.shape[1] - 1, 0))
    if new_J.shape[1]:
        Jo[fresh] = np.take_along_axis(new_J, src, 1)[fresh]
    m_new, t_new = hyper.sample(int(fresh.sum()), rng)
    muo[fresh] = m_new
    tauo[fresh] = t_new if known_tau is None else known_tau
    Jo[~act] = np.nan
    return Jo, muo, tauo, act


def update_allocations(J, mu, tau, active, y, rng):
    """``p(s_i = j) propto J_j N(y_i | mu_j, 1/tau_j)`` over active jumps."""
    S, K = J.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        logJ = np.where(active, np.log(J), -np.inf)
    mu_s = np.where(active, mu, 0.0)
    tau_s = np.where(active, tau, 1.0)
    n = y.size
    s = np.empty((S, n), dtype=np.int64)
    for sl in chunk_rows(S, n * K):
        logits = logJ[sl, None, :] + normal_logpdf(y[None, :, None], mu_s[sl, None, :], tau_s[sl, None, :])
        s[sl] = categorical_sample(logits, rng)
    return s


def update_v(J, active, n, rng):
    """``v ~ Ga(n, sum_j J_j)``."""
    total = np.where(active, J, 0.0).sum(axis=1)
    return rng.gamma(n, 1.0 / total)


def cpp_transition(state, L_next, hyper, rng, known_tau=None):
    """Append the jumps in ``(L_next, L)`` drawn with intensity ``e^{-vx} eta(x)``."""
    L = state.level
    if not L_next <= L:
        raise ValueError("the next level must not exceed the current one")
    S, K = state.J.shape
    if L_next == L:
        return dataclasses.replace(state, k=state.k + 1)
    new_J, c = sample_tilted_band(state.M, state.v, L_next, L, rng)
    n_act = state.active.sum(axis=1)
    width = int((n_act + c).max())
    pad = max(width - K, 0)
    J = np.pad(state.J, ((0, 0), (0, pad)), constant_values=np.nan)
    mu = np.pad(state.mu, ((0, 0), (0, pad)))
    tau = np.pad(state.tau, ((0, 0), (0, pad)), constant_values=1.0)
    active = np.pad(state.active, ((0, 0), (0, pad)))
    # active columns are always a prefix, so new jumps go right after them
    col = np.arange(J.shape[1])[None, :]
    fresh = (col >= n_act[:, None]) & (col < (n_act + c)[:, None])
    if new_J.shape[1]:
        src = np.clip(col - n_act[:, None], 0, new_J.shape[1] - 1)
        J[fresh] = np.take_along_axis(new_J, src, 1)[fresh]
    m_new, t_new = hyper.sample(int(fresh.sum()), rng)
    mu[fresh] = m_new
    tau[fresh] = t_new if known_tau is None else known_tau
    active = active | fresh
    return dataclasses.replace(state, J=J, mu=mu, tau=tau, active=active, level=float(L_next), k=state.k + 1)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class NrmiMixtureModel:
    """Normal mixture driven by a Gamma process truncated at a decreasing level.

    Parameters
    ----------
    y : array_like
    hyper : NormalMixtureHyper, optional
    M : float, optional
        Fixed mass; otherwise ``M ~ Exp(1)`` is learned.
    n_init : float
        Expected number of jumps in the first truncation; sets
        ``L_1`` through ``M_ref E1(L_1) = n_init`` (unless ``L1`` is given).
    scheme : {"one_atom", "geometric"}
    xi : float, optional
        Step of the geometric schedule.
    M_ref : float, optional
        Mass used to build the level schedule; defaults to ``M`` or 1.
    """

    def __init__(self, y, hyper=None, M=None, n_init=10, L1=None, scheme="one_atom", xi=None, M_ref=None, known_var=None):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size == 0 or not np.all(np.isfinite(y)):
            raise ValueError("y must be a non-empty 1-d array of finite values")
        if M is not None and not M > 0:
            raise ValueError("M must be positive")
        self.y = y
        self.hyper = hyper or NormalMixtureHyper.from_data(y)
        self.fixed_M = M
        self.M_ref = float(M_ref if M_ref is not None else (M if M is not None else 1.0))
        self.scheme = scheme
        self.xi = xi
        if L1 is None:
            if not n_init > 0:
                raise ValueError("n_init must be positive")
            L1 = float(_UNIT_GAMMA.inverse_tail_mass(n_init / self.M_ref))
        if not L1 > 0:
            raise ValueError("L1 must be positive")
        self.L1 = float(L1)
        level_schedule(self.L1, 2, self.M_ref, scheme, xi)  # validates the scheme
        self.known_var = known_var

    @property
    def n(self):
        return self.y.size

    def level(self, k):
        return level_schedule(self.L1, k, self.M_ref, self.scheme, self.xi)

    def _known_tau(self):
        return None if self.known_var is None else 1.0 / self.known_var

    def prior_state(self, n_particles, rng, k=1):
        S = n_particles
        L = self.level(k)
        M = np.full(S, float(self.fixed_M)) if self.fixed_M is not None else rng.exponential(1.0, S)
        zero = np.zeros(S)
        J, c = sample_tilted_band(M, zero, L, np.inf, rng)
        # the allocation step needs at least one jump: condition on K >= 1
        while np.any(c == 0):
            bad = c == 0
            Jb, cb = sample_tilted_band(M[bad], zero[bad], L, np.inf, rng)
            width = max(J.shape[1], Jb.shape[1])
            J = np.pad(J, ((0, 0), (0, width - J.shape[1])), constant_values=np.nan)
            J[bad] = np.pad(Jb, ((0, 0), (0, width - Jb.shape[1])), constant_values=np.nan)
            c[bad] = cb
        active = np.isfinite(J)
        mu, tau = self.hyper.sample(J.shape, rng)
        if self.known_var is not None:
            tau[:] = 1.0 / self.known_var
        s = update_allocations(J, mu, tau, active, self.y, rng)
        v = update_v(J, active, self.n, rng)
        return CppState(J=J, mu=mu, tau=tau, active=active, s=s, v=v, M=M, level=L, k=k)

    def sweep(self, state, rng):
        """Jumps and atoms, unoccupied refresh, allocations, ``v``, then ``M``."""
        L = state.level
        K = state.J.shape[1]
        counts = _counts(state.s, K)
        J = update_occupied_jumps(state.J, counts, state.v, L, rng)
        mu, tau = _update_theta_occupied(state.s, self.y, state.mu, state.tau, self.hyper, rng, self.known_var is not None)
        J, mu, tau, active = update_unoccupied_jumps(
            J, mu, tau, state.active, counts, state.M, state.v, L, self.hyper, rng, self._known_tau()
        )
        if not np.all(active.any(axis=1)):
            raise FloatingPointError("a particle has no jumps above the current level")
        s = update_allocations(J, mu, tau, active, self.y, rng)
        v = update_v(J, active, self.n, rng)
        M = state.M
        if self.fixed_M is None:
            # jumps above L form a Poisson process: M^K exp(-M E1(L)) times the Exp(1) prior
            M = rng.gamma(1.0 + active.sum(axis=1), 1.0 / (1.0 + special.exp1(L)))
        return dataclasses.replace(state, J=J, mu=mu, tau=tau, active=active, s=s, v=v, M=M)

    def refresh(self, state):
        return state

    # -- SMC protocol ------------------------------------------------------

    def initial_state(self, n_particles, rng, burn_in=5000, thin=5, n_chains=1):
        return sample_initial(self, n_particles, rng, burn_in, thin, n_chains)

    def loglik(self, state):
        L = state.level
        return -state.M * (special.exp1(L) - special.exp1((1.0 + state.v) * L))

    def extend(self, state, rng):
        return cpp_transition(state, self.level(state.k + 1), self.hyper, rng, self._known_tau())

    def rejuvenate(self, state, n_sweeps, rng):
        for _ in range(n_sweeps):
            state = self.sweep(state, rng)
        return state

    def take(self, state, indices):
        return state.take(indices)

    def truncation_size(self, state):
        return float(state.n_jumps.mean())

    def weights(self, state):
        J = np.where(state.active, state.J, 0.0)
        return J / J.sum(axis=1, keepdims=True)

    def predictive_density(self, state, grid):
        tau = np.where(state.active, state.tau, 1.0)
        return mixture_density(self.weights(state), state.mu, tau, grid)


def _update_theta_occupied(s, y, mu, tau, hyper, rng, known_var):
    """Atom update of :func:`adaptrunc.mixtures.update_theta` on padded arrays."""
    mu0 = np.where(np.isfinite(mu), mu, hyper.mu0)
    tau0 = np.where(np.isfinite(tau) & (tau > 0), tau, 1.0)
    return update_theta(s, y, mu0, tau0, hyper, rng, known_var)
