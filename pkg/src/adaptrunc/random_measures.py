"""Random probability measures and their finite truncations.

Stick-breaking weights (plain and re-normalized), Ferguson-Klass jumps of a
Levy process obtained by inverting the tail mass function, and compound
Poisson samples of the jumps above a level ``L``.

All samplers take an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "BetaStickParams",
    "LevyDensity",
    "GammaProcess",
    "TruncatedMeasure",
    "InversionError",
    "stick_beta_params",
    "sb_weights",
    "rsb_weights",
    "log_stick_weights",
    "log_beta_sample",
    "sample_sticks",
    "stick_from_logit",
    "stick_logit",
    "fk_jumps",
    "fk_extend",
    "cpp_sample",
    "cpp_band_sample",
    "cpp_level_sequence",
]


class InversionError(ArithmeticError):
    """Raised when the tail mass function cannot be inverted numerically."""


# ---------------------------------------------------------------------------
# stick-breaking
# ---------------------------------------------------------------------------


def stick_beta_params(j, M, a=0.0):
    """Beta parameters ``(a_j, b_j)`` of the j-th stick (``j`` is 1-based).

    Dirichlet process: ``(1, M)``.  Pitman-Yor with discount ``a``:
    ``(1 - a, M + a j)``.  Broadcasts over ``j``, ``M`` and ``a``.
    """
    j = np.asarray(j, dtype=float)
    M = np.asarray(M, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.broadcast_to(1.0 - a, np.broadcast(j, M, a).shape).astype(float), M + a * j


@dataclass(frozen=True)
class BetaStickParams:
    """Stick distribution ``V_j ~ Be(a_j, b_j)`` of a DP or Pitman-Yor prior."""

    kind: str = "dp"
    M: float = 1.0
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dp", "py"):
            raise ValueError(f"kind must be 'dp' or 'py', got {self.kind!r}")
        if not self.M > 0:
            raise ValueError("mass M must be positive")
        if self.kind == "dp" and self.a != 0.0:
            raise ValueError("the Dirichlet process has no discount parameter")
        if not 0.0 <= self.a < 1.0:
            raise ValueError("discount a must lie in [0, 1)")

    def params(self, j):
        return stick_beta_params(j, self.M, self.a)

    def sample(self, n, rng, start=1):
        """Draw sticks ``V_start, ..., V_{start+n-1}``."""
        aj, bj = self.params(np.arange(start, start + n))
        return rng.beta(aj, bj)


def _check_sticks(V, *, last_is_one):
    V = np.asarray(V, dtype=float)
    if V.ndim == 0 or V.shape[-1] < 1:
        raise ValueError("need at least one stick")
    body = V[..., :-1] if last_is_one else V
    if np.any(~((body > 0) & (body < 1))):
        raise ValueError("sticks must lie in the open interval (0, 1)")
    if last_is_one and np.any(V[..., -1] != 1.0):
        raise ValueError("the last stick of an SB truncation must equal 1")
    return V


def log_stick_weights(V, log1m_V=None):
    """``log(V_j prod_{l<j} (1 - V_l))`` along the last axis, no normalization.

    ``log1m_V`` (``log(1 - V)``) is used instead of ``log1p(-V)`` when given,
    which matters for sticks within rounding distance of one.  Sticks equal
    to one are allowed (they give ``-inf`` for the remainder, which only
    affects later atoms).
    """
    V = np.asarray(V, dtype=float)
    with np.errstate(divide="ignore"):
        log_rem = np.log1p(-V) if log1m_V is None else np.asarray(log1m_V, dtype=float)
        log_v = np.log(V)
    cum = np.cumsum(log_rem, axis=-1)
    prev = np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1)
    return log_v + prev


def _log_gamma_sample(shape, rng):
    # log of a Ga(shape, 1) draw via Ga(shape + 1) * U^(1/shape); exact for tiny shapes
    g = rng.gamma(shape + 1.0)
    return np.log(g) + np.log1p(-rng.uniform(size=np.shape(g))) / shape


def log_beta_sample(a, b, rng):
    """``(log V, log(1 - V))`` for ``V ~ Be(a, b)``, elementwise over broadcast ``a, b``.

    Both logs stay accurate when ``V`` is within rounding distance of 0 or 1.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    la = _log_gamma_sample(a, rng)
    lb = _log_gamma_sample(b, rng)
    lt = np.logaddexp(la, lb)
    return la - lt, lb - lt


def sample_sticks(a, b, rng):
    """``(V, log(1 - V))`` for ``V ~ Be(a, b)``.

    ``V`` is kept at least ``1e-300`` and ``log(1 - V)`` at most ``-V``, so
    products of ``1 - V`` stay strictly below one.
    """
    lv, l1 = log_beta_sample(a, b, rng)
    V = np.maximum(np.exp(lv), 1e-300)
    return V, np.minimum(l1, -V)


def stick_from_logit(u):
    """``(V, log(1 - V))`` for ``V = 1 / (1 + exp(-u))``, accurate for large ``|u|``."""
    u = np.asarray(u, dtype=float)
    V = np.maximum(special.expit(u), 1e-300)
    return V, np.minimum(-np.logaddexp(0.0, u), -V)


def stick_logit(V, log1m_V):
    """``log V - log(1 - V)`` from a stick and its stored ``log(1 - V)``."""
    return np.log(V) - log1m_V


def sb_weights(V):
    """Weights of the SB truncation; the last stick must be exactly one.

    >>> sb_weights([0.5, 0.5, 1.0])
    array([0.5 , 0.25, 0.25])
    """
    V = _check_sticks(V, last_is_one=True)
    rem = np.cumprod(1.0 - V[..., :-1], axis=-1)
    prev = np.concatenate([np.ones_like(V[..., :1]), rem], axis=-1)
    return V * prev


def rsb_weights(V):
    """Weights of the re-normalized stick-breaking (RSB) truncation.

    ``p_j = V_j prod_{l<j}(1 - V_l) / (1 - prod_{l<=N}(1 - V_l))``.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 0 or V.shape[-1] < 1:
        raise ValueError("need at least one stick")
    if np.any((V < 0) | (V >= 1)):
        raise ValueError("RSB sticks must lie in [0, 1)")
    if np.any(np.all(V == 0, axis=-1)):
        raise ValueError("all sticks are zero: RSB normalizer vanishes")
    logp = log_stick_weights(V)
    logz = np.log(-np.expm1(np.sum(np.log1p(-V), axis=-1, keepdims=True)))
    return np.exp(logp - logz)


@dataclass
class TruncatedMeasure:
    """Finite discrete probability measure ``sum_j p_j delta_{theta_j}``."""

    weights: np.ndarray
    atoms: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.atoms = np.asarray(self.atoms)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValueError("need a non-empty weight vector")
        if len(self.atoms) != self.weights.size:
            raise ValueError("one atom per weight is required")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to one")

    def __len__(self):
        return self.weights.size


# ---------------------------------------------------------------------------
# Levy densities
# ---------------------------------------------------------------------------


class LevyDensity:
    """Jump density ``eta`` of a subordinator and its tail mass ``zeta``.

    Subclasses provide :meth:`density`.  :meth:`tail_mass` falls back on
    adaptive quadrature and :meth:`inverse_tail_mass` on bisection in
    ``log x``; both can be overridden when closed forms exist.
    """

    #: absolute tolerance used by the quadrature fallback
    quad_atol = 1e-10
    #: relative tolerance of the inversion
    inversion_rtol = 1e-10

    def density(self, x):
        raise NotImplementedError

    def log_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.density(x))

    def tail_mass(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        flat = out.reshape(-1)
        for i, xi in enumerate(x.reshape(-1)):
            if np.isinf(xi):
                flat[i] = 0.0
                continue
            val, _ = integrate.quad(self.density, xi, np.inf, epsabs=self.quad_atol, limit=200)
            flat[i] = val
        return out if x.ndim else float(out)

    def total_mass(self):
        """``zeta(0+)``: infinite for infinite-activity densities."""
        return float(self.tail_mass(0.0))

    def band_mass(self, lo, hi, tilt=0.0):
        """``int_lo^hi exp(-tilt x) eta(x) dx`` by quadrature."""
        val, _ = integrate.quad(
            lambda x: np.exp(-tilt * x) * self.density(x), lo, hi, epsabs=self.quad_atol, limit=200
        )
        return val

    def inverse_tail_mass(self, t):
        """Solve ``zeta(x) = t`` for ``x`` (vectorized bisection on ``log x``)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(~(t > 0)) or np.any(~np.isfinite(t)):
            raise ValueError("tail mass targets must be positive and finite")
        total = self.total_mass()
        if np.any(t >= total):
            raise ValueError(
                f"arrival time exceeds the total mass {total:.6g} of a finite-activity measure"
            )
        lo = np.zeros(t.shape)  # log x
        hi = np.zeros(t.shape)
        # geometric expansion of the bracket
        for _ in range(1100):
            up = self.tail_mass(np.exp(hi)) > t
            if not up.any():
                break
            hi[up] += 1.0
        else:
            raise InversionError("could not bracket the root from above")
        for _ in range(1100):
            down = self.tail_mass(np.exp(lo)) < t
            if not down.any():
                break
            lo[down] -= 1.0
        else:
            raise InversionError("could not bracket the root from below")
        for _ in range(200):
            if np.all(hi - lo <= np.log1p(self.inversion_rtol)):
                break
            mid = 0.5 * (lo + hi)
            above = self.tail_mass(np.exp(mid)) > t
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        else:
            raise InversionError("bisection did not converge")
        x = np.exp(0.5 * (lo + hi))
        return float(x[0]) if scalar else x


class GammaProcess(LevyDensity):
    """Gamma process ``eta(x) = M x^{-1} exp(-x)``; normalizes to a DP(M)."""

    def __init__(self, M=1.0):
        if not M > 0:
            raise ValueError("mass M must be positive")
        self.M = float(M)

    def __repr__(self):
        return f"GammaProcess(M={self.M!r})"

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return self.M * np.exp(-x) / x

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return np.log(self.M) - np.log(x) - x

    def tail_mass(self, x):
        return self.M * special.exp1(x)

    def total_mass(self):
        return np.inf

    def band_mass(self, lo, hi, tilt=0.0):
        # int_lo^hi x^-1 exp(-(1+tilt)x) dx = E1((1+tilt)lo) - E1((1+tilt)hi)
        r = 1.0 + tilt
        return self.M * (special.exp1(r * lo) - special.exp1(r * np.asarray(hi, dtype=float)))

    def inverse_tail_mass(self, t):
        """Solve ``M E1(x) = t`` by safeguarded Newton iterations on ``log x``."""
        t = np.asarray(t, dtype=float)
        if np.any(~(t > 0)) or np.any(~np.isfinite(t)):
            raise ValueError("tail mass targets must be positive and finite")
        scalar = t.ndim == 0
        s = np.atleast_1d(t) / self.M
        # E1(x) ~ -gamma - log x for small x and ~ e^-x / x for large x
        big = s > 0.2
        with np.errstate(divide="ignore", invalid="ignore"):
            ls = np.log(np.where(big, 0.1, s))
            x0 = np.where(big, np.exp(-np.euler_gamma - s), -ls - np.log1p(-ls))
        u = np.log(np.maximum(x0, 1e-300))
        lo = np.full(s.shape, -np.inf)
        hi = np.full(s.shape, np.inf)
        for _ in range(100):
            x = np.exp(u)
            f = special.exp1(x) - s  # decreasing in u
            lo = np.where(f > 0, u, lo)
            hi = np.where(f <= 0, u, hi)
            with np.errstate(over="ignore", divide="ignore"):
                step = np.sign(f) * np.exp(np.log(np.abs(f)) + x)  # Newton: f / exp(-x)
            step = np.clip(np.nan_to_num(step), -2.0, 2.0)
            new = u + step
            outside = (new < lo) | (new > hi)
            both = np.isfinite(lo) & np.isfinite(hi)
            new = np.where(outside & both, 0.5 * (lo + hi), new)
            new = np.where(f == 0, u, new)
            done = np.abs(new - u) <= 1e-13 * np.maximum(1.0, np.abs(u))
            u = new
            if np.all(done | (f == 0)):
                break
        else:
            raise InversionError("Newton iterations for the gamma tail mass did not converge")
        x = np.exp(u)
        return float(x[0]) if scalar else x


# ---------------------------------------------------------------------------
# Ferguson-Klass and compound Poisson truncations
# ---------------------------------------------------------------------------


def fk_jumps(levy, t):
    """Ferguson-Klass jumps ``J_j = zeta^{-1}(t_j)`` for increasing arrivals ``t``."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("arrival times must be a non-empty 1-d sequence")
    if t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ValueError("arrival times must be positive and strictly increasing")
    return np.asarray(levy.inverse_tail_mass(t))


def fk_extend(levy, J_prev, rng):
    """Next Ferguson-Klass jump after ``J_prev`` (vectorized over ``J_prev``).

    The next arrival is ``zeta(J_prev) + Exp(1)``.
    """
    J_prev = np.asarray(J_prev, dtype=float)
    if np.any(~(J_prev > 0)):
        raise ValueError("previous jump must be positive")
    t_next = levy.tail_mass(J_prev) + rng.standard_exponential(J_prev.shape)
    return levy.inverse_tail_mass(t_next)


def cpp_band_sample(levy, lo, hi, rng, tilt=0.0):
    """Poisson process with intensity ``exp(-tilt x) eta(x)`` on ``(lo, hi)``.

    Candidates come from the untilted process (inverse-CDF on the tail mass)
    and are thinned with acceptance probability ``exp(-tilt x)``.
    ``hi`` may be ``np.inf``.
    """
    if not 0 < lo:
        raise ValueError("lower level must be positive")
    if hi <= lo:
        return np.empty(0)
    z_lo = float(levy.tail_mass(lo))
    z_hi = 0.0 if np.isinf(hi) else float(levy.tail_mass(hi))
    mass = z_lo - z_hi
    if not np.isfinite(mass) or mass < 0:
        raise FloatingPointError(f"tail mass on ({lo}, {hi}) is not finite")
    k = rng.poisson(mass)
    if k == 0:
        return np.empty(0)
    u = rng.uniform(size=k)
    jumps = np.atleast_1d(levy.inverse_tail_mass(z_hi + mass * (1.0 - u)))
    # bisection tolerance can nudge a jump onto the boundary
    jumps = np.clip(jumps, np.nextafter(lo, np.inf), hi)
    if tilt > 0:
        keep = rng.uniform(size=k) < np.exp(-tilt * jumps)
        jumps = jumps[keep]
    return jumps


def cpp_sample(levy, L, rng):
    """All jumps larger than ``L``: ``K ~ Pn(zeta(L))`` i.i.d. from ``eta / zeta(L)``."""
    return cpp_band_sample(levy, L, np.inf, rng)


def cpp_level_sequence(L1, k, levy=None, scheme="one_atom", xi=None):
    """Level ``L_k`` of a CPP truncation schedule (``k`` is 1-based).

    ``geometric``: ``L_k = L_1 exp(-(k-1) xi)``.
    ``one_atom``: ``zeta(L_k) = zeta(L_1) + (k-1)``, one expected new jump
    per step.
    """
    if not L1 > 0:
        raise ValueError("initial level must be positive")
    if k < 1:
        raise ValueError("level index is 1-based")
    if scheme == "geometric":
        if xi is None or not xi > 0:
            raise ValueError("geometric schedule needs xi > 0")
        return L1 * np.exp(-(k - 1) * xi)
    if scheme == "one_atom":
        if levy is None:
            raise ValueError("one_atom schedule needs the Levy density")
        if k == 1:
            return float(L1)
        return float(levy.inverse_tail_mass(float(levy.tail_mass(L1)) + (k - 1)))
    raise ValueError(f"unknown level scheme {scheme!r}")
