"""Adaptive random-walk Metropolis-Hastings with per-parameter scaling.

The proposal log-variance follows a Robbins-Monro recursion towards a target
acceptance rate::

    log_var <- clamp(log_var + i**(-c) * (accept_prob - target), -b, b)

Everything is vectorized: ``log_var`` may be an array holding one scale per
particle (and per parameter), and :func:`mh_step` moves all entries at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = ["AdaptiveScale", "TRANSFORMS", "mh_step"]


@dataclass
class AdaptiveScale:
    """State of the proposal-variance adaptation.

    ``log_var`` and ``iteration`` have the same shape: one independent
    adaptation per entry (typically one per particle, or per particle and
    atom).

    Attributes
    ----------
    log_var : ndarray
        Log of the random-walk proposal variance (in transformed space).
    iteration : ndarray of int
        Adaptation counters ``i``, starting at 1.
    c : float
        Decay exponent in ``(0.5, 1]``.
    target : float
        Target acceptance rate.
    bound : float
        Clamp ``b`` applied to ``log_var``.
    """

    log_var: np.ndarray | float = 0.0
    iteration: np.ndarray | int = 1
    c: float = 0.55
    target: float = 0.3
    bound: float = 50.0

    def __post_init__(self):
        if not 0.5 < self.c <= 1.0:
            raise ValueError("c must lie in (0.5, 1]")
        if not 0.0 < self.target < 1.0:
            raise ValueError("target acceptance rate must lie in (0, 1)")
        self.log_var = np.array(np.clip(np.array(self.log_var, dtype=float), -self.bound, self.bound))
        it = np.array(self.iteration, dtype=np.int64)
        if np.any(it < 1):
            raise ValueError("iteration counters start at 1")
        self.iteration = np.broadcast_to(it, self.log_var.shape).copy()

    @classmethod
    def full(cls, shape, log_var=0.0, **kwargs):
        return cls(log_var=np.full(shape, log_var, dtype=float), **kwargs)

    @property
    def shape(self):
        return self.log_var.shape

    def sd(self, index=Ellipsis):
        return np.exp(0.5 * self.log_var[index])

    def adapt_step(self, accept_prob, index=Ellipsis):
        """Apply one Robbins-Monro update in place (to ``index``) and return ``self``."""
        accept_prob = np.asarray(accept_prob, dtype=float)
        if np.any((accept_prob < 0) | (accept_prob > 1)):
            raise ValueError("acceptance probabilities must lie in [0, 1]")
        step = self.iteration[index] ** (-self.c)
        self.log_var[index] = np.clip(
            self.log_var[index] + step * (accept_prob - self.target), -self.bound, self.bound
        )
        self.iteration[index] += 1
        return self

    def _like(self, log_var, iteration):
        return AdaptiveScale(log_var, iteration, self.c, self.target, self.bound)

    def take(self, idx):
        """Scales of resampled particles (indexing the first axis)."""
        return self._like(self.log_var[idx], self.iteration[idx])

    def copy(self):
        return self._like(self.log_var.copy(), self.iteration.copy())

    def append(self, n=1, log_var=0.0):
        """Add ``n`` fresh columns along the last axis (new atoms)."""
        shape = self.log_var.shape[:-1] + (n,)
        return self._like(
            np.concatenate([self.log_var, np.full(shape, log_var)], axis=-1),
            np.concatenate([self.iteration, np.ones(shape, dtype=np.int64)], axis=-1),
        )


@dataclass(frozen=True)
class _Transform:
    forward: callable  # x -> u
    inverse: callable  # u -> x
    log_jac: callable  # log |dx/du| as a function of x
    domain: callable = field(default=lambda x: np.isfinite(x))


def _logit(x):
    return np.log(x) - np.log1p(-x)


TRANSFORMS = {
    "identity": _Transform(lambda x: x, lambda u: u, lambda x: np.zeros_like(x)),
    "log": _Transform(np.log, np.exp, np.log, lambda x: x > 0),
    "logit": _Transform(_logit, special.expit, lambda x: np.log(x) + np.log1p(-x), lambda x: (x > 0) & (x < 1)),
    # u = log(1 + rho) - log(1 - rho)  <=>  rho = tanh(u / 2)
    "fisher_rho": _Transform(
        lambda r: np.log1p(r) - np.log1p(-r),
        lambda u: np.tanh(0.5 * u),
        lambda r: np.log1p(-r * r) - np.log(2.0),
        lambda r: np.abs(r) < 1,
    ),
}


def mh_step(current, log_density, scale, rng, transform="identity", current_logp=None, index=Ellipsis):
    """One adaptive random-walk Metropolis-Hastings move.

    Parameters
    ----------
    current : ndarray
        Current values (any shape broadcastable with ``scale.log_var``).
    log_density : callable
        Vectorized unnormalized log target in the *original* parametrization;
        must return an array with the shape of its argument.
    scale : AdaptiveScale
        Adapted in place with the realized acceptance probabilities.
    transform : str
        Key of :data:`TRANSFORMS`; the walk happens in transformed space and
        the Jacobian enters the acceptance ratio.
    current_logp : ndarray, optional
        ``log_density(current)`` if already known.
    index : optional
        Entries of ``scale`` that drive (and are adapted by) this move.

    Returns
    -------
    new : ndarray
    accept_prob : ndarray
    logp : ndarray
        Log target at the returned values.
    """
    tr = TRANSFORMS[transform]
    current = np.asarray(current, dtype=float)
    if current_logp is None:
        current_logp = log_density(current)
    current_logp = np.asarray(current_logp, dtype=float)
    if np.any(~tr.domain(current)):
        raise ValueError(f"current value outside the domain of the {transform!r} transform")
    if np.any(np.isnan(current_logp) | np.isneginf(current_logp)):
        raise ValueError("log target is not finite at the current value")

    u = tr.forward(current)
    u_prop = u + scale.sd(index) * rng.standard_normal(np.shape(u))
    with np.errstate(over="ignore", invalid="ignore"):
        prop = tr.inverse(u_prop)
        ok = tr.domain(prop)
        safe = np.where(ok, prop, current)
        prop_logp = np.where(ok, log_density(safe), -np.inf)
        log_ratio = prop_logp + tr.log_jac(safe) - current_logp - tr.log_jac(current)
    log_ratio = np.where(np.isnan(log_ratio) | ~ok, -np.inf, log_ratio)
    accept_prob = np.exp(np.minimum(log_ratio, 0.0))
    accept = rng.uniform(size=np.shape(accept_prob)) < accept_prob
    new = np.where(accept, prop, current)
    logp = np.where(accept, prop_logp, current_logp)
    scale.adapt_step(np.broadcast_to(accept_prob, scale.log_var[index].shape), index)
    return new, accept_prob, logp
