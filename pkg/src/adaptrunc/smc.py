"""Adaptive-truncation sequential Monte Carlo.

Particles start from the posterior under the first truncation.  Each
iteration appends one truncation block to every particle (drawn from its
conditional prior), multiplies the weights by the likelihood ratio between
consecutive truncations, and resamples and rejuvenates with MCMC when the
effective sample size drops below ``b * S``.  The run stops once the
discrepancy between consecutive truncated posteriors stays below a tolerance
for ``m_stop`` iterations in a row.

Models plug in through the :class:`SMCModel` protocol.  Particle states are
model-owned and batched: one object holds all ``S`` particles, usually as
arrays whose first axis indexes particles.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "SMCModel",
    "SmcConfig",
    "ParticleSystem",
    "SMCResult",
    "ParticleCollapseError",
    "TruncationWarning",
    "normalized_weights",
    "ess",
    "ess_from_log",
    "systematic_resample",
    "initialize",
    "extend",
    "reweight",
    "resample_move",
    "estimate",
    "weighted_quantile",
    "predictive_discrepancy",
    "run",
]

logger = logging.getLogger(__name__)


class ParticleCollapseError(RuntimeError):
    """The effective sample size collapsed; the particle approximation is useless."""


class TruncationWarning(UserWarning):
    """The stopping rule was not met before the iteration cap."""


class SMCModel(Protocol):
    """What a model must provide to be run by :func:`run`."""

    def initial_state(self, n_particles: int, rng, burn_in: int, thin: int, n_chains: int) -> Any:
        """Draw ``n_particles`` states from the first truncated posterior by MCMC."""

    def extend(self, state, rng) -> Any:
        """Append the next truncation block, drawn from its conditional prior."""

    def loglik(self, state) -> np.ndarray:
        """Per-particle log-likelihood under the state's current truncation.

        Only differences between consecutive truncations are used, so any
        term that cancels in the ratio may be dropped.
        """

    def rejuvenate(self, state, n_sweeps: int, rng) -> Any:
        """Advance every particle by ``n_sweeps`` MCMC sweeps."""

    def take(self, state, indices) -> Any:
        """Particles ``state[indices]`` (used for resampling)."""

    def truncation_size(self, state) -> float:
        """Size of the current truncation, e.g. number of atoms."""


@dataclass
class SmcConfig:
    """Tuning of the adaptive truncation sampler.

    ``m_stop`` is the length of the window of the stopping rule and
    ``n_rejuv`` the number of MCMC sweeps after each resampling; they are
    independent settings.
    """

    n_particles: int = 1000
    epsilon: float = 1e-3
    m_stop: int = 3
    n_rejuv: int = 3
    resample_threshold: float = 0.7
    max_iters: int = 5000
    burn_in: int = 5000
    thin: int = 5
    n_chains: int = 32
    discrepancy: str = "ess"
    y_star: float | None = None
    collapse_ess: float = 2.0
    seed: int | None = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.m_stop < 1 or self.n_rejuv < 0:
            raise ValueError("m_stop must be >= 1 and n_rejuv >= 0")
        if not 0 < self.resample_threshold <= 1:
            raise ValueError("resample threshold b must lie in (0, 1]")
        if self.max_iters < 1 or self.burn_in < 0 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("invalid iteration settings")
        if self.discrepancy not in ("ess", "predictive"):
            raise ValueError("discrepancy must be 'ess' or 'predictive'")
        if self.discrepancy == "predictive" and self.y_star is None:
            raise ValueError("the predictive discrepancy needs y_star")

    @property
    def delta(self):
        """Threshold on the discrepancy: ``epsilon * S`` for the ESS rule."""
        if self.discrepancy == "ess":
            return self.epsilon * self.n_particles
        return self.epsilon


@dataclass
class ParticleSystem:
    """``S`` particles with log-weights, at truncation index ``k``."""

    state: Any
    log_weights: np.ndarray
    loglik: np.ndarray
    k: int = 1
    ess_trace: list = field(default_factory=list)
    discrepancy_trace: list = field(default_factory=list)
    resampled: list = field(default_factory=list)

    @property
    def n_particles(self):
        return self.log_weights.size

    @property
    def weights(self):
        return normalized_weights(self.log_weights)

    @property
    def ess(self):
        return ess_from_log(self.log_weights)


@dataclass
class SMCResult:
    system: ParticleSystem
    stop_index: int
    converged: bool
    n_iterations: int
    wall_time: float
    truncation_size: float

    @property
    def ess_trace(self):
        return self.system.ess_trace

    @property
    def discrepancy_trace(self):
        return self.system.discrepancy_trace


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def normalized_weights(log_weights):
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(log_weights)):
        raise ParticleCollapseError("all particle weights are zero")
    return np.exp(log_weights - logsumexp(log_weights))


def ess(weights):
    """Effective sample size ``(sum w)^2 / sum w^2`` of non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ParticleCollapseError("all particle weights are zero")
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))


def ess_from_log(log_weights):
    """ESS computed from log-weights after subtracting their maximum."""
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(log_weights)):
        raise ParticleCollapseError("all particle weights are zero")
    w = np.exp(log_weights - np.max(log_weights))
    return float(w.sum() ** 2 / np.sum(w * w))


def systematic_resample(weights, rng, n=None):
    """Systematic resampling with a single uniform draw.

    Returns ``n`` (default ``len(weights)``) sorted ancestor indices; index
    ``i`` is copied ``S w_i / sum(w)`` times in expectation.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise ParticleCollapseError("all particle weights are zero")
    n = w.size if n is None else n
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    positions = (rng.uniform() + np.arange(n)) / n
    return np.searchsorted(cum, positions, side="right").clip(max=w.size - 1)


# ---------------------------------------------------------------------------
# algorithm steps
# ---------------------------------------------------------------------------


def initialize(model, config, rng):
    """Particles from the first truncated posterior with unit weights."""
    state = model.initial_state(config.n_particles, rng, config.burn_in, config.thin, config.n_chains)
    ll = np.asarray(model.loglik(state), dtype=float)
    system = ParticleSystem(state, np.zeros(config.n_particles), ll, k=1)
    system.ess_trace.append(float(config.n_particles))
    return system


def extend(system, model, rng):
    """Propose the next truncation block for every particle; weights untouched."""
    system.state = model.extend(system.state, rng)
    system.k += 1
    return system


def reweight(system, model):
    """Multiply weights by the likelihood ratio of consecutive truncations."""
    ll_new = np.asarray(model.loglik(system.state), dtype=float)
    incr = ll_new - system.loglik
    bad = ~np.isfinite(incr)
    if bad.any():
        warnings.warn(
            f"{bad.sum()} particle(s) with non-finite likelihood; their weight is set to zero",
            RuntimeWarning,
            stacklevel=2,
        )
        incr = np.where(bad, -np.inf, incr)
    system.log_weights = system.log_weights + incr
    system.loglik = ll_new
    return system


def resample_move(system, model, rng, n_rejuv):
    """Systematic resampling, unit weights, then ``n_rejuv`` MCMC sweeps."""
    idx = systematic_resample(system.weights, rng)
    state = model.take(system.state, idx)
    if n_rejuv > 0:
        state = model.rejuvenate(state, n_rejuv, rng)
    system.state = state
    system.log_weights = np.zeros(idx.size)
    system.loglik = np.asarray(model.loglik(state), dtype=float)
    return system


def estimate(system, f):
    """Self-normalized weighted average of ``f(state)`` over particles.

    ``f`` maps the batched state to an array whose first axis indexes
    particles; trailing axes (e.g. a density grid) are preserved.
    """
    values = np.asarray(f(system.state), dtype=float)
    w = system.weights
    return np.tensordot(w, values, axes=(0, 0))


def weighted_quantile(values, weights, q):
    """Weighted quantiles along axis 0 (inverse of the weighted empirical cdf).

    Returns an array of shape ``(len(q),) + values.shape[1:]``.
    """
    values = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    q = np.atleast_1d(np.asarray(q, dtype=float))
    flat = values.reshape(values.shape[0], -1)
    order = np.argsort(flat, axis=0, kind="stable")
    cw = np.cumsum(w[order], axis=0)
    out = np.empty((q.size, flat.shape[1]))
    for c in range(flat.shape[1]):
        pos = np.searchsorted(cw[:, c], q * cw[-1, c] * (1 - 1e-12)).clip(max=flat.shape[0] - 1)
        out[:, c] = flat[order[pos, c], c]
    return out.reshape((q.size,) + values.shape[1:])


def predictive_discrepancy(system_k, system_k1, model, y_star):
    """``|p_{k+1}(y*) - p_k(y*)|`` for posterior predictive densities."""
    grid = np.atleast_1d(np.asarray(y_star, dtype=float))
    p_k = estimate(system_k, lambda s: model.predictive_density(s, grid))
    p_k1 = estimate(system_k1, lambda s: model.predictive_density(s, grid))
    return float(np.abs(p_k1 - p_k).sum())


def _predictive_at(system, model, y_star):
    grid = np.atleast_1d(np.asarray(y_star, dtype=float))
    return float(estimate(system, lambda s: model.predictive_density(s, grid)).sum())


def run(model, config=None, rng=None, callback: Callable | None = None, **overrides):
    """Run the adaptive truncation sampler.

    Parameters
    ----------
    model : SMCModel
    config : SmcConfig, optional
        Keyword ``overrides`` replace individual fields.
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(config.seed)``.
    callback : callable, optional
        Called as ``callback(system, iteration)`` at the end of every
        iteration.

    Returns
    -------
    SMCResult
        ``stop_index`` is the iteration ``R`` at which the stopping rule
        fired; the returned particles target the ``R + 1``-th truncation.
    """
    config = replace(config or SmcConfig(), **overrides)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    t0 = time.perf_counter()
    system = initialize(model, config, rng)
    S = config.n_particles
    delta = config.delta
    predictive = config.discrepancy == "predictive"
    baseline = _predictive_at(system, model, config.y_star) if predictive else float(S)

    below = 0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        extend(system, model, rng)
        reweight(system, model)
        cur_ess = system.ess
        system.ess_trace.append(cur_ess)
        if cur_ess < config.collapse_ess:
            raise ParticleCollapseError(
                f"ESS fell to {cur_ess:.3g} at iteration {it} (truncation index {system.k}); "
                "increase the initial truncation size or the number of particles"
            )
        cur = _predictive_at(system, model, config.y_star) if predictive else cur_ess
        d = abs(cur - baseline)
        system.discrepancy_trace.append(d)
        baseline = cur

        resampled = cur_ess < config.resample_threshold * S
        if resampled:
            resample_move(system, model, rng, config.n_rejuv)
            # after rejuvenation the reference point is the refreshed system
            baseline = _predictive_at(system, model, config.y_star) if predictive else system.ess
        system.resampled.append(bool(resampled))
        logger.debug("iter %d k=%d ESS=%.2f D=%.4g resampled=%s", it, system.k, cur_ess, d, resampled)
        if callback is not None:
            callback(system, it)

        below = below + 1 if d < delta else 0
        if below >= config.m_stop:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"stopping rule not met after {config.max_iters} iterations; "
            "the returned truncation may be too coarse",
            TruncationWarning,
            stacklevel=2,
        )
    return SMCResult(
        system=system,
        stop_index=it,
        converged=converged,
        n_iterations=it,
        wall_time=time.perf_counter() - t0,
        truncation_size=float(model.truncation_size(system.state)),
    )
