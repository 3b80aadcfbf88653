"""Reference runs and correctness checks shared by the models.

``gold_standard_run``
    Long blocked-Gibbs run at a large fixed truncation, summarized with
    batch-means standard errors.
``geweke_test``
    Joint-distribution test: a chain that alternates a parameter update with
    regeneration of the data must have the prior as its stationary
    marginal.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .datasets import Panel

__all__ = [
    "batch_means_se",
    "GoldStandard",
    "gold_standard_run",
    "GewekeResult",
    "geweke_test",
    "geweke_model",
    "mixture_stats",
]


def batch_means_se(x, n_batches=None):
    """Monte Carlo standard error of the mean of a stationary sequence.

    Parameters
    ----------
    x : array_like, shape (n,) or (n, ...)
        The sequence along axis 0.
    n_batches : int, optional
        Defaults to ``floor(sqrt(n))``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    B = int(np.sqrt(n)) if n_batches is None else int(n_batches)
    if B < 2 or n < 2 * B:
        raise ValueError("need at least two batches of two values")
    L = n // B
    means = x[: B * L].reshape((B, L) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(B)


def mixture_stats(model, state):
    """Default scalar summaries of a mixture particle batch."""
    out = {"M": np.asarray(state.M, dtype=float)}
    a = getattr(state, "a", None)
    if a is not None and getattr(model, "prior", "dp") == "py":
        out["a"] = np.asarray(a, dtype=float)
    if hasattr(model, "occupied"):
        out["K"] = model.occupied(state).astype(float)
    return out


@dataclass
class GoldStandard:
    """Summaries of a long fixed-truncation run.

    ``means``/``se`` hold the scalar summaries; ``density``/``density_se``
    the posterior-mean predictive density on ``grid`` (``None`` without a
    grid).
    """

    means: dict
    se: dict
    grid: np.ndarray | None = None
    density: np.ndarray | None = None
    density_se: np.ndarray | None = None
    n_iter: int = 0
    n_chains: int = 1
    extra: dict = field(default_factory=dict)


def gold_standard_run(
    model,
    n_fixed,
    iters,
    rng,
    burn_in=1000,
    n_chains=8,
    grid=None,
    stats=None,
    n_batches=50,
    density_every=1,
):
    """Blocked Gibbs at fixed truncation ``n_fixed`` with ``n_chains`` parallel chains.

    ``iters`` counts sweeps per chain after burn-in; the chains are averaged
    at every sweep and the batch means are taken over sweeps.  ``stats``
    maps ``(model, state)`` to a dict of per-chain arrays (default:
    :func:`mixture_stats`).
    """
    if iters < 2 * n_batches:
        raise ValueError("iters must be at least twice n_batches")
    stats = stats or mixture_stats
    m = copy.copy(model)
    m.n_init = int(n_fixed)
    state = m.prior_state(n_chains, rng)
    for _ in range(burn_in):
        state = m.sweep(state, rng)
    L = iters // n_batches
    n_used = L * n_batches
    batch_stats = {}
    dens_batches = [] if grid is not None else None
    acc_s = {}
    acc_d = None
    n_d = 0
    for it in range(n_used):
        state = m.sweep(state, rng)
        for k, v in stats(m, state).items():
            acc_s[k] = acc_s.get(k, 0.0) + float(np.mean(v))
        if grid is not None and it % density_every == 0:
            d = m.predictive_density(state, grid).mean(axis=0)
            acc_d = d if acc_d is None else acc_d + d
            n_d += 1
        if (it + 1) % L == 0:
            for k, v in acc_s.items():
                batch_stats.setdefault(k, []).append(v / L)
            acc_s = {}
            if grid is not None:
                dens_batches.append(acc_d / n_d)
                acc_d, n_d = None, 0
    means = {k: float(np.mean(v)) for k, v in batch_stats.items()}
    se = {k: float(np.std(v, ddof=1) / np.sqrt(len(v))) for k, v in batch_stats.items()}
    out = GoldStandard(means, se, n_iter=n_used, n_chains=n_chains)
    if grid is not None:
        db = np.array(dens_batches)
        out.grid = np.asarray(grid, dtype=float)
        out.density = db.mean(axis=0)
        out.density_se = db.std(axis=0, ddof=1) / np.sqrt(len(db))
    return out


@dataclass
class GewekeResult:
    statistic: float
    pvalue: float
    n_joint: int
    n_prior: int


def geweke_test(draw_prior, simulate, update, stats, n_iter, rng, thin=1, burn_in=0, n_prior=None):
    """Compare successive-conditional draws with direct prior draws.

    Parameters
    ----------
    draw_prior : callable ``(n, rng) -> state``
        Exact joint prior draws of ``n`` parameter sets (a batch).
    simulate : callable ``(state, rng) -> data``
        Data given the parameters of a one-particle batch.
    update : callable ``(state, data, rng) -> state``
        The MCMC kernel under test.
    stats : callable ``state -> dict of (n,) arrays``
    n_iter : int
        Length of the successive-conditional chain.
    thin, burn_in : int
        Applied to that chain before comparison.
    n_prior : int, optional
        Number of direct prior draws (default: as many as kept chain draws).

    Returns
    -------
    dict
        ``name -> GewekeResult`` with the two-sample KS statistic and p-value.
        The chain draws are autocorrelated, so ``thin`` should be large
        enough for the p-values to be meaningful.
    """
    state = draw_prior(1, rng)
    data = simulate(state, rng)
    kept = {}
    for it in range(n_iter):
        state = update(state, data, rng)
        data = simulate(state, rng)
        if it >= burn_in and (it - burn_in) % thin == 0:
            for k, v in stats(state).items():
                kept.setdefault(k, []).append(float(np.asarray(v).ravel()[0]))
    n_joint = len(next(iter(kept.values())))
    n_prior = n_prior or n_joint
    prior = stats(draw_prior(n_prior, rng))
    out = {}
    for k, v in kept.items():
        res = sps.ks_2samp(np.asarray(v), np.asarray(prior[k], dtype=float).ravel())
        out[k] = GewekeResult(float(res.statistic), float(res.pvalue), n_joint, n_prior)
    return out


def _with_data(model, data):
    panel = getattr(model, "panel", None)
    if isinstance(panel, Panel):
        model.set_data(Panel(np.asarray(data).reshape(panel.y.shape), panel.X, panel.Z, panel.subjects))
    else:
        model.set_data(np.asarray(data).ravel())


def geweke_model(model, stats, n_iter, rng, thin=10, burn_in=100, n_prior=None, sweep=None):
    """:func:`geweke_test` for a model exposing ``prior_state``, ``simulate``, ``set_data`` and ``sweep``.

    ``model.prior_state`` must draw exactly from the prior (proper
    hyperpriors).  ``sweep(model, state, rng)`` overrides the kernel, which
    is how a deliberately broken update can be injected.
    """
    model = copy.copy(model)
    draw = getattr(model, "sample_prior", None) or model.prior_state
    kernel = sweep or (lambda m, st, r: m.sweep(st, r))

    def update(state, data, r):
        _with_data(model, data)
        if hasattr(model, "refresh"):
            state = model.refresh(state)
        return kernel(model, state, r)

    def simulate(state, r):
        return np.asarray(model.simulate(state, r))[0]

    return geweke_test(lambda n, r: draw(n, r), simulate, update, stats, n_iter, rng, thin, burn_in, n_prior)
