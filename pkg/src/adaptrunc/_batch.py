"""Struct-of-arrays particle containers shared by the models."""

from __future__ import annotations

import copy
import dataclasses

import numpy as np

from .adaptive_mh import AdaptiveScale


def chunk_rows(n_rows, row_size, budget=4_000_000):
    """Slices over ``n_rows`` so that each chunk holds about ``budget`` floats."""
    step = max(1, int(budget // max(row_size, 1)))
    return [slice(i, min(i + step, n_rows)) for i in range(0, n_rows, step)]


@dataclasses.dataclass
class ParticleBatch:
    """Base class: every array field has the particle index on axis 0.

    Fields that are ``None`` or plain Python scalars are shared by all
    particles and copied as they are.
    """

    @property
    def n_particles(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.ndim > 0:
                return v.shape[0]
        raise AttributeError("batch has no particle arrays")

    def take(self, idx):
        idx = np.asarray(idx)
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.ndim > 0:
                out[f.name] = v[idx]
            elif isinstance(v, AdaptiveScale):
                out[f.name] = v.take(idx)
            else:
                out[f.name] = copy.copy(v)
        return type(self)(**out)

    def copy(self):
        return self.take(np.arange(self.n_particles))

    @classmethod
    def concat(cls, batches):
        first = batches[0]
        out = {}
        for f in dataclasses.fields(first):
            vals = [getattr(b, f.name) for b in batches]
            v = vals[0]
            if isinstance(v, np.ndarray) and v.ndim > 0:
                out[f.name] = np.concatenate(vals, axis=0)
            elif isinstance(v, AdaptiveScale):
                out[f.name] = v._like(
                    np.concatenate([s.log_var for s in vals], axis=0),
                    np.concatenate([s.iteration for s in vals], axis=0),
                )
            else:
                out[f.name] = copy.copy(v)
        return cls(**out)


def sample_initial(model, n_particles, rng, burn_in, thin, n_chains):
    """Particles from ``n_chains`` parallel MCMC chains after burn-in and thinning.

    ``model`` must provide ``prior_state(n, rng)``, ``sweep(state, rng)``
    and ``refresh(state)``.  Successive thinned draws of each chain become
    successive particles.
    """
    n_chains = min(n_chains, n_particles)
    state = model.prior_state(n_chains, rng)
    for _ in range(burn_in):
        state = model.sweep(state, rng)
    draws = []
    n_draws = -(-n_particles // n_chains)
    for _ in range(n_draws):
        for _ in range(thin):
            state = model.sweep(state, rng)
        draws.append(state.copy())
    out = type(state).concat(draws)
    if out.n_particles > n_particles:
        out = out.take(np.arange(n_particles))
    return model.refresh(out)
