"""Normalized Gamma process mixture truncated by jump size.

Instead of adding sticks, the compound-Poisson truncation keeps every jump
above a level ``L`` and lowers the level at each iteration.  The particles
therefore carry different numbers of atoms.
"""

import numpy as np

from adaptrunc import smc
from adaptrunc.datasets import load_galaxy
from adaptrunc.mixtures import NormalMixtureHyper
from adaptrunc.nrmi import NrmiMixtureModel

y = load_galaxy()
model = NrmiMixtureModel(y, NormalMixtureHyper.from_data(y))
res = smc.run(model, n_particles=1000, epsilon=1e-3, seed=2)

st, w = res.system.state, res.system.weights
n_jumps = st.active.sum(axis=1)
print(f"R = {res.stop_index}, {res.wall_time:.1f}s")
print(f"E[M | y] = {w @ st.M:.3f}")
print(f"jumps per particle: mean {w @ n_jumps:.1f}, range {n_jumps.min()}-{n_jumps.max()}")
print("density at 1, 2, 3:", np.round(w @ model.predictive_density(st, [1.0, 2.0, 3.0]), 3))
