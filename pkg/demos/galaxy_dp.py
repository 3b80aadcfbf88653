"""Dirichlet process mixture of normals for the galaxy velocities.

The sampler starts from a short truncation of the random measure and adds
one stick per iteration.  Each new stick reweights the particles; once the
effective sample size stops moving the truncation is deep enough and the run
stops.  Run with ``python3 demos/galaxy_dp.py``.
"""

import numpy as np

from adaptrunc import smc
from adaptrunc.datasets import load_galaxy
from adaptrunc.mixtures import NormalMixtureHyper, NormalMixtureModel

y = load_galaxy()  # velocities in units of 10^4 km/s
model = NormalMixtureModel(y, NormalMixtureHyper.from_data(y), prior="dp", truncation="rsb")

res = smc.run(model, n_particles=1000, epsilon=1e-3, seed=1)
w = res.system.weights
print(f"stopped after R = {res.stop_index} extensions, {res.wall_time:.1f}s")
print(f"E[M | y] = {w @ res.system.state.M:.3f}")

# the ESS settles as the extra sticks carry less and less mass
for k, e in enumerate(res.ess_trace):
    print(f"  iteration {k:2d}  ESS {e:7.1f}")

grid = np.linspace(0.5, 4.0, 8)
dens = w @ model.predictive_density(res.system.state, grid)
print("posterior mean density:")
for x, d in zip(grid, dens):
    print(f"  {x:4.2f}  {d:.3f}  " + "#" * int(25 * d))
