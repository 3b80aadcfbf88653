"""Pitman-Yor mixture on the same data, with the discount ``a`` unknown.

The sticks are Be(1 - a, M + a j), so the tail thins out more slowly than
under a Dirichlet process and the sampler needs more extensions at a given
tolerance.
"""

from adaptrunc import smc
from adaptrunc.datasets import load_galaxy
from adaptrunc.mixtures import NormalMixtureHyper, NormalMixtureModel

y = load_galaxy()
model = NormalMixtureModel(y, NormalMixtureHyper.from_data(y), prior="py", truncation="rsb")
res = smc.run(model, n_particles=1000, epsilon=1e-4, seed=1)

st, w = res.system.state, res.system.weights
print(f"R = {res.stop_index}, {res.wall_time:.1f}s")
print(f"E[a | y] = {w @ st.a:.3f}   E[M | y] = {w @ st.M:.3f}")
print(f"P(a > 0.8 | y) = {w @ (st.a > 0.8):.4f}")
