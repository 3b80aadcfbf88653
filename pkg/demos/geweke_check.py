"""Joint-distribution check of the Gibbs kernel behind the rejuvenation moves.

Draws from the prior are compared with draws from a chain that alternates
the kernel with regenerating the data.  A correct kernel leaves the prior
invariant, so the two samples should agree.  The faulty kernel at the end
drops the Ga(1, 1) prior from the update of ``M`` and the test rejects it.
"""

import dataclasses

import numpy as np

from adaptrunc import cli
from adaptrunc.diagnostics import geweke_model

cfg = cli.parse_config(None, {"geweke_n": 5, "n_init": 4})
rng = np.random.default_rng(0)
model, stats = cli.geweke_setup(cfg, rng)

res = geweke_model(model, stats, 30_000, rng, thin=100)
for name, r in res.items():
    print(f"  {name:5s}  KS {r.statistic:.3f}  p {r.pvalue:.3f}")


def broken(m, st, r):
    st = m.sweep(st, r)
    rate = -np.sum(st.log1m_V, axis=1)
    return dataclasses.replace(st, M=r.gamma(1.0 + st.n_atoms, 1.0 / rate))


bad = geweke_model(model, stats, 30_000, rng, thin=100, sweep=broken)
print("faulty M update:", {k: f"{v.pvalue:.1e}" for k, v in bad.items()})
