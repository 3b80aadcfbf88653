"""Stationary nonparametric transition plus a clustered random-walk trend.

The Nile flow drops around 1899.  The trend increments come from a Pólya urn
so a few large moves can coexist with many small ones, and the stationary
component has a mixture of bivariate normals as its transition.  The fit
takes a few minutes.
"""

import numpy as np

from adaptrunc import smc
from adaptrunc.datasets import load_nile
from adaptrunc.timeseries import TsModel

years, flow = load_nile(with_years=True)
y = (flow - flow.mean()) / flow.std(ddof=1)
model = TsModel(y)
res = smc.run(model, n_particles=200, epsilon=1e-3, burn_in=1500, seed=1)

w = res.system.weights
out = model.summaries(res.system.state, w, np.linspace(-1, 1, 21), np.linspace(-3, 3, 31))
lo, med, hi = out["trend_quantiles"]
print(f"R = {res.stop_index}, {res.wall_time:.0f}s")
for t in range(0, len(y), 10):
    print(f"  {years[t]}  trend {med[t]:+.2f}  [{lo[t]:+.2f}, {hi[t]:+.2f}]")
