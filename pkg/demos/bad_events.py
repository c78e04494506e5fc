"""
Bad events and their correlations
=================================

A vertex is bad when some small connected set through it carries a large
fraction of broken bonds.  The rate grows with the size cutoff L, and bad
events at far apart vertices decorrelate.
"""
from __future__ import annotations

from treegibbs.boundary_law import central_kernel
from treegibbs.estimators import estimate_bad_rate, estimate_cov_decay
from treegibbs.model import ModelSpec

spec = ModelSpec.potts(2, 2, 2.5)
kernel = central_kernel(spec)

rate = estimate_bad_rate(spec, 4, 2000, seed=4, kernel=kernel, L_values=[1, 2, 3, 4])
for row in rate.extras["L_series"]:
    print(row)

cov = estimate_cov_decay(spec, [2, 4, 8], 3, 4000, seed=5, kernel=kernel)
for dist, c, se in zip(cov.distances, cov.cov, cov.stderr):
    print(f"distance {dist:2d}: Cov = {c:.2e} +- {se:.1e}")
