"""
Boundary laws and the tree-indexed chain
========================================

Solve the boundary-law fixed point for a few models and look at the
chain it induces: flip probability, second eigenvalue, and how the
field moves the central law.
"""
from __future__ import annotations

import numpy as np

from treegibbs.boundary_law import central_kernel, first_order_law, free_law, solve_central
from treegibbs.model import ModelSpec, bounds_report, ising_to_potts_beta

# Ising on the binary tree, written as a 2-state Potts model
for beta_i in (0.3, 0.55, 1.0, 2.0):
    spec = ModelSpec.potts(2, 2, ising_to_potts_beta(beta_i))
    k = central_kernel(spec)
    print(f"beta_I={beta_i:4.2f}  p1={k.p1:.4f}  lambda2={k.lambda2:.4f}  d*lambda2^2={2 * k.lambda2 ** 2:.3f}")

# The free law is the constant vector for any symmetric model
spec = ModelSpec.potts(4, 3, 2.5)
print("free law:", free_law(spec).x, "residual", free_law(spec).residual)

# A small field tilts the central law; compare against the first-order law
base = ModelSpec.clock(5, 2, 2.0, [0.0, 1.0, 1.6])
h = np.array([0.02, -0.01, 0.03, 0.0, -0.015])
for eps in (0.1, 0.03, 0.01):
    spec = base.replace(field=eps * h)
    x = solve_central(spec).x
    print(f"eps={eps:5.3f}  defect to first order {np.abs(x - first_order_law(spec)).max():.2e}")

# The quantitative constants at a low temperature
rep = bounds_report(ModelSpec.potts(2, 2, 16.0), 1e-6)
for key, value in rep.to_dict().items():
    print(f"{key:28s} {value}")
