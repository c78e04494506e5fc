"""
Reconstruction and the Edwards-Anderson parameter
=================================================

Broadcast the chain from the root, condition on the sphere, and ask how
much the boundary still knows about the root.  In the uniqueness phase the
answer goes to zero with depth; at low temperature it does not.
"""
from __future__ import annotations

from treegibbs.estimators import depth_sweep, estimate_qea, estimate_reconstruction
from treegibbs.model import ModelSpec

hot = ModelSpec.potts(2, 2, 0.8)
cold = ModelSpec.potts(2, 2, 3.0)

for name, spec in (("hot", hot), ("cold", cold)):
    r = estimate_reconstruction(spec, 0, 10, 1000, seed=1)
    print(f"{name}: mean P(root=0 | boundary) at n=10, root started at 0: {r.estimate:.4f} +- {r.stderr:.4f}")

# q_EA as a function of depth
for name, spec in (("hot", hot), ("cold", cold)):
    sweep = depth_sweep(estimate_qea, [4, 8, 12], spec=spec, N=1000, seed=2)
    for row in sweep.series:
        print(name, row)
