"""
Overlap of the branch along a ray
=================================

Draw the root-to-leaf ray twice from the conditional law given one
broadcast boundary.  Replicas sharing the boundary agree far more often
than replicas sitting on independent boundaries.
"""
from __future__ import annotations

from treegibbs.estimators import default_plan, estimate_overlap
from treegibbs.model import ModelSpec

spec = ModelSpec.potts(2, 2, 3.0)
plan = default_plan(2, 12)
print("plan depths:", plan.depths)

series = estimate_overlap(spec, plan, 12, 1000, seed=3)
for row in series.rows():
    print(row)
print("spacing diagnostic:", series.extras["spacing_diagnostic"])
