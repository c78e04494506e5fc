from __future__ import annotations

import json
import math

import numpy as np
import pytest

from treegibbs import oracle
from treegibbs.boundary_law import central_kernel
from treegibbs.estimators import (default_plan, depth_sweep, estimate_bad_rate, estimate_cov_decay, estimate_overlap,
                                  estimate_qea, estimate_reconstruction, mean_se, qea_from_samples)
from treegibbs.model import ModelSpec, epsilon2


def test_minimum_sample_count():
    with pytest.raises(ValueError):
        estimate_qea(ModelSpec.potts(2, 2, 1.0), 2, 999, 0)


def test_reconstruction_high_temperature():
    r = estimate_reconstruction(ModelSpec.potts(3, 2, 1e-3), 0, 4, 2000, 1)
    assert abs(r.estimate - 1 / 3) <= 4 * r.stderr + 1e-3


def test_reconstruction_depth_zero_vs_enumeration():
    spec = ModelSpec.potts(2, 2, 1.5)
    exact = oracle.exact_reconstruction_small(spec, 0, 0)
    r = estimate_reconstruction(spec, 0, 0, 20000, 2)
    assert abs(r.estimate - exact) <= 4 * r.stderr


def test_reconstruction_monotone_in_beta():
    means = []
    for beta in (0.5, 1.0, 2.0, 3.0, 4.0):
        r = estimate_reconstruction(ModelSpec.potts(2, 2, beta), 1, 6, 2000, 3)
        means.append((r.estimate, r.stderr))
    for (a, sa), (b, sb) in zip(means, means[1:]):
        assert b >= a - 3 * math.hypot(sa, sb)
    assert means[-1][0] > means[0][0]


def test_report_stderr_convention():
    r = estimate_reconstruction(ModelSpec.potts(2, 2, 2.0), 0, 3, 1000, 4)
    assert r.N == 1000 and r.series[0]["n"] == 3
    assert r.extras["bound"] == "bound vacuous at these parameters"


def test_qea_replica_form_is_unbiased_on_known_distribution():
    rs = np.random.default_rng(0)
    p = rs.uniform(0.1, 0.9, size=200_000)
    pi = np.stack([p, 1 - p], axis=1)
    root = (rs.random(len(p)) >= p).astype(int)
    y = qea_from_samples(pi, root, np.array([0.5, 0.5]))
    m, se = mean_se(y)
    # Var(U(0.1, 0.9)) averaged over the two spins
    assert abs(m - 0.8 ** 2 / 12) <= 4 * se


def test_qea_depth_one_vs_exact():
    spec = ModelSpec.potts(2, 2, 2.0)
    exact = oracle.exact_qea_small(spec, 1)
    r = estimate_qea(spec, 1, 20000, 5)
    assert abs(r.estimate - exact) <= 3 * r.stderr
    assert abs(r.extras["sample_variance"] - exact) <= 4 * r.extras["sample_variance_jackknife_se"]
    assert r.extras["clock_reduction_agrees"]


def test_qea_frozen_limit():
    q = 3
    r = estimate_qea(ModelSpec.potts(q, 2, 40.0), 2, 2000, 6)
    assert r.estimate == pytest.approx((q - 1) / q**2, abs=5 * r.stderr + 1e-9)


def test_qea_clock_reduction_three_states():
    r = estimate_qea(ModelSpec.clock(3, 2, 3.0, [0, 1.0]), 3, 4000, 7)
    assert r.extras["clock_reduction_agrees"]


def test_depth_sweep_shrinking_deltas():
    rep = depth_sweep(lambda n, **kw: estimate_qea(n=n, **kw), [2, 4, 6, 8],
                      spec=ModelSpec.potts(2, 2, 2.4), N=2000, seed=8)
    deltas = [abs(s["delta"]) for s in rep.series[1:]]
    assert deltas[-1] < deltas[0]
    assert [s["n"] for s in rep.series] == [2, 4, 6, 8]


def test_depth_sweep_frozen_converges_immediately():
    rep = depth_sweep(lambda n, **kw: estimate_qea(n=n, **kw), [1, 2, 3],
                      spec=ModelSpec.potts(2, 2, 40.0), N=1000, seed=9)
    assert rep.extras["converged"]


def test_depth_sweep_rejects_unsorted():
    with pytest.raises(ValueError):
        depth_sweep(lambda n, **kw: None, [3, 2])


def test_overlap_high_temperature_both_modes_one_over_q():
    spec = ModelSpec.potts(2, 2, 1e-3)
    plan = default_plan(2, 8)
    s = estimate_overlap(spec, plan, 8, 2000, 10)
    for m, se in ((s.matched[-1], s.matched_se[-1]), (s.mismatched[-1], s.mismatched_se[-1])):
        assert abs(m - 0.5) <= 4 * se


def test_overlap_gap_and_mismatched_mean():
    spec = ModelSpec.potts(2, 2, 3.0)
    plan = default_plan(2, 8)
    assert plan.depths == (0, 2, 4, 6)
    s = estimate_overlap(spec, plan, 8, 1000, 11)
    assert s.gap[-1] > 5 * s.gap_se[-1]
    assert abs(s.mismatched[-1] - 0.5) <= 3 * s.mismatched_se[-1]
    assert all(0 <= x <= 1 for x in s.matched + s.mismatched)
    assert s.extras["concentration_bound"] == "bound vacuous at these parameters"
    assert len(s.extras["spacing_diagnostic"]) == plan.size - 1
    assert json.dumps(s.to_dict())


def test_overlap_plan_must_fit():
    with pytest.raises(ValueError):
        estimate_overlap(ModelSpec.potts(2, 2, 1.0), default_plan(2, 8), 4, 1000, 0)


def test_bad_rate_frozen_chain_is_zero_and_below_epsilon2():
    spec = ModelSpec.potts(2, 2, math.log(1e6))  # p1 = 1/(1e6 + 1)
    k = central_kernel(spec)
    eps2 = epsilon2(spec, k.p1)
    assert eps2 < 1
    r = estimate_bad_rate(spec, 4, 2000, 12, kernel=k)
    assert r.estimate <= eps2 + 5 * r.stderr
    assert r.estimate < 0.01


def test_bad_rate_monotone_and_branch_variance():
    spec = ModelSpec.potts(2, 2, 2.5)
    r = estimate_bad_rate(spec, 2, 4000, 13, L_values=[1, 2, 3])
    est = [s["estimate"] for s in r.extras["L_series"]]
    assert est == sorted(est)
    br = r.extras["branch_average"]
    assert br[-1]["variance"] < br[0]["variance"]


def test_cov_same_vertex_is_bernoulli_variance():
    spec = ModelSpec.potts(2, 2, 2.5)
    c = estimate_cov_decay(spec, [0, 12], 2, 4000, 14)
    bu_var = c.cov[0]
    assert bu_var == pytest.approx(c.m_hat * (1 - c.m_hat), rel=0.05)
    assert abs(c.cov[1]) <= 4 * c.stderr[1]


def test_cov_frozen_chain_vanishes():
    c = estimate_cov_decay(ModelSpec.potts(2, 2, 20.0), [2, 4], 3, 1000, 15)
    assert all(abs(x) < 1e-12 for x in c.cov)
