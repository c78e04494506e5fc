from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treegibbs import oracle, rng
from treegibbs.exact_gibbs import (excess_energy, excess_lower_bound, hamiltonian, log_partition, path_marginals,
                                   peierls_check, root_marginal, sample_interior, upward)
from treegibbs.model import ModelSpec, build_transfer
from treegibbs.tree import (BallGeometry, BranchPlan, ConfigWindow, GeometryError, GuardExceeded, attached_edges,
                            branch_plan, enumerate_connected, ray_vertex)


def _boundary(geom, spins):
    return ConfigWindow(geom.sphere(geom.depth + 1), spins)


def _ray_targets(geom, depths, branch=()):
    verts = tuple(ray_vertex(geom, k, branch) for k in depths)
    gaps = tuple(b - a for a, b in zip(depths, depths[1:]))
    return BranchPlan(gaps, 0, tuple(depths), verts, tuple(branch))


def test_root_marginal_matches_enumeration_ising_plus():
    spec = ModelSpec.potts(2, 2, 1.3)
    g = BallGeometry(2, 1)
    bd = _boundary(g, np.zeros(6, dtype=int))
    exact = oracle.enumerate_gibbs(spec, g, bd).marginal(0)
    assert np.abs(root_marginal(spec, g, bd) - exact).max() <= 1e-12


def test_tiny_beta_is_nearly_uniform():
    spec = ModelSpec.potts(3, 2, 1e-9)
    g = BallGeometry(2, 2)
    bd = _boundary(g, np.arange(12) % 3)
    assert np.allclose(root_marginal(spec, g, bd), 1 / 3, atol=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.floats(0.1, 4.0))
def test_log_partition_and_marginals_vs_enumeration(seed, q, beta):
    rs = np.random.default_rng(seed)
    spec = ModelSpec.potts(q, 2, beta, field=rs.uniform(-0.1, 0.1, q))
    g = BallGeometry(2, 1)
    bd = _boundary(g, rs.integers(0, q, 6))
    ex = oracle.enumerate_gibbs(spec, g, bd)
    assert log_partition(spec, g, bd) == pytest.approx(ex.log_z, rel=1e-12)
    plan = branch_plan([1], 1, g)
    pm = path_marginals(spec, g, bd, plan)
    assert np.abs(pm[0] - ex.marginal(0)).max() <= 1e-12


def test_path_marginals_along_ray_vs_enumeration():
    spec = ModelSpec.clock(3, 2, 1.1, [0, 1.0], field=[0.0, 0.05, -0.05])
    g = BallGeometry(2, 2)
    rs = np.random.default_rng(4)
    bd = _boundary(g, rs.integers(0, 3, 12))
    ex = oracle.enumerate_gibbs(spec, g, bd)
    targets = _ray_targets(g, (0, 1, 2), branch=(1, 1))
    pm = path_marginals(spec, g, bd, targets)
    for row, v in zip(pm, targets.vertices):
        assert np.abs(row - ex.marginal(v)).max() <= 1e-12


def test_batched_upward_matches_single():
    spec = ModelSpec.potts(3, 2, 2.0)
    Q = build_transfer(spec).entries
    rs = np.random.default_rng(1)
    b = rs.integers(0, 3, size=(5, 12))
    batch = upward(Q, 2, 2, b).root
    for i in range(5):
        assert np.allclose(batch[i], upward(Q, 2, 2, b[i:i + 1]).root[0], atol=1e-15)


def test_deep_low_temperature_stays_finite():
    spec = ModelSpec.potts(2, 2, 12.0)
    g = BallGeometry(2, 16)
    bd = _boundary(g, np.zeros(g.sphere_size(17), dtype=int))
    m = root_marginal(spec, g, bd)
    assert np.all(np.isfinite(m)) and m[0] > 1 - 1e-12
    assert np.isfinite(log_partition(spec, g, bd))


def test_incomplete_boundary_rejected():
    spec = ModelSpec.potts(2, 2, 1.0)
    g = BallGeometry(2, 1)
    with pytest.raises(GeometryError):
        root_marginal(spec, g, ConfigWindow(g.sphere(2)[:5], np.zeros(5, dtype=int)))


def test_sample_interior_matches_conditional_law():
    spec = ModelSpec.potts(3, 2, 1.0)
    g = BallGeometry(2, 3)
    rs = np.random.default_rng(2)
    bd = _boundary(g, rs.integers(0, 3, g.sphere_size(4)))
    plan = _ray_targets(g, (0, 1, 3), branch=(2,))
    pm = path_marginals(spec, g, bd, plan)
    keys = rng.replica_keys(9, np.arange(4000))
    counts = np.zeros_like(pm)
    for k in keys:
        s = sample_interior(spec, g, bd, plan, k)
        counts[np.arange(len(s.spins)), s.spins] += 1
    freq = counts / len(keys)
    se = np.sqrt(pm * (1 - pm) / len(keys))
    assert np.all(np.abs(freq - pm) <= 4 * se + 1e-12)


def test_sample_interior_deterministic():
    spec = ModelSpec.potts(2, 2, 1.0)
    g = BallGeometry(2, 4)
    bd = _boundary(g, np.arange(g.sphere_size(5)) % 2)
    plan = _ray_targets(g, (0, 2, 4))
    a = sample_interior(spec, g, bd, plan, 12345)
    b = sample_interior(spec, g, bd, plan, 12345)
    assert np.array_equal(a.spins, b.spins)


def test_hamiltonian_counts_bonds_and_field():
    spec = ModelSpec.potts(2, 2, 1.0, field=[0.0, 0.5])
    w = ConfigWindow([0, 1, 2, 3], [1, 1, 0, 0])
    # two broken bonds (0-2, 0-3); field on two sites with spin 1
    assert hamiltonian(spec, w) == pytest.approx(2 + 1.0)


@st.composite
def contour_cases(draw):
    q = draw(st.integers(2, 4))
    ubar_steps = draw(st.lists(st.floats(0.2, 2.0), min_size=q // 2, max_size=q // 2))
    ubar = np.concatenate([[0.0], np.cumsum(ubar_steps)])
    d = draw(st.integers(2, 3))
    spec = ModelSpec.clock(q, d, 1.0, ubar)
    spec = spec.replace(field=np.array(draw(st.lists(st.floats(-0.05, 0.05), min_size=q, max_size=q))))
    g = BallGeometry(d)
    sets = list(enumerate_connected(g, 0, 3))
    gamma = sets[draw(st.integers(0, len(sets) - 1))]
    verts = np.unique(np.array(attached_edges(g, gamma)))
    spins = np.array(draw(st.lists(st.integers(0, q - 1), min_size=len(verts), max_size=len(verts))))
    om = ConfigWindow(verts, spins)
    ref = om.spin(list(gamma))
    labels = [(r + draw(st.integers(1, q - 1))) % q for r in ref]
    return spec, om, gamma, labels


@given(contour_cases())
def test_excess_energy_lower_bound(case):
    spec, om, gamma, labels = case
    assert excess_energy(spec, om, gamma, labels) >= excess_lower_bound(spec, om, gamma, labels) - 1e-12


def test_excess_energy_rejects_non_contour():
    spec = ModelSpec.potts(2, 2, 1.0)
    om = ConfigWindow(np.arange(4), np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        excess_energy(spec, om, [0], [0])


def test_excess_energy_of_flipped_root_in_constant_background():
    spec = ModelSpec.potts(3, 2, 1.0)
    om = ConfigWindow(np.arange(4), np.zeros(4, dtype=int))
    assert excess_energy(spec, om, [0], [2]) == pytest.approx(3.0)


def test_peierls_holds_small_cases():
    for spec, om, v in oracle.peierls_cases(seed=3, configs=2):
        led = peierls_check(spec, BallGeometry(2, 1), om, v)
        assert led.holds, (spec.q, spec.beta, om.spins, v)


def test_peierls_guard():
    spec = ModelSpec.potts(2, 2, 1.0)
    g = BallGeometry(2, 3)
    om = ConfigWindow(np.arange(g.ball_size(4)), np.zeros(g.ball_size(4), dtype=int))
    with pytest.raises(GuardExceeded):
        peierls_check(spec, g, om, 0)
