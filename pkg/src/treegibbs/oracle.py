"""Brute-force ground truth on tiny balls.

Nothing here uses message passing: Gibbs tables come from summing the
Hamiltonian over every interior configuration, the ball's edge list is built
by direct construction, and boundary laws of the free/central chain come from
enumerating the joint law of the broadcast.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import exact_gibbs
from .model import ModelSpec
from .tree import BallGeometry, ConfigWindow, GuardExceeded

ENUM_GUARD = 10**7


def ball_edges(d, depth):
    """Vertex count and parent-child edges of the depth-``depth`` ball, numbered
    breadth-first with children in order."""
    edges = []
    frontier = [0]
    count = 1
    for level in range(depth):
        nxt = []
        for v in frontier:
            for _ in range(d + 1 if level == 0 else d):
                edges.append((v, count))
                nxt.append(count)
                count += 1
        frontier = nxt
    return count, edges


def _all_configs(q, m):
    if q ** m > ENUM_GUARD:
        raise GuardExceeded(f"{q}^{m} configurations exceed the enumeration guard")
    return np.array(list(itertools.product(range(q), repeat=m)), dtype=np.int64).reshape(-1, m)


@dataclass
class ExactDistribution:
    vertices: np.ndarray  # interior vertices (columns of configs)
    configs: np.ndarray  # (M, |B_n|)
    probs: np.ndarray  # (M,)
    log_z: float
    q: int

    def marginal(self, v):
        col = int(np.flatnonzero(self.vertices == v)[0])
        return np.bincount(self.configs[:, col], weights=self.probs, minlength=self.q)


def enumerate_gibbs(spec: ModelSpec, geometry: BallGeometry, boundary: ConfigWindow) -> ExactDistribution:
    """Exhaustive table of gamma_{B_n}(. | boundary) with physical log Z."""
    n = geometry.depth
    n_int, _ = ball_edges(spec.d, n)
    n_all, edges = ball_edges(spec.d, n + 1)
    if spec.q ** n_int > ENUM_GUARD:
        raise GuardExceeded(f"{spec.q}^{n_int} interior configurations exceed the guard")
    bverts = np.arange(n_int, n_all)
    bspins = boundary.spin(bverts)
    configs = _all_configs(spec.q, n_int)
    full = np.concatenate([configs, np.broadcast_to(bspins, (len(configs), len(bverts)))], axis=1)
    window = ConfigWindow(np.arange(n_all), full)
    # every edge of the depth-(n+1) ball touches the interior
    H = exact_gibbs.hamiltonian(spec, window, edges=edges, sites=np.arange(n_int))
    logw = -spec.beta * np.asarray(H)
    log_z = float(logsumexp(logw))
    return ExactDistribution(np.arange(n_int), configs, np.exp(logw - log_z), log_z, spec.q)


def _broadcast_joint(kernel, d, n, boundary_configs, interior_configs):
    """log mu(interior, boundary) for the chain on B_(n+1), shape (M_int, M_bd)."""
    n_int, edges = ball_edges(d, n)
    n_all, all_edges = ball_edges(d, n + 1)
    logP = np.log(kernel.P)
    base = np.log(kernel.marginal)[interior_configs[:, 0]]
    for a, b in edges:
        base = base + logP[interior_configs[:, a], interior_configs[:, b]]
    out = np.broadcast_to(base[:, None], (len(interior_configs), len(boundary_configs))).copy()
    for a, b in all_edges:
        if b >= n_int:
            out += logP[interior_configs[:, a][:, None], boundary_configs[:, b - n_int][None, :]]
    return out


def _posterior_tables(kernel, q, d, n):
    n_int, _ = ball_edges(d, n)
    n_all, _ = ball_edges(d, n + 1)
    if q ** n_all > 5 * ENUM_GUARD:
        raise GuardExceeded("joint enumeration too large")
    interior = _all_configs(q, n_int)
    boundary = _all_configs(q, n_all - n_int)
    logj = _broadcast_joint(kernel, d, n, boundary, interior)
    log_mu_b = logsumexp(logj, axis=0)  # (M_bd,)
    post = np.empty((len(boundary), q))
    joint_root = np.empty((len(boundary), q))
    for a in range(q):
        sel = interior[:, 0] == a
        joint_root[:, a] = np.exp(logsumexp(logj[sel], axis=0))
    post = joint_root / joint_root.sum(axis=1, keepdims=True)
    return boundary, np.exp(log_mu_b), joint_root, post


def exact_qea_small(spec: ModelSpec, n, kernel=None):
    """Finite-depth q_EA: (1/q) sum_a Var over boundaries of P(root = a | boundary)."""
    from .boundary_law import central_kernel

    kernel = kernel or central_kernel(spec)
    _, mu_b, _, post = _posterior_tables(kernel, spec.q, spec.d, n)
    second = (mu_b[:, None] * post ** 2).sum(axis=0)
    first = (mu_b[:, None] * post).sum(axis=0)
    return float(np.mean(second - first ** 2))


def exact_reconstruction_small(spec: ModelSpec, a, n, kernel=None):
    """E[ P(root = a | boundary) | root = a ] at depth n."""
    from .boundary_law import central_kernel

    kernel = kernel or central_kernel(spec)
    _, mu_b, joint_root, post = _posterior_tables(kernel, spec.q, spec.d, n)
    return float((joint_root[:, a] * post[:, a]).sum() / joint_root[:, a].sum())


def exact_connected_count(d, size):
    """Connected vertex sets of the given size containing the root, by growing
    sets one neighbour at a time and de-duplicating."""
    if size > 8:
        raise GuardExceeded("exact_connected_count limited to size <= 8")
    if size < 1:
        return 0
    _, edges = ball_edges(d, size)
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    layer = {frozenset([0])}
    for _ in range(size - 1):
        nxt = set()
        for s in layer:
            for v in s:
                for w in adj[v]:
                    if w not in s:
                        nxt.add(s | {w})
        layer = nxt
    count = len(layer)
    assert count <= (d + 1) ** (2 * (size - 1))
    return count


# ---------------------------------------------------------------------------
# verification matrix


@dataclass
class CaseResult:
    name: str
    passed: bool
    error: float
    tolerance: float

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}  err={self.error:.3e}  tol={self.tolerance:.0e}"


def root_marginal_cases(seed=0, random_boundaries=20, betas=5, exhaustive_limit=64):
    """(spec, geometry, boundary window, label) tuples for the oracle matrix."""
    rs = np.random.default_rng(seed)
    cases = []
    for q in (2, 3):
        for n in (1, 2):
            geom = BallGeometry(2, n)
            sphere = geom.sphere(n + 1)
            if q ** (geom.ball_size(n)) > ENUM_GUARD:
                continue
            for beta in np.round(rs.uniform(0.2, 3.0, size=betas), 6):
                field = rs.uniform(-0.1, 0.1, size=q) if rs.random() < 0.5 else None
                spec = ModelSpec.potts(q, 2, float(beta), field)
                if q ** len(sphere) <= exhaustive_limit:
                    bds = _all_configs(q, len(sphere))
                else:
                    bds = rs.integers(0, q, size=(random_boundaries, len(sphere)))
                for i, b in enumerate(bds):
                    label = f"q={q} n={n} beta={beta:g} field={'yes' if field is not None else 'no'} boundary#{i}"
                    cases.append((spec, geom, ConfigWindow(sphere, b), label))
    return cases


def verify_root_marginals(tol=1e-12, **kw):
    results = []
    for spec, geom, bd, label in root_marginal_cases(**kw):
        exact = enumerate_gibbs(spec, geom, bd).marginal(0)
        mp = exact_gibbs.root_marginal(spec, geom, bd)
        err = float(np.abs(exact - mp).max())
        results.append(CaseResult(f"root_marginal {label}", err <= tol, err, tol))
    return results


def verify_log_partition(tol=1e-10, **kw):
    results = []
    for spec, geom, bd, label in root_marginal_cases(**kw)[::7]:
        exact = enumerate_gibbs(spec, geom, bd).log_z
        mp = exact_gibbs.log_partition(spec, geom, bd)
        err = abs(exact - mp)
        results.append(CaseResult(f"log_z {label}", err <= tol * max(1, abs(exact)), err, tol))
    return results


def verify_connected_counts(max_size=6):
    from .tree import connected_counts

    results = []
    for d in (2, 3):
        gf = connected_counts(d, max_size)
        for size in range(1, max_size + 1):
            c = exact_connected_count(d, size)
            ok = c == gf[size - 1] and c <= (d + 1) ** (2 * (size - 1))
            results.append(CaseResult(f"connected d={d} size={size} count={c}", ok, float(abs(c - gf[size - 1])), 0.0))
    return results


def verify_bounds_monotone():
    from .model import epsilon1, epsilon2

    results = []
    spec = ModelSpec.potts(2, 2, 1.0)
    e1 = [epsilon1(spec.replace(beta=b)) for b in np.linspace(4, 40, 50)]
    finite = [e for e in e1 if math.isfinite(e)]
    ok = all(a > b for a, b in zip(finite, finite[1:]))
    results.append(CaseResult("epsilon1 decreasing in beta", ok, 0.0, 0.0))
    e2 = [epsilon2(spec, p) for p in np.geomspace(1e-2, 1e-8, 40)]
    ok = all(b <= a for a, b in zip(e2, e2[1:]))
    results.append(CaseResult("epsilon2 nonincreasing as p1 decreases", ok, 0.0, 0.0))
    return results


def peierls_cases(seed=0, configs=5):
    """(spec, omega0 window on B_2, v) for the n = 1 Peierls check."""
    rs = np.random.default_rng(seed)
    models = [ModelSpec.potts(2, 2, 1.0), ModelSpec.potts(3, 2, 1.0), ModelSpec.clock(4, 2, 1.0, [0.0, 1.0, 1.5]),
              ModelSpec.potts(2, 2, 1.0, field=np.array([0.0, 0.1]))]
    size = BallGeometry(2, 2).ball_size(2)
    cases = []
    for base in models:
        for beta in (0.5, 1.5, 3.0):
            spec = base.replace(beta=beta)
            for trial in range(configs):
                w = rs.integers(0, spec.q, size=size) if trial else np.zeros(size, dtype=np.int64)
                for v in range(4):
                    cases.append((spec, ConfigWindow(np.arange(size), w), v))
    return cases


def verify_peierls(**kw):
    geom = BallGeometry(2, 1)
    results = []
    for spec, om, v in peierls_cases(**kw):
        led = exact_gibbs.peierls_check(spec, geom, om, v)
        label = f"peierls q={spec.q} beta={spec.beta:g} omega0={''.join(map(str, om.spins))} v={v}"
        results.append(CaseResult(label, led.holds, max(0.0, led.lhs - led.rhs), 0.0))
    return results


def verify_all(quick=False):
    kw = {"random_boundaries": 5, "betas": 2} if quick else {}
    return (verify_root_marginals(**kw) + verify_log_partition(**kw)
            + verify_connected_counts() + verify_bounds_monotone()
            + verify_peierls(configs=2 if quick else 5))
