"""Exact finite-volume Gibbs computations on tree balls.

The interior ``B_n`` is conditioned on spins on the outer sphere ``S_(n+1)``.
Upward messages are partial partition functions of subtrees, normalised at
every vertex with the log-normaliser accumulated, so depth 30+ at large beta
stays in range.  Everything works on a batch axis of boundary configurations
and processes one sphere at a time.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import ModelSpec, build_transfer
from .tree import (BallGeometry, ConfigWindow, GeometryError, GuardExceeded, attached_edges,
                   broken_bonds, enumerate_connected, ray_vertex)


# ---------------------------------------------------------------------------
# batched message passing


@dataclass
class RayMessages:
    """Upward messages along one ray, for a batch of boundaries."""

    root: np.ndarray  # (N, q) root marginal
    messages: list  # level k -> (N, q) normalised message of the ray vertex at level k
    log_z: np.ndarray  # (N,) log sum over interior of prod Q_b


def ray_positions(geometry: BallGeometry, n, branch=()):
    """Sphere positions of the ray vertices at levels 0..n."""
    pos, v = [0], 0
    for lvl in range(n):
        c = branch[lvl] if lvl < len(branch) else 0
        v = geometry.child(v, c)
        pos.append(geometry.position(v))
    return pos


def upward(Q, d, n, boundary, positions=None):
    """Messages for boundary spins ``boundary`` of shape (N, |S_(n+1)|).

    ``positions[k]`` selects which level-k vertex's message is kept
    (defaults to the leftmost ray).
    """
    boundary = np.asarray(boundary)
    N = boundary.shape[0]
    q = Q.shape[0]
    expected = (d + 1) * d ** n
    if boundary.shape[1] != expected:
        raise GeometryError(f"boundary must cover all {expected} sphere vertices")
    if positions is None:
        positions = [0] * (n + 1)
    log_z = np.zeros(N)
    kept = [None] * (n + 1)
    # incoming[c, i]: contribution of child c to its parent's message at spin i
    incoming = Q.T[boundary]  # Q[i, w_c]
    for k in range(n, -1, -1):
        fan = d + 1 if k == 0 else d
        m = incoming.reshape(N, -1, fan, q).prod(axis=2)
        z = m.sum(axis=2)
        m /= z[..., None]
        log_z += np.log(z).sum(axis=1)
        kept[k] = m[:, positions[k], :].copy()
        if k > 0:
            incoming = m @ Q.T
    return RayMessages(kept[0], kept, log_z)


def ray_kernels(Q, msgs: RayMessages):
    """Downward transition matrices along the ray: (N, n, q, q)."""
    out = []
    for m in msgs.messages[1:]:
        w = Q[None, :, :] * m[:, None, :]
        out.append(w / w.sum(axis=2, keepdims=True))
    if not out:
        return np.zeros((msgs.root.shape[0], 0) + Q.shape)
    return np.stack(out, axis=1)


def ray_marginals(Q, msgs: RayMessages):
    """Conditional single-site laws of the ray vertices at levels 0..n: (N, n+1, q)."""
    T = ray_kernels(Q, msgs)
    p = msgs.root
    out = [p]
    for k in range(T.shape[1]):
        p = np.einsum("ni,nij->nj", p, T[:, k])
        out.append(p)
    return np.stack(out, axis=1)


def ray_sample(Q, msgs: RayMessages, u):
    """Exact conditional draw of the ray spins given the boundary.

    ``u`` holds one uniform per ray level, shape (N, n+1).
    """
    T = ray_kernels(Q, msgs)
    N = u.shape[0]
    spins = np.empty(u.shape, dtype=np.int64)
    spins[:, 0] = _inverse_cdf(np.cumsum(msgs.root, axis=1), u[:, 0])
    rows = np.arange(N)
    for k in range(T.shape[1]):
        cdf = np.cumsum(T[rows, k, spins[:, k]], axis=1)
        spins[:, k + 1] = _inverse_cdf(cdf, u[:, k + 1])
    return spins


def _inverse_cdf(cdf, u):
    return (u[:, None] >= cdf[:, :-1]).sum(axis=1)


def boundary_field_shift(spec: ModelSpec, boundary):
    """beta * sum_w psi(w_w) / (d+1): converts log Z of prod Q_b to the
    physical convention, which has no field on boundary sites."""
    return spec.beta * spec.field[np.asarray(boundary)].sum(axis=-1) / (spec.d + 1)


# ---------------------------------------------------------------------------
# single-boundary API


def _sphere_spins(geometry: BallGeometry, boundary: ConfigWindow):
    if geometry.depth is None:
        raise GeometryError("need a finite ball")
    try:
        return boundary.spin(geometry.sphere(geometry.depth + 1))
    except GeometryError as exc:
        raise GeometryError(f"incomplete boundary: {exc}") from None


def root_marginal(spec: ModelSpec, geometry: BallGeometry, boundary: ConfigWindow):
    """Exact law of the root spin in ``B_n`` given spins on ``S_(n+1)``."""
    boundary.check_q(spec.q)
    b = _sphere_spins(geometry, boundary)
    Q = build_transfer(spec).entries
    return upward(Q, spec.d, geometry.depth, b[None, :]).root[0]


def log_partition(spec: ModelSpec, geometry: BallGeometry, boundary: ConfigWindow):
    b = _sphere_spins(geometry, boundary)
    Q = build_transfer(spec).entries
    msgs = upward(Q, spec.d, geometry.depth, b[None, :])
    return float(msgs.log_z[0] + boundary_field_shift(spec, b))


def _plan_levels(geometry, targets):
    levels = [geometry.level(v) for v in targets.vertices]
    if any(lv > geometry.depth for lv in levels):
        raise GeometryError("target outside the interior ball")
    return levels


def path_marginals(spec: ModelSpec, geometry: BallGeometry, boundary: ConfigWindow, targets):
    """Conditional laws of the plan vertices, shape (len(targets), q)."""
    b = _sphere_spins(geometry, boundary)
    levels = _plan_levels(geometry, targets)
    Q = build_transfer(spec).entries
    n = geometry.depth
    msgs = upward(Q, spec.d, n, b[None, :], ray_positions(geometry, n, targets.branch))
    marg = ray_marginals(Q, msgs)[0]
    return marg[levels]


def sample_interior(spec: ModelSpec, geometry: BallGeometry, boundary: ConfigWindow, targets, key, stream=None):
    """Draw the spins of the plan vertices from the exact conditional law.

    ``key`` is a replica key; uniforms come from the counter-based stream keyed
    by the ray vertex addresses.
    """
    b = _sphere_spins(geometry, boundary)
    levels = _plan_levels(geometry, targets)
    Q = build_transfer(spec).entries
    n = geometry.depth
    msgs = upward(Q, spec.d, n, b[None, :], ray_positions(geometry, n, targets.branch))
    ray = [ray_vertex(geometry, k, targets.branch) for k in range(n + 1)]
    u = rng.uniforms(np.atleast_1d(np.uint64(key)), ray, rng.INTERIOR if stream is None else stream)
    spins = ray_sample(Q, msgs, u)[0]
    return ConfigWindow(np.asarray(targets.vertices), spins[levels], "interior sample")


# ---------------------------------------------------------------------------
# energies


def hamiltonian(spec: ModelSpec, window: ConfigWindow, edges=None, sites=None, geometry=None):
    """sum over ``edges`` of u(w_v, w_w) plus sum over ``sites`` of psi(w_v).

    ``edges`` defaults to all tree edges inside the window, ``sites`` to every
    window vertex.  Batched spins give batched energies.
    """
    if edges is None:
        geometry = geometry or BallGeometry(spec.d)
        edges = geometry.tree_edges(window.vertices)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    sites = window.vertices if sites is None else np.asarray(sites, dtype=np.int64)
    try:
        a = window.spin(edges[:, 0])
        b = window.spin(edges[:, 1])
        s = window.spin(sites)
    except GeometryError as exc:
        raise GeometryError(f"window does not cover the energy terms: {exc}") from None
    energy = spec.pair_energy[a, b].sum(axis=-1) + spec.field[s].sum(axis=-1)
    return energy if np.ndim(energy) else float(energy)


def excess_energy(spec: ModelSpec, omega0: ConfigWindow, gamma, labels, geometry=None):
    """H(omega') - H(omega0) where omega' relabels ``gamma`` with ``labels``."""
    geometry = geometry or BallGeometry(spec.d)
    gamma = [int(v) for v in gamma]
    labels = np.asarray(labels, dtype=np.int64)
    ref = omega0.spin(gamma)
    if np.any(labels == ref):
        raise ValueError("labels agree with the reference on part of the support: not a contour")
    edges = attached_edges(geometry, gamma)
    excited = omega0.spins.copy()
    excited[omega0.index_of(gamma)] = labels
    before = hamiltonian(spec, omega0, edges, gamma)
    after = hamiltonian(spec, ConfigWindow(omega0.vertices, excited), edges, gamma)
    return after - before


def excess_lower_bound(spec: ModelSpec, omega0: ConfigWindow, gamma, labels, geometry=None):
    """(d-1) u |gamma| - (U+u) |D(omega0) & E(gamma)| + sum psi(labels) - psi(omega0)."""
    geometry = geometry or BallGeometry(spec.d)
    gamma = [int(v) for v in gamma]
    nb = broken_bonds(omega0, attached_edges(geometry, gamma))
    dpsi = spec.field[np.asarray(labels)].sum() - spec.field[omega0.spin(gamma)].sum()
    return (spec.d - 1) * spec.u * len(gamma) - (spec.U + spec.u) * nb + dpsi


# ---------------------------------------------------------------------------
# Peierls bound on tiny volumes


@dataclass
class ContourRecord:
    support: tuple
    labels: tuple
    excess: float
    activity: float


@dataclass
class PeierlsLedger:
    vertex: int
    lhs: float
    rhs: float
    contours: list = field(default_factory=list)

    @property
    def holds(self):
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300

    @property
    def slack(self):
        return self.rhs - self.lhs


PEIERLS_MAX_BALL = 13


def peierls_check(spec: ModelSpec, geometry: BallGeometry, omega0: ConfigWindow, v) -> PeierlsLedger:
    """Exact mismatch probability at ``v`` against the sum of contour activities."""
    from . import oracle

    n = geometry.depth
    if n is None or geometry.ball_size(n) > PEIERLS_MAX_BALL:
        raise GuardExceeded(f"Peierls check limited to |B_n| <= {PEIERLS_MAX_BALL}")
    interior = np.arange(geometry.ball_size(n))
    boundary = ConfigWindow(geometry.sphere(n + 1), omega0.spin(geometry.sphere(n + 1)))
    exact = oracle.enumerate_gibbs(spec, geometry, boundary)
    lhs = float(1 - exact.marginal(v)[omega0.spin([v])[0]])
    records, rhs = [], 0.0
    full = BallGeometry(spec.d)
    for gamma in enumerate_connected(geometry, v, len(interior)):
        ref = omega0.spin(list(gamma))
        choices = [[a for a in range(spec.q) if a != r] for r in ref]
        for labels in itertools.product(*choices):
            ex = excess_energy(spec, omega0, gamma, labels, full)
            act = math.exp(-spec.beta * ex)
            records.append(ContourRecord(gamma, labels, ex, act))
            rhs += act
    return PeierlsLedger(int(v), lhs, rhs, records)
