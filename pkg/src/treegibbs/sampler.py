"""Exact sampling of the tree-indexed Markov chain and bad-event detection.

The spin at vertex ``w`` in replica ``r`` is the inverse-CDF image of a
counter-based uniform keyed by (replica key, w), applied to the row of ``P``
selected by the parent's spin.  A full level-by-level broadcast and a lazy
query of a few vertices (plus their ancestors) therefore agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng
from .boundary_law import ChainKernel
from .tree import BallGeometry, ConfigWindow, GeometryError, GuardExceeded, connected_counts, enumerate_connected

CONTOUR_GUARD = 10**6


def _draw(cdf_rows, u):
    """Inverse CDF: ``cdf_rows`` (..., q) cumulative rows, ``u`` (...) uniforms."""
    return (u[..., None] >= cdf_rows[..., :-1]).sum(axis=-1)


def _root_spins(kernel: ChainKernel, keys, root_condition, stream=rng.BROADCAST):
    if root_condition is not None:
        if not 0 <= root_condition < kernel.q:
            raise ValueError(f"root condition {root_condition} outside 0..{kernel.q - 1}")
        return np.full(len(keys), int(root_condition), dtype=np.int64)
    u = rng.uniforms(keys, [0], stream)[:, 0]
    return _draw(np.cumsum(kernel.marginal)[None, :], u)


def broadcast_levels(kernel: ChainKernel, d, depth, keys, root_condition=None, stream=rng.BROADCAST):
    """Yield ``(k, spins)`` for k = 0..depth with spins of shape (N, |S_k|)."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    cum = np.cumsum(kernel.P, axis=1)
    cur = _root_spins(kernel, keys, root_condition, stream)[:, None]
    yield 0, cur
    geom = BallGeometry(d)
    for k in range(1, depth + 1):
        fan = d + 1 if k == 1 else d
        parents = np.repeat(cur, fan, axis=1)
        u = rng.uniforms(keys, np.arange(geom.offset(k), geom.offset(k) + geom.sphere_size(k)), stream)
        cur = _draw(cum[parents], u)
        yield k, cur


def ancestor_closure(geometry: BallGeometry, vertices):
    out = set()
    for v in np.atleast_1d(vertices):
        v = int(v)
        while v >= 0 and v not in out:
            out.add(v)
            v = geometry.parent(v)
    return np.array(sorted(out), dtype=np.int64)


def lazy_spins(kernel: ChainKernel, geometry: BallGeometry, keys, vertices, root_condition=None,
               stream=rng.BROADCAST):
    """Spins of ``vertices`` (N, m), materialising only their ancestors."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    vertices = np.atleast_1d(np.asarray(vertices, dtype=np.int64))
    if vertices.size == 0:
        return np.zeros((len(keys), 0), dtype=np.int64)
    if geometry.depth is not None and not all(geometry.contains(int(v)) for v in vertices):
        raise GeometryError("vertex outside the ball")
    closure = ancestor_closure(geometry, vertices)
    idx = {int(v): i for i, v in enumerate(closure)}
    spins = np.empty((len(keys), len(closure)), dtype=np.int64)
    cum = np.cumsum(kernel.P, axis=1)
    levels = np.array([geometry.level(int(v)) for v in closure])
    parent_idx = np.array([idx.get(geometry.parent(int(v)), -1) for v in closure])
    spins[:, 0] = _root_spins(kernel, keys, root_condition, stream)
    for k in range(1, levels.max() + 1):
        sel = np.flatnonzero(levels == k)
        u = rng.uniforms(keys, closure[sel], stream)
        spins[:, sel] = _draw(cum[spins[:, parent_idx[sel]]], u)
    return spins[:, [idx[int(v)] for v in vertices]]


@dataclass(frozen=True)
class BroadcastSpec:
    kernel: ChainKernel
    geometry: BallGeometry
    root_condition: int | None = None
    master_seed: int = 0

    def keys(self, replicas):
        return rng.replica_keys(self.master_seed, replicas)


def broadcast(bspec: BroadcastSpec, region, replicas=None) -> ConfigWindow:
    """Spins of ``region`` under the chain.

    ``replicas=None`` gives the single configuration of replica 0 (spins of
    shape (m,)); a sequence of replica indices gives a batch (N, m).
    """
    region = np.asarray(region, dtype=np.int64)
    reps = [0] if replicas is None else list(replicas)
    spins = lazy_spins(bspec.kernel, bspec.geometry, bspec.keys(reps), region, bspec.root_condition)
    if replicas is None:
        spins = spins[0]
    return ConfigWindow(region, spins, f"broadcast seed={bspec.master_seed}")


class LazyConfig:
    """Window provider: ``spin(vertices)`` materialises a batch of replicas on demand."""

    def __init__(self, kernel: ChainKernel, d, keys, root_condition=None, stream=rng.BROADCAST):
        self.kernel = kernel
        self.geometry = BallGeometry(d)
        self.keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
        self.root_condition = root_condition
        self.stream = stream

    def spin(self, vertices):
        return lazy_spins(self.kernel, self.geometry, self.keys, vertices, self.root_condition, self.stream)


# ---------------------------------------------------------------------------
# bad events


@dataclass
class BadTemplate:
    """Contours through a local root, with their attached-edge incidence.

    Local numbering is that of a ball of depth ``L`` around the local root;
    every contour lives in the depth ``L - 1`` ball, so its attached edges
    lie inside the depth ``L`` ball.
    """

    d: int
    L: int
    contours: list
    sizes: np.ndarray
    edges: np.ndarray  # (E, 2) local (parent, child)
    incidence: np.ndarray  # (C, E)


@lru_cache(maxsize=32)
def bad_template(d, L):
    if L < 1:
        raise ValueError("truncation L must be >= 1")
    n_contours = sum(connected_counts(d, L))
    if n_contours > CONTOUR_GUARD:
        raise GuardExceeded(f"{n_contours} contours at d={d}, L={L} exceed the guard of {CONTOUR_GUARD}")
    inner = BallGeometry(d, L - 1)
    contours = []
    for gamma in enumerate_connected(inner, 0, L, guard=CONTOUR_GUARD):
        contours.append(gamma)
    local = BallGeometry(d, L)
    n = local.ball_size(L)
    edges = np.array([(local.parent(w), w) for w in range(1, n)], dtype=np.int64)
    child_edge = {int(w): i for i, w in enumerate(edges[:, 1])}
    A = np.zeros((len(contours), len(edges)), dtype=np.float64)
    for c, gamma in enumerate(contours):
        for v in gamma:
            if v != 0:
                A[c, child_edge[v]] = 1
            for w in local.children(v):
                A[c, child_edge[int(w)]] = 1
    sizes = np.array([len(g) for g in contours], dtype=np.int64)
    return BadTemplate(d, L, contours, sizes, edges, A)


def local_to_global(d, v, L):
    """Global vertex ids of the depth-``L`` ball centred at ``v``, in local order.

    The local root's neighbours map to [parent(v), children(v)...]; deeper
    local children map to the global neighbours other than the one we came from.
    """
    geom = BallGeometry(d)
    local = BallGeometry(d, L)
    n = local.ball_size(L)
    g = np.empty(n, dtype=np.int64)
    g[0] = int(v)
    for w in range(1, n):
        p = local.parent(w)
        nb = geom.neighbors(int(g[p]))
        if p != 0:
            back = g[local.parent(p)]
            nb = [x for x in nb if x != back]
        g[w] = nb[local.child_index(w)]
    return g


def bad_counts(spins_local, template: BadTemplate):
    """Broken attached bonds per contour: (N, C)."""
    e = template.edges
    broken = (spins_local[:, e[:, 0]] != spins_local[:, e[:, 1]]).astype(np.float64)
    return broken @ template.incidence.T


def bad_indicators(provider, v, L, d, delta0):
    """Boolean (N,) for the truncated bad event at ``v``."""
    tmpl = bad_template(d, L)
    spins = np.atleast_2d(provider.spin(local_to_global(d, v, L)))
    counts = bad_counts(spins, tmpl)
    return (counts >= delta0 * tmpl.sizes[None, :] - 1e-12).any(axis=1)


@dataclass
class BadEventReport:
    vertex: int
    L: int
    found: bool
    witness: tuple = ()
    ratio: float = float("nan")

    def to_dict(self):
        return {"vertex": self.vertex, "L": self.L, "found": self.found,
                "witness": list(self.witness), "ratio": None if not self.found else self.ratio}


def detect_bad(provider, v, L, spec) -> BadEventReport:
    """Search connected contours through ``v`` of size at most ``L`` for
    ``|D(omega) & E(gamma)| >= delta0 |gamma|``; reports the first witness found
    (smallest size first)."""
    from .model import delta0

    tmpl = bad_template(spec.d, L)
    gmap = local_to_global(spec.d, v, L)
    spins = np.atleast_2d(provider.spin(gmap))
    if spins.shape[0] != 1:
        raise ValueError("detect_bad takes a single configuration; use bad_indicators for batches")
    counts = bad_counts(spins, tmpl)[0]
    d0 = delta0(spec)
    hit = np.flatnonzero(counts >= d0 * tmpl.sizes - 1e-12)
    if hit.size == 0:
        return BadEventReport(int(v), L, False)
    order = hit[np.argsort(tmpl.sizes[hit], kind="stable")]
    c = int(order[0])
    witness = tuple(int(gmap[w]) for w in tmpl.contours[c])
    return BadEventReport(int(v), L, True, tuple(sorted(witness)), float(counts[c] / tmpl.sizes[c]))


@dataclass
class MomentCheck:
    t: float
    size: int
    lhs: np.ndarray  # per conditioning spin a
    stderr: np.ndarray
    rhs: float
    samples: int
    details: dict = field(default_factory=dict)

    @property
    def holds(self):
        return bool(np.all(self.lhs <= self.rhs * (1 + 5 * self.stderr / np.maximum(self.lhs, 1e-300))))

    @property
    def slack(self):
        return self.rhs - self.lhs

    def __bool__(self):
        return self.holds


def exp_moment_check(kernel: ChainKernel, gamma, t, d, samples=100_000, seed=0) -> MomentCheck:
    """Monte Carlo E[exp(t |D(omega) & E(gamma)|) | sigma_x = a] for every a,
    against (p1 e^t + 1 - p1)^((d+1)|gamma|).

    ``gamma`` is a connected vertex set containing the root ``x = 0``.
    """
    from .tree import attached_edges

    gamma = sorted(int(v) for v in gamma)
    if 0 not in gamma:
        raise ValueError("gamma must contain the root vertex 0")
    geom = BallGeometry(d)
    edges = np.array(attached_edges(geom, gamma), dtype=np.int64)
    verts = np.unique(edges)
    pos = {int(w): i for i, w in enumerate(verts)}
    ea = np.array([pos[int(a)] for a in edges[:, 0]])
    eb = np.array([pos[int(b)] for b in edges[:, 1]])
    lhs, se = [], []
    for a in range(kernel.q):
        keys = rng.replica_keys(seed, np.arange(samples), stream=rng.REPLICA + 16 * (a + 1))
        s = lazy_spins(kernel, geom, keys, verts, root_condition=a)
        broken = (s[:, ea] != s[:, eb]).sum(axis=1)
        vals = np.exp(t * broken)
        lhs.append(vals.mean())
        se.append(vals.std(ddof=1) / np.sqrt(samples))
    rhs = float((kernel.p1 * np.exp(t) + 1 - kernel.p1) ** ((d + 1) * len(gamma)))
    return MomentCheck(float(t), len(gamma), np.array(lhs), np.array(se), rhs, samples,
                       {"edges": len(edges)})
