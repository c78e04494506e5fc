"""Implicit Cayley-tree geometry.

Vertices are integer addresses in level order: the root is 0, level ``k >= 1``
holds ``(d+1) d^(k-1)`` vertices starting at offset ``|B_(k-1)|``.  The root has
``d + 1`` children, every other vertex has ``d`` children and one parent, so each
vertex has ``d + 1`` neighbours.  No adjacency structure is ever stored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


class GuardExceeded(RuntimeError):
    """An enumeration or allocation would exceed its size guard."""


MAX_DEPTH = 60


@dataclass(frozen=True)
class BallGeometry:
    d: int
    depth: int | None = None  # None: the infinite tree

    def __post_init__(self):
        if self.d < 2:
            raise GeometryError("d must be >= 2")
        # level offsets, capped where int64 would overflow
        offs = [0, 1]
        k = 1
        while k < MAX_DEPTH:
            nxt = offs[-1] + self.sphere_size(k)
            if nxt >= 2 ** 62:
                break
            offs.append(nxt)
            k += 1
        object.__setattr__(self, "_offsets", np.array(offs, dtype=np.int64))

    @property
    def max_level(self):
        return len(self._offsets) - 2

    def sphere_size(self, k):
        return 1 if k == 0 else (self.d + 1) * self.d ** (k - 1)

    def ball_size(self, n):
        d = self.d
        return 1 + (d + 1) * (d ** n - 1) // (d - 1)

    def offset(self, k):
        if k > self.max_level + 1:
            raise GeometryError(f"level {k} overflows 64-bit addressing")
        return int(self._offsets[k])

    def sphere(self, k):
        start = self.offset(k)
        return np.arange(start, start + self.sphere_size(k), dtype=np.int64)

    def contains(self, v):
        if self.depth is None:
            return np.asarray(v) >= 0
        return (np.asarray(v) >= 0) & (np.asarray(v) < self.ball_size(self.depth))

    def level(self, v):
        v = np.asarray(v, dtype=np.int64)
        lv = np.searchsorted(self._offsets, v, side="right") - 1
        return lv if lv.ndim else int(lv)

    def position(self, v):
        """Index of ``v`` within its sphere."""
        v = np.asarray(v, dtype=np.int64)
        out = v - self._offsets[self.level(v)]
        return out if out.ndim else int(out)

    def parent(self, v):
        """Parent address; -1 for the root."""
        v = np.asarray(v, dtype=np.int64)
        lv = np.atleast_1d(self.level(v))
        pos = np.atleast_1d(v - self._offsets[lv])
        par = np.where(lv >= 2, self._offsets[np.maximum(lv - 1, 0)] + pos // self.d, 0)
        par = np.where(lv == 0, -1, par)
        return par.reshape(v.shape) if v.ndim else int(par[0])

    def child_index(self, v):
        """Index of ``v`` among its parent's children."""
        v = np.asarray(v, dtype=np.int64)
        lv = np.atleast_1d(self.level(v))
        pos = np.atleast_1d(v - self._offsets[lv])
        out = np.where(lv == 1, pos, pos % self.d)
        out = np.where(lv == 0, -1, out)
        return out.reshape(v.shape) if v.ndim else int(out[0])

    def n_children(self, v):
        return self.d + 1 if v == 0 else self.d

    def children(self, v):
        v = int(v)
        if v == 0:
            return np.arange(1, self.d + 2, dtype=np.int64)
        lv = self.level(v)
        base = self.offset(lv + 1) + (v - self.offset(lv)) * self.d
        return np.arange(base, base + self.d, dtype=np.int64)

    def child(self, v, c):
        v = int(v)
        if v == 0:
            return 1 + c
        lv = self.level(v)
        return self.offset(lv + 1) + (v - self.offset(lv)) * self.d + c

    def neighbors(self, v):
        """Parent first (if any), then children, restricted to the ball."""
        v = int(v)
        out = [] if v == 0 else [self.parent(v)]
        if self.depth is None or self.level(v) < self.depth:
            out.extend(int(c) for c in self.children(v))
        return out

    def ray(self, k):
        """Leftmost-ray vertex at depth ``k``."""
        return self.offset(k)

    def distance(self, v, w):
        v, w = int(v), int(w)
        dist = 0
        lv, lw = self.level(v), self.level(w)
        while lv > lw:
            v, lv, dist = self.parent(v), lv - 1, dist + 1
        while lw > lv:
            w, lw, dist = self.parent(w), lw - 1, dist + 1
        while v != w:
            v, w, dist = self.parent(v), self.parent(w), dist + 2
        return dist

    def address_string(self, v):
        """Root-to-vertex child indices, e.g. ``"0.2.1.1"``."""
        path = []
        v = int(v)
        while v != 0:
            path.append(self.child_index(v))
            v = self.parent(v)
        return ".".join(["0"] + [str(c) for c in reversed(path)])

    def parse_address(self, text):
        parts = text.split(".")
        if parts[0] != "0":
            raise GeometryError(f"address must start at the root: {text!r}")
        v = 0
        for c in parts[1:]:
            c = int(c)
            if not 0 <= c < self.n_children(v):
                raise GeometryError(f"bad child index {c} in {text!r}")
            v = self.child(v, c)
        return v

    def tree_edges(self, vertices):
        """Parent-child pairs with both ends in ``vertices``, as an (m, 2) array."""
        vertices = np.asarray(vertices, dtype=np.int64)
        par = self.parent(vertices)
        keep = np.isin(par, vertices) & (par >= 0)
        return np.stack([par[keep], vertices[keep]], axis=1)


@dataclass(frozen=True)
class ConfigWindow:
    """Spins on an explicit vertex set.  ``spins`` may carry leading batch axes."""

    vertices: np.ndarray
    spins: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64)
        s = np.asarray(self.spins, dtype=np.int64)
        if v.ndim != 1 or s.shape[-1:] != v.shape:
            raise GeometryError("spins must have a trailing axis matching vertices")
        if len(np.unique(v)) != len(v):
            raise GeometryError("duplicate vertices in window")
        if s.size and s.min() < 0:
            raise GeometryError("negative spin value")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "spins", s)

    def check_q(self, q):
        if self.spins.size and self.spins.max() >= q:
            raise GeometryError(f"spin value outside 0..{q - 1}")

    def index_of(self, vertices):
        vertices = np.asarray(vertices, dtype=np.int64)
        order = np.argsort(self.vertices)
        pos = np.searchsorted(self.vertices, vertices, sorter=order)
        pos = np.clip(pos, 0, len(order) - 1)
        idx = order[pos]
        missing = self.vertices[idx] != vertices
        if np.any(missing):
            raise GeometryError(f"vertices not in window: {vertices[missing][:5].tolist()}")
        return idx

    def spin(self, vertices):
        return self.spins[..., self.index_of(vertices)]

    def as_dict(self):
        return dict(zip(self.vertices.tolist(), self.spins.tolist()))


# ---------------------------------------------------------------------------
# connected subsets


def enumerate_connected(geometry: BallGeometry, v, max_size, guard=10**7):
    """Yield every connected vertex set containing ``v`` with at most ``max_size``
    vertices, each exactly once, as sorted tuples.

    On a tree a connected set grows by adding frontier vertices; deciding each
    frontier vertex in or out once gives a duplicate-free enumeration.
    """
    if max_size < 1:
        return
    emitted = 0
    v = int(v)
    # state: (members, frontier list, position in frontier)
    stack = [((v,), tuple(_away(geometry, v, None)), {v: None})]
    while stack:
        members, frontier, parent_of = stack.pop()
        if not frontier or len(members) == max_size:
            emitted += 1
            if emitted > guard:
                raise GuardExceeded(f"more than {guard} connected sets")
            yield tuple(sorted(members))
            continue
        f, rest = frontier[0], frontier[1:]
        # exclude f: nothing behind it can be reached any more
        stack.append((members, rest, parent_of))
        # include f
        src = _attached(geometry, f, parent_of, members)
        po = dict(parent_of)
        po[f] = src
        stack.append((members + (f,), rest + tuple(_away(geometry, f, src)), po))


def _attached(geometry, f, parent_of, members):
    for w in geometry.neighbors(f):
        if w in parent_of:
            return w
    raise AssertionError("frontier vertex not adjacent to the set")


def _away(geometry, v, came_from):
    return [w for w in geometry.neighbors(v) if w != came_from]


def connected_counts(d, max_size):
    """Counts of connected sets of size 1..max_size containing a fixed vertex,
    by the subtree generating function ``A = x (1 + A)^d``, ``R = x (1 + A)^(d+1)``.
    """
    n = max_size
    A = np.zeros(n + 1, dtype=object)
    A[:] = 0
    for _ in range(n):
        B = _poly_pow(_one_plus(A), d, n)
        A = np.concatenate([[0], B[:n]])
    R = np.concatenate([[0], _poly_pow(_one_plus(A), d + 1, n)[:n]])
    return [int(c) for c in R[1:]]


def _one_plus(a):
    b = a.copy()
    b[0] = b[0] + 1
    return b


def _poly_pow(a, k, n):
    out = np.zeros(n + 1, dtype=object)
    out[:] = 0
    out[0] = 1
    for _ in range(k):
        nxt = np.zeros(n + 1, dtype=object)
        nxt[:] = 0
        for i in range(n + 1):
            if out[i]:
                for j in range(n + 1 - i):
                    nxt[i + j] += out[i] * a[j]
        out = nxt
    return out


def entropy_bound(d, size):
    return (d + 1) ** (2 * (size - 1))


def attached_edges(geometry: BallGeometry, gamma):
    """All edges with at least one endpoint in ``gamma`` as sorted (parent, child) pairs."""
    edges = set()
    for v in gamma:
        v = int(v)
        if v != 0:
            edges.add((geometry.parent(v), v))
        for c in geometry.children(v):
            edges.add((v, int(c)))
    return sorted(edges)


def broken_bonds(window: ConfigWindow, edge_set):
    """Number of edges in ``edge_set`` whose endpoint spins differ."""
    edges = np.asarray(edge_set, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return np.zeros(window.spins.shape[:-1], dtype=np.int64) if window.spins.ndim > 1 else 0
    a = window.spin(edges[:, 0])
    b = window.spin(edges[:, 1])
    out = (a != b).sum(axis=-1)
    return out if np.ndim(out) else int(out)


# ---------------------------------------------------------------------------
# sparse branch volumes


@dataclass(frozen=True)
class BranchPlan:
    spacings: tuple
    n: int
    depths: tuple
    vertices: tuple
    branch: tuple = ()  # child index taken at each level; () means leftmost

    @property
    def size(self):
        return len(self.vertices)

    @property
    def total_depth(self):
        return self.depths[-1] if self.depths else 0

    def prefix(self, m):
        """The first m^2 vertices (the volume for index m)."""
        return self.vertices[: m * m]


def default_spacing(i):
    """Geometric default r_i = 2^ceil(i/4), i >= 1."""
    return 2 ** (-(-i // 4))


def branch_plan(r, n, geometry: BallGeometry | None = None, start_depth=0, branch=()):
    """``n**2`` vertices on one ray with gaps ``r_1, r_2, ...``.

    ``r`` is a sequence or a callable ``i -> r_i``; ``branch`` optionally lists
    the child index to take at each level (missing levels take child 0).
    """
    if n < 0:
        raise GeometryError("n must be >= 0")
    count = n * n
    gaps = [int(r(i) if callable(r) else r[i - 1]) for i in range(1, count)]
    if any(g <= 0 for g in gaps):
        raise GeometryError("spacings must be positive")
    depths = [start_depth] if count else []
    for g in gaps:
        depths.append(depths[-1] + g)
    if geometry is None:
        geometry = BallGeometry(2)
    if geometry.depth is not None and depths and depths[-1] > geometry.depth:
        raise GeometryError(f"plan reaches depth {depths[-1]} beyond ball depth {geometry.depth}")
    verts = [ray_vertex(geometry, k, branch) for k in depths]
    return BranchPlan(tuple(gaps), n, tuple(depths), tuple(verts), tuple(branch))


def ray_vertex(geometry: BallGeometry, k, branch=()):
    v = 0
    for lvl in range(k):
        c = branch[lvl] if lvl < len(branch) else 0
        v = geometry.child(v, c)
    return v
