"""Monte Carlo estimates at finite depth.

Every replica ``r`` draws its randomness from keys derived from
``(seed, r)``, replicas are processed in fixed-size chunks, and per-replica
values are concatenated in replica order before any reduction.  Results are
therefore identical for any worker count.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .boundary_law import ChainKernel, central_kernel
from .exact_gibbs import ray_positions, ray_sample, upward
from .model import ModelSpec, bounds_report, build_transfer, delta0, epsilon1
from .sampler import LazyConfig, bad_indicators, broadcast_levels
from .tree import BallGeometry, BranchPlan, GeometryError, branch_plan, default_spacing, ray_vertex

log = logging.getLogger(__name__)

CHUNK = 128
MIN_SAMPLES = 1000
DEFAULT_L = 6
# stream for the conditional draw in mismatched mode
INTERIOR_PRIME = rng.INTERIOR + 8


@dataclass
class EstimatorReport:
    name: str
    estimate: float
    stderr: float
    N: int
    n: int | None
    seed: int
    L: int | None = None
    series: list = field(default_factory=list)  # [{"n":..., "estimate":..., "stderr":...}]
    extras: dict = field(default_factory=dict)

    @property
    def z(self):
        return self.estimate / self.stderr if self.stderr > 0 else math.inf * np.sign(self.estimate)

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class OverlapSeries:
    n_values: list
    sizes: list
    matched: list
    matched_se: list
    mismatched: list
    mismatched_se: list
    gap: list
    gap_se: list
    N: int
    seed: int
    plan: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))

    def rows(self):
        for i, m in enumerate(self.n_values):
            yield {"m": m, "size": self.sizes[i], "matched": self.matched[i],
                   "matched_se": self.matched_se[i], "mismatched": self.mismatched[i],
                   "mismatched_se": self.mismatched_se[i], "gap": self.gap[i], "gap_se": self.gap_se[i]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return float(x.mean()), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


# ---------------------------------------------------------------------------
# replica-parallel plumbing


def _chunks(N):
    return [(s, min(s + CHUNK, N)) for s in range(0, N, CHUNK)]


def run_replicas(task, args, N, workers=1):
    """Apply ``task(args, start, stop)`` to fixed chunks and merge in order.

    ``task`` returns a dict of arrays with the replica axis first.
    """
    chunks = _chunks(N)
    if workers <= 1 or len(chunks) == 1:
        parts = [task(args, s, e) for s, e in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(task, args, s, e) for s, e in chunks]
            parts = [f.result() for f in futs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _check_N(N):
    if N < MIN_SAMPLES:
        raise ValueError(f"N = {N} below the minimum of {MIN_SAMPLES} samples")


def _kernel(spec, kernel):
    return kernel if kernel is not None else central_kernel(spec)


def _sphere(kernel, d, n, keys, root_condition=None, stream=rng.BROADCAST, keep=()):
    """Spins on S_(n+1), plus spins at the requested (level, position) pairs."""
    kept = {}
    want = {}
    for lv, pos in keep:
        want.setdefault(lv, []).append(pos)
    last = None
    for k, s in broadcast_levels(kernel, d, n + 1, keys, root_condition, stream):
        if k in want:
            kept[k] = s[:, want[k]]
        last = s
    return last, kept


# ---------------------------------------------------------------------------
# reconstruction


def _recon_task(args, start, stop):
    spec, kernel, a, n, seed = args
    keys = rng.replica_keys(seed, np.arange(start, stop))
    boundary, _ = _sphere(kernel, spec.d, n, keys, root_condition=a)
    Q = build_transfer(spec).entries
    post = upward(Q, spec.d, n, boundary).root
    return {"pi": post[:, a]}


def estimate_reconstruction(spec: ModelSpec, a, n, N, seed, kernel: ChainKernel | None = None,
                            workers=1) -> EstimatorReport:
    """Mean over omega ~ mu(. | sigma_0 = a) of the exact finite-depth
    posterior pi_n(sigma_0 = a | omega on S_(n+1))."""
    _check_N(N)
    kernel = _kernel(spec, kernel)
    out = run_replicas(_recon_task, (spec, kernel, int(a), int(n), int(seed)), N, workers)
    pi = out["pi"]
    est, se = mean_se(pi)
    eps1 = epsilon1(spec)
    extras = {"spin": int(a), "epsilon1": eps1 if math.isfinite(eps1) else None}
    if math.isfinite(eps1) and eps1 < 1:
        frac, fse = mean_se(pi <= 1 - eps1)
        extras.update(fraction_below=frac, fraction_below_se=fse)
    else:
        extras["bound"] = "bound vacuous at these parameters"
    return EstimatorReport("reconstruction", est, se, N, n, seed,
                           series=[{"n": n, "estimate": est, "stderr": se}], extras=extras)


# ---------------------------------------------------------------------------
# Edwards-Anderson parameter


def _qea_task(args, start, stop):
    spec, kernel, n, seed = args
    keys = rng.replica_keys(seed, np.arange(start, stop))
    boundary, kept = _sphere(kernel, spec.d, n, keys, keep=[(0, 0)])
    Q = build_transfer(spec).entries
    post = upward(Q, spec.d, n, boundary).root
    return {"pi": post, "root": kept[0][:, 0]}


def _jackknife_variance_mean(pi):
    """q^-1 sum_a sample variance of pi[:, a], with its delete-one jackknife stderr."""
    N = len(pi)
    s1 = pi.sum(axis=0)
    s2 = (pi ** 2).sum(axis=0)
    full = ((s2 - s1 ** 2 / N) / (N - 1)).mean()
    # leave-one-out variances in closed form
    l1 = s1[None, :] - pi
    l2 = s2[None, :] - pi ** 2
    loo = ((l2 - l1 ** 2 / (N - 1)) / (N - 2)).mean(axis=1)
    se = math.sqrt((N - 1) / N * ((loo - loo.mean()) ** 2).sum())
    return float(full), float(se)


def qea_from_samples(pi, root, marginal):
    """Per-replica values of q^-1 sum_a (pi_a - mu_a)(1{root = a} - mu_a).

    The broadcast root is an exact draw from pi(. | omega), so each term is an
    unbiased estimate of Var(pi_a); the noise vanishes with the signal.
    """
    q = pi.shape[1]
    onehot = np.eye(q)[root]
    return ((pi - marginal[None, :]) * (onehot - marginal[None, :])).sum(axis=1) / q


def estimate_qea(spec: ModelSpec, n, N, seed, kernel: ChainKernel | None = None, workers=1) -> EstimatorReport:
    """q_EA at depth n: q^-1 sum_a Var over omega ~ mu of pi_n(sigma_0 = a | omega).

    The point estimate uses the replica form (see :func:`qea_from_samples`).
    Also reported: the plain sample-variance form with jackknife stderr, and
    for field-free clock models the single-spin reduction Var(pi(sigma_0 = 0 | .)).
    """
    _check_N(N)
    kernel = _kernel(spec, kernel)
    out = run_replicas(_qea_task, (spec, kernel, int(n), int(seed)), N, workers)
    pi, root = out["pi"], out["root"]
    mu = kernel.marginal
    est, se = mean_se(qea_from_samples(pi, root, mu))
    sv, sv_se = _jackknife_variance_mean(pi)
    extras = {"sample_variance": sv, "sample_variance_jackknife_se": sv_se,
              "marginal": mu.tolist()}
    if spec.clock_flag and not spec.has_field:
        q = spec.q
        y = (pi[:, 0] - 1 / q) * ((root == 0) - 1 / q)
        c, cse = mean_se(y)
        extras.update(clock_reduction=c, clock_reduction_se=cse,
                      clock_reduction_agrees=bool(abs(c - est) <= 3 * math.hypot(se, cse)))
    return EstimatorReport("qea", est, se, N, n, seed, series=[{"n": n, "estimate": est, "stderr": se}],
                           extras=extras)


# ---------------------------------------------------------------------------
# branch overlaps


def default_plan(d, n, m=None, r=default_spacing, branch=()):
    """Largest branch plan with default spacing that fits in B_n (or exactly m)."""
    geom = BallGeometry(d, n)
    if m is not None:
        return branch_plan(r, m, geom, branch=branch)
    best = None
    for k in range(1, 64):
        try:
            best = branch_plan(r, k, geom, branch=branch)
        except GeometryError:
            break
    return best


def _overlap_task(args, start, stop):
    spec, kernel, n, plan_depths, branch, seed = args
    d = spec.d
    geom = BallGeometry(d, n)
    positions = ray_positions(geom, n, branch)
    keep = [(k, positions[k]) for k in plan_depths]
    keys = rng.replica_keys(seed, np.arange(start, stop))
    Q = build_transfer(spec).entries
    ray = [ray_vertex(geom, k, branch) for k in range(n + 1)]

    boundary, kept = _sphere(kernel, d, n, keys, keep=keep)
    omega = np.stack([kept[k][:, 0] for k in plan_depths], axis=1)

    msgs = upward(Q, d, n, boundary, positions)
    sigma = ray_sample(Q, msgs, rng.uniforms(keys, ray, rng.INTERIOR))[:, list(plan_depths)]

    prime, _ = _sphere(kernel, d, n, keys, stream=rng.PRIME)
    msgs_p = upward(Q, d, n, prime, positions)
    sigma_p = ray_sample(Q, msgs_p, rng.uniforms(keys, ray, INTERIOR_PRIME))[:, list(plan_depths)]
    return {"match": (sigma == omega), "mismatch": (sigma_p == omega)}


def estimate_overlap(spec: ModelSpec, plan: BranchPlan, n, N, seed, kernel: ChainKernel | None = None,
                     workers=1) -> OverlapSeries:
    """Matched and mismatched overlaps on the plan prefixes, with paired gap.

    Matched: sigma ~ pi_n(. | omega) compared with omega itself.  Mismatched:
    sigma' ~ pi_n(. | omega') for an independent omega', compared with omega.
    """
    _check_N(N)
    if plan.total_depth > n:
        raise GeometryError(f"plan reaches depth {plan.total_depth} beyond n = {n}")
    kernel = _kernel(spec, kernel)
    args = (spec, kernel, int(n), tuple(plan.depths), tuple(plan.branch), int(seed))
    out = run_replicas(_overlap_task, args, N, workers)
    match, mismatch = out["match"].astype(float), out["mismatch"].astype(float)
    ser = OverlapSeries([], [], [], [], [], [], [], [], N, seed,
                        plan={"depths": list(plan.depths), "spacings": list(plan.spacings),
                              "n": plan.n, "branch": list(plan.branch)})
    for m in range(1, plan.n + 1):
        k = m * m
        a = match[:, :k].mean(axis=1)
        b = mismatch[:, :k].mean(axis=1)
        for lst, val in ((ser.matched, mean_se(a)), (ser.mismatched, mean_se(b)), (ser.gap, mean_se(a - b))):
            lst.append(val[0])
        ser.n_values.append(m)
        ser.sizes.append(k)
        ser.matched_se.append(mean_se(a)[1])
        ser.mismatched_se.append(mean_se(b)[1])
        ser.gap_se.append(mean_se(a - b)[1])
    ser.extras["spacing_diagnostic"] = spacing_diagnostic(match)
    ser.extras["sum_mu_squared"] = float((kernel.marginal ** 2).sum())
    rep = bounds_report(spec, kernel.p1)
    total = rep.epsilon1 + rep.epsilon2
    ser.extras["concentration_bound"] = (1 - total) if total < 1 else "bound vacuous at these parameters"
    return ser


def spacing_diagnostic(match):
    """For each plan vertex i, S_i = sum_{j<i} c(v_j, v_i) with
    c = E[1{sigma_u != omega_u} 1{sigma_v != omega_v}], against the target i^-2."""
    miss = 1.0 - np.asarray(match, dtype=float)
    c = miss.T @ miss / len(miss)
    rows = []
    for i in range(1, c.shape[0]):
        s = float(c[i, :i].sum())
        target = (i + 1) ** -2.0
        rows.append({"i": i + 1, "sum_c": s, "target": target, "ok": s < target})
    return rows


# ---------------------------------------------------------------------------
# bad events


def _bad_task(args, start, stop):
    spec, kernel, vertices, Ls, seed = args
    keys = rng.replica_keys(seed, np.arange(start, stop))
    prov = LazyConfig(kernel, spec.d, keys)
    d0 = delta0(spec)
    out = {}
    for L in Ls:
        out[f"L{L}"] = np.stack([bad_indicators(prov, v, L, spec.d, d0) for v in vertices], axis=1)
    return out


def estimate_bad_rate(spec: ModelSpec, L, N, seed, kernel: ChainKernel | None = None, L_values=None,
                      plan_m=3, workers=1) -> EstimatorReport:
    """Frequency of the truncated bad event at a vertex at depth ``L`` on the
    leftmost ray, for every truncation in ``L_values`` (shared samples, so the
    series is monotone sample by sample).  Also reports branch averages of
    the indicator over the default-spacing plan prefixes."""
    _check_N(N)
    kernel = _kernel(spec, kernel)
    Ls = sorted(set(L_values or []) | {int(L)})
    geom = BallGeometry(spec.d)
    v0 = geom.ray(max(Ls))
    plan = branch_plan(default_spacing, plan_m, geom, start_depth=max(Ls) + 1)
    vertices = (v0,) + tuple(plan.vertices)
    out = run_replicas(_bad_task, (spec, kernel, vertices, tuple(Ls), int(seed)), N, workers)
    series = []
    for Lv in Ls:
        m, se = mean_se(out[f"L{Lv}"][:, 0])
        series.append({"L": Lv, "estimate": m, "stderr": se})
    est = next(s for s in series if s["L"] == L)
    ind = out[f"L{L}"][:, 1:].astype(float)
    branch = []
    for mm in range(1, plan_m + 1):
        k = mm * mm
        avg = ind[:, :k].mean(axis=1)
        m, se = mean_se(avg)
        branch.append({"size": k, "mean": m, "stderr": se, "variance": float(avg.var(ddof=1))})
    rep = bounds_report(spec, kernel.p1)
    extras = {"vertex": int(v0), "L_series": series, "branch_average": branch,
              "epsilon2": rep.epsilon2 if math.isfinite(rep.epsilon2) else None,
              "p1": kernel.p1}
    if rep.epsilon2_vacuous:
        extras["bound"] = "bound vacuous at these parameters"
    return EstimatorReport("bad_rate", est["estimate"], est["stderr"], N, None, seed, L=L, extras=extras)


def _cov_task(args, start, stop):
    spec, kernel, u, vs, L, seed = args
    keys = rng.replica_keys(seed, np.arange(start, stop))
    prov = LazyConfig(kernel, spec.d, keys)
    d0 = delta0(spec)
    bu = bad_indicators(prov, u, L, spec.d, d0)
    bv = np.stack([bad_indicators(prov, v, L, spec.d, d0) for v in vs], axis=1)
    return {"u": bu, "v": bv}


@dataclass
class CovDecay:
    distances: list
    cov: list
    stderr: list
    m_hat: float
    m_hat_se: float
    fitted_rate: float | None
    bound_rate: float
    N: int
    L: int
    seed: int
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))

    def rows(self):
        for d, c, s in zip(self.distances, self.cov, self.stderr):
            yield {"distance": d, "cov": c, "stderr": s}


def estimate_cov_decay(spec: ModelSpec, distances, L, N, seed, kernel: ChainKernel | None = None,
                       workers=1) -> CovDecay:
    """Cov(1_{B_u}, 1_{B_v}) for v at each distance below u on the leftmost ray.

    ``u`` sits at depth ``L`` so the contour neighbourhood of every vertex is
    a full ball.  The fitted rate comes from a weighted least-squares fit of
    log|Cov| on distance over the points resolved at 2 sigma.
    """
    _check_N(N)
    distances = [int(x) for x in distances]
    if any(x < 0 for x in distances):
        raise GeometryError("distances must be nonnegative")
    if max(distances) + L > 60:
        raise GeometryError("distance exceeds the supported depth")
    kernel = _kernel(spec, kernel)
    geom = BallGeometry(spec.d)
    u = geom.ray(L)
    vs = tuple(geom.ray(L + x) for x in distances)
    out = run_replicas(_cov_task, (spec, kernel, u, vs, int(L), int(seed)), N, workers)
    bu = out["u"].astype(float)
    bv = out["v"].astype(float)
    covs, ses = [], []
    for j in range(len(distances)):
        y = (bu - bu.mean()) * (bv[:, j] - bv[:, j].mean())
        c = float(y.sum() / (N - 1))
        covs.append(c)
        ses.append(float(y.std(ddof=1) / math.sqrt(N)))
    pooled = np.concatenate([bu, bv.ravel()])
    m_hat = float(pooled.mean())
    m_se = float(bu.std(ddof=1) / math.sqrt(N))
    fitted = _fit_rate(distances, covs, ses)
    rep = bounds_report(spec, kernel.p1)
    lam2 = abs(kernel.lambda2)
    bound = min(rep.lambda_p1 / 3, -math.log(lam2) if lam2 > 0 else math.inf)
    return CovDecay(distances, covs, ses, m_hat, m_se, fitted, bound, N, L, seed,
                    extras={"u": int(u), "v": [int(v) for v in vs], "lambda2": kernel.lambda2,
                            "lambda_p1": rep.lambda_p1})


def _fit_rate(x, c, se):
    x = np.asarray(x, dtype=float)
    c = np.abs(np.asarray(c))
    se = np.asarray(se)
    ok = (c > 2 * se) & (c > 0)
    if ok.sum() < 2:
        return None
    w = (c[ok] / se[ok]) ** 2  # var(log c) ~ (se / c)^2
    slope, _ = np.polyfit(x[ok], np.log(c[ok]), 1, w=np.sqrt(w))
    return float(-slope)


# ---------------------------------------------------------------------------
# depth sweeps


def depth_sweep(estimator, n_values, **kwargs) -> EstimatorReport:
    """Run ``estimator(n=..., **kwargs)`` over increasing depths with shared seeds.

    Successive deltas carry a conservative stderr (the two runs share seeds,
    so their errors are positively correlated); the series is flagged as not
    converged when the last delta exceeds three times its stderr.
    """
    n_values = [int(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("depths must be strictly increasing")
    reports = [estimator(n=n, **kwargs) for n in n_values]
    series = []
    for i, r in enumerate(reports):
        row = {"n": r.n, "estimate": r.estimate, "stderr": r.stderr}
        if i:
            prev = reports[i - 1]
            row["delta"] = r.estimate - prev.estimate
            row["delta_se"] = math.hypot(r.stderr, prev.stderr)
        series.append(row)
    last = reports[-1]
    converged = True
    if len(series) > 1:
        converged = abs(series[-1]["delta"]) <= 3 * series[-1]["delta_se"]
    extras = dict(last.extras)
    extras["converged"] = converged
    return EstimatorReport(last.name, last.estimate, last.stderr, last.N, last.n, last.seed, last.L,
                           series=series, extras=extras)
