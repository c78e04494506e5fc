"""Model data for ferromagnetic finite-spin models on the Cayley tree.

A model is a pair energy matrix ``u[i, j]`` (zero on the diagonal, strictly
positive off it) plus a single-site field ``psi``.  Everything downstream
works with the transfer matrix

    Q(i, j) = exp(-beta * (u[i, j] + (psi[i] + psi[j]) / (d + 1)))

which splits the field evenly over the d+1 edges meeting at a site.

The closed-form constants of the low-temperature analysis live here too:
the broken-bond threshold ``delta0``, the thermal error ``epsilon1(beta)``,
the large-deviation rate ``lambda(p1)`` for bad contours and the resulting
bad-site bound ``epsilon2(p1)``.  The error terms are returned as exact
geometric-series sums; a divergent series is reported as ``math.inf``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar


class ModelError(ValueError):
    """Invalid model parameters."""


def cyclic_distance(i, j, q):
    k = np.abs(np.asarray(i) - np.asarray(j)) % q
    return np.minimum(k, q - k)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Spin count ``q``, branching ``d``, inverse temperature and energies.

    ``clock_flag`` may be left as ``None`` to have it detected from the pair
    energy; passing ``True`` for a non-clock matrix raises.
    """

    q: int
    d: int
    beta: float
    pair_energy: np.ndarray
    field: np.ndarray = None
    clock_flag: bool | None = None

    def __post_init__(self):
        q, d = int(self.q), int(self.d)
        if q < 2:
            raise ModelError(f"q must be >= 2, got {self.q}")
        if d < 2:
            raise ModelError(f"d must be >= 2, got {self.d}")
        beta = float(self.beta)
        if not (beta > 0 and math.isfinite(beta)):
            raise ModelError(f"beta must be a positive finite number, got {self.beta}")
        u = np.array(self.pair_energy, dtype=float)
        if u.shape != (q, q):
            raise ModelError(f"pair_energy must be {q}x{q}, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ModelError("pair_energy has non-finite entries")
        if np.any(np.diag(u) != 0):
            raise ModelError("pair_energy must vanish on the diagonal")
        if not np.allclose(u, u.T, rtol=0, atol=1e-14):
            raise ModelError("pair_energy must be symmetric")
        off = u[~np.eye(q, dtype=bool)]
        if off.min() <= 0:
            raise ModelError("off-diagonal pair energies must be strictly positive")
        psi = np.zeros(q) if self.field is None else np.array(self.field, dtype=float)
        if psi.shape != (q,) or not np.all(np.isfinite(psi)):
            raise ModelError(f"field must be a finite vector of length {q}")
        is_clock = _is_clock(u)
        flag = is_clock if self.clock_flag is None else bool(self.clock_flag)
        if flag and not is_clock:
            raise ModelError("clock_flag set but pair_energy is not a function of cyclic distance")
        u.setflags(write=False)
        psi.setflags(write=False)
        for name, value in (("q", q), ("d", d), ("beta", beta), ("pair_energy", u),
                            ("field", psi), ("clock_flag", flag)):
            object.__setattr__(self, name, value)

    # -- constructors --------------------------------------------------------
    @classmethod
    def potts(cls, q, d, beta, field=None):
        u = 1.0 - np.eye(q)
        return cls(q, d, beta, u, field)

    @classmethod
    def clock(cls, q, d, beta, ubar, field=None):
        """Clock model with ``u[i, j] = ubar[dist(i, j)]``, ``ubar[0] == 0``."""
        ubar = np.asarray(ubar, dtype=float)
        if ubar.shape != (q // 2 + 1,):
            raise ModelError(f"ubar needs {q // 2 + 1} entries (distances 0..{q // 2})")
        idx = np.arange(q)
        u = ubar[cyclic_distance(idx[:, None], idx[None, :], q)]
        return cls(q, d, beta, u, field)

    def replace(self, **changes):
        kw = dict(q=self.q, d=self.d, beta=self.beta, pair_energy=self.pair_energy,
                  field=self.field, clock_flag=None)
        kw.update(changes)
        return ModelSpec(**kw)

    # -- derived quantities --------------------------------------------------
    @property
    def u(self):
        return float(self.pair_energy[~np.eye(self.q, dtype=bool)].min())

    @property
    def U(self):
        return float(self.pair_energy.max())

    @property
    def field_norm(self):
        return float(np.abs(self.field).max())

    @property
    def has_field(self):
        return bool(np.any(self.field != 0))

    @property
    def field_bound(self):
        return self.u * (self.d - 1) / 8

    @property
    def central_admissible(self):
        """Whether the field respects ``max|psi| <= u (d-1) / 8``."""
        return self.field_norm <= self.field_bound

    # -- serialization -------------------------------------------------------
    def to_dict(self):
        return {
            "q": self.q,
            "d": self.d,
            "beta": self.beta,
            "pair_energy": self.pair_energy.tolist(),
            "field": self.field.tolist(),
            "clock_flag": self.clock_flag,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        model = data.pop("model", None)
        if model is not None:
            data = dict(model)
        try:
            q, d, beta = int(data["q"]), int(data["d"]), float(data["beta"])
        except KeyError as exc:
            raise ModelError(f"missing model key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ModelError(str(exc)) from None
        pair = data.get("pair_energy", "potts")
        if isinstance(pair, str):
            if pair != "potts":
                raise ModelError(f"unknown pair_energy preset {pair!r}")
            pair = 1.0 - np.eye(q)
        return cls(q, d, beta, pair, data.get("field"), data.get("clock_flag"))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _is_clock(u):
    q = u.shape[0]
    idx = np.arange(q)
    dist = cyclic_distance(idx[:, None], idx[None, :], q)
    for k in range(q // 2 + 1):
        vals = u[dist == k]
        if vals.size and np.ptp(vals) > 1e-14:
            return False
    return True


def ising_to_potts_beta(beta_ising):
    """Potts-2 inverse temperature equivalent to an Ising coupling (J = 1).

    ``-s s' = 2 * 1{s != s'} - 1``, so ``beta_potts = 2 * beta_ising``.
    """
    return 2.0 * beta_ising


def potts_to_ising_beta(beta_potts):
    return beta_potts / 2.0


# ---------------------------------------------------------------------------
# transfer matrix


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    entries: np.ndarray
    norm1: float

    @property
    def q(self):
        return self.entries.shape[0]

    def normalized(self):
        return self.entries / self.norm1


def build_transfer(spec: ModelSpec, normalize=False) -> TransferMatrix:
    d, beta = spec.d, spec.beta
    psi = spec.field
    energy = spec.pair_energy + (psi[:, None] + psi[None, :]) / (d + 1)
    Q = np.exp(-beta * energy)
    # induced 1-norm; for a circulant reference this is its common row sum
    norm1 = float(Q.sum(axis=0).max())
    if normalize:
        Q = Q / norm1
    Q.setflags(write=False)
    return TransferMatrix(Q, norm1)


# ---------------------------------------------------------------------------
# constants and bounds


@dataclass
class BoundsReport:
    delta0: float
    epsilon1: float | None = None
    p1: float | None = None
    lambda_p1: float | None = None
    epsilon2: float | None = None
    eig_lower: float | None = None
    gap_condition: bool | None = None
    lambda_entropy_form: float | None = None
    lambda_closed_form_agrees: bool | None = None

    @property
    def epsilon1_vacuous(self):
        return self.epsilon1 is None or not self.epsilon1 < 1

    @property
    def epsilon2_vacuous(self):
        return self.epsilon2 is None or not self.epsilon2 < 1

    def to_dict(self):
        out = {}
        for key, val in self.__dict__.items():
            if isinstance(val, float) and not math.isfinite(val):
                val = None
            out[key] = val
        out["epsilon1_vacuous"] = self.epsilon1_vacuous
        out["epsilon2_vacuous"] = self.epsilon2_vacuous
        return out


def delta0(spec: ModelSpec) -> float:
    return 0.5 * (spec.d - 1) * spec.u / (spec.u + spec.U)


def constants(spec: ModelSpec) -> BoundsReport:
    return BoundsReport(delta0=delta0(spec))


def _entropy_series(q, d, x):
    """sum_{l>=1} (d+1)^{2(l-1)} (q-1)^l x^l, or inf when divergent."""
    ratio = (d + 1) ** 2 * (q - 1) * x
    if not ratio < 1:
        return math.inf
    return (q - 1) * x / (1 - ratio)


def epsilon1(spec: ModelSpec) -> float:
    """Thermal error term: entropy series at activity exp(-beta (d-1) u / 4)."""
    x = math.exp(-spec.beta * (spec.d - 1) * spec.u / 4)
    return _entropy_series(spec.q, spec.d, x)


def _chernoff_log(t, p1, d, delta):
    # log of exp(-t delta) (p1 e^t + 1 - p1)^(d+1)
    return -t * delta + (d + 1) * np.logaddexp(math.log(p1) + t, math.log1p(-p1))


def lambda_of_p1(p1, spec: ModelSpec) -> float:
    """Large-deviation rate of bad contours, by numeric minimization over t >= 0."""
    if not 0 < p1 < 1:
        raise ModelError(f"p1 must lie in (0, 1), got {p1}")
    d, delta = spec.d, delta0(spec)
    t_hi = max(1.0, math.log(1 / p1) + 5.0)
    res = minimize_scalar(_chernoff_log, bounds=(0.0, t_hi), args=(p1, d, delta),
                          method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    best = min(float(res.fun), 0.0)  # t = 0 gives exactly 0
    return max(-best, 0.0)


def lambda_closed_forms(p1, spec: ModelSpec):
    """Two closed forms for lambda(p1), for comparison with the numeric value.

    ``stationary`` evaluates the objective at its interior critical point
    ``p1 e^t = (1 - p1) delta0 / (d + 1 - delta0)`` (clamped to t >= 0);
    ``entropy`` is the relative-entropy style expression
    ``(p1/delta0)^delta0 ((1-p1)/(d+1-delta0))^(1-delta0)``.
    """
    d, delta = spec.d, delta0(spec)
    t_star = math.log(delta * (1 - p1) / (p1 * (d + 1 - delta)))
    t_star = max(t_star, 0.0)
    stationary = -float(_chernoff_log(t_star, p1, d, delta))
    entropy = -(delta * math.log(p1 / delta) + (1 - delta) * math.log((1 - p1) / (d + 1 - delta)))
    return {"t_star": t_star, "stationary": stationary, "entropy": entropy}


def epsilon2_from_lambda(spec: ModelSpec, lam) -> float:
    return _entropy_series(spec.q, spec.d, math.exp(-lam))


def epsilon2(spec: ModelSpec, p1) -> float:
    return epsilon2_from_lambda(spec, lambda_of_p1(p1, spec))


# ---------------------------------------------------------------------------
# spectrum of the reference clock model


@dataclass
class EigenReport:
    eigenvalues: np.ndarray  # from the DFT, sorted descending
    dense_eigenvalues: np.ndarray
    lower_bound: float
    bound_meaningful: bool
    gap_condition: bool
    min_distance_to_inv_d: float

    def to_dict(self):
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "lower_bound": self.lower_bound,
            "bound_meaningful": self.bound_meaningful,
            "gap_condition": self.gap_condition,
            "min_distance_to_inv_d": self.min_distance_to_inv_d,
        }


def reference_transfer(spec: ModelSpec) -> np.ndarray:
    """Field-free clock transfer matrix with unit row sums."""
    Q0 = np.exp(-spec.beta * spec.pair_energy)
    return Q0 / Q0.sum(axis=1)[0]


def eigen_report(spec: ModelSpec) -> EigenReport:
    if not spec.clock_flag:
        raise ModelError("eigen_report needs a clock model (circulant transfer matrix)")
    Q0 = reference_transfer(spec)
    spectrum = np.fft.fft(Q0[0])
    if np.abs(spectrum.imag).max() > 1e-12:
        raise ModelError("circulant spectrum is not real; pair energy not symmetric")
    eig = np.sort(spectrum.real)[::-1]
    dense = np.sort(np.linalg.eigvalsh(Q0))[::-1]
    s = (spec.q - 1) * math.exp(-spec.beta * spec.u)
    bound = (1 - s) / (1 + s)
    gap = (spec.d - 1) / (spec.d + 1) > s
    return EigenReport(eig, dense, bound, s < 1, gap, float(np.abs(eig - 1 / spec.d).min()))


def bounds_report(spec: ModelSpec, p1=None) -> BoundsReport:
    """Fill every bound; ``p1`` defaults to the field-free reference chain's value."""
    rep = constants(spec)
    rep.epsilon1 = epsilon1(spec)
    if p1 is None:
        Q0 = reference_transfer(spec) if spec.clock_flag else None
        if Q0 is not None:
            p1 = float(1 - Q0[0, 0])
    if p1 is not None:
        rep.p1 = float(p1)
        rep.lambda_p1 = lambda_of_p1(p1, spec)
        rep.epsilon2 = epsilon2_from_lambda(spec, rep.lambda_p1)
        closed = lambda_closed_forms(p1, spec)
        rep.lambda_entropy_form = closed["entropy"]
        rep.lambda_closed_form_agrees = bool(abs(closed["entropy"] - rep.lambda_p1) <= 1e-8 * max(1, rep.lambda_p1))
    if spec.clock_flag:
        eig = eigen_report(spec)
        rep.eig_lower = eig.lower_bound
        rep.gap_condition = eig.gap_condition
    return rep
