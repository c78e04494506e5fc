"""Homogeneous boundary laws and the Markov chains they induce.

With ``x = u**(1/d)`` and the transfer matrix scaled so that the reference
clock matrix has unit row sums, a homogeneous boundary law solves

    F(x, Q) = x - Q @ x**d = 0.

The free state of a clock model is the constant solution.  A central state
is the solution continued from ``x = 1`` at the reference matrix ``Q0`` along
the straight segment ``Q0 -> Q`` with damped Newton steps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, ModelSpec, build_transfer, reference_transfer

log = logging.getLogger(__name__)


class HomotopyError(RuntimeError):
    """Continuation of the central boundary law failed."""


@dataclass
class BoundaryLaw:
    x: np.ndarray
    residual: float
    scale: float  # Q is divided by this before F is evaluated (c = 1 convention)
    d: int
    path: list = field(default_factory=list)  # (t, p1, lambda2) along the homotopy

    @property
    def law(self):
        """The boundary law ``u = x**d`` itself."""
        return self.x ** self.d


@dataclass
class ChainKernel:
    P: np.ndarray
    marginal: np.ndarray
    p1: float
    lambda2: float
    irreducible_aperiodic: bool

    @property
    def q(self):
        return self.P.shape[0]

    def to_dict(self):
        return {
            "P": self.P.tolist(),
            "marginal": self.marginal.tolist(),
            "p1": self.p1,
            "lambda2": self.lambda2,
            "irreducible_aperiodic": self.irreducible_aperiodic,
        }


def residual(x, Q, d):
    return x - Q @ x ** d


def _scaled_transfer(spec: ModelSpec, scale):
    return build_transfer(spec).entries / scale


def free_law(spec: ModelSpec) -> BoundaryLaw:
    if not spec.clock_flag or spec.has_field:
        raise ModelError("the free law needs a field-free clock model")
    scale = build_transfer(spec).norm1
    Q0 = _scaled_transfer(spec, scale)
    x = np.ones(spec.q)
    res = float(np.abs(residual(x, Q0, spec.d)).max())
    return BoundaryLaw(x, res, scale, spec.d)


def _newton(x, Q, d, tol, max_iter):
    """Damped Newton on F(., Q); step halving whenever the residual grows."""
    q = len(x)
    r = residual(x, Q, d)
    rn = np.abs(r).max()
    for it in range(max_iter):
        if rn <= tol:
            return x, rn, it
        J = np.eye(q) - d * Q * x[None, :] ** (d - 1)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise HomotopyError(_singular_message(Q, x, d)) from None
        if not np.all(np.isfinite(step)):
            raise HomotopyError(_singular_message(Q, x, d))
        alpha = 1.0
        for _ in range(40):
            x_new = x - alpha * step
            if np.all(x_new > 0):
                r_new = residual(x_new, Q, d)
                rn_new = np.abs(r_new).max()
                if rn_new < rn or rn_new <= tol:
                    break
            alpha *= 0.5
        else:
            raise HomotopyError(f"line search failed at residual {rn:.3e}")
        x, r, rn = x_new, r_new, rn_new
    if rn <= tol:
        return x, rn, max_iter
    raise HomotopyError(f"Newton did not converge in {max_iter} iterations (residual {rn:.3e})")


def _singular_message(Q, x, d):
    # J = I - M with M = d Q diag(x^{d-1}); report M's eigenvalue nearest 1
    M = d * Q * x[None, :] ** (d - 1)
    ev = np.linalg.eigvals(M)
    k = np.argmin(np.abs(ev - 1))
    return f"Jacobian singular: eigenvalue {ev[k]:.6g} of d*Q*diag(x^(d-1)) is close to 1"


def solve_central(spec: ModelSpec, reference: ModelSpec | None = None, steps=20,
                  max_iter=200, tol=1e-13, margin=1e-8) -> BoundaryLaw:
    """Central boundary law by homotopy from the constant law of ``reference``.

    ``reference`` defaults to ``spec`` with the field removed, which must then be
    a clock model.  Raises :class:`HomotopyError` on a singular Jacobian or when
    Newton fails to converge.
    """
    if reference is None:
        if not spec.clock_flag:
            raise ModelError("non-clock pair energy: pass an explicit clock reference")
        reference = spec.replace(field=np.zeros(spec.q))
    if not reference.clock_flag or reference.has_field:
        raise ModelError("reference must be a field-free clock model")
    if (reference.q, reference.d) != (spec.q, spec.d):
        raise ModelError("reference and target differ in q or d")
    d = spec.d
    scale = build_transfer(reference).norm1
    Q0 = _scaled_transfer(reference, scale)
    Q1 = _scaled_transfer(spec, scale)

    eig = np.linalg.eigvalsh(reference_transfer(reference))
    near = eig[np.argmin(np.abs(eig - 1 / d))]
    if abs(near - 1 / d) < margin:
        raise HomotopyError(f"reference eigenvalue {near:.6g} is within {margin:g} of 1/d")

    x = np.ones(spec.q)
    path = [(0.0,) + _diagnostics(Q0, x, d)]
    prev = x
    for t in np.linspace(0.0, 1.0, steps + 1)[1:]:
        Qt = Q0 + t * (Q1 - Q0)
        # secant predictor keeps Newton on the branch through x = 1
        guess = x + (x - prev) if len(path) > 1 else x
        if not np.all(guess > 0):
            guess = x
        prev = x
        x, res, _ = _newton(guess, Qt, d, tol, max_iter)
        path.append((float(t),) + _diagnostics(Qt, x, d))
    res = float(np.abs(residual(x, Q1, d)).max())
    if res > 1e-10:
        raise HomotopyError(f"final residual {res:.3e} exceeds 1e-10")
    return BoundaryLaw(x, res, scale, d, path)


def first_order_law(spec: ModelSpec, reference: ModelSpec | None = None):
    """Linearisation ``1 + (I - d Q0)^-1 (Q - Q0) 1`` of the central law around
    the constant law of the reference (both matrices in the reference scale)."""
    if reference is None:
        reference = spec.replace(field=np.zeros(spec.q))
    scale = build_transfer(reference).norm1
    Q0 = _scaled_transfer(reference, scale)
    Q1 = _scaled_transfer(spec, scale)
    one = np.ones(spec.q)
    return one + np.linalg.solve(np.eye(spec.q) - spec.d * Q0, (Q1 - Q0) @ one)


def _diagnostics(Q, x, d):
    kern = _kernel(Q, x, d)
    return kern.p1, kern.lambda2


def _kernel(Q, x, d):
    w = Q * x[None, :] ** d
    P = w / w.sum(axis=1, keepdims=True)
    pi = x ** (d + 1)
    pi = pi / pi.sum()
    q = len(x)
    p1 = float((1 - np.diag(P)).max())
    ev = np.linalg.eigvals(P)
    mods = np.sort(np.abs(ev))[::-1]
    lam2 = float(mods[1]) if q > 1 else 0.0
    return ChainKernel(P, pi, p1, lam2, bool(np.all(P > 0)))


def chain_from_law(spec: ModelSpec, law: BoundaryLaw) -> ChainKernel:
    Q = _scaled_transfer(spec, law.scale)
    return _kernel(Q, law.x, spec.d)


def central_kernel(spec: ModelSpec, reference: ModelSpec | None = None, **kw) -> ChainKernel:
    """Chain of the free state (field-free clock) or of the central state."""
    if spec.clock_flag and not spec.has_field and reference is None:
        return chain_from_law(spec, free_law(spec))
    return chain_from_law(spec, solve_central(spec, reference, **kw))


def p1_bound_check(spec: ModelSpec, kernel: ChainKernel) -> bool:
    """Free clock state: p1 <= (q - 1) exp(-beta u)."""
    bound = (spec.q - 1) * np.exp(-spec.beta * spec.u)
    return bool(kernel.p1 <= bound * (1 + 1e-12))
