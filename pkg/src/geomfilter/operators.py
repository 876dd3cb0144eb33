"""Diffusion operators in local coordinates.

A diffusion operator is stored as the pair (a, b) acting by

    L f = 1/2 a^{ij} d_i d_j f + b^i d_i f,

so its symbol is a/2.  The first-order operator on one-forms associated with
L is

    delta^L(phi) = 1/2 a^{ij} d_i phi_j + b^i phi_i,

which satisfies delta^L(df) = L f identically in this convention.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .geometry import ChartSpace, SmoothMap, gradient, hessian, jacobian, jacobian_fd, sample_box
from .linalg import image_projector, numerical_rank, pinv, rank_cutoff


# --------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Outcome of a numerical check; serialises to the package JSON format."""

    check: str
    residual_max: float
    tolerance: float
    passed: bool
    samples: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "check": self.check,
            "residual_max": float(self.residual_max),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
            "samples": int(self.samples),
        }
        if self.details:
            out["details"] = _jsonable(self.details)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def __bool__(self):
        return bool(self.passed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class DiffusionOperator:
    """L = 1/2 a^{ij} d_i d_j + b^i d_i on a chart; a and b are batched callables."""

    space: ChartSpace
    a: Callable
    b: Callable
    name: str = ""

    @property
    def dim(self) -> int:
        return self.space.dim

    def symbol(self, x) -> np.ndarray:
        return 0.5 * np.asarray(self.a(np.asarray(x, dtype=float)), dtype=float)

    def apply(self, f: Callable, x, grad: Optional[Callable] = None, hess: Optional[Callable] = None):
        return apply(self, f, x, grad=grad, hess=hess)

    def __add__(self, other: "DiffusionOperator") -> "DiffusionOperator":
        return DiffusionOperator(self.space, lambda x: self.a(x) + other.a(x), lambda x: self.b(x) + other.b(x),
                                 f"({self.name}+{other.name})")

    def __sub__(self, other: "DiffusionOperator") -> "DiffusionOperator":
        return DiffusionOperator(self.space, lambda x: self.a(x) - other.a(x), lambda x: self.b(x) - other.b(x),
                                 f"({self.name}-{other.name})")

    def plus_drift(self, v: Callable, name: str = "") -> "DiffusionOperator":
        return DiffusionOperator(self.space, self.a, lambda x: self.b(x) + v(x), name or self.name)

    def check_invariants(self, samples, sym_tol: float = 1e-12, psd_tol: float = 1e-10) -> Report:
        A = np.asarray(self.a(np.asarray(samples, dtype=float)), dtype=float)
        asym = float(np.max(np.abs(A - np.swapaxes(A, -1, -2)))) if A.size else 0.0
        mineig = float(np.min(np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))))
        ok = asym < sym_tol and mineig >= -psd_tol
        return Report("diffusion_operator_invariants", max(asym, max(0.0, -mineig)), sym_tol, ok, len(A),
                      {"asymmetry": asym, "min_eigenvalue": mineig})


def constant_operator(space: ChartSpace, a, b=None, name: str = "") -> DiffusionOperator:
    a = np.asarray(a, dtype=float)
    b = np.zeros(space.dim) if b is None else np.asarray(b, dtype=float)

    def af(x):
        return np.broadcast_to(a, np.shape(x)[:-1] + a.shape).copy()

    def bf(x):
        return np.broadcast_to(b, np.shape(x)[:-1] + b.shape).copy()

    return DiffusionOperator(space, af, bf, name)


@dataclass(frozen=True)
class OneForm:
    space: ChartSpace
    phi: Callable

    def __call__(self, x):
        return np.asarray(self.phi(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class HormanderForm:
    """L = 1/2 sum_j L_{X^j} L_{X^j} + L_{X^0}.

    ``X`` maps points (..., d) to matrices (..., d, m) whose columns are the
    fields X^1..X^m; ``X0`` is the drift field.  ``dX`` optionally supplies
    the analytic derivative with shape (..., d, m, d), index order
    (component, field, direction).
    """

    space: ChartSpace
    X: Callable
    X0: Optional[Callable] = None
    dX: Optional[Callable] = None
    dX0: Optional[Callable] = None
    name: str = ""

    @property
    def dim(self) -> int:
        return self.space.dim

    def fields(self, x) -> np.ndarray:
        return np.asarray(self.X(np.asarray(x, dtype=float)), dtype=float)

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.X0 is None:
            return np.zeros(x.shape)
        return np.asarray(self.X0(x), dtype=float)

    def field_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dX is not None:
            return np.asarray(self.dX(x), dtype=float)
        return jacobian_fd(self.fields, x)

    def drift_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.X0 is None:
            return np.zeros(x.shape + (x.shape[-1],))
        if self.dX0 is not None:
            return np.asarray(self.dX0(x), dtype=float)
        return jacobian_fd(self.drift, x)

    def ito_drift(self, x) -> np.ndarray:
        """X^0 + 1/2 sum_j (DX^j) X^j."""
        x = np.asarray(x, dtype=float)
        X = self.fields(x)
        dX = self.field_derivative(x)
        d, m = X.shape[-2:]
        flat = np.matmul(dX.reshape(dX.shape[:-3] + (d, m * d)),
                         np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (m * d, 1)))[..., 0]
        return self.drift(x) + 0.5 * flat

    @property
    def noise_dim(self) -> int:
        return self.fields(np.zeros(self.dim) + 0.5).shape[-1]


def hormander_from_list(space: ChartSpace, fields: Sequence[Callable], drift: Optional[Callable] = None,
                        name: str = "") -> HormanderForm:
    """Build a Hormander form from a list of vector-field callables."""
    fields = list(fields)

    def X(x):
        return np.stack([np.asarray(f(x), dtype=float) for f in fields], axis=-1)

    return HormanderForm(space, X, drift, name=name)


def from_hormander(H: HormanderForm) -> DiffusionOperator:
    """Diffusion operator with a = X X^T and b = X^0 + 1/2 sum_j (DX^j) X^j."""

    def a(x):
        X = H.fields(x)
        return X @ np.swapaxes(X, -1, -2)

    return DiffusionOperator(H.space, a, H.ito_drift, H.name)


def symbol(L: DiffusionOperator) -> Callable:
    """The symbol as a matrix field x -> a(x)/2."""
    return L.symbol


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class ProbeFunction:
    """Scalar test function with analytic gradient (batched callables)."""


    name: str
    f: Callable
    grad: Callable
    hess: Optional[Callable] = None


def _monomial(alpha):
    alpha = np.asarray(alpha)
    d = len(alpha)

    def f(x):
        return np.prod(np.asarray(x, dtype=float) ** alpha, axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = []
        for i in range(d):
            if alpha[i] == 0:
                out.append(np.zeros(x.shape[:-1]))
                continue
            beta = alpha.copy()
            beta[i] -= 1
            out.append(alpha[i] * np.prod(x ** beta, axis=-1))
        return np.stack(out, axis=-1)

    def hess(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(d):
                beta = alpha.copy()
                c = float(beta[i])
                beta[i] -= 1
                c *= beta[j]
                beta[j] -= 1
                if c != 0.0:
                    H[..., i, j] = c * np.prod(x ** beta, axis=-1)
        return H

    name = "x^" + "".join(str(int(k)) for k in alpha)
    return ProbeFunction(name, f, grad, hess)


def _trig(i, d, kind, freq=1.0):
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.sin(freq * x[..., i]) if kind == "sin" else np.cos(freq * x[..., i])

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        g[..., i] = freq * (np.cos(freq * x[..., i]) if kind == "sin" else -np.sin(freq * x[..., i]))
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape + (d,))
        H[..., i, i] = -freq**2 * f(x)
        return H

    return ProbeFunction(f"{kind}(x{i})", f, grad, hess)


def function_battery(space: ChartSpace, max_degree: int = 3) -> List[ProbeFunction]:
    """Coordinate monomials of degree 1..max_degree plus sin and cos of each coordinate.

    Periodic coordinates only enter through sin/cos of the matching frequency.
    """
    d = space.dim
    periodic = [p is not None for p in space.periods]
    out = []
    for alpha in itertools.product(range(max_degree + 1), repeat=d):
        deg = sum(alpha)
        if deg == 0 or deg > max_degree:
            continue
        if any(periodic[i] and alpha[i] > 0 for i in range(d)):
            continue
        out.append(_monomial(alpha))
    for i in range(d):
        freq = 1.0 if space.periods[i] is None else 2 * np.pi / space.periods[i]
        out.append(_trig(i, d, "sin", freq))
        out.append(_trig(i, d, "cos", freq))
    return out




def compose(f: ProbeFunction, p: SmoothMap) -> ProbeFunction:
    """f o p using the unwrapped chart expression of p (local identity)."""

    def g(u):
        return f.f(p.raw(u))

    grad = None
    if p.jac is not None:
        def grad(u):
            J = p.jacobian(u)
            return np.einsum("...ij,...i->...j", J, f.grad(p.raw(u)))
    return ProbeFunction(f"{f.name}o{p.name}", g, grad)


# --------------------------------------------------------------------------
# operations


def apply(L: DiffusionOperator, f: Callable, x, grad: Optional[Callable] = None, hess: Optional[Callable] = None):
    """L f(x) = 1/2 a^{ij} d_i d_j f + b^i d_i f.

    Derivatives come from the supplied ``grad``/``hess`` when given and from
    central differences otherwise.
    """
    if isinstance(f, ProbeFunction):
        grad = grad or f.grad
        hess = hess or f.hess
        f = f.f
    x = np.asarray(x, dtype=float)
    g = grad(x) if grad is not None else gradient(f, x)
    H = hess(x) if hess is not None else hessian(f, x, grad)
    a = np.asarray(L.a(x), dtype=float)
    b = np.asarray(L.b(x), dtype=float)
    return 0.5 * np.einsum("...ij,...ij->...", a, H) + np.einsum("...i,...i->...", b, g)


def delta(L: DiffusionOperator, phi, x):
    """delta^L(phi)(x) = 1/2 a^{ij} d_i phi_j + b^i phi_i."""
    fn = phi.phi if isinstance(phi, OneForm) else phi
    x = np.asarray(x, dtype=float)
    J = jacobian_fd(fn, x)  # J[..., j, i] = d_i phi_j
    a = np.asarray(L.a(x), dtype=float)
    return 0.5 * np.einsum("...ij,...ji->...", a, J) + np.einsum("...i,...i->...", L.b(x), fn(x))


def _points(samples):
    return np.atleast_2d(np.asarray(samples, dtype=float))


def is_over(B: DiffusionOperator, A: DiffusionOperator, p: SmoothMap, samples, tol: float = 1e-6,
            battery: Optional[List[ProbeFunction]] = None) -> Report:
    """Check the intertwining B(f o p) = (A f) o p on a test battery.

    The scalar residual is |B(f o p)(u) - A f(p(u))| / max(1, |A f(p(u))|).
    The symbol diagram Tp sigma^B Tp^T = sigma^A o p is checked at the same
    points; the reported residual is the larger of the two.
    """
    U = _points(samples)
    battery = battery or function_battery(A.space)
    X = p.raw(U)
    worst, worst_name = 0.0, ""
    for f in battery:
        g = compose(f, p)
        lhs = apply(B, g.f, U, grad=g.grad)
        rhs = apply(A, f, X)
        r = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
        if r > worst:
            worst, worst_name = r, f.name
    J = p.jacobian(U)
    lhs = J @ B.symbol(U) @ np.swapaxes(J, -1, -2)
    sym_res = float(np.max(np.abs(lhs - A.symbol(X))))
    res = max(worst, sym_res)
    return Report("is_over", res, tol, res < tol, len(U),
                  {"scalar_residual": worst, "worst_function": worst_name, "symbol_residual": sym_res})


def projectible_symbol_check(B: DiffusionOperator, p: SmoothMap, fiber_samples, tol: float = 1e-8) -> Report:
    """eta(u) = Tp sigma^B Tp^T must be constant along each fibre group."""
    dev, count = 0.0, 0
    for group in fiber_samples:
        U = _points(group)
        J = p.jacobian(U)
        eta = J @ B.symbol(U) @ np.swapaxes(J, -1, -2)
        dev = max(dev, float(np.max(np.abs(eta - eta[0]))))
        count += len(U)
    return Report("projectible_symbol", dev, tol, dev < tol, count)


def eta(B: DiffusionOperator, p: SmoothMap, u) -> np.ndarray:
    J = p.jacobian(u)
    return J @ B.symbol(u) @ np.swapaxes(J, -1, -2)


def cohesive_check(A: DiffusionOperator, samples, tol: float = 1e-8) -> Report:
    """Constant nonzero rank of sigma^A and drift inside its image."""
    X = _points(samples)
    S = A.symbol(X)
    ranks = numerical_rank(S)
    P = image_projector(S)
    b = np.asarray(A.b(X), dtype=float)
    resid = np.linalg.norm(b - np.einsum("...ij,...j->...i", P, b), axis=-1) / np.maximum(1.0, np.linalg.norm(b, axis=-1))
    rmax = float(np.max(resid))
    r0 = int(ranks[0])
    constant = bool(np.all(ranks == r0)) and r0 > 0
    return Report("cohesive", rmax, tol, constant and rmax < tol, len(X),
                  {"rank": r0, "rank_constant": constant, "ranks_seen": sorted(set(int(r) for r in ranks))})


@dataclass(frozen=True)
class Distribution:
    """A distribution given by spanning fields (..., d, r) or annihilating forms (..., s, d)."""

    space: ChartSpace
    spanning: Optional[Callable] = None
    annihilators: Optional[Callable] = None

    def annihilator_forms(self) -> Callable:
        """Smooth annihilating forms as rows; built as I - S S^+ when only spans are given."""
        if self.annihilators is not None:
            return self.annihilators
        d = self.space.dim

        def forms(x):
            S = np.asarray(self.spanning(x), dtype=float)
            return np.eye(d) - S @ pinv(S)

        return forms

    def consistency(self, samples) -> float:
        if self.spanning is None or self.annihilators is None:
            return 0.0
        X = _points(samples)
        return float(np.max(np.abs(self.annihilators(X) @ self.spanning(X))))


def along_distribution_check(L: DiffusionOperator, S: Distribution, samples, tol: float = 1e-8) -> Report:
    """L is along S when sigma^L maps annihilators into S and delta^L kills annihilators.

    Both conditions are evaluated; the residual is the larger of
    max |phi_k sigma^L phi_l| and max |delta^L phi_k| over annihilator forms.
    """
    X = _points(samples)
    forms = S.annihilator_forms()
    F = np.asarray(forms(X), dtype=float)
    sym_res = float(np.max(np.abs(F @ L.symbol(X) @ np.swapaxes(F, -1, -2)))) if F.size else 0.0
    del_res = 0.0
    for k in range(F.shape[-2]):
        val = delta(L, lambda y, k=k: np.asarray(forms(y), dtype=float)[..., k, :], X)
        del_res = max(del_res, float(np.max(np.abs(val))))
    res = max(sym_res, del_res)
    return Report("along_distribution", res, tol, res < tol, len(X),
                  {"symbol_residual": sym_res, "delta_residual": del_res})


def default_samples(space: ChartSpace, lo, hi, count: int = 50) -> np.ndarray:
    return sample_box(lo, hi, count)
