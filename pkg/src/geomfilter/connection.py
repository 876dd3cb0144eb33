"""Induced semi-connections, horizontal/vertical decomposition and path lifting.

For B on N lying over a cohesive A on M through p, the horizontal lift of
v in E_x = image(sigma^A(x)) at u (with p(u) = x) is

    h_u(v) = sigma^B(u) Tp(u)^T (sigma^A(x))^+ v,

using the minimal-norm preimage.  A^H is the lift of a Hormander form of A
through h, and B^V = B - A^H is the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (DriftDefectNotInE, Explosion, FactorizationMismatch, NotAboveStart, NotCohesive,
                     NotIntertwined, PathLeavesE, ValidationError, VNotInE)
from .geometry import PointPath, SmoothMap, jacobian_fd
from .linalg import image_projector_sym, numerical_rank, pinv, pinv_sym
from .operators import (DiffusionOperator, HormanderForm, Report, apply, cohesive_check, eta, from_hormander,
                        function_battery, compose, is_over)
from .simulate import NORM_CAP, sqrt_psd


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


@dataclass(frozen=True)
class SemiConnection:
    """Horizontal lift map induced by B over A through p."""

    B: DiffusionOperator
    A: DiffusionOperator
    p: SmoothMap

    def lift_matrix(self, u) -> np.ndarray:
        """h_u as a (dim N x dim M) matrix; batched over leading axes of u."""
        u = np.asarray(u, dtype=float)
        J = self.p.jacobian(u)
        SA = self.A.symbol(self.p(u))
        return self.B.symbol(u) @ np.swapaxes(J, -1, -2) @ pinv_sym(SA)

    def E_projector(self, x) -> np.ndarray:
        return image_projector_sym(self.A.symbol(x))

    def rank_at(self, x) -> int:
        return int(numerical_rank(self.A.symbol(x)))

    def horizontal_lift(self, u, v, tol: float = 1e-8) -> np.ndarray:
        return horizontal_lift(self, u, v, tol)


def horizontal_lift(conn: SemiConnection, u, v, tol: float = 1e-8) -> np.ndarray:
    """h_u(v); raises VNotInE unless v lies in E_{p(u)} (relative residual tol)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    P = conn.E_projector(conn.p(u))
    res = np.linalg.norm(v - _mv(P, v), axis=-1) / np.maximum(1.0, np.linalg.norm(v, axis=-1))
    if np.any(res > tol):
        raise VNotInE(f"vector is not in the image of the base symbol (residual {float(np.max(res)):.3e})")
    return _mv(conn.lift_matrix(u), v)


def lift_via_factorization(Xt: HormanderForm, X: HormanderForm, p: SmoothMap, u, tol: float = 1e-8) -> np.ndarray:
    """Lift matrix X~(u) l_u Y(p(u)) with Y the pseudo-inverse of X and l_u = Y X."""
    u = np.asarray(u, dtype=float)
    Xtu = Xt.fields(u)
    Xx = X.fields(p(u))
    J = p.jacobian(u)
    mismatch = float(np.max(np.abs(J @ Xtu - Xx)))
    if mismatch > tol * max(1.0, float(np.max(np.abs(Xx)))):
        raise FactorizationMismatch(f"Tp X~ differs from X o p by {mismatch:.3e}")
    Y = pinv(Xx)
    ell = Y @ Xx
    return Xtu @ ell @ Y


def hormander_of(A: DiffusionOperator) -> HormanderForm:
    """Hormander form of A with X = sqrt(a) (so 2 sigma = X X^T) and the matching drift."""

    def X(x):
        return sqrt_psd(A.a(x))

    def X0(x):
        x = np.asarray(x, dtype=float)
        dX = jacobian_fd(X, x)
        return np.asarray(A.b(x), dtype=float) - 0.5 * np.einsum("...ijk,...kj->...i", dX, X(x))

    return HormanderForm(A.space, X, X0, name=f"sqrt({A.name})")


@dataclass(frozen=True)
class Decomposition:
    """B = A^H + B^V with the lifted Hormander data used to build A^H."""

    B: DiffusionOperator
    AH: DiffusionOperator
    BV: DiffusionOperator
    conn: SemiConnection
    horizontal: HormanderForm
    base: HormanderForm

    def vertical_noise(self, u) -> np.ndarray:
        return sqrt_psd(self.BV.a(u), tol=1e-8)

    def vertical_drift(self, u) -> np.ndarray:
        return np.asarray(self.BV.b(u), dtype=float)

    def check(self, samples, tol: float = 1e-8) -> Report:
        return check_decomposition(self, samples, tol)


def decompose(B: DiffusionOperator, A: DiffusionOperator, p: SmoothMap, samples, check: bool = True,
              over_tol: float = 1e-6) -> Decomposition:
    """Split B over the cohesive A into its horizontal lift A^H and vertical part B^V."""
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    if check:
        rep = cohesive_check(A, p(U))
        if not rep.passed:
            raise NotCohesive(f"base operator is not cohesive on the samples: {rep.details}")
        rep = is_over(B, A, p, U, tol=over_tol)
        if not rep.passed:
            raise NotIntertwined(f"B does not lie over A (residual {rep.residual_max:.3e})")
    conn = SemiConnection(B, A, p)
    base = hormander_of(A)

    def Xt(u):
        u = np.asarray(u, dtype=float)
        return conn.lift_matrix(u) @ base.fields(p(u))

    def X0t(u):
        u = np.asarray(u, dtype=float)
        return _mv(conn.lift_matrix(u), base.drift(p(u)))

    horizontal = HormanderForm(B.space, Xt, X0t, name=f"lift({A.name})")
    AH = from_hormander(horizontal)
    AH = DiffusionOperator(B.space, AH.a, AH.b, f"{A.name}^H")
    BV = DiffusionOperator(B.space, lambda u: B.a(u) - AH.a(u), lambda u: B.b(u) - AH.b(u), f"{B.name}^V")
    return Decomposition(B, AH, BV, conn, horizontal, base)


def check_decomposition(dec: Decomposition, samples, tol: float = 1e-8) -> Report:
    """B^V PSD and vertical (B^V(f o p) = 0), and A^H lies over A."""
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    aV = np.asarray(dec.BV.a(U))
    mineig = float(np.min(np.linalg.eigvalsh(0.5 * (aV + np.swapaxes(aV, -1, -2)))))
    vert = 0.0
    for f in function_battery(dec.conn.A.space):
        g = compose(f, dec.conn.p)
        vert = max(vert, float(np.max(np.abs(apply(dec.BV, g.f, U, grad=g.grad)))))
    over = is_over(dec.AH, dec.conn.A, dec.conn.p, U, tol=1e-6)
    res = max(vert, max(0.0, -mineig))
    ok = res < max(tol, 1e-6) and over.passed
    return Report("decomposition", res, max(tol, 1e-6), ok, len(U),
                  {"min_eig_BV": mineig, "vertical_residual": vert, "AH_over_A": over.residual_max})


def lift_path(conn: SemiConnection, sigma: PointPath, u0, mode: str = "ode", tol_start: float = 1e-8,
              tol_E: float = 1e-6) -> PointPath:
    """Horizontal lift of a sampled base path starting at u0.

    ``ode``: the path is interpolated piecewise linearly and each segment is
    integrated with one classical Runge-Kutta step at the segment velocity.
    ``stratonovich``: Heun (midpoint-trapezoid) rule on the increments.
    u0 may carry a leading batch axis.
    """
    u = np.array(u0, dtype=float)
    M = conn.p.codomain
    start_gap = np.linalg.norm(M.displacement(conn.p(u), sigma.points[0]), axis=-1)
    if np.any(start_gap > tol_start):
        raise NotAboveStart(f"p(u0) is {float(np.max(start_gap)):.3e} away from the path start")
    pts = sigma.points
    incs = M.displacement(pts[:-1], pts[1:])
    P = conn.E_projector(pts[:-1] + 0.5 * incs)
    norms = np.linalg.norm(incs, axis=-1)
    leak = np.linalg.norm(incs - _mv(P, incs), axis=-1) / np.maximum(norms, 1e-300)
    bad = np.nonzero((norms > 0) & (leak > tol_E))[0]
    if bad.size:
        raise PathLeavesE(f"path increment {int(bad[0])} leaves E (relative residual {float(leak[bad[0]]):.3e})")
    out = [u.copy()]
    for k in range(len(sigma) - 1):
        ds = incs[k]
        if mode == "ode":
            def F(y):
                return _mv(conn.lift_matrix(y), ds)
            k1 = F(u)
            k2 = F(u + 0.5 * k1)
            k3 = F(u + 0.5 * k2)
            k4 = F(u + k3)
            u = u + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        elif mode == "stratonovich":
            h0 = _mv(conn.lift_matrix(u), ds)
            h1 = _mv(conn.lift_matrix(u + h0), ds)
            u = u + 0.5 * (h0 + h1)
        else:
            raise ValidationError(f"unknown lift mode {mode!r}")
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > NORM_CAP:
            raise Explosion("lifted path exceeded the norm cap 1e8")
        out.append(u.copy())
    return PointPath(sigma.times, np.array(out), {"mode": mode})


@dataclass(frozen=True)
class DescendData:
    """Drift defect b (a section along p of TM) and its horizontal lift b^H."""

    b: Callable
    bH: Callable
    report: Report


def descends(B: DiffusionOperator, p: SmoothMap, A_choice: DiffusionOperator, samples, tol: float = 1e-8,
             over_tol: float = 1e-6) -> DescendData:
    """Recover b(u) = B(x_k o p)(u) - (A x_k)(p(u)) and b^H = h(b); check B - b^H lies over A."""
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    eta_res = float(np.max(np.abs(eta(B, p, U) - A_choice.symbol(p(U)))))
    if eta_res > 1e-8:
        raise ValidationError(f"the chosen base symbol differs from Tp sigma^B Tp^T by {eta_res:.3e}")
    conn = SemiConnection(B, A_choice, p)
    dM = p.codomain.dim

    def b(u):
        u = np.asarray(u, dtype=float)
        vals = []
        for k in range(dM):
            def coord(y, k=k):
                return p.raw(y)[..., k]

            def coord_grad(y, k=k):
                return p.jacobian(y)[..., k, :]
            vals.append(apply(B, coord, u, grad=coord_grad if p.jac is not None else None))
        return np.stack(vals, axis=-1) - np.asarray(A_choice.b(p(u)), dtype=float)

    def bH(u):
        return _mv(conn.lift_matrix(u), b(u))

    bU = b(U)
    P = conn.E_projector(p(U))
    leak = float(np.max(np.linalg.norm(bU - _mv(P, bU), axis=-1) / np.maximum(1.0, np.linalg.norm(bU, axis=-1))))
    if leak > tol:
        raise DriftDefectNotInE(f"drift defect leaves E (residual {leak:.3e})")
    reduced = B.plus_drift(lambda u: -bH(u), name=f"{B.name}-bH")
    rep = is_over(reduced, A_choice, p, U, tol=over_tol)
    report = Report("descends", rep.residual_max, over_tol, rep.passed, len(U),
                    {"E_residual": leak, "eta_residual": eta_res})
    return DescendData(b, bH, report)
