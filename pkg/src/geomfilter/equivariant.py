"""Equivariant operators on principal bundles given in a local trivialisation.

The total space is stored as base coordinates followed by fibre
coordinates.  The connection one-form of the induced semi-connection is
obtained by inverting [horizontal basis | fundamental fields] on their sum,
and the vertical operator is written as

    B^V = sum alpha^{ij} L_{A_i*} L_{A_j*} + sum beta^k L_{A_k*},

with alpha^{kl} = w^k sigma^B w^l and beta^l = delta^B(w^l) (no factor 1/2
in front of the second-order term).

For a Hormander system on M the derivative flow lives on the frame bundle
chart M x GL(n).  The connection induced by the system on TM is

    D_v Z = dZ(v) + Gamma(v) Z,    Gamma(v) = X (dY . v) = -(dX . v) Y,

with Y the pseudo-inverse of X, and the predicted vertical coefficients are

    alpha(u) = 1/2 sum_p (u^-1 K_p u) (x) (u^-1 K_p u),     K_p = D X^p,
    beta(u)  = u^-1 [ -1/2 sum_p K_p K_p - 1/2 Ric# + D A ] u,

where Ric#(v) = sum_j R(v, X^j) X^j.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .connection import SemiConnection
from .errors import DegenerateSplit, RankDrop, ValidationError
from .geometry import ChartSpace, SmoothMap, coordinate_projection, euclidean, jacobian_fd
from .linalg import image_basis, numerical_rank, pinv
from .operators import DiffusionOperator, HormanderForm, Report, from_hormander


# --------------------------------------------------------------------------
# groups and charts


@dataclass(frozen=True)
class MatrixLieGroup:
    """Matrix group given by a basis of its Lie algebra (shape (k, n, n))."""

    name: str
    basis: np.ndarray
    exp: Callable = expm

    @property
    def size(self) -> int:
        return self.basis.shape[-1]

    @property
    def algebra_dim(self) -> int:
        return self.basis.shape[0]

    def coords(self, M) -> np.ndarray:
        """Coefficients of a Lie-algebra element in the basis (least squares)."""
        Bf = self.basis.reshape(self.algebra_dim, -1).T
        c, *_ = np.linalg.lstsq(Bf, np.asarray(M, dtype=float).reshape(-1), rcond=None)
        return c

    def element(self, c) -> np.ndarray:
        return np.tensordot(np.asarray(c, dtype=float), self.basis, axes=1)

    def Ad(self, g) -> np.ndarray:
        """Matrix of A -> g A g^-1 in the basis coordinates."""
        gi = np.linalg.inv(g)
        return np.stack([self.coords(g @ A @ gi) for A in self.basis], axis=1)

    def gram(self) -> np.ndarray:
        Bf = self.basis.reshape(self.algebra_dim, -1)
        return Bf @ Bf.T

    def closure_residual(self) -> float:
        """Largest distance of a bracket [A_i, A_j] from the span of the basis."""
        worst = 0.0
        for A in self.basis:
            for C in self.basis:
                br = A @ C - C @ A
                worst = max(worst, float(np.max(np.abs(self.element(self.coords(br)) - br))))
        return worst

    def random_element(self, rng, scale: float = 1.0) -> np.ndarray:
        return self.exp(self.element(scale * rng.standard_normal(self.algebra_dim)))


def so(n: int) -> MatrixLieGroup:
    """SO(n) with the Hilbert-Schmidt orthonormal basis (E_pq - E_qp)/sqrt(2), p < q."""
    mats = []
    for p in range(n):
        for q in range(p + 1, n):
            A = np.zeros((n, n))
            A[p, q], A[q, p] = 1.0, -1.0
            mats.append(A / np.sqrt(2.0))
    return MatrixLieGroup(f"SO({n})", np.array(mats))


def gl(n: int) -> MatrixLieGroup:
    """GL(n) with the matrix units E_ij (row-major order)."""
    mats = np.zeros((n * n, n, n))
    for k in range(n * n):
        mats[k].flat[k] = 1.0
    return MatrixLieGroup(f"GL({n})", mats)


def translations(k: int) -> MatrixLieGroup:
    """(R^k, +) realised as affine translation matrices of size k+1."""
    mats = np.zeros((k, k + 1, k + 1))
    for i in range(k):
        mats[i, i, k] = 1.0
    return MatrixLieGroup(f"R^{k}", mats)


@dataclass(frozen=True)
class PrincipalChart:
    """Local trivialisation M x G with projection, right action and fundamental fields."""

    base: ChartSpace
    total: ChartSpace
    group: MatrixLieGroup
    projection: SmoothMap
    right_action: Callable
    fundamental: Callable

    def check(self, samples, group_elements, tol: float = 1e-10) -> Report:
        U = np.atleast_2d(samples)
        proj_res, span_res = 0.0, 0.0
        for u in U:
            for g in group_elements:
                proj_res = max(proj_res, float(np.max(np.abs(self.projection(self.right_action(u, g))
                                                           - self.projection(u)))))
            F = self.fundamental(u)
            J = self.projection.jacobian(u)
            span_res = max(span_res, float(np.max(np.abs(J @ F))))
            if numerical_rank(F) != self.total.dim - self.base.dim:
                span_res = max(span_res, 1.0)
        res = max(proj_res, span_res)
        return Report("principal_chart", res, tol, res < tol, len(U))


def translation_chart(base: ChartSpace, total: ChartSpace) -> PrincipalChart:
    """Bundle whose fibre coordinates (after the base ones) are acted on by translation."""
    n, N = base.dim, total.dim
    k = N - n
    group = translations(k)
    p = coordinate_projection(total, base, range(n))

    def act(u, g):
        u = np.array(u, dtype=float)
        u[..., n:] = u[..., n:] + np.asarray(g)[:k, k]
        return u

    F = np.zeros((N, k))
    F[n:, :] = np.eye(k)

    def fundamental(u):
        return np.broadcast_to(F, np.shape(u)[:-1] + F.shape).copy()

    return PrincipalChart(base, total, group, p, act, fundamental)


def frame_chart(base: ChartSpace) -> PrincipalChart:
    """Frame bundle chart M x GL(n): coordinates (y, row-major entries of the frame U)."""
    n = base.dim
    total = ChartSpace(f"GL({base.name})", n + n * n)
    group = gl(n)
    p = coordinate_projection(total, base, range(n))

    def act(u, g):
        u = np.asarray(u, dtype=float)
        y, U = split_frame(u, n)
        return join_frame(y, U @ g)

    def fundamental(u):
        u = np.asarray(u, dtype=float)
        _, U = split_frame(u, n)
        cols = []
        for A in group.basis:
            top = np.zeros(u.shape[:-1] + (n,))
            cols.append(np.concatenate([top, (U @ A).reshape(u.shape[:-1] + (n * n,))], axis=-1))
        return np.stack(cols, axis=-1)

    return PrincipalChart(base, total, group, p, act, fundamental)


def split_frame(u, n: int):
    u = np.asarray(u, dtype=float)
    return u[..., :n], u[..., n:].reshape(u.shape[:-1] + (n, n))


def join_frame(y, U):
    y = np.asarray(y, dtype=float)
    U = np.asarray(U, dtype=float)
    return np.concatenate([y, U.reshape(U.shape[:-2] + (-1,))], axis=-1)


# --------------------------------------------------------------------------
# connection form and vertical coefficients


def _connection_form_single(conn: SemiConnection, chart: PrincipalChart, u, angle_tol: float) -> np.ndarray:
    h = conn.lift_matrix(u)
    H = image_basis(h)
    V = np.asarray(chart.fundamental(u), dtype=float)
    k = V.shape[1]
    Vq = image_basis(V)
    if H.shape[1] and Vq.shape[1]:
        cosines = np.linalg.svd(H.T @ Vq, compute_uv=False)
        smallest_angle = float(np.arccos(np.clip(np.max(cosines), -1.0, 1.0)))
        if smallest_angle <= angle_tol:
            raise DegenerateSplit(f"horizontal and vertical spaces meet at angle {smallest_angle:.3e}")
    Msplit = np.concatenate([H, V], axis=1)
    if numerical_rank(Msplit) < Msplit.shape[1]:
        raise DegenerateSplit("horizontal plus vertical vectors are linearly dependent")
    sel = np.zeros((k, Msplit.shape[1]))
    sel[:, H.shape[1]:] = np.eye(k)
    return sel @ pinv(Msplit)


def connection_form(conn: SemiConnection, chart: PrincipalChart, u, angle_tol: float = 1e-6) -> np.ndarray:
    """The connection one-form as a (k x dim N) matrix: row l is the covector w^l.

    It vanishes on H_u, maps A*_i(u) to the i-th basis vector and is set to
    zero on the orthogonal complement of H_u + V_u.  Batched over leading axes.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return _connection_form_single(conn, chart, u, angle_tol)
    out = None
    for idx in np.ndindex(u.shape[:-1]):
        w = _connection_form_single(conn, chart, u[idx], angle_tol)
        if out is None:
            out = np.empty(u.shape[:-1] + w.shape)
        out[idx] = w
    return out


@dataclass(frozen=True)
class VerticalCoefficients:
    alpha: np.ndarray
    beta: np.ndarray

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


def vertical_coefficients(B: DiffusionOperator, conn: SemiConnection, chart: PrincipalChart, u) -> VerticalCoefficients:
    """alpha^{kl} = w^k sigma^B w^l and beta^l = delta^B(w^l) at a single point u."""
    u = np.asarray(u, dtype=float)
    W = connection_form(conn, chart, u)
    alpha = W @ B.symbol(u) @ W.T
    dW = jacobian_fd(lambda y: connection_form(conn, chart, y), u)  # (k, N, N): d_i w^l_j at [l, j, i]
    a = np.asarray(B.a(u), dtype=float)
    beta = 0.5 * np.einsum("ij,lji->l", a, dW) + W @ np.asarray(B.b(u), dtype=float)
    return VerticalCoefficients(0.5 * (alpha + alpha.T), beta)


def equivariance_check(coeff_fn: Callable, chart: PrincipalChart, group_elements, samples,
                       tol: float = 1e-8) -> Report:
    """Check alpha(ug) = Ad(g^-1) alpha(u) Ad(g^-1)^T and beta(ug) = Ad(g^-1) beta(u).

    The inverse appears because the fundamental fields satisfy
    TR_g A*(u) = (g^-1 A g)*(ug) for a right action.
    """
    G = chart.group
    dev = 0.0
    U = np.atleast_2d(samples)
    for u in U:
        c0 = coeff_fn(u)
        for g in group_elements:
            Ad = G.Ad(np.linalg.inv(g))
            cg = coeff_fn(chart.right_action(u, g))
            dev = max(dev, float(np.max(np.abs(cg.alpha - Ad @ c0.alpha @ Ad.T))),
                      float(np.max(np.abs(cg.beta - Ad @ c0.beta))))
    return Report("equivariance", dev, tol, dev < tol, len(U) * len(group_elements))


# --------------------------------------------------------------------------
# derivative flow on the frame bundle


@dataclass
class DerivativeFlowSystem:
    """Derivative flow of a Hormander system, with the predicted vertical coefficients."""

    H: HormanderForm
    chart: PrincipalChart
    lifted: HormanderForm
    B: DiffusionOperator
    A: DiffusionOperator
    conn: SemiConnection

    @property
    def n(self) -> int:
        return self.H.dim

    def _fields(self, y):
        X = self.H.fields(y)
        dX = self.H.field_derivative(y)
        n = self.n
        if numerical_rank(X) < n:
            raise RankDrop("the noise fields do not span the tangent space at this point")
        return X, dX

    def christoffel(self, y) -> np.ndarray:
        """G[i, j, k] = (Gamma(e_k))_{ij} with Gamma(v) = -(dX . v) Y."""
        X, dX = self._fields(y)
        Y = pinv(X)
        return -np.einsum("imk,mj->ijk", dX, Y)

    def covariant_fields(self, y) -> np.ndarray:
        """K[p] = D X^p as an (n x n) matrix acting on directions."""
        X, dX = self._fields(y)
        G = self.christoffel(y)
        return np.transpose(dX, (1, 0, 2)) + np.einsum("ijk,jp->pik", G, X)

    def covariant_drift(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        A = self.H.drift(y)
        dA = self.H.drift_derivative(y)
        return dA + np.einsum("ijk,j->ik", self.christoffel(y), A)

    def curvature(self, y) -> np.ndarray:
        """R[:, :, k, l] = R(e_k, e_l) as a matrix acting on the third vector."""
        G = self.christoffel(y)
        dG = jacobian_fd(self.christoffel, np.asarray(y, dtype=float))  # [i, j, l, k] = d_k G[i, j, l]
        n = self.n
        R = np.empty((n, n, n, n))
        for k in range(n):
            for l in range(n):
                R[:, :, k, l] = (dG[:, :, l, k] - dG[:, :, k, l]
                                 + G[:, :, k] @ G[:, :, l] - G[:, :, l] @ G[:, :, k])
        return R

    def ricci(self, y) -> np.ndarray:
        """Ric#(v) = sum_j R(v, X^j) X^j as a matrix in v."""
        X, _ = self._fields(y)
        R = self.curvature(y)
        return np.einsum("ijkl,lm,jm->ik", R, X, X)

    def predicted(self, u) -> VerticalCoefficients:
        """alpha and beta from the connection formulas (matrix-unit basis of gl(n))."""
        y, U = split_frame(u, self.n)
        Ui = np.linalg.inv(U)
        K = self.covariant_fields(y)
        ms = np.stack([(Ui @ Kp @ U).reshape(-1) for Kp in K])
        alpha = 0.5 * ms.T @ ms
        inner = -0.5 * np.einsum("pij,pjk->ik", K, K) - 0.5 * self.ricci(y) + self.covariant_drift(y)
        beta = (Ui @ inner @ U).reshape(-1)
        return VerticalCoefficients(alpha, beta)

    def generic(self, u) -> VerticalCoefficients:
        """alpha and beta from the connection one-form of B over A (independent route)."""
        return vertical_coefficients(self.B, self.conn, self.chart, u)

    def orthonormal_frame(self, y) -> np.ndarray:
        """A frame U with U U^T = X X^T, i.e. orthonormal for the metric induced by the fields."""
        from .simulate import sqrt_psd
        X, _ = self._fields(y)
        return sqrt_psd(X @ X.T)

    def curvature_in_frame(self, y, U=None):
        """R_{ikjl} = <R(Ue_i, Ue_k) Ue_l, Ue_j> and Ric in an orthonormal frame U."""
        U = self.orthonormal_frame(y) if U is None else U
        Ui = np.linalg.inv(U)
        R = self.curvature(y)
        Rv = np.einsum("abkl,ki,lm->abim", R, U, U)  # R(Ue_i, Ue_m) as a matrix
        Rf = np.einsum("ja,abim,bl->ijml", Ui, Rv, U)  # [i, j, m, l] = (U^-1 R(Ue_i,Ue_m) U)_{jl}
        Rikjl = np.transpose(Rf, (0, 2, 1, 3))  # [i, k, j, l]
        Ric = Ui @ self.ricci(y) @ U
        return Rikjl, Ric


def lift_to_frames(H: HormanderForm) -> HormanderForm:
    """Fields (X^j(y), DX^j(y) U) and drift (A(y), DA(y) U) on the frame chart."""
    n = H.dim
    chart = frame_chart(H.space)

    def Xt(u):
        y, U = split_frame(u, n)
        X = H.fields(y)
        dX = H.field_derivative(y)  # [..., i, j, k]
        top = X
        bottom = np.einsum("...ijk,...kl->...ilj", dX, U).reshape(y.shape[:-1] + (n * n, X.shape[-1]))
        return np.concatenate([top, bottom], axis=-2)

    def X0t(u):
        y, U = split_frame(u, n)
        A = H.drift(y)
        dA = H.drift_derivative(y)
        return np.concatenate([A, (dA @ U).reshape(y.shape[:-1] + (n * n,))], axis=-1)

    return HormanderForm(chart.total, Xt, X0t, name=f"frames({H.name})")


def derivative_flow_system(H: HormanderForm, samples=None) -> DerivativeFlowSystem:
    """Build the derivative-flow operator on M x GL(n) and its connection data."""
    chart = frame_chart(H.space)
    lifted = lift_to_frames(H)
    B = from_hormander(lifted)
    A = from_hormander(H)
    if samples is not None:
        for y in np.atleast_2d(samples):
            if numerical_rank(H.fields(y)) < H.dim:
                raise RankDrop("the noise fields do not span the tangent space at a sample point")
    conn = SemiConnection(B, A, chart.projection)
    return DerivativeFlowSystem(H, chart, lifted, B, A, conn)
