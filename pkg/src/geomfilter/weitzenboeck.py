"""Exterior algebra operators and the zero-order operators built from vertical coefficients.

Basis of the k-th exterior power: e_I for increasing k-subsets I of
{0..n-1} in lexicographic order.  Creation a_i* = e_i wedge (.) carries the
sign (-1)^(number of elements of I below i); annihilation a_i = interior
product with e_i is its transpose.

For vertical coefficients (alpha, beta) in a basis A_s of the Lie algebra
and a representation with derivative rho_*, the zero-order operator on the
k-th exterior power is

    lambda = dLambda(rho_* beta) + sum alpha^{st} dLambda(rho_* A_s) dLambda(rho_* A_t).

alpha is used in coefficient form (B^V = sum alpha^{st} A_s* A_t* + ...),
so no tensor-norm conversion enters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AlphaNotPSD, BadSymmetry, NotScalar, NumericalError, ValidationError
from .equivariant import so
from .operators import Report


@dataclass(frozen=True)
class ExteriorBasis:
    n: int
    k: int
    index: Tuple[Tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.n < 0 or self.k < 0:
            raise ValidationError("dimension and degree must be non-negative")
        object.__setattr__(self, "index", tuple(combinations(range(self.n), self.k)) if self.k <= self.n else ())

    @property
    def dim(self) -> int:
        return len(self.index)

    def position(self) -> Dict[Tuple[int, ...], int]:
        return {I: r for r, I in enumerate(self.index)}

    def shifted(self, dk: int) -> "ExteriorBasis":
        return ExteriorBasis(self.n, max(self.k + dk, 0)) if self.k + dk >= 0 else _EmptyBasis(self.n)


class _EmptyBasis(ExteriorBasis):
    def __init__(self, n):
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", -1)
        object.__setattr__(self, "index", ())


@dataclass(frozen=True)
class FormOperator:
    """Linear map between exterior powers given by its matrix in the e_I bases."""

    basis: ExteriorBasis
    matrix: np.ndarray
    target: Optional[ExteriorBasis] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError("form operator has non-finite entries")

    @property
    def codomain(self) -> ExteriorBasis:
        return self.target if self.target is not None else self.basis

    def __matmul__(self, other: "FormOperator") -> "FormOperator":
        return FormOperator(other.basis, self.matrix @ other.matrix, self.codomain)

    def __add__(self, other: "FormOperator") -> "FormOperator":
        return FormOperator(self.basis, self.matrix + other.matrix, self.codomain)

    def __sub__(self, other: "FormOperator") -> "FormOperator":
        return FormOperator(self.basis, self.matrix - other.matrix, self.codomain)

    def scaled(self, c: float) -> "FormOperator":
        return FormOperator(self.basis, c * self.matrix, self.codomain)

    def spectrum(self) -> np.ndarray:
        M = self.matrix
        if np.allclose(M, M.T, atol=1e-12):
            return np.linalg.eigvalsh(0.5 * (M + M.T))
        return np.sort_complex(np.linalg.eigvals(M))


def creation(i: int, basis: ExteriorBasis) -> FormOperator:
    """a_i*: wedge with e_i from the k-th to the (k+1)-th power (0-based i)."""
    if not 0 <= i < basis.n:
        raise ValidationError(f"index {i} out of range for n = {basis.n}")
    tgt = ExteriorBasis(basis.n, basis.k + 1)
    pos = tgt.position()
    M = np.zeros((tgt.dim, basis.dim))
    for c, I in enumerate(basis.index):
        if i in I:
            continue
        below = sum(1 for j in I if j < i)
        J = tuple(sorted(I + (i,)))
        M[pos[J], c] = (-1.0) ** below
    return FormOperator(basis, M, tgt)


def annihilation(i: int, basis: ExteriorBasis) -> FormOperator:
    """a_i: interior product with e_i from the k-th to the (k-1)-th power (0-based i)."""
    if not 0 <= i < basis.n:
        raise ValidationError(f"index {i} out of range for n = {basis.n}")
    if basis.k == 0:
        return FormOperator(basis, np.zeros((0, basis.dim)), _EmptyBasis(basis.n))
    tgt = ExteriorBasis(basis.n, basis.k - 1)
    pos = tgt.position()
    M = np.zeros((tgt.dim, basis.dim))
    for c, I in enumerate(basis.index):
        if i not in I:
            continue
        r = I.index(i)
        J = I[:r] + I[r + 1:]
        M[pos[J], c] = (-1.0) ** r
    return FormOperator(basis, M, tgt)


class LadderOperators:
    """Cached creation/annihilation matrices on a fixed degree."""

    def __init__(self, n: int, k: int):
        self.n, self.k = n, k
        self.basis = ExteriorBasis(n, k)
        self._up = {d: [creation(i, ExteriorBasis(n, d)).matrix for i in range(n)] for d in range(0, n)}
        self._down = {d: [annihilation(i, ExteriorBasis(n, d)).matrix for i in range(n)] for d in range(1, n + 1)}

    def up(self, i: int, degree: int) -> np.ndarray:
        return self._up[degree][i]

    def down(self, i: int, degree: int) -> np.ndarray:
        return self._down[degree][i]

    def number_pair(self, i: int, j: int) -> np.ndarray:
        """a_i* a_j on the fixed degree."""
        k, n = self.k, self.n
        if k == 0:
            return np.zeros((1, 1))
        return self.up(i, k - 1) @ self.down(j, k)

    def quartic(self, i: int, k: int, j: int, l: int) -> np.ndarray:
        """a_i* a_k* a_j a_l on the fixed degree (zero below degree 2)."""
        q = self.k
        if q < 2:
            return np.zeros((self.basis.dim, self.basis.dim))
        return self.up(i, q - 1) @ self.up(k, q - 2) @ self.down(j, q - 1) @ self.down(l, q)


def dLambda(A, basis: ExteriorBasis) -> FormOperator:
    """Derivation extension of A: e_I -> sum_r e_{i_1} ^ .. ^ A e_{i_r} ^ .. ^ e_{i_k}."""
    A = np.asarray(A, dtype=float)
    n = basis.n
    if A.shape != (n, n):
        raise ValidationError(f"matrix must be {n}x{n}")
    pos = basis.position()
    M = np.zeros((basis.dim, basis.dim))
    for c, I in enumerate(basis.index):
        for r, ir in enumerate(I):
            rest = I[:r] + I[r + 1:]
            for j in range(n):
                if A[j, ir] == 0.0 or j in rest:
                    continue
                seq = list(I)
                seq[r] = j
                order = np.argsort(seq)
                sign = _permutation_sign(order)
                M[pos[tuple(sorted(seq))], c] += sign * A[j, ir]
    return FormOperator(basis, M)


def _permutation_sign(order) -> float:
    order = list(order)
    sign = 1.0
    seen = [False] * len(order)
    for s in range(len(order)):
        if seen[s]:
            continue
        length, t = 0, s
        while not seen[t]:
            seen[t] = True
            t = order[t]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def dLambda_ladder(A, basis: ExteriorBasis, ladder: Optional[LadderOperators] = None) -> FormOperator:
    """sum_{i,j} <A e_j, e_i> a_i* a_j; an independent construction of dLambda(A)."""
    A = np.asarray(A, dtype=float)
    L = ladder or LadderOperators(basis.n, basis.k)
    M = np.zeros((basis.dim, basis.dim))
    for i in range(basis.n):
        for j in range(basis.n):
            if A[i, j] != 0.0:
                M += A[i, j] * L.number_pair(i, j)
    return FormOperator(basis, M)


@dataclass(frozen=True)
class LambdaWedge:
    """lambda on the k-th power together with the three pieces of its split form."""

    operator: FormOperator
    quartic: np.ndarray
    second_order: np.ndarray
    first_order: np.ndarray
    split_residual: float

    @property
    def matrix(self) -> np.ndarray:
        return self.operator.matrix


def _check_alpha(alpha, tol: float = 1e-10):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
        raise ValidationError("alpha must be a square matrix of coefficients")
    scale = max(1.0, float(np.max(np.abs(alpha)))) if alpha.size else 1.0
    if np.max(np.abs(alpha - alpha.T), initial=0.0) > tol * scale:
        raise AlphaNotPSD("alpha is not symmetric")
    if alpha.size and np.min(np.linalg.eigvalsh(0.5 * (alpha + alpha.T))) < -tol * scale:
        raise AlphaNotPSD("alpha has a negative eigenvalue")
    return 0.5 * (alpha + alpha.T)


def lambda_wedge(alpha, beta, rho_star: Sequence[np.ndarray], basis: ExteriorBasis,
                 split_tol: float = 1e-9) -> LambdaWedge:
    """Assemble lambda two ways and require agreement.

    Direct: dLambda(rho beta) + sum alpha^{st} dLambda(rho A_s) dLambda(rho A_t).
    Split:  -sum_{i<k, j<l} (T_ij,kl - T_kj,il - T_il,kj + T_kl,ij) a_i* a_k* a_j a_l
            + dLambda(Z) + dLambda(rho beta),
    with T_ij,kl = sum alpha^{st} (rho A_s)_ij (rho A_t)_kl and Z = sum alpha^{st} rho A_s rho A_t.
    """
    alpha = _check_alpha(alpha)
    beta = np.asarray(beta, dtype=float)
    R = np.asarray(rho_star, dtype=float)
    if R.shape[0] != alpha.shape[0] or beta.shape != (alpha.shape[0],):
        raise ValidationError("alpha, beta and the representation basis have inconsistent sizes")
    n = basis.n
    L = LadderOperators(n, basis.k)
    D = [dLambda(Rs, basis).matrix for Rs in R]
    first = dLambda(np.tensordot(beta, R, axes=1), basis).matrix
    direct = first.copy()
    for s in range(len(D)):
        for t in range(len(D)):
            if alpha[s, t] != 0.0:
                direct += alpha[s, t] * D[s] @ D[t]
    T = np.einsum("st,sij,tkl->ijkl", alpha, R, R)
    Z = np.einsum("st,sij,tjl->il", alpha, R, R)
    second = dLambda(Z, basis).matrix
    quart = np.zeros_like(direct)
    if basis.k >= 2:
        for i, k in combinations(range(n), 2):
            for j, l in combinations(range(n), 2):
                c = T[i, j, k, l] - T[k, j, i, l] - T[i, l, k, j] + T[k, l, i, j]
                if c != 0.0:
                    quart -= c * L.quartic(i, k, j, l)
    split = quart + second + first
    res = float(np.max(np.abs(split - direct), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(direct), initial=0.0)))
    if res > split_tol * scale:
        raise NumericalError(f"split and direct assemblies of lambda differ by {res:.3e}")
    return LambdaWedge(FormOperator(basis, direct), quart, second, first, res)


@dataclass(frozen=True)
class CurvatureData:
    """R[i, k, j, l] = <R(e_i, e_k) e_l, e_j> in an orthonormal frame, and the Ricci matrix."""

    R: np.ndarray
    Ric: np.ndarray

    def symmetry_residual(self) -> float:
        R = self.R
        return float(max(np.max(np.abs(R + np.transpose(R, (1, 0, 2, 3)))),
                         np.max(np.abs(R + np.transpose(R, (0, 1, 3, 2)))),
                         np.max(np.abs(R - np.transpose(R, (2, 3, 0, 1))))))

    def ricci_contraction(self) -> np.ndarray:
        """Ric_{kl} = sum_i R_{ikil}... returned as the matrix v -> sum_i R(v, e_i) e_i."""
        # (R(e_l, e_i) e_i)_j = R[l, i, j, i]
        return np.einsum("liji->jl", self.R)


def constant_curvature(n: int, kappa: float = 1.0) -> CurvatureData:
    """R(X, Y)Z = kappa (<Y, Z> X - <X, Z> Y)."""
    I = np.eye(n)
    R = kappa * (np.einsum("ij,kl->ikjl", I, I) - np.einsum("il,kj->ikjl", I, I))
    return CurvatureData(R, kappa * (n - 1) * I)


def weitzenbock_from_curvature(C: CurvatureData, basis: ExteriorBasis, tol: float = 1e-10) -> FormOperator:
    """-1/2 dLambda(Ric) - sum_{i<k, j<l} R_{ikjl} a_l* a_j* a_k a_i."""
    res = C.symmetry_residual()
    scale = max(1.0, float(np.max(np.abs(C.R))))
    if res > tol * scale:
        raise BadSymmetry(f"curvature tensor violates its symmetries by {res:.3e}")
    n = basis.n
    L = LadderOperators(n, basis.k)
    M = -0.5 * dLambda(C.Ric, basis).matrix
    if basis.k >= 2:
        for i, k in combinations(range(n), 2):
            for j, l in combinations(range(n), 2):
                r = C.R[i, k, j, l]
                if r != 0.0:
                    M -= r * L.quartic(l, j, k, i)
    return FormOperator(basis, M)


def casimir(n: int, k: int, tol: float = 1e-10) -> float:
    """Scalar value of sum_l dLambda(A_l) dLambda(A_l') on the k-th power of R^n.

    A_l is the orthonormal basis of so(n) and A_l' the dual basis for the
    trace form tr(dLambda(A) dLambda(B)) of the representation; the trace of
    the Casimir is then dim so(n), so its scalar value is dim so(n) / C(n, k).
    """
    if not 1 <= k <= n - 1:
        raise ValidationError("casimir needs 1 <= k <= n-1")
    basis = ExteriorBasis(n, k)
    D = np.array([dLambda(A, basis).matrix for A in so(n).basis])
    G = np.einsum("aij,bji->ab", D, D)
    Dd = np.einsum("ab,bij->aij", np.linalg.inv(G), D)
    Cas = np.einsum("aij,ajk->ik", D, Dd)
    c = float(np.mean(np.diag(Cas)))
    dev = float(np.max(np.abs(Cas - c * np.eye(basis.dim))))
    if dev > tol:
        raise NotScalar(f"Casimir element deviates from a scalar by {dev:.3e}")
    return c


def casimir_reference(n: int, k: int) -> float:
    return 0.5 * n * (n - 1) / comb(n, k)


def isotropic_alpha(n: int, mu: float = 1.0) -> np.ndarray:
    """Coefficients of mu sum_l A_l (x) A_l over the orthonormal so(n) basis."""
    return mu * np.eye(n * (n - 1) // 2)


def eigen_bounds_check(alpha, n: int, k: int, tol: float = 1e-8) -> Report:
    """Spectrum of lambda (beta = 0) against [-k(n-k)mu_max/2, -k(n-k)mu_min/2].

    The so(n) basis is Hilbert-Schmidt orthonormal, so the eigenvalues of
    alpha in coefficient form are those of alpha#.
    """
    alpha = _check_alpha(alpha)
    G = so(n)
    if alpha.shape != (G.algebra_dim, G.algebra_dim):
        raise ValidationError(f"alpha must be {G.algebra_dim}x{G.algebra_dim} for so({n})")
    mu = np.linalg.eigvalsh(alpha)
    lw = lambda_wedge(alpha, np.zeros(G.algebra_dim), G.basis, ExteriorBasis(n, k))
    spec = np.linalg.eigvalsh(0.5 * (lw.matrix + lw.matrix.T))
    c = 0.5 * k * (n - k)
    lo, hi = -c * mu[-1], -c * mu[0]
    violation = float(max(0.0, lo - spec.min(), spec.max() - hi))
    return Report("eigen_bounds", violation, tol, violation <= tol, 1,
                  {"mu_min": float(mu[0]), "mu_max": float(mu[-1]), "lower": lo, "upper": hi,
                   "spectrum_min": float(spec.min()), "spectrum_max": float(spec.max())})


def symmetric_space_lambda(n: int, k: int) -> LambdaWedge:
    """lambda for alpha = 1/2 sum A_l (x) A_l over so(n), beta = 0; equals -k(n-k)/4."""
    G = so(n)
    return lambda_wedge(isotropic_alpha(n, 0.5), np.zeros(G.algebra_dim), G.basis, ExteriorBasis(n, k))


def gl_representation(n: int) -> np.ndarray:
    """Matrix units E_ij (row-major): the identity representation of gl(n)."""
    mats = np.zeros((n * n, n, n))
    for s in range(n * n):
        mats[s].flat[s] = 1.0
    return mats
