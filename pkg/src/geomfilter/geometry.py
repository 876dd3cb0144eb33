"""Charts, smooth maps, sampled paths and finite-difference derivatives.

Manifolds are represented in a single global chart (Euclidean space, a
torus with periodic coordinates, a punctured space) or in ambient
coordinates of an embedding together with a retraction back onto the
submanifold.  All field callables in this package follow the same array
convention: a point is an array whose last axis holds the coordinates, and
any leading axes are batch axes that are carried through unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import NumericalDomainError, ValidationError

EPS = np.finfo(float).eps
H_FIRST = EPS ** (1.0 / 3.0)
H_SECOND = EPS ** 0.25


def step_sizes(x: np.ndarray, order: int) -> np.ndarray:
    """Per-coordinate difference steps h = c * max(1, |x_i|).

    c is eps^(1/3) for first derivatives and eps^(1/4) for second
    derivatives, the usual balance of truncation against rounding error for
    central differences.
    """
    base = H_FIRST if order == 1 else H_SECOND
    return base * np.maximum(1.0, np.abs(x))


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericalDomainError("non-finite field value encountered while differencing")


def _bump(x, i, delta):
    y = np.array(x, dtype=float, copy=True)
    y[..., i] = y[..., i] + delta
    return y


def _expand(h, ndim_extra):
    return h.reshape(h.shape + (1,) * ndim_extra)


def jacobian_fd(F: Callable, x, period: Optional[np.ndarray] = None, h_scale: Optional[float] = None):
    """Central-difference Jacobian of a vector-valued field.

    ``F`` maps points of shape (..., d) to arrays of shape (..., *out).  The
    result has shape (..., *out, d) with the differentiation index last.
    When ``period`` is given (one entry per output component, ``nan`` for
    non-periodic components) differences are unwrapped before dividing.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for i in range(d):
        h = step_sizes(x[..., i], 1) if h_scale is None else h_scale * np.maximum(1.0, np.abs(x[..., i]))
        fp = np.asarray(F(_bump(x, i, h)), dtype=float)
        fm = np.asarray(F(_bump(x, i, -h)), dtype=float)
        _check_finite(fp, fm)
        diff = fp - fm
        if period is not None:
            per = np.asarray(period, dtype=float)
            mask = np.isfinite(per)
            if np.any(mask):
                p = np.where(mask, per, 1.0)
                wrapped = diff - p * np.round(diff / p)
                diff = np.where(mask, wrapped, diff)
        extra = diff.ndim - x.ndim + 1
        cols.append(diff / _expand(2.0 * h, extra))
    return np.stack(cols, axis=-1)


def gradient(f: Callable, x):
    """Central-difference gradient of a scalar field, shape (..., d)."""
    return jacobian_fd(f, x)


def hessian(f: Callable, x, grad: Optional[Callable] = None):
    """Hessian of a scalar field, shape (..., d, d).

    With an analytic gradient the Hessian is a first-order difference of the
    gradient (accurate to roughly 1e-10); otherwise second differences with
    the second-derivative step rule are used (accurate to roughly 1e-8).
    """
    x = np.asarray(x, dtype=float)
    if grad is not None:
        H = jacobian_fd(grad, x)
        return 0.5 * (H + np.swapaxes(H, -1, -2))
    d = x.shape[-1]
    f0 = np.asarray(f(x), dtype=float)
    _check_finite(f0)
    H = np.empty(x.shape[:-1] + (d, d))
    h = step_sizes(x, 2)
    for i in range(d):
        hi = h[..., i]
        fp = f(_bump(x, i, hi))
        fm = f(_bump(x, i, -hi))
        _check_finite(fp, fm)
        H[..., i, i] = (fp - 2.0 * f0 + fm) / hi**2
        for j in range(i + 1, d):
            hj = h[..., j]
            fpp = f(_bump(_bump(x, i, hi), j, hj))
            fpm = f(_bump(_bump(x, i, hi), j, -hj))
            fmp = f(_bump(_bump(x, i, -hi), j, hj))
            fmm = f(_bump(_bump(x, i, -hi), j, -hj))
            _check_finite(fpp, fpm, fmp, fmm)
            H[..., i, j] = H[..., j, i] = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj)
    return H


def finite_diff(f: Callable, x, order: int = 1, indices: Sequence[int] = (0,)) -> float:
    """Central-difference approximation of a first or second partial derivative.

    ``indices`` names the coordinate(s): one index for ``order=1``, two for
    ``order=2`` (equal indices give a pure second derivative).
    """
    x = np.asarray(x, dtype=float)
    if order == 1:
        (i,) = tuple(indices)[:1]
        h = step_sizes(x[..., i], 1)
        fp, fm = f(_bump(x, i, h)), f(_bump(x, i, -h))
        _check_finite(fp, fm)
        return (fp - fm) / (2.0 * h)
    if order == 2:
        i, j = tuple(indices)[:2] if len(indices) > 1 else (indices[0], indices[0])
        h = step_sizes(x, 2)
        hi, hj = h[..., i], h[..., j]
        if i == j:
            f0, fp, fm = f(x), f(_bump(x, i, hi)), f(_bump(x, i, -hi))
            _check_finite(f0, fp, fm)
            return (fp - 2.0 * f0 + fm) / hi**2
        fpp = f(_bump(_bump(x, i, hi), j, hj))
        fpm = f(_bump(_bump(x, i, hi), j, -hj))
        fmp = f(_bump(_bump(x, i, -hi), j, hj))
        fmm = f(_bump(_bump(x, i, -hi), j, -hj))
        _check_finite(fpp, fpm, fmp, fmm)
        return (fpp - fpm - fmp + fmm) / (4.0 * hi * hj)
    raise ValidationError("order must be 1 or 2")


@dataclass(frozen=True)
class ChartSpace:
    """A manifold in one coordinate chart.

    ``periods`` has one entry per coordinate: ``None`` for an unbounded
    coordinate or the period length for a periodic one.  ``embedding`` is an
    optional pair (map into R^m, its derivative) for curved examples, and
    ``retraction`` (for ambient-coordinate charts) maps nearby ambient points
    back onto the submanifold.
    """

    name: str
    dim: int
    periods: tuple = ()
    embedding: Optional[tuple] = None
    retraction: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("chart dimension must be positive")
        if not self.periods:
            object.__setattr__(self, "periods", (None,) * self.dim)
        if len(self.periods) != self.dim:
            raise ValidationError("one period entry per coordinate is required")
        for p in self.periods:
            if p is not None and not p > 0:
                raise ValidationError("period lengths must be positive")

    @property
    def period_array(self) -> np.ndarray:
        return np.array([np.nan if p is None else p for p in self.periods], dtype=float)

    @property
    def is_periodic(self) -> bool:
        return any(p is not None for p in self.periods)

    def wrap(self, x):
        """Reduce periodic coordinates to [0, period)."""
        x = np.asarray(x, dtype=float)
        if not self.is_periodic:
            return x
        out = np.array(x, copy=True)
        for i, p in enumerate(self.periods):
            if p is not None:
                out[..., i] = np.mod(out[..., i], p)
        return out

    def displacement(self, x, y):
        """y - x with periodic components taken as the shortest representative."""
        diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if not self.is_periodic:
            return diff
        per = self.period_array
        mask = np.isfinite(per)
        p = np.where(mask, per, 1.0)
        return np.where(mask, diff - p * np.round(diff / p), diff)

    def retract(self, x):
        return x if self.retraction is None else self.retraction(x)

    def check_embedding(self, points, tol: float = 1e-8) -> bool:
        """True when the embedding derivative has full column rank at every point."""
        if self.embedding is None:
            return True
        _, deriv = self.embedding
        for x in np.atleast_2d(points):
            s = np.linalg.svd(np.asarray(deriv(x), dtype=float), compute_uv=False)
            if s.size < self.dim or s[self.dim - 1] <= tol * max(1.0, s[0]):
                return False
        return True


def euclidean(dim: int, name: str = "") -> ChartSpace:
    return ChartSpace(name or f"R{dim}", dim)


def torus(dim: int = 2, period: float = 2 * np.pi) -> ChartSpace:
    return ChartSpace(f"T{dim}", dim, periods=(period,) * dim)


@dataclass(frozen=True)
class SmoothMap:
    """A smooth map between charts, optionally with an analytic Jacobian."""

    domain: ChartSpace
    codomain: ChartSpace
    fn: Callable
    jac: Optional[Callable] = None
    name: str = ""

    def __call__(self, u):
        return self.codomain.wrap(self.fn(np.asarray(u, dtype=float)))

    def raw(self, u):
        """Evaluate without wrapping periodic codomain coordinates."""
        return np.asarray(self.fn(np.asarray(u, dtype=float)), dtype=float)

    def jacobian(self, u):
        return jacobian(self, u)


def jacobian(p: SmoothMap, u) -> np.ndarray:
    """Derivative T_u p as a (codomain.dim x domain.dim) matrix (batched)."""
    u = np.asarray(u, dtype=float)
    if p.jac is not None:
        return np.asarray(p.jac(u), dtype=float)
    per = p.codomain.period_array if p.codomain.is_periodic else None
    return jacobian_fd(p.raw, u, period=per)


def identity_map(space: ChartSpace) -> SmoothMap:
    return SmoothMap(space, space, lambda u: u, lambda u: np.broadcast_to(np.eye(space.dim), np.shape(u)[:-1] + (space.dim, space.dim)), "identity")


def coordinate_projection(domain: ChartSpace, codomain: ChartSpace, coords: Sequence[int]) -> SmoothMap:
    """Projection onto a subset of coordinates, e.g. (x, y, z) -> (x, y)."""
    coords = list(coords)
    J = np.zeros((len(coords), domain.dim))
    J[np.arange(len(coords)), coords] = 1.0

    def fn(u):
        return np.asarray(u)[..., coords]

    def jac(u):
        return np.broadcast_to(J, np.shape(u)[:-1] + J.shape)

    return SmoothMap(domain, codomain, fn, jac, name=f"coords{coords}")


@dataclass
class PointPath:
    """A sampled path: strictly increasing times and the matching points.

    ``points`` has shape (len(times), ..., dim); extra middle axes hold
    independent paths sharing the time grid.
    """

    times: np.ndarray
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValidationError("a path needs at least two sample times")
        if len(self.points) != len(self.times):
            raise ValidationError("times and points must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("path times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.points.shape[-1]

    def __len__(self):
        return len(self.times)

    def at(self, t: float):
        """Piecewise-linear interpolation at time t."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.points[k] + w * self.points[k + 1]

    def to_csv(self, path) -> None:
        pts = self.points.reshape(len(self.times), -1)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(pts.shape[1])])
            for t, row in zip(self.times, pts):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "PointPath":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "t":
            raise ValidationError("path CSV must start with a 't' column")
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
        return cls(data[:, 0], data[:, 1:])


def sample_box(lo, hi, count: int = 50) -> np.ndarray:
    """Deterministic quasi-random (Halton) points in the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    sampler = qmc.Halton(d=len(lo), scramble=False)
    sampler.fast_forward(1)
    return qmc.scale(sampler.random(count), lo, hi)
