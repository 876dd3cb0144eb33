"""Registry of built-in systems with analytic reference values.

Each reference value carries a provenance tag:
``analytic`` (closed form from the system definition),
``oracle`` (independent numerical computation, then frozen) or
``literature`` (a published closed form reproduced here).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Any, Callable, Dict, Optional

import numpy as np

from .equivariant import DerivativeFlowSystem, derivative_flow_system, join_frame, so
from .errors import UnknownSystem, ValidationError
from .geometry import ChartSpace, SmoothMap, coordinate_projection, euclidean, sample_box, torus
from .operators import (DiffusionOperator, HormanderForm, constant_operator, cohesive_check, from_hormander,
                        is_over, projectible_symbol_check)

PROVENANCE = ("analytic", "oracle", "literature")


@dataclass(frozen=True)
class Reference:
    value: Any
    provenance: str
    citation: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValidationError(f"unknown provenance tag {self.provenance!r}")
        if not self.citation:
            raise ValidationError("every reference value needs a citation")


@dataclass
class ExampleSystem:
    """A fully wired system: B on N over A on M through p, plus simulation data."""

    id: str
    params: Dict[str, Any]
    B: Optional[DiffusionOperator] = None
    A: Optional[DiffusionOperator] = None
    p: Optional[SmoothMap] = None
    H_B: Optional[HormanderForm] = None
    H_A: Optional[HormanderForm] = None
    samples: Optional[np.ndarray] = None
    references: Dict[str, Reference] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)

    def reference(self, name: str):
        return self.references[name].value

    def validate(self, tol: float = 1e-6) -> Dict[str, Any]:
        """is_over, cohesive and projectible-symbol checks on the stored samples."""
        if self.B is None or self.p is None or self.samples is None:
            return {}
        out = {"cohesive": cohesive_check(self.A, self.p(self.samples))}
        if "observation_drift" in self.extras:
            # the observation drift is a defect along E; B minus its lift lies over A
            from .connection import descends
            out["descends"] = descends(self.B, self.p, self.A, self.samples, over_tol=tol).report
        else:
            out["is_over"] = is_over(self.B, self.A, self.p, self.samples, tol=tol)
        fibres = self.extras.get("fibre_samples")
        if fibres is not None:
            out["projectible_symbol"] = projectible_symbol_check(self.B, self.p, fibres)
        return out


# --------------------------------------------------------------------------
# constructors


def _heisenberg_fields(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    out[..., 2, 0] = -0.5 * u[..., 1]
    out[..., 2, 1] = 0.5 * u[..., 0]
    return out


def _heisenberg_dfields(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (3, 3, 3))
    out[..., 2, 0, 1] = -0.5
    out[..., 2, 1, 0] = 0.5
    return out


def heisenberg() -> ExampleSystem:
    R3, R2 = euclidean(3, "Heisenberg"), euclidean(2)
    H = HormanderForm(R3, _heisenberg_fields, dX=_heisenberg_dfields, name="heisenberg")
    B = from_hormander(H)
    B = DiffusionOperator(R3, B.a, B.b, "B")
    A = constant_operator(R2, np.eye(2), name="A")
    p = coordinate_projection(R3, R2, [0, 1])
    H_A = HormanderForm(R2, lambda x: np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)).copy(), name="planar BM")
    S = sample_box([-1.0] * 3, [1.0] * 3, 30)
    fib = np.array([[[0.3, -0.4, z] for z in np.linspace(-1, 1, 5)], [[-0.6, 0.2, z] for z in np.linspace(-1, 1, 5)]])
    refs = {
        "BV_zz_coefficient": Reference(0.5, "analytic", "vertical part is 1/2 d^2/dz^2 for the left-invariant fields"),
        "lift_z1_parabola": Reference(1.0 / 6.0, "analytic", "half the signed area swept by (t, t^2), t in [0, 1]"),
        "lift_parabola_z": Reference(lambda T: T ** 3 / 6.0, "analytic", "area integral of (t, t^2) up to time T"),
        "conditional_z_variance": Reference(lambda T: T, "analytic", "independent vertical Brownian motion with unit rate"),
        "levy_area_cf": Reference(lambda lam, T: 1.0 / np.cosh(lam * T / 2.0), "literature",
                                  "Levy's formula for the characteristic function of the area of planar BM"),
        "loop_area_cf": Reference(lambda lam, T: (lam * T / 2.0) / np.sinh(lam * T / 2.0), "literature",
                                  "Levy's formula for the area enclosed by a planar Brownian loop"),
    }
    return ExampleSystem("heisenberg", {}, B, A, p, H, H_A, S, refs,
                         {"fibre_samples": fib, "bridge": "flat"})


def torus_system(alpha: float = np.pi / 6) -> ExampleSystem:
    if not 0.0 < alpha < np.pi / 4:
        raise ValidationError("alpha must lie in (0, pi/4) for the operator to be elliptic")
    t = np.tan(alpha)
    T2, S1 = torus(2), torus(1)
    B = constant_operator(T2, [[1.0, t], [t, 1.0]], name="B")
    A = constant_operator(S1, [[1.0]], name="A")
    p = coordinate_projection(T2, S1, [0])
    Xc = np.array([[1.0, 0.0], [t, np.sqrt(1.0 - t * t)]])
    H = HormanderForm(T2, lambda u: np.broadcast_to(Xc, np.shape(u)[:-1] + (2, 2)).copy(),
                      dX=lambda u: np.zeros(np.shape(u)[:-1] + (2, 2, 2)), name="torus")
    H_A = HormanderForm(S1, lambda x: np.ones(np.shape(x)[:-1] + (1, 1)), name="circle BM")
    S = sample_box([0.0, 0.0], [6.0, 6.0], 20)
    fib = np.array([[[x, y] for y in np.linspace(0, 6, 5)] for x in (0.5, 2.0, 4.0)])
    refs = {
        "BV_yy_coefficient": Reference(0.5 * (1 - t * t), "analytic", "B^V = (1 - tan^2 alpha)/2 d^2/dy^2"),
        "AH_symbol": Reference(0.5 * np.array([[1.0, t], [t, t * t]]), "analytic",
                               "A^H = 1/2 (d/dx + tan alpha d/dy)^2"),
        "conditional_mean_slope": Reference(t, "analytic", "E[y_t | x] = y_0 + tan alpha (x_t - x_0)"),
        "conditional_variance_rate": Reference(1 - t * t, "analytic", "Var[y_t | x] = (1 - tan^2 alpha) t"),
    }
    return ExampleSystem("torus", {"alpha": alpha}, B, A, p, H, H_A, S, refs, {"fibre_samples": fib})


def bessel(n: int = 3) -> ExampleSystem:
    if n < 2:
        raise ValidationError("bessel needs n >= 2")
    Rn = ChartSpace(f"R{n}-minus-origin", n)
    half = ChartSpace("half-line", 1)
    B = constant_operator(Rn, np.eye(n), name="B")

    def drift(r):
        r = np.asarray(r, dtype=float)
        return (n - 1) / (2.0 * r)

    A = DiffusionOperator(half, lambda r: np.ones(np.shape(r)[:-1] + (1, 1)), drift, f"bessel{n}")

    def radius(u):
        return np.linalg.norm(np.asarray(u, dtype=float), axis=-1, keepdims=True)

    def radius_jac(u):
        u = np.asarray(u, dtype=float)
        return (u / np.linalg.norm(u, axis=-1, keepdims=True))[..., None, :]

    p = SmoothMap(Rn, half, radius, radius_jac, "radius")
    H = HormanderForm(Rn, lambda u: np.broadcast_to(np.eye(n), np.shape(u)[:-1] + (n, n)).copy(), name="BM")
    H_A = HormanderForm(half, lambda r: np.ones(np.shape(r)[:-1] + (1, 1)), drift, name=f"bessel{n}")
    rng = np.random.default_rng(12345)
    dirs = rng.standard_normal((30, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    S = dirs * rng.uniform(0.5, 2.0, size=(30, 1))
    refs = {
        "drift_at_2": Reference((n - 1) / 4.0, "analytic", "radial drift (n-1)/(2r) at r = 2"),
        "radial_drift": Reference(lambda r: (n - 1) / (2.0 * r), "analytic", "radial part of the Laplacian"),
    }
    fib = np.stack([np.stack([np.roll(np.array([1.5] + [0.0] * (n - 1)), s) for s in range(n)]),
                    -np.stack([np.roll(np.array([0.8] + [0.0] * (n - 1)), s) for s in range(n)])])
    return ExampleSystem("bessel", {"n": n}, B, A, p, H, H_A, S, refs, {"fibre_samples": fib})


def sphere_fields(n: int):
    """Gradient fields of the ambient coordinates in stereographic coordinates, with derivatives.

    The chart is y -> (2y, |y|^2 - 1)/(1 + |y|^2).  The first n fields are
    (1 + |y|^2)/2 e_k - y_k y and the last is y.
    """
    I = np.eye(n)

    def X(y):
        y = np.asarray(y, dtype=float)
        s = np.sum(y * y, axis=-1)[..., None, None]
        F = 0.5 * (1 + s) * I - y[..., :, None] * y[..., None, :]
        return np.concatenate([F, y[..., :, None]], axis=-1)

    def dX(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (n, n + 1, n))
        for k in range(n):
            out[..., :, k, :] = (I[k][:, None] * y[..., None, :] - y[..., :, None] * I[k][None, :]
                                 - y[..., k, None, None] * I)
        out[..., :, n, :] = I
        return out

    return X, dX


def stereographic_embedding(y):
    y = np.asarray(y, dtype=float)
    s = np.sum(y * y, axis=-1, keepdims=True)
    return np.concatenate([2 * y, s - 1], axis=-1) / (1 + s)


def ambient_sphere(n: int) -> HormanderForm:
    """The same gradient system in ambient coordinates of R^{n+1}, with projection retraction."""
    N = n + 1
    I = np.eye(N)

    def X(x):
        x = np.asarray(x, dtype=float)
        return I - x[..., :, None] * x[..., None, :]

    def dX(x):
        x = np.asarray(x, dtype=float)
        # d/dx_k (delta_ij - x_i x_j) = -(delta_ik x_j + x_i delta_jk)
        return -(I[:, None, :] * x[..., None, :, None] + x[..., :, None, None] * I[None, :, :])

    def retract(x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    space = ChartSpace(f"S{n}-ambient", N, retraction=retract)
    return HormanderForm(space, X, dX=dX, name=f"sphere{n}-ambient")


def sphere_gradient(n: int = 3) -> ExampleSystem:
    if n < 2:
        raise ValidationError("sphere_gradient needs n >= 2")
    X, dX = sphere_fields(n)
    H = HormanderForm(euclidean(n, f"S{n}-stereographic"), X, dX=dX, name=f"sphere{n}")
    D = derivative_flow_system(H)
    rng = np.random.default_rng(2024)
    ys = rng.uniform(-0.8, 0.8, size=(6, n))
    Us = np.eye(n) + 0.3 * rng.standard_normal((6, n, n))
    S = join_frame(ys, Us)
    I = np.eye(n).reshape(-1)
    refs = {
        "alpha": Reference(0.5 * np.outer(I, I), "literature", "alpha = 1/2 Id (x) Id for the gradient flow on the unit sphere"),
        "beta": Reference(-0.5 * n * np.eye(n).reshape(-1), "literature", "beta = -(n/2) Id for the unit sphere"),
        "weitzenbock_degree": Reference(lambda q: -0.5 * q * (n - q), "analytic",
                                        "constant curvature one: -q(n-q)/2 on q-forms in the coefficient convention"),
    }
    return ExampleSystem("sphere_gradient", {"n": n}, D.B, D.A, D.chart.projection, D.lifted, H, S, refs,
                         {"derivative_flow": D, "ambient": ambient_sphere(n)})


def riccati_stationary(a: float, c: float, q: float, r: float) -> float:
    """Positive root of q + 2 a P - c^2 P^2 / r = 0."""
    return (a * r + np.sqrt(a * a * r * r + c * c * q * r)) / (c * c)


def linear_filter_1d(a: float = -1.0, c: float = 1.0, q: float = 1.0, r: float = 1.0) -> ExampleSystem:
    """Signal dz = a z dt + sqrt(q) dW observed through dx = c z dt + sqrt(r) dB; state u = (x, z)."""
    if q <= 0 or r <= 0:
        raise ValidationError("noise intensities q and r must be positive")
    R2, R1 = euclidean(2, "observation-signal"), euclidean(1, "observation")
    aB = np.diag([r, q])

    def b(u):
        u = np.asarray(u, dtype=float)
        return np.stack([c * u[..., 1], a * u[..., 1]], axis=-1)

    B = DiffusionOperator(R2, lambda u: np.broadcast_to(aB, np.shape(u)[:-1] + (2, 2)).copy(), b, "B")
    A = constant_operator(R1, [[r]], name="A")
    p = coordinate_projection(R2, R1, [0])
    Xc = np.diag([np.sqrt(r), np.sqrt(q)])
    H = HormanderForm(R2, lambda u: np.broadcast_to(Xc, np.shape(u)[:-1] + (2, 2)).copy(), b,
                      dX=lambda u: np.zeros(np.shape(u)[:-1] + (2, 2, 2)), name="linear filter")
    H_A = HormanderForm(R1, lambda x: np.full(np.shape(x)[:-1] + (1, 1), np.sqrt(r)), name="observation BM")
    S = sample_box([-2.0, -2.0], [2.0, 2.0], 20)
    P = riccati_stationary(a, c, q, r)
    refs = {
        "stationary_posterior_variance": Reference(P, "oracle",
                                                   "stationary root of the Kalman-Bucy Riccati equation"),
        "signal_stationary_std": Reference(np.sqrt(q / (-2 * a)) if a < 0 else np.inf, "analytic",
                                           "stationary variance q/(-2a) of the Ornstein-Uhlenbeck signal"),
    }
    extras = {"signal_coords": [1], "observation_coords": [0],
              "observation_drift": lambda u: c * np.asarray(u, dtype=float)[..., 1:2],
              "a": a, "c": c, "q": q, "r": r}
    return ExampleSystem("linear_filter_1d", {"a": a, "c": c, "q": q, "r": r}, B, A, p, H, H_A, S, refs, extras)


def planar_flow_redundant() -> ExampleSystem:
    """Planar system with three noise fields: the two translations and the rotation about the origin."""
    R2 = euclidean(2, "plane")

    def X(x):
        x = np.asarray(x, dtype=float)
        o, z = np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])
        return np.stack([np.stack([o, z], -1), np.stack([z, o], -1), np.stack([-x[..., 1], x[..., 0]], -1)], -1)

    def dX(x):
        out = np.zeros(np.shape(x)[:-1] + (2, 3, 2))
        out[..., 0, 2, 1] = -1.0
        out[..., 1, 2, 0] = 1.0
        return out

    H = HormanderForm(R2, X, dX=dX, name="planar redundant")
    refs = {"x0": Reference(np.array([1.0, 0.0]), "analytic", "base point of the skew-product checks")}
    return ExampleSystem("planar_flow_redundant", {}, H_B=H, H_A=H, references=refs,
                         extras={"x0": np.array([1.0, 0.0])})


def symmetric_sphere(n: int = 3, k: int = 1) -> ExampleSystem:
    """alpha = 1/2 sum A_l (x) A_l over orthonormal so(n), beta = 0, acting on k-forms."""
    if not 0 <= k <= n:
        raise ValidationError("k must lie in 0..n")
    G = so(n)
    refs = {
        "alpha": Reference(0.5 * np.eye(G.algebra_dim), "analytic", "isotropic alpha with weight 1/2"),
        "beta": Reference(np.zeros(G.algebra_dim), "analytic", "no first-order vertical term"),
        "lambda": Reference(-0.25 * k * (n - k), "literature", "lambda = -k(n-k)/4 on k-forms of the sphere of radius sqrt(2)"),
        "casimir": Reference(0.5 * n * (n - 1) / comb(n, k) if 1 <= k <= n - 1 else None, "analytic",
                             "dim so(n) / dim of the k-th exterior power"),
    }
    return ExampleSystem("symmetric_sphere", {"n": n, "k": k}, references=refs, extras={"group": G})


@dataclass(frozen=True)
class RegistryEntry:
    constructor: Callable
    defaults: Dict[str, Any]
    description: str
    citation: str


REGISTRY: Dict[str, RegistryEntry] = {
    "heisenberg": RegistryEntry(heisenberg, {}, "Heisenberg group over the plane, fibre z",
                                "left-invariant sub-Laplacian plus 1/2 d^2/dz^2"),
    "torus": RegistryEntry(torus_system, {"alpha": float(np.pi / 6)}, "flat torus with correlated coordinates over a circle",
                           "B = 1/2 Laplacian + tan(alpha) d^2/dxdy, p(x, y) = x"),
    "bessel": RegistryEntry(bessel, {"n": 3}, "Brownian motion in R^n over its radius",
                            "radial part of 1/2 Laplacian is the Bessel generator"),
    "sphere_gradient": RegistryEntry(sphere_gradient, {"n": 3}, "derivative flow of the gradient SDE on S^n",
                                     "frame-bundle lift of the gradient Brownian system"),
    "linear_filter_1d": RegistryEntry(linear_filter_1d, {"a": -1.0, "c": 1.0, "q": 1.0, "r": 1.0},
                                      "linear Gaussian signal with linear observation",
                                      "Kalman-Bucy filtering problem"),
    "planar_flow_redundant": RegistryEntry(planar_flow_redundant, {}, "planar flow with redundant rotation noise",
                                           "translations plus rotation about the origin"),
    "symmetric_sphere": RegistryEntry(symmetric_sphere, {"n": 3, "k": 1}, "isotropic so(n) coefficients on k-forms",
                                      "Weitzenbock term of the round sphere"),
}


def list_systems():
    return [{"id": key, "params": dict(e.defaults), "description": e.description, "citation": e.citation}
            for key, e in REGISTRY.items()]


def get(system_id: str, params: Optional[Dict[str, Any]] = None, validate: bool = False) -> ExampleSystem:
    if system_id not in REGISTRY:
        raise UnknownSystem(f"unknown system {system_id!r}; known: {', '.join(REGISTRY)}")
    entry = REGISTRY[system_id]
    params = dict(params or {})
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ValidationError(f"unknown parameters for {system_id}: {sorted(unknown)}")
    merged = {**entry.defaults, **params}
    system = entry.constructor(**merged)
    if validate:
        reports = system.validate()
        bad = [k for k, r in reports.items() if not r.passed]
        if bad:
            from .errors import CheckFailed
            raise CheckFailed(f"system {system_id} failed construction checks: {bad}")
    return system
