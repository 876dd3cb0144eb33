"""Stochastic flows driven by finitely many noise fields, on finite configurations.

With X(x): R^m -> T_xM the noise coefficient and Y_x its pseudo-inverse,
the kernel k#(x, y) = X(y) Y_x maps E_x to E_y.  The horizontal flow along
a base path x_t of the same system moves every point y by

    dy = X(y) P(x_t) o dB + X(y) Y_{x_t} X0(x_t) dt,     P = Y X,

so only the noise components seen by x_t act; the point starting at x_0
follows x_t itself.  The full flow is recovered as x~_t o g_t where g_t
fixes x_0 and is found pointwise by Newton inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .connection import Decomposition, SemiConnection, _mv
from .errors import Explosion, NewtonDiverged, NumericalDomainError, ValidationError
from .geometry import EPS, PointPath, jacobian_fd
from .linalg import pinv
from .operators import DiffusionOperator, HormanderForm, ProbeFunction, Report, apply, function_battery
from .simulate import NORM_CAP, NoiseDriver, heun_step


def _check(x, what: str):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > NORM_CAP:
        raise Explosion(f"{what} exceeded the norm cap 1e8")


@dataclass(frozen=True)
class KernelSystem:
    H: HormanderForm

    def Y(self, x) -> np.ndarray:
        return pinv(self.H.fields(x))

    def kernel(self, x, y) -> np.ndarray:
        """k#(x, y) = X(y) Y_x as a (d x d) matrix."""
        return self.H.fields(y) @ self.Y(x)

    def K_perp(self, x) -> np.ndarray:
        """Projection Y_x X(x) of R^m onto the noise directions seen at x."""
        return self.Y(x) @ self.H.fields(x)

    def K(self, x) -> np.ndarray:
        m = self.H.fields(x).shape[-1]
        return np.eye(m) - self.K_perp(x)

    def check(self, samples, tol: float = 1e-10) -> Report:
        """k#(x, x) is the identity on E_x and K + K_perp is the identity."""
        xs = np.atleast_2d(samples)
        X = self.H.fields(xs)
        k = self.kernel(xs, xs)
        r1 = float(np.max(np.abs(k @ X - X)))
        m = X.shape[-1]
        r2 = float(np.max(np.abs(self.K(xs) + self.K_perp(xs) - np.eye(m))))
        res = max(r1, r2)
        return Report("kernel_system", res, tol, res < tol, len(xs), {"identity_on_E": r1, "splitting": r2})


@dataclass
class MultiPointState:
    points: np.ndarray
    time: float = 0.0


def flow_step(K: KernelSystem, state: MultiPointState, dB, dt: float) -> MultiPointState:
    """One Heun step with the same noise increment for every configuration point."""
    pts = np.asarray(state.points, dtype=float)
    new = heun_step(K.H, pts, np.broadcast_to(dB, pts.shape[:-1] + (len(dB),)), dt)
    new = K.H.space.retract(new)
    _check(new, "flow")
    return MultiPointState(new, state.time + dt)


def full_flow(K: KernelSystem, points, increments, dt: float, record: bool = False):
    """Apply flow_step along the given increments; returns the final points (or the trace)."""
    state = MultiPointState(np.asarray(points, dtype=float))
    trace = [state.points]
    for dB in increments:
        state = flow_step(K, state, dB, dt)
        if record:
            trace.append(state.points)
    return np.array(trace) if record else state.points


def _horizontal_rhs(K: KernelSystem, x, y):
    Xx = K.H.fields(x)
    Yx = pinv(Xx)
    Xy = K.H.fields(y)
    noise = Xy @ (Yx @ Xx)
    drift = _mv(Xy, Yx @ K.H.drift(x))
    xnoise, xdrift = Xx, K.H.drift(x)
    return noise, drift, xnoise, xdrift


def horizontal_flow(K: KernelSystem, x0, increments, dt: float, points, record: bool = False):
    """Integrate base path and horizontal flow jointly (Heun) from the same increments.

    ``points`` has shape (q, d) or (q, r, d); returns (x trace, y final or y trace).
    """
    x = np.array(x0, dtype=float)
    y = np.array(points, dtype=float)
    xs, ys = [x.copy()], [y.copy()]
    extra = y.ndim - 1
    for dB in increments:
        n1, d1, xn1, xd1 = _horizontal_rhs(K, x, y)
        xp = x + xd1 * dt + xn1 @ dB
        yp = y + d1 * dt + n1 @ dB
        n2, d2, xn2, xd2 = _horizontal_rhs(K, xp, yp)
        x = x + 0.5 * (xd1 + xd2) * dt + 0.5 * (xn1 + xn2) @ dB
        y = y + 0.5 * (d1 + d2) * dt + 0.5 * (n1 + n2) @ dB
        x = K.H.space.retract(x)
        y = K.H.space.retract(y)
        _check(y, "horizontal flow")
        if record:
            xs.append(x.copy())
            ys.append(y.copy())
    if record:
        return np.array(xs), np.array(ys)
    return x, y


def invert_horizontal(K: KernelSystem, x0, increments, dt: float, targets, seeds, tol: float = 1e-8,
                      max_iter: int = 50):
    """Solve x~_t(w) = target for w by damped Newton (one solve per target, batched).

    The Jacobian of w -> x~_t(w) is formed by central differences, all
    perturbed starts being integrated in one batch.  A step that increases
    the residual is halved (up to 30 times).  Returns (w, final residuals).
    """
    targets = np.asarray(targets, dtype=float)
    w = np.array(seeds, dtype=float)
    q, d = w.shape
    h = np.cbrt(EPS) * np.maximum(1.0, np.abs(w))

    def evaluate(W):
        _, y = horizontal_flow(K, x0, increments, dt, W)
        return y

    F = evaluate(w) - targets
    res = np.linalg.norm(F, axis=-1)
    for _ in range(max_iter):
        active = res > tol
        if not np.any(active):
            break
        h = np.cbrt(EPS) * np.maximum(1.0, np.abs(w))
        pert = np.concatenate([w[:, None, :] + np.eye(d)[None] * h[:, None, :],
                               w[:, None, :] - np.eye(d)[None] * h[:, None, :]], axis=1)
        vals = evaluate(pert)
        J = (vals[:, :d] - vals[:, d:]) / (2 * h[:, None, :])
        J = np.swapaxes(J, -1, -2)  # (q, out, in)
        step = np.linalg.solve(J, F[..., None])[..., 0]
        lam = np.ones(q)
        new_w = w - step
        new_F = evaluate(new_w) - targets
        new_res = np.linalg.norm(new_F, axis=-1)
        for _ in range(30):
            worse = active & (new_res > res)
            if not np.any(worse):
                break
            lam = np.where(worse, 0.5 * lam, lam)
            new_w = np.where(worse[:, None], w - lam[:, None] * step, new_w)
            new_F = evaluate(new_w) - targets
            new_res = np.linalg.norm(new_F, axis=-1)
        w = np.where(active[:, None], new_w, w)
        F = np.where(active[:, None], new_F, F)
        res = np.where(active, new_res, res)
    if np.any(~np.isfinite(res)) or np.any(res > tol):
        raise NewtonDiverged(f"Newton inversion stopped with residual {float(np.nanmax(res)):.3e}")
    return w, res


@dataclass
class SkewProductResult:
    times: np.ndarray
    g: np.ndarray  # (n_checkpoints + 1, q, d): g_t(q) at checkpoints, first row the probes
    g_x0: np.ndarray
    x_path: np.ndarray  # base path at the checkpoints
    reconstruction: float
    fixed_point: float


def skew_product(K: KernelSystem, x0, probes, T: float, driver: NoiseDriver, checkpoints: int = 4,
                 tol: float = 1e-8) -> SkewProductResult:
    """Full flow xi and horizontal flow x~ on one driver; g_t(q) solves x~_t(w) = xi_t(q)."""
    x0 = np.asarray(x0, dtype=float)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = int(round(T / driver.dt))
    if n % checkpoints:
        raise ValidationError("the number of steps must be divisible by the number of checkpoints")
    incs = driver.block(n)
    dt = driver.dt
    configs = np.concatenate([x0[None], probes])
    xi = full_flow(K, configs, incs, dt, record=True)
    marks = [n * (c + 1) // checkpoints for c in range(checkpoints)]
    # the base point is inverted together with the probes; its preimage is g_t(x0)
    current = configs.copy()
    gs, gx0, recon = [probes.copy()], [], 0.0
    for mk in marks:
        sub = incs[:mk]
        w, _ = invert_horizontal(K, x0, sub, dt, xi[mk], current, tol=tol)
        current = w
        gs.append(w[1:])
        gx0.append(w[0])
        _, y = horizontal_flow(K, x0, sub, dt, w[1:])
        recon = max(recon, float(np.max(np.abs(y - xi[mk, 1:]))))
    fixed = float(np.max(np.abs(np.array(gx0) - x0)))
    return SkewProductResult(np.array([0.0] + [m * dt for m in marks]), np.array(gs), np.array(gx0),
                             xi[[0] + marks, 0], recon, fixed)


def skew_product_check(K: KernelSystem, x0, probes, T: float, driver: NoiseDriver, seeds: Sequence[int] = (),
                       correlation_probes=None, correlation_dt: Optional[float] = None, checkpoints: int = 4,
                       tol: float = 1e-6) -> Report:
    """(a) g_t(x0) = x0, (b) xi_t(q) = x~_t(g_t(q)), (c) g-increments uncorrelated with x-increments.

    The correlation part reruns the construction for every seed in
    ``seeds`` and tests each bin (checkpoint interval x probe x component
    pair) with |corr| < 2.6 / sqrt(#seeds); at least 90% of bins must pass.
    """
    res = skew_product(K, x0, probes, T, driver, checkpoints)
    details = {"fixed_point": res.fixed_point, "reconstruction": res.reconstruction}
    ok = res.fixed_point < tol and res.reconstruction < tol
    if seeds:
        cp = np.atleast_2d(probes)[:1] if correlation_probes is None else np.atleast_2d(correlation_probes)
        cdt = correlation_dt or driver.dt
        dg, dx = [], []
        for s in seeds:
            r = skew_product(K, x0, cp, T, NoiseDriver(s, driver.stream, driver.dim, cdt), checkpoints)
            dg.append(np.diff(r.g, axis=0))  # (checkpoints, q, d)
            dx.append(np.diff(r.x_path, axis=0))  # (checkpoints, d)
        dg, dx = np.array(dg), np.array(dx)
        corr = []
        for c in range(dg.shape[1]):
            for qi in range(dg.shape[2]):
                for i in range(dg.shape[3]):
                    for j in range(dx.shape[2]):
                        a, b = dg[:, c, qi, i], dx[:, c, j]
                        if np.std(a) == 0 or np.std(b) == 0:
                            corr.append(0.0)
                        else:
                            corr.append(float(np.corrcoef(a, b)[0, 1]))
        corr = np.array(corr)
        bound = 2.6 / np.sqrt(len(seeds))
        frac = float(np.mean(np.abs(corr) < bound))
        details.update({"correlation_fraction_within": frac, "correlation_bound": bound,
                        "max_abs_correlation": float(np.max(np.abs(corr))), "bins": len(corr)})
        ok = ok and frac >= 0.9
    return Report("skew_product", max(res.fixed_point, res.reconstruction), tol, ok, len(np.atleast_2d(probes)),
                  details)


# --------------------------------------------------------------------------
# commutator diagnostics


def _apply_fd(L: DiffusionOperator, g: Callable, u, h: np.ndarray) -> np.ndarray:
    """L g at u with central differences of step h (per coordinate)."""
    u = np.asarray(u, dtype=float)
    d = u.shape[-1]
    g0 = g(u)
    grad = np.empty(u.shape)
    hess = np.empty(u.shape + (d,))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = 1.0
        hi = h[..., i:i + 1]
        gp, gm = g(u + hi * ei), g(u - hi * ei)
        grad[..., i] = (gp - gm) / (2 * hi[..., 0])
        hess[..., i, i] = (gp - 2 * g0 + gm) / hi[..., 0] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = 1.0
            hj = h[..., j:j + 1]
            v = (g(u + hi * ei + hj * ej) - g(u + hi * ei - hj * ej) - g(u - hi * ei + hj * ej)
                 + g(u - hi * ei - hj * ej)) / (4 * hi[..., 0] * hj[..., 0])
            hess[..., i, j] = hess[..., j, i] = v
    vals = np.concatenate([grad.reshape(-1), hess.reshape(-1)])
    if not np.all(np.isfinite(vals)):
        raise NumericalDomainError("non-finite values in the commutator finite differences")
    a = np.asarray(L.a(u), dtype=float)
    b = np.asarray(L.b(u), dtype=float)
    return 0.5 * np.einsum("...ij,...ij->...", a, hess) + np.einsum("...i,...i->...", b, grad)


def commutator_residual(first: DiffusionOperator, second: DiffusionOperator, f: ProbeFunction, u, scale: float):
    """first(second f) - second(first f): inner applications exact, outer by differences of step scale."""
    u = np.asarray(u, dtype=float)
    h = scale * np.maximum(1.0, np.abs(u))

    def inner_second(y):
        return apply(second, f.f, y, grad=f.grad, hess=f.hess)

    def inner_first(y):
        return apply(first, f.f, y, grad=f.grad, hess=f.hess)

    return _apply_fd(first, inner_second, u, h) - _apply_fd(second, inner_first, u, h)


def commutator_check(decomp: Decomposition, samples, battery: Optional[Sequence[ProbeFunction]] = None,
                     floor: float = 1e-6, factor: float = 100.0) -> Report:
    """[A^H, B^V] f at samples for a battery of functions.

    The outer derivatives use central differences at step h = eps^(1/8)
    (scaled); the truncation error is estimated by repeating with h/2 and
    the check passes when |r| < max(factor * |r_h - r_{h/2}|, floor) for
    every sample and function.
    """
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    battery = list(battery) if battery is not None else function_battery(decomp.B.space, max_degree=2)
    h = EPS ** 0.125
    worst, worst_tol, ok = 0.0, floor, True
    for f in battery:
        r1 = commutator_residual(decomp.AH, decomp.BV, f, U, h)
        r2 = commutator_residual(decomp.AH, decomp.BV, f, U, h / 2)
        est = np.abs(r1 - r2)
        tol = np.maximum(factor * est, floor)
        r = np.abs(r2)
        if np.any(r >= tol):
            ok = False
        k = int(np.argmax(r / tol))
        if r[k] / tol[k] > worst / worst_tol:
            worst, worst_tol = float(r[k]), float(tol[k])
    return Report("commutator", worst, worst_tol, ok, len(U), {"functions": len(battery)})


def horizontal_fields(conn: SemiConnection, H_A: HormanderForm) -> Callable:
    """u -> h_u X_A(p(u)), the horizontal lifts of the base noise fields as columns."""

    def fields(u):
        return conn.lift_matrix(u) @ H_A.fields(conn.p(u))

    return fields


def coefficient_constancy_check(horizontal: Callable, coeff_fn: Callable, samples, tol: float = 1e-6,
                                h_scale: float = EPS ** 0.125) -> Report:
    """Horizontal derivatives of the vertical coefficients, X~^j(alpha) and X~^j(beta), vanish.

    ``horizontal`` maps u to the matrix whose columns span the horizontal
    directions (see horizontal_fields); ``coeff_fn`` returns an object with
    ``alpha`` and ``beta``.  Derivatives are central differences with the
    same large step as the commutator check: the coefficients themselves
    carry finite-difference noise (beta contains curvature), and a small
    step would amplify it.
    """
    U = np.atleast_2d(np.asarray(samples, dtype=float))

    def flat(v):
        c = coeff_fn(v)
        return np.concatenate([np.ravel(c.alpha), np.ravel(c.beta)])

    worst = 0.0
    for u in U:
        J = jacobian_fd(flat, u, h_scale=h_scale)
        worst = max(worst, float(np.max(np.abs(J @ horizontal(u)))))
    return Report("coefficient_constancy", worst, tol, worst < tol, len(U))


def negative_control_torus(alpha: float = np.pi / 6, eps: float = 0.1):
    """Torus operator whose vertical part is (1 - tan^2 alpha)/2 (1 + eps sin y) d^2/dy^2."""
    from .examples import torus_system
    base = torus_system(alpha)
    t = np.tan(alpha)

    def a(u):
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = out[..., 1, 0] = t
        out[..., 1, 1] = t * t + (1 - t * t) * (1 + eps * np.sin(u[..., 1]))
        return out

    B = DiffusionOperator(base.B.space, a, lambda u: np.zeros(np.shape(u)), "B_perturbed")
    return B, base.A, base.p, base.samples
