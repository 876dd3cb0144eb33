"""SDE integration, PSD square roots, seeded noise and Girsanov weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import BsharpMismatch, Explosion, NotPSD, NumericalDomainError, ValidationError
from .geometry import ChartSpace, PointPath
from .operators import DiffusionOperator, HormanderForm

NORM_CAP = 1e8


def sqrt_psd(S, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition (batched).

    Eigenvalues in [-tol, 0) are clamped to zero; anything more negative
    raises NotPSD.
    """
    S = np.asarray(S, dtype=float)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    w, V = np.linalg.eigh(S)
    if np.any(w < -tol):
        raise NotPSD(f"matrix has eigenvalue {w.min():.3e} < -{tol}")
    r = np.sqrt(np.clip(w, 0.0, None))
    return (V * r[..., None, :]) @ np.swapaxes(V, -1, -2)


class NoiseDriver:
    """Reproducible Gaussian increments keyed by (seed, stream, step).

    Uses the counter-based Philox generator: the key is (seed, stream) and
    the step index selects a disjoint counter block, so the increments of a
    given step never depend on how many other steps were drawn or in which
    order.  Row i of a batch draw is the increment of sample (particle) i.
    """

    def __init__(self, seed: int, stream: int = 0, dim: int = 1, dt: float = 1e-3):
        if dt <= 0:
            raise ValidationError("dt must be positive")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.dim = int(dim)
        self.dt = float(dt)

    def _generator(self, step: int) -> np.random.Generator:
        bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64),
                              counter=np.array([0, 0, int(step), 0], dtype=np.uint64))
        return np.random.Generator(bg)

    def normals(self, step: int, count: Optional[int] = None) -> np.ndarray:
        shape = (self.dim,) if count is None else (count, self.dim)
        return self._generator(step).standard_normal(shape)

    def increments(self, step: int, count: Optional[int] = None) -> np.ndarray:
        return np.sqrt(self.dt) * self.normals(step, count)

    def block(self, n_steps: int, count: Optional[int] = None, start: int = 0) -> np.ndarray:
        """Increments for steps start..start+n_steps-1, stacked on the first axis."""
        return np.stack([self.increments(start + k, count) for k in range(n_steps)])

    def substream(self, offset: int) -> "NoiseDriver":
        return NoiseDriver(self.seed, self.stream + offset, self.dim, self.dt)


def _check_state(x):
    if not np.all(np.isfinite(x)):
        raise NumericalDomainError("non-finite state during integration")
    if np.max(np.abs(x)) > NORM_CAP:
        raise Explosion("state exceeded the norm cap 1e8")


def _ito_coefficients(system):
    if isinstance(system, HormanderForm):
        return system.ito_drift, system.fields
    if isinstance(system, DiffusionOperator):
        return system.b, lambda x: sqrt_psd(system.a(x))
    if isinstance(system, tuple) and len(system) == 2:
        a, b = system
        return b, lambda x: sqrt_psd(a(x))
    raise ValidationError("system must be a HormanderForm, a DiffusionOperator or an (a, b) pair")


def noise_dim(system, x0) -> int:
    if isinstance(system, HormanderForm):
        return system.fields(np.asarray(x0, dtype=float)).shape[-1]
    return np.asarray(x0).shape[-1]


def integrate(system: Union[HormanderForm, DiffusionOperator, tuple], x0, T: float, driver: NoiseDriver,
              scheme: str = "ito_euler", space: Optional[ChartSpace] = None, stride: int = 1,
              n_steps: Optional[int] = None) -> PointPath:
    """Integrate an SDE from x0 over [0, T] with step driver.dt.

    ``ito_euler`` is Euler-Maruyama for dx = b dt + S dB with S = sqrt(a) (or
    the Hormander fields and their Ito drift); ``stratonovich_heun`` is the
    Heun predictor-corrector for dx = X0 dt + X o dB and needs a Hormander
    form.  ``x0`` may carry a leading batch axis of independent paths; the
    batch row i uses row i of the driver draws.  Charts with a retraction are
    projected back after every step.  Every ``stride``-th state is recorded.
    """
    x = np.array(x0, dtype=float)
    dt = driver.dt
    n = int(round(T / dt)) if n_steps is None else int(n_steps)
    if n < 1:
        raise ValidationError("T must cover at least one step")
    space = space or getattr(system, "space", None)
    retract = space.retract if space is not None else (lambda y: y)
    count = x.shape[0] if x.ndim == 2 else None
    m = noise_dim(system, x0 if count is None else x[0])
    if driver.dim != m:
        raise ValidationError(f"driver dimension {driver.dim} does not match noise dimension {m}")
    times, states = [0.0], [x.copy()]
    if scheme == "ito_euler":
        b, S = _ito_coefficients(system)
        for k in range(n):
            dB = driver.increments(k, count)
            x = x + b(x) * dt + np.einsum("...ij,...j->...i", S(x), dB)
            x = retract(x)
            _check_state(x)
            if (k + 1) % stride == 0 or k + 1 == n:
                times.append((k + 1) * dt)
                states.append(x.copy())
    elif scheme == "stratonovich_heun":
        if not isinstance(system, HormanderForm):
            raise ValidationError("the Stratonovich scheme needs a Hormander form")
        for k in range(n):
            dB = driver.increments(k, count)
            x = heun_step(system, x, dB, dt)
            x = retract(x)
            _check_state(x)
            if (k + 1) % stride == 0 or k + 1 == n:
                times.append((k + 1) * dt)
                states.append(x.copy())
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    return PointPath(np.array(times), np.array(states), {"seed": driver.seed, "stream": driver.stream,
                                                         "dt": dt, "scheme": scheme, "T": n * dt})


def heun_step(H: HormanderForm, x, dB, dt: float):
    """One Heun predictor-corrector step for dx = X0 dt + X o dB."""
    X1 = H.fields(x)
    d1 = H.drift(x)
    pred = x + d1 * dt + np.einsum("...ij,...j->...i", X1, dB)
    X2 = H.fields(pred)
    d2 = H.drift(pred)
    return x + 0.5 * (d1 + d2) * dt + 0.5 * np.einsum("...ij,...j->...i", X1 + X2, dB)


@dataclass
class GirsanovWeight:
    """Traces of M, its bracket and Z = exp(M - bracket/2) on the path time grid."""

    times: np.ndarray
    M: np.ndarray
    bracket: np.ndarray
    Z: np.ndarray

    @property
    def log_Z(self) -> np.ndarray:
        return self.M - 0.5 * self.bracket


def girsanov_weight(path: PointPath, bsharp: Callable, sigma: Callable, increments, X: Callable,
                    b: Optional[Callable] = None, tol: float = 1e-6) -> GirsanovWeight:
    """Accumulate M = sum <b#, X dB> and <M> = sum 2 b# sigma b# dt along a path.

    ``increments`` has shape (len(path)-1, ..., m) and must be the driving
    Brownian increments used to produce ``path``; ``X`` gives the noise
    coefficient.  When the target drift ``b`` is supplied, the defining
    relation 2 sigma(b#) = b is checked along the path.
    """
    pts = path.points[:-1]
    dt = np.diff(path.times)
    dt = dt.reshape(dt.shape + (1,) * (pts.ndim - 2))
    bs = np.asarray(bsharp(pts), dtype=float)
    S = np.asarray(sigma(pts), dtype=float)
    if b is not None:
        target = np.asarray(b(pts), dtype=float)
        res = np.max(np.abs(2.0 * np.einsum("...ij,...j->...i", S, bs) - target))
        if res > tol * max(1.0, float(np.max(np.abs(target)))):
            raise BsharpMismatch(f"2 sigma(b#) differs from b by {res:.3e}")
    dM = np.einsum("...i,...ij,...j->...", bs, np.asarray(X(pts), dtype=float), np.asarray(increments, dtype=float))
    dQ = 2.0 * np.einsum("...i,...ij,...j->...", bs, S, bs) * dt
    zero = np.zeros((1,) + dM.shape[1:])
    M = np.concatenate([zero, np.cumsum(dM, axis=0)])
    Q = np.concatenate([zero, np.cumsum(dQ, axis=0)])
    return GirsanovWeight(path.times, M, Q, np.exp(M - 0.5 * Q))
