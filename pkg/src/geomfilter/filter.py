"""Conditional laws of the N-valued diffusion given its projection to M.

Two families of estimators are provided.

* The conditional sampler integrates, for each particle,
      dy = h_y(o dsigma) + V(y) dW + V0(y) dt,
  with h the horizontal lift, V = sqrt(a^V) and V0 = b^V from the vertical
  operator.  All particles carry equal weight.
* The weighted (Kallianpur-Striebel) filter propagates the signal under the
  reference measure in which the observation has no drift and reweights with
      log w += b#.dx - 1/2 b#.b dt,     b# = (S S^T)^+ b,
  where S is the observation noise coefficient and b the observation drift.

Filtering identities are checked as residual diagnostics: the ensemble
estimate of pi_t f against the integrated right-hand side of the Kushner
equation (weighted filter) or of the conditional generator (sampler), with
Monte Carlo error bars accumulated alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .connection import Decomposition, _mv
from .errors import DegenerateWeights, Explosion, NoBridgeSampler, NotAboveStart, NotCohesive, ValidationError
from .geometry import PointPath
from .linalg import image_projector, numerical_rank, pinv
from .operators import HormanderForm, ProbeFunction, Report, apply
from .simulate import NORM_CAP, NoiseDriver, integrate, sqrt_psd

RESAMPLE_STREAM_OFFSET = 1_000_003
LOG_TINY = np.log(1e-300)


# --------------------------------------------------------------------------
# ensembles


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.isfinite(w).all():
            raise ValidationError("weights must be finite and non-negative")
        s = w.sum()
        if s <= 0:
            raise DegenerateWeights("all weights vanish")
        self.weights = w / s

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self, f: Optional[Callable] = None):
        vals = self.particles if f is None else np.asarray(f(self.particles), dtype=float)
        return np.tensordot(self.weights, vals, axes=1)

    def var(self, f: Optional[Callable] = None):
        vals = self.particles if f is None else np.asarray(f(self.particles), dtype=float)
        m = np.tensordot(self.weights, vals, axes=1)
        return np.tensordot(self.weights, (vals - m) ** 2, axes=1)

    def standard_error(self, f: Optional[Callable] = None):
        return np.sqrt(self.var(f) / self.ess)


def multinomial_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Indices of a multinomial resample of the normalised weights."""
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(len(w)), side="right")
    return np.minimum(idx, len(w) - 1)


def _resample_rng(driver: NoiseDriver, step: int) -> np.random.Generator:
    bg = np.random.Philox(key=np.array([driver.seed, (driver.stream + RESAMPLE_STREAM_OFFSET) & 0xFFFFFFFFFFFFFFFF],
                                       dtype=np.uint64),
                          counter=np.array([0, 0, int(step), 0], dtype=np.uint64))
    return np.random.Generator(bg)


# --------------------------------------------------------------------------
# conditional sampler


@dataclass
class ConditionalTrace:
    """Particle positions at the recorded times (equal weights)."""

    times: np.ndarray
    particles: np.ndarray  # (n_rec, count, dim N)

    @property
    def final(self) -> ParticleEnsemble:
        P = self.particles[-1]
        return ParticleEnsemble(P, np.ones(len(P)), float(self.times[-1]))

    def mean(self, f: Optional[Callable] = None) -> np.ndarray:
        vals = self.particles if f is None else np.asarray(f(self.particles), dtype=float)
        return vals.mean(axis=1)


def _vertical_parts(decomp: Decomposition, u):
    return decomp.vertical_noise(u), decomp.vertical_drift(u)


def _conditional_step(decomp: Decomposition, u, ds, dW, dt: float, vertical: bool):
    lift = decomp.conn.lift_matrix
    h0 = _mv(lift(u), ds)
    h1 = _mv(lift(u + h0), ds)
    new = u + 0.5 * (h0 + h1)
    if vertical:
        V, V0 = _vertical_parts(decomp, u)
        new = new + _mv(V, dW) + V0 * dt
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > NORM_CAP:
        raise Explosion("conditional sampler exceeded the norm cap 1e8")
    return new


def conditional_sampler(decomp: Decomposition, sigma: PointPath, u0, particles: int, driver: NoiseDriver,
                        record_every: int = 1, vertical: bool = True, tol_start: float = 1e-8) -> ConditionalTrace:
    """Sample the conditional law of the N-process given the observed base path sigma.

    The horizontal part uses Heun's rule on the increments of sigma, the
    vertical part an Euler step with independent noise per particle (row i
    of each driver draw belongs to particle i).  The driver dimension must
    equal dim N.
    """
    u0 = np.asarray(u0, dtype=float)
    M = decomp.conn.p.codomain
    gap = float(np.max(np.linalg.norm(M.displacement(decomp.conn.p(u0), sigma.points[0]), axis=-1)))
    if gap > tol_start:
        raise NotAboveStart(f"p(u0) is {gap:.3e} away from the observed path start")
    dN = u0.shape[-1]
    if vertical and driver.dim != dN:
        raise ValidationError(f"driver dimension must be {dN} for the vertical noise")
    u = np.broadcast_to(u0, (particles, dN)).copy()
    incs = M.displacement(sigma.points[:-1], sigma.points[1:])
    dts = np.diff(sigma.times)
    times, recs = [sigma.times[0]], [u.copy()]
    n = len(dts)
    for k in range(n):
        dW = driver.increments(k, particles) * np.sqrt(dts[k] / driver.dt) if vertical else None
        u = _conditional_step(decomp, u, incs[k], dW, dts[k], vertical)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(sigma.times[k + 1])
            recs.append(u.copy())
    return ConditionalTrace(np.array(times), np.array(recs))


def conditional_residual(trace: ConditionalTrace, f: ProbeFunction, decomp: Decomposition, sigma: PointPath,
                         n_sd: float = 4.0, floor: float = 2e-3) -> Report:
    """pi_t f against f(u0) + int pi(B^V f) ds + int pi(df h) o dsigma along the recorded trace.

    The trace must be recorded at every step of sigma.  The error bar is the
    ensemble standard error of the vertical martingale term plus a
    discretisation floor.
    """
    if len(trace.times) != len(sigma.times):
        raise ValidationError("the trace must be recorded at every observation time")
    M = decomp.conn.p.codomain
    incs = M.displacement(sigma.points[:-1], sigma.points[1:])
    dts = np.diff(sigma.times)
    P = trace.particles
    lhs = f.f(P).mean(axis=1)
    grads = f.grad(P)  # (n, count, d)
    BVf = apply(decomp.BV, f.f, P, grad=f.grad, hess=f.hess).mean(axis=1)
    H = decomp.conn.lift_matrix(P)  # (n, count, dN, dM)
    dfh = np.einsum("tpi,tpij->tpj", grads, H).mean(axis=1)  # (n, dM)
    strat = 0.5 * np.einsum("tj,tj->t", dfh[:-1] + dfh[1:], incs)
    drift = 0.5 * (BVf[:-1] + BVf[1:]) * dts
    rhs = lhs[0] + np.concatenate([[0.0], np.cumsum(strat + drift)])
    V = decomp.vertical_noise(P[:-1])
    gv = np.einsum("tpi,tpij->tpj", grads[:-1], V)
    var = np.cumsum(np.mean(np.sum(gv ** 2, axis=-1), axis=1) * dts) / P.shape[1]
    sd = np.concatenate([[0.0], np.sqrt(var)])
    resid = np.abs(lhs - rhs)
    tol = n_sd * sd + floor
    worst = int(np.argmax(resid / tol))
    ok = bool(np.all(resid <= tol))
    return Report("conditional_filter_residual", float(resid.max()), float(tol[worst]), ok, P.shape[1],
                  {"final_residual": float(resid[-1]), "final_sd": float(sd[-1])})


# --------------------------------------------------------------------------
# weighted filter


@dataclass
class FilterModel:
    """Signal-observation system on N with observation coordinates and signal coordinates.

    ``H`` is a Hormander form on N in Ito reading (fields and Ito drift are
    used); the observation noise rows must depend on the observation only.
    """

    H: HormanderForm
    obs: List[int]
    sig: List[int]
    prior_mean: np.ndarray
    prior_cov: np.ndarray

    def assemble(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = z.shape[:-1]
        u = np.empty(shape + (len(self.obs) + len(self.sig),))
        u[..., self.obs] = np.broadcast_to(x, shape + (len(self.obs),))
        u[..., self.sig] = z
        return u

    def check_cohesive(self, samples) -> Report:
        """Observation symbol of constant rank and observation drift in its image."""
        res, ranks = 0.0, set()
        for u in np.atleast_2d(samples):
            X = self.H.fields(u)
            S = X[self.obs]
            b = self.H.ito_drift(u)[self.obs]
            ranks.add(int(numerical_rank(S)))
            P = image_projector(S @ S.T)
            res = max(res, float(np.linalg.norm(b - P @ b)))
        ok = len(ranks) == 1 and 0 not in ranks and res < 1e-8
        return Report("observation_cohesive", res, 1e-8, ok, len(np.atleast_2d(samples)), {"ranks": sorted(ranks)})


def filter_model(system) -> FilterModel:
    """FilterModel of a registered signal-observation example."""
    ex = system.extras
    if "signal_coords" not in ex:
        raise ValidationError(f"system {system.id} is not a signal-observation system")
    a, q = ex["a"], ex["q"]
    var0 = q / (-2 * a) if a < 0 else 1.0
    return FilterModel(system.H_B, list(ex["observation_coords"]), list(ex["signal_coords"]),
                       np.zeros(len(ex["signal_coords"])), var0 * np.eye(len(ex["signal_coords"])))


def simulate_observation(model: FilterModel, T: float, driver: NoiseDriver, x0=None, z0=None):
    """Simulate a signal and its observation; returns (full path, observed path)."""
    x0 = np.zeros(len(model.obs)) if x0 is None else np.asarray(x0, dtype=float)
    if z0 is None:
        g = np.random.Generator(np.random.Philox(key=np.array([driver.seed, driver.stream + 17], dtype=np.uint64)))
        z0 = g.multivariate_normal(model.prior_mean, model.prior_cov)
    u0 = model.assemble(x0, np.asarray(z0, dtype=float)[None, :])[0]
    path = integrate(model.H, u0, T, driver, scheme="ito_euler")
    obs = PointPath(path.times, path.points[:, model.obs], dict(path.meta))
    return path, obs


@dataclass
class FilterEstimate:
    times: np.ndarray
    pi_mean: np.ndarray
    pi_var: np.ndarray
    pi_hat_f: np.ndarray
    pi_hat_1: np.ndarray
    ess: np.ndarray
    pi_b: np.ndarray
    obs_cov: np.ndarray
    log_Zbar: np.ndarray
    kushner: Dict[str, dict] = field(default_factory=dict)
    resample_times: List[float] = field(default_factory=list)
    final: Optional[ParticleEnsemble] = None

    @property
    def Zbar(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_Zbar)

    def ks_identity_residual(self) -> float:
        """max |pi_t f * pi_hat_t 1 - pi_hat_t f| relative to |pi_hat_t f|."""
        lhs = self.pi_mean * self.pi_hat_1[:, None]
        return float(np.max(np.abs(lhs - self.pi_hat_f) / np.maximum(np.abs(self.pi_hat_f), 1e-300)))

    def columns(self) -> Dict[str, np.ndarray]:
        return {"t": self.times, "pi_mean": self.pi_mean[:, 0], "pi_var": self.pi_var[:, 0], "ESS": self.ess,
                "Zbar": self.Zbar}


def ks_filter(model: FilterModel, observed: PointPath, particles: int, driver: NoiseDriver, resample: bool = True,
              functions: Sequence[ProbeFunction] = (), z0: Optional[np.ndarray] = None) -> FilterEstimate:
    """Weighted particle filter under the reference measure.

    Signal particles move by
        dz = (Z0 - Z S^+ b) dt + Z S^+ dx + Z (I - S^+ S) dN
    which is the signal law given the observation increments after the
    observation drift has been removed.  ``functions`` (on signal
    coordinates) get the Kushner equation integrated alongside, with its
    Monte Carlo variance budget.  The driver dimension is the noise
    dimension of the model.
    """
    ds, dM = len(model.sig), len(model.obs)
    if z0 is None:
        g = _resample_rng(driver, -1 & 0xFFFFFFFF)
        z = g.multivariate_normal(model.prior_mean, model.prior_cov, size=particles)
    else:
        z = np.array(z0, dtype=float).reshape(particles, ds)
    lw = np.zeros(particles)
    log_scale = 0.0  # log of the common factor removed from lw
    xs = observed.points
    dts = np.diff(observed.times)
    n = len(dts)
    m = model.H.fields(model.assemble(xs[0], z[:1]))[0].shape[-1]
    if driver.dim != m:
        raise ValidationError(f"driver dimension must be {m}")
    rec = {k: [] for k in ("pi_mean", "pi_var", "pi_hat_f", "pi_hat_1", "ess", "pi_b", "log_Zbar")}
    ku = {f.name: {"lhs": [], "rhs": [], "var": [], "acc": 0.0, "v": 0.0} for f in functions}
    resample_times: List[float] = []
    obs_cov = None

    def record(z, lw, log_scale, b):
        mx = lw.max()
        if mx + log_scale < LOG_TINY:
            raise DegenerateWeights("all unnormalised weights fell below 1e-300")
        e = np.exp(lw - mx)
        s = e.sum()
        W = e / s
        mean = W @ z
        rec["pi_mean"].append(mean)
        rec["pi_var"].append(W @ (z - mean) ** 2)
        scale = np.exp(mx + log_scale)
        rec["pi_hat_1"].append(s / particles * scale)
        rec["pi_hat_f"].append((e @ z) / particles * scale)
        rec["ess"].append(1.0 / np.sum(W * W))
        rec["pi_b"].append(W @ b)
        rec["log_Zbar"].append(np.log(s / particles) + mx + log_scale)
        return W

    for k in range(n + 1):
        u = model.assemble(xs[k], z)
        X = model.H.fields(u)
        drift = model.H.ito_drift(u)
        S = X[0][model.obs]  # observation noise depends on x only
        b = drift[:, model.obs]
        W = record(z, lw, log_scale, b)
        for f in functions:
            d = ku[f.name]
            d["lhs"].append(W @ f.f(z))
            d["rhs"].append(d["acc"] if k else W @ f.f(z))
            d["var"].append(d["v"])
            if k == 0:
                d["acc"] = W @ f.f(z)
        if k == n:
            break
        dt = dts[k]
        dx = xs[k + 1] - xs[k]
        SSt = S @ S.T
        if obs_cov is None:
            obs_cov = SSt
        G = pinv(SSt)
        bs = b @ G.T
        Sp = pinv(S)  # (m, dM)
        Z = X[:, model.sig, :]
        Z0 = drift[:, model.sig]
        ZK = Z @ (np.eye(m) - Sp @ S)
        # Kushner bookkeeping on the pre-step ensemble
        if functions:
            innov = dx - (W @ b) * dt
            ZZt = Z @ np.swapaxes(Z, -1, -2)
            for f in functions:
                d = ku[f.name]
                fz = f.f(z)
                gz = f.grad(z)
                hz = f.hess(z)
                Lf = np.sum(Z0 * gz, axis=-1) + 0.5 * np.sum(ZZt * hz, axis=(-1, -2))
                Gam = (np.swapaxes(Z, -1, -2) @ gz[:, :, None])[:, :, 0] @ (G @ S).T
                pf = W @ fz
                gain = W @ (fz[:, None] * bs) - pf * (W @ bs) + W @ Gam
                d["acc"] += (W @ Lf) * dt + gain @ innov
                noise = (gz[:, None, :] @ ZK)[:, 0, :]
                d["v"] += np.sum(W * W * np.sum(noise ** 2, axis=-1)) * dt
        # weights
        lw = lw + bs @ dx - 0.5 * np.sum(bs * b, axis=-1) * dt
        # propagate
        dN = driver.increments(k, particles) * np.sqrt(dt / driver.dt)
        ZSp = Z @ Sp
        z = (z + (Z0 - (ZSp @ b[:, :, None])[:, :, 0]) * dt + ZSp @ dx
             + (ZK @ dN[:, :, None])[:, :, 0])
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > NORM_CAP:
            raise Explosion("signal particles exceeded the norm cap 1e8")
        mx = lw.max()
        log_scale += mx
        lw = lw - mx
        if resample:
            e = np.exp(lw)
            Wn = e / e.sum()
            if 1.0 / np.sum(Wn * Wn) < particles / 2:
                for f in functions:
                    vals = f.f(z)
                    mu = Wn @ vals
                    ku[f.name]["v"] += (Wn @ (vals - mu) ** 2) / particles
                idx = multinomial_resample(Wn, _resample_rng(driver, k))
                z = z[idx]
                lw = np.full(particles, np.log(e.mean()))
                resample_times.append(float(observed.times[k + 1]))
    est = FilterEstimate(observed.times, np.array(rec["pi_mean"]), np.array(rec["pi_var"]),
                         np.array(rec["pi_hat_f"]), np.array(rec["pi_hat_1"]), np.array(rec["ess"]),
                         np.array(rec["pi_b"]), obs_cov if obs_cov is not None else np.eye(dM),
                         np.array(rec["log_Zbar"]), resample_times=resample_times)
    for f in functions:
        d = ku[f.name]
        est.kushner[f.name] = {"lhs": np.array(d["lhs"]), "rhs": np.array(d["rhs"]), "var": np.array(d["var"])}
    e = np.exp(lw - lw.max())
    est.final = ParticleEnsemble(z, e, float(observed.times[-1]))
    return est


def filtering_equation_residual(estimate: FilterEstimate, name: str, n_sd: float = 4.0,
                                discretisation: float = 0.0) -> Report:
    """Kushner-form residual |pi_t f - rhs_t| against n_sd Monte Carlo standard deviations.

    ``discretisation`` is an absolute allowance added to the tolerance for the
    time-stepping error.
    """
    if name not in estimate.kushner:
        raise ValidationError(f"no Kushner record for {name!r}; pass it to ks_filter via functions")
    d = estimate.kushner[name]
    resid = np.abs(d["lhs"] - d["rhs"])
    sd = np.sqrt(d["var"])
    tol = n_sd * sd + discretisation + 1e-12 * np.maximum(1.0, np.abs(d["lhs"]))
    worst = int(np.argmax(resid / tol))
    ok = bool(np.all(resid <= tol))
    return Report("filtering_equation_residual", float(resid.max()), float(tol[worst]), ok, len(resid),
                  {"final_residual": float(resid[-1]), "final_sd": float(sd[-1]),
                   "z_final": float(resid[-1] / sd[-1]) if sd[-1] > 0 else 0.0})


# --------------------------------------------------------------------------
# innovations


@dataclass
class InnovationsAccumulator:
    times: np.ndarray
    I: np.ndarray
    increments: np.ndarray
    bin_z: np.ndarray
    critical: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.bin_z) < self.critical))

    def report(self) -> Report:
        worst = float(np.max(np.abs(self.bin_z)))
        return Report("innovations_bins", worst, self.critical, self.passed, len(self.bin_z))


def innovations(observed: PointPath, pi_b, obs_cov, alpha=None, bins: int = 20, level: float = 0.95,
                familywise: bool = True) -> InnovationsAccumulator:
    """I_t = sum alpha.(dx - pi(b) dt) with a zero-mean z-test on each time bin.

    ``obs_cov`` is the observation covariance rate S S^T (the innovation
    increments have covariance obs_cov dt).  With ``familywise`` the per-bin
    level is Sidak-corrected so that the whole battery has the stated level.
    """
    dx = np.diff(observed.points, axis=0)
    dt = np.diff(observed.times)
    pi_b = np.asarray(pi_b, dtype=float)[:-1]
    dM = dx.shape[1]
    a = np.ones(dM) if alpha is None else np.asarray(alpha, dtype=float)
    a = np.broadcast_to(a, dx.shape)
    inc = np.einsum("ti,ti->t", a, dx - pi_b * dt[:, None])
    I = np.concatenate([[0.0], np.cumsum(inc)])
    rate = np.einsum("ti,ij,tj->t", a, np.asarray(obs_cov, dtype=float), a) * dt
    edges = np.linspace(0, len(inc), bins + 1).astype(int)
    z = np.array([inc[s:e].sum() / np.sqrt(rate[s:e].sum()) for s, e in zip(edges[:-1], edges[1:])])
    per_bin = level ** (1.0 / bins) if familywise else level
    crit = float(norm.ppf(0.5 + 0.5 * per_bin))
    return InnovationsAccumulator(observed.times, I, inc, z, crit)


def kalman_bucy(observed: PointPath, a: float, c: float, q: float, r: float, m0: float = 0.0, P0: float = 0.5):
    """Euler discretisation of the Kalman-Bucy filter on the observation grid.

    dm = a m dt + (P c / r)(dx - c m dt),  dP = (2 a P + q - c^2 P^2 / r) dt.
    """
    x = observed.points[:, 0]
    dts = np.diff(observed.times)
    m = np.empty(len(x))
    P = np.empty(len(x))
    m[0], P[0] = m0, P0
    for k, dt in enumerate(dts):
        dx = x[k + 1] - x[k]
        m[k + 1] = m[k] + a * m[k] * dt + P[k] * c / r * (dx - c * m[k] * dt)
        P[k + 1] = P[k] + (2 * a * P[k] + q - c * c * P[k] ** 2 / r) * dt
    return m, P


# --------------------------------------------------------------------------
# partition-based cross-check and bridges


@dataclass
class PartitionEstimate:
    """Kernel-conditioned particles from independent batches.

    Resampling makes particles within a batch share ancestors, so the
    per-particle standard error understates the Monte Carlo error; the
    between-batch spread of the batch means is used instead.
    """

    batches: List[ParticleEnsemble]
    partition_times: np.ndarray
    ess_trace: np.ndarray  # (batch, partition point)

    @property
    def ensemble(self) -> ParticleEnsemble:
        P = np.concatenate([b.particles for b in self.batches])
        W = np.concatenate([b.weights for b in self.batches]) / len(self.batches)
        return ParticleEnsemble(P, W, self.batches[0].time)

    def mean(self, f: Optional[Callable] = None):
        return np.mean([b.mean(f) for b in self.batches], axis=0)

    def standard_error(self, f: Optional[Callable] = None):
        if len(self.batches) < 2:
            return self.batches[0].standard_error(f)
        m = np.array([b.mean(f) for b in self.batches])
        return m.std(axis=0, ddof=1) / np.sqrt(len(m))


def partition_conditioning(H: HormanderForm, p, sigma: PointPath, u0, n_points: int, bandwidth: float,
                           particles: int, driver: NoiseDriver, scheme: str = "stratonovich_heun",
                           resample: bool = True, batches: int = 10) -> PartitionEstimate:
    """Condition unconditioned B-paths on sigma at n_points equally spaced times by Gaussian kernels.

    Weights are applied sequentially at each partition time; particles are
    resampled (multinomial) after each weighting when ESS < count/2 so the
    estimator does not collapse as the partition refines.  The particles are
    split into independent batches (batch b uses driver stream
    ``stream + b * 65536``) so that an honest standard error is available.
    """
    if n_points < 1 or bandwidth <= 0:
        raise ValidationError("need at least one partition point and a positive bandwidth")
    if batches < 1 or particles < batches:
        raise ValidationError("need at least one particle per batch")
    runs, traces = [], []
    for b, count in enumerate(np.diff(np.linspace(0, particles, batches + 1).astype(int))):
        drv = NoiseDriver(driver.seed, driver.stream + b * 65536, driver.dim, driver.dt)
        ens, tj, ess = _partition_batch(H, p, sigma, u0, n_points, bandwidth, int(count), drv, scheme, resample)
        runs.append(ens)
        traces.append(ess)
    return PartitionEstimate(runs, tj, np.array(traces))


def _partition_batch(H, p, sigma, u0, n_points, bandwidth, particles, driver, scheme, resample):
    T = float(sigma.times[-1])
    tj = T * np.arange(1, n_points + 1) / n_points
    M = p.codomain
    u = np.broadcast_to(np.asarray(u0, dtype=float), (particles, H.dim)).copy()
    lw = np.zeros(particles)
    dt = driver.dt
    steps_total = int(round(T / dt))
    done = 0
    ess_trace = []
    for j, t in enumerate(tj):
        target = int(round(t / dt))
        nsteps = target - done
        for k in range(done, target):
            dB = driver.increments(k, particles)
            if scheme == "stratonovich_heun":
                from .simulate import heun_step
                u = heun_step(H, u, dB, dt)
            else:
                u = u + H.ito_drift(u) * dt + _mv(H.fields(u), dB)
        done = target
        if nsteps and (not np.all(np.isfinite(u)) or np.max(np.abs(u)) > NORM_CAP):
            raise Explosion("partition sampler exceeded the norm cap 1e8")
        obs = sigma.at(t)
        d = M.displacement(obs, p(u))
        lw = lw - 0.5 * np.sum(d * d, axis=-1) / bandwidth ** 2
        mx = lw.max()
        if not np.isfinite(mx) or mx < LOG_TINY:
            raise DegenerateWeights("all kernel weights fell below 1e-300")
        W = np.exp(lw - mx)
        W /= W.sum()
        ess_trace.append(1.0 / np.sum(W * W))
        if resample and ess_trace[-1] < particles / 2 and j + 1 < len(tj):
            idx = multinomial_resample(W, _resample_rng(driver, steps_total + j))
            u = u[idx]
            lw = np.zeros(particles)
        else:
            lw = lw - mx
    return ParticleEnsemble(u, np.exp(lw - lw.max()), T), tj, np.array(ess_trace)


def _is_flat_base(decomp: Decomposition, samples) -> bool:
    A = decomp.conn.A
    if A.space.is_periodic:
        return False
    pts = np.atleast_2d(samples)
    a = np.asarray(A.a(pts))
    b = np.asarray(A.b(pts))
    return bool(np.allclose(a, a[0], atol=1e-12) and np.allclose(b, 0.0, atol=1e-12))


def brownian_bridges(x0, z, T: float, n_steps: int, a, count: int, driver: NoiseDriver) -> np.ndarray:
    """Bridges x0 -> z of Brownian motion with covariance rate a; shape (n_steps+1, count, dM)."""
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    S = sqrt_psd(a)
    dt = T / n_steps
    dW = np.stack([driver.increments(k, count) for k in range(n_steps)]) * np.sqrt(dt / driver.dt)
    W = np.concatenate([np.zeros((1, count, len(x0))), np.cumsum(dW, axis=0)])
    t = np.linspace(0.0, T, n_steps + 1)[:, None, None]
    free = np.einsum("ij,tpj->tpi", S, W)
    return x0 + (z - x0) * t / T + free - t / T * free[-1]


def bridge_conditioning(decomp: Decomposition, x0, z, T: float, u0, particles: int, driver: NoiseDriver,
                        n_steps: int = 1000, vertical: bool = True) -> ParticleEnsemble:
    """Particles driven by dy = h_y(o db) + vertical noise with b a bridge of the base from x0 to z."""
    x0 = np.asarray(x0, dtype=float)
    if not _is_flat_base(decomp, np.array([x0, np.asarray(z, dtype=float)])):
        raise NoBridgeSampler("bridges are only available for a flat base with constant symbol and no drift")
    a = np.asarray(decomp.conn.A.a(x0), dtype=float)
    dM = len(x0)
    bridge_driver = NoiseDriver(driver.seed, driver.stream + 1, dM, driver.dt)
    paths = brownian_bridges(x0, z, T, n_steps, a, particles, bridge_driver)
    u0 = np.asarray(u0, dtype=float)
    if float(np.max(np.abs(decomp.conn.p(u0) - x0))) > 1e-8:
        raise NotAboveStart("u0 does not lie over the bridge start")
    u = np.broadcast_to(u0, (particles, len(u0))).copy()
    dt = T / n_steps
    incs = np.diff(paths, axis=0)
    for k in range(n_steps):
        dW = driver.increments(k, particles) * np.sqrt(dt / driver.dt) if vertical else None
        u = _conditional_step(decomp, u, incs[k], dW, dt, vertical)
    return ParticleEnsemble(u, np.ones(particles), T)
