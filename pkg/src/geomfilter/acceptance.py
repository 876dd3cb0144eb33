"""The acceptance battery: ten end-to-end checks with fixed seeds and tolerances.

Each criterion function returns a CriterionResult carrying the measured
quantities, the thresholds they were compared with and the wall time.  The
runtime budget is part of the pass condition.  Used by the ``check`` CLI
subcommand and by tests/test_acceptance.py.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from . import examples
from .connection import decompose, lift_path
from .filter import (conditional_sampler, filter_model, innovations, kalman_bucy, ks_filter,
                     partition_conditioning, simulate_observation)
from .flows import KernelSystem, commutator_check, commutator_residual, negative_control_torus, skew_product_check
from .geometry import PointPath, euclidean
from .operators import HormanderForm, _jsonable, function_battery, is_over
from .simulate import NoiseDriver, girsanov_weight, integrate
from .weitzenboeck import (ExteriorBasis, annihilation, casimir, casimir_reference, creation, eigen_bounds_check,
                           symmetric_space_lambda)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime: float
    budget: float
    details: Dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        summary = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items() if not isinstance(v, (list, dict)))
        return f"criterion {self.number:2d} [{status}] {self.title} ({self.runtime:.2f}s / {self.budget:g}s) {summary}"

    def to_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": bool(self.passed),
                "runtime_s": float(self.runtime), "budget_s": float(self.budget), "details": _jsonable(self.details)}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    return str(v)


def _timed(number: int, title: str, budget: float, body: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    ok, details = body()
    runtime = time.perf_counter() - t0
    details["within_budget"] = runtime < budget
    return CriterionResult(number, title, bool(ok) and runtime < budget, runtime, budget, details)


# --------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    def body():
        ex = examples.get("torus", {"alpha": np.pi / 6})
        dec = decompose(ex.B, ex.A, ex.p, ex.samples)
        t = np.tan(np.pi / 6)
        U = ex.samples
        bv = 0.5 * np.asarray(dec.BV.a(U))
        ah = 0.5 * np.asarray(dec.AH.a(U))
        bv_ref = np.array([[0.0, 0.0], [0.0, 0.5 * (1 - t * t)]])
        ah_ref = 0.5 * np.array([[1.0, t], [t, t * t]])
        err = max(float(np.max(np.abs(bv - bv_ref))), float(np.max(np.abs(ah - ah_ref))),
                  float(np.max(np.abs(dec.BV.b(U)))), float(np.max(np.abs(dec.AH.b(U)))))
        return err < 1e-10, {"BV_yy": float(bv[0, 1, 1]), "max_error": err, "tolerance": 1e-10}

    return _timed(1, "torus decomposition", 1.0, body)


def _parabola(dt: float) -> PointPath:
    ts = np.linspace(0.0, 1.0, int(round(1.0 / dt)) + 1)
    return PointPath(ts, np.stack([ts, ts * ts], axis=1))


def criterion_2() -> CriterionResult:
    ex = examples.get("heisenberg")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples, check=False)

    def body():
        z_ref = 1.0 / 6.0
        errs = {}
        for dt in (2e-3, 1e-3):
            lifted = lift_path(dec.conn, _parabola(dt), np.zeros(3))
            errs[dt] = abs(float(lifted.points[-1, 2]) - z_ref)
        order = float(np.log2(errs[2e-3] / errs[1e-3]))
        ok = errs[1e-3] < 5e-4 and order >= 1.8
        return ok, {"z_error_dt_1e-3": errs[1e-3], "z_error_dt_2e-3": errs[2e-3], "empirical_order": order}

    return _timed(2, "Heisenberg horizontal lift", 1.0, body)


def criterion_3(paths: int = 10_000, seed: int = 3) -> CriterionResult:
    def body():
        ex = examples.get("bessel", {"n": 3})
        rep = is_over(ex.B, ex.A, ex.p, ex.samples, tol=1e-6)
        dt = 1e-3
        x0 = np.tile([1.0, 0.0, 0.0], (paths, 1))
        bm = integrate(ex.H_B, x0, 1.0, NoiseDriver(seed, 0, 3, dt), stride=1000)
        radial = np.linalg.norm(bm.points[-1], axis=-1)
        bes = integrate(ex.A, np.ones((paths, 1)), 1.0, NoiseDriver(seed, 1, 1, dt))
        # the radial drift is odd in r, so an Euler path that steps across the
        # origin continues as the mirror image of a valid path: compare |r|
        crossed = int(np.sum(np.any(bes.points[..., 0] < 0, axis=0)))
        direct = np.abs(bes.points[-1, :, 0])
        ks = ks_2samp(radial, direct)
        ok = rep.passed and ks.pvalue > 0.01
        return ok, {"is_over_residual": rep.residual_max, "ks_statistic": float(ks.statistic),
                    "ks_pvalue": float(ks.pvalue), "paths_crossing_origin": crossed}

    return _timed(3, "Bessel intertwining", 30.0, body)


def criterion_4() -> CriterionResult:
    def body():
        worst = {}
        for n in (2, 3):
            ex = examples.get("sphere_gradient", {"n": n})
            D = ex.extras["derivative_flow"]
            a_ref, b_ref = ex.reference("alpha"), ex.reference("beta")
            for route, fn in (("formula", D.predicted), ("connection_form", D.generic)):
                e = 0.0
                for u in ex.samples[:3]:
                    c = fn(u)
                    e = max(e, float(np.max(np.abs(c.alpha - a_ref))), float(np.max(np.abs(c.beta - b_ref))))
                worst[f"n{n}_{route}_error"] = e
        ok = max(worst.values()) < 1e-8
        return ok, worst

    return _timed(4, "sphere derivative-flow coefficients", 5.0, body)


def criterion_5(trials: int = 20, seed: int = 5) -> CriterionResult:
    def body():
        comm = 0.0
        for n in range(1, 7):
            for k in range(0, n + 1):
                b = ExteriorBasis(n, k)
                down = [annihilation(i, b) for i in range(n)] if k > 0 else None
                for i in range(n):
                    for j in range(n):
                        m = annihilation(i, ExteriorBasis(n, k + 1)).matrix @ creation(j, b).matrix if k < n \
                            else np.zeros((b.dim, b.dim))
                        if k > 0:
                            m = m + creation(j, ExteriorBasis(n, k - 1)).matrix @ down[i].matrix
                        comm = max(comm, float(np.max(np.abs(m - (i == j) * np.eye(b.dim)))))
        cas = 0.0
        for n in range(2, 7):
            for k in range(1, n):
                cas = max(cas, abs(casimir(n, k) - casimir_reference(n, k)))
        sym = 0.0
        for n in (3, 4):
            for k in range(0, n + 1):
                lw = symmetric_space_lambda(n, k)
                sym = max(sym, float(np.max(np.abs(lw.matrix + 0.25 * k * (n - k) * np.eye(lw.matrix.shape[0])))))
        rng = np.random.default_rng(seed)
        violations = 0
        for t in range(trials):
            n = 3 + t % 3
            k = 1 + t % (n - 1)
            dim = n * (n - 1) // 2
            W = rng.standard_normal((dim, dim))
            if not eigen_bounds_check(W @ W.T / dim, n, k, tol=1e-8).passed:
                violations += 1
        ok = comm < 1e-14 and cas < 1e-10 and sym < 1e-10 and violations == 0
        return ok, {"commutation_error": comm, "casimir_error": cas, "symmetric_space_error": sym,
                    "bound_violations": violations, "trials": trials}

    return _timed(5, "Weitzenbock battery", 10.0, body)


def criterion_6(paths: int = 10_000, seed: int = 6) -> CriterionResult:
    def body():
        dt = 1e-3
        space = euclidean(1)
        unit = lambda x: np.ones(np.shape(x)[:-1] + (1, 1))
        plain = HormanderForm(space, unit, name="BM")
        drifted = HormanderForm(space, unit, lambda x: np.ones(np.shape(x)), name="BM with unit drift")
        drv = NoiseDriver(seed, 0, 1, dt)
        base = integrate(plain, np.zeros((paths, 1)), 1.0, drv)
        incs = np.diff(base.points, axis=0)
        Zw = girsanov_weight(base, lambda x: np.ones(np.shape(x)), lambda x: 0.5 * unit(x), incs, unit,
                             b=lambda x: np.ones(np.shape(x)))
        Z = Zw.Z[-1]
        yT = base.points[-1, :, 0]
        mean_Z, se_Z = float(Z.mean()), float(Z.std(ddof=1) / np.sqrt(paths))
        rew, se_rew = float(np.mean(Z * yT)), float(np.std(Z * yT, ddof=1) / np.sqrt(paths))
        direct = integrate(drifted, np.zeros((paths, 1)), 1.0, NoiseDriver(seed, 1, 1, dt), stride=1000)
        dy = direct.points[-1, :, 0]
        d_mean, d_se = float(dy.mean()), float(dy.std(ddof=1) / np.sqrt(paths))
        comb = float(np.hypot(se_rew, d_se))
        ok = abs(mean_Z - 1) < 3 * se_Z and abs(rew - d_mean) < 3 * comb
        return ok, {"mean_Z": mean_Z, "se_Z": se_Z, "reweighted_mean": rew, "direct_mean": d_mean,
                    "combined_se": comb}

    return _timed(6, "Girsanov reweighting", 20.0, body)


def criterion_7(particles: int = 10_000, T: float = 10.0, seed: int = 42) -> CriterionResult:
    def body():
        ex = examples.get("linear_filter_1d")
        model = filter_model(ex)
        dt = 1e-3
        _, obs = simulate_observation(model, T, NoiseDriver(seed, 0, 2, dt))
        est = ks_filter(model, obs, particles, NoiseDriver(seed, 1, 2, dt))
        prm = ex.extras
        m_kb, _ = kalman_bucy(obs, prm["a"], prm["c"], prm["q"], prm["r"])
        sel = est.times >= 5.0
        var = float(est.pi_var[sel, 0].mean())
        P = float(ex.reference("stationary_posterior_variance"))
        rel = abs(var - P) / P
        rmse = float(np.sqrt(np.mean((est.pi_mean[:, 0] - m_kb) ** 2)))
        std = float(ex.reference("signal_stationary_std"))
        ok = rel < 0.05 and rmse < 0.05 * std
        return ok, {"mean_posterior_variance": var, "riccati": P, "relative_error": rel,
                    "rmse_over_signal_std": rmse / std}

    return _timed(7, "Kalman-Bucy oracle", 120.0, body)


def criterion_8(particles: int = 10_000, seed: int = 8) -> CriterionResult:
    def body():
        ex = examples.get("torus")
        dec = decompose(ex.B, ex.A, ex.p, ex.samples)
        dt, T = 1e-2, 1.0
        u0 = np.array([1.0, 2.0])
        truth = integrate(ex.H_B, u0, T, NoiseDriver(seed, 0, 2, dt), scheme="stratonovich_heun")
        sigma = PointPath(truth.times, truth.points[:, :1])
        cs = conditional_sampler(dec, sigma, u0, particles, NoiseDriver(seed, 1, 2, dt), record_every=10 ** 9).final
        pc = partition_conditioning(ex.H_B, ex.p, sigma, u0, 8, 0.05, particles, NoiseDriver(seed, 2, 2, dt))
        m1, s1 = float(cs.mean()[1]), float(cs.standard_error()[1])
        m2, s2 = float(pc.mean()[1]), float(pc.standard_error()[1])
        comb = float(np.hypot(s1, s2))
        return abs(m1 - m2) < 3 * comb, {"conditional_sampler": m1, "partition": m2, "combined_se": comb,
                                         "z": (m1 - m2) / comb, "min_partition_ess": float(pc.ess_trace.min())}

    return _timed(8, "estimator cross-validation", 120.0, body)


def criterion_9(runs: int = 50, particles: int = 10_000, T: float = 2.0, dt: float = 2e-3) -> CriterionResult:
    def body():
        model = filter_model(examples.get("linear_filter_1d"))
        passed = 0
        for seed in range(runs):
            _, obs = simulate_observation(model, T, NoiseDriver(9000 + seed, 0, 2, dt))
            est = ks_filter(model, obs, particles, NoiseDriver(9000 + seed, 1, 2, dt))
            passed += bool(innovations(obs, est.pi_b, est.obs_cov).passed)
        return passed >= 45, {"runs_passed": passed, "runs": runs, "required": 45}

    return _timed(9, "innovations martingale", 300.0, body)


def criterion_10(seed: int = 10) -> CriterionResult:
    def body():
        ex = examples.get("planar_flow_redundant")
        K = KernelSystem(ex.H_B)
        x0 = ex.extras["x0"]
        rng = np.random.default_rng(seed)
        probes = x0 + rng.normal(scale=0.7, size=(10, 2))
        main = skew_product_check(K, x0, probes, 1.0, NoiseDriver(seed, 0, 3, 1e-3))
        corr = skew_product_check(K, x0, probes[:1], 1.0, NoiseDriver(seed, 1, 3, 1e-2),
                                  seeds=range(seed * 100, seed * 100 + 50))
        tor = examples.get("torus")
        heis = examples.get("heisenberg")
        c_tor = commutator_check(decompose(tor.B, tor.A, tor.p, tor.samples), tor.samples[:10])
        c_heis = commutator_check(decompose(heis.B, heis.A, heis.p, heis.samples), heis.samples[:10])
        B, A, p, S = negative_control_torus()
        grid = np.stack(np.meshgrid(np.linspace(0, 2 * np.pi, 8, endpoint=False),
                                    np.linspace(0, 2 * np.pi, 8, endpoint=False)), -1).reshape(-1, 2)
        neg_dec = decompose(B, A, p, S)
        c_neg = commutator_check(neg_dec, grid)
        neg_max = max(float(np.max(np.abs(commutator_residual(neg_dec.AH, neg_dec.BV, f, grid, np.finfo(float).eps ** 0.125))))
                      for f in function_battery(B.space, max_degree=2))
        ok = (main.details["fixed_point"] < 1e-6 and main.details["reconstruction"] < 1e-6 and corr.passed
              and c_tor.passed and c_heis.passed and not c_neg.passed and neg_max >= 1e-2)
        return ok, {"fixed_point": main.details["fixed_point"], "reconstruction": main.details["reconstruction"],
                    "correlation_fraction": corr.details["correlation_fraction_within"],
                    "torus_commutator": c_tor.residual_max, "heisenberg_commutator": c_heis.residual_max,
                    "negative_control_max": neg_max, "negative_control_passed": c_neg.passed}

    return _timed(10, "skew product and commutators", 60.0, body)


CRITERIA: Dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_suite(which: Optional[Sequence[int]] = None, echo: Optional[Callable[[str], None]] = None) -> List[CriterionResult]:
    results = []
    for k in (which or sorted(CRITERIA)):
        if k not in CRITERIA:
            raise KeyError(f"no criterion {k}")
        r = CRITERIA[k]()
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
