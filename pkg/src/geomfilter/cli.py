"""Command-line front end: ``geomfilter <task> [--scenario file.json] [flags]``.

A scenario is a JSON object whose keys mirror the command-line flags.
Unknown keys are rejected.  Every task writes its artifacts (JSON reports,
CSV traces with shortest round-trip decimals) into ``--out`` and prints a
one-line summary.  Exit status: 0 when every embedded check passes, 1 when
a check fails, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import CheckFailed, GeomFilterError, NumericalError, ValidationError

TASKS = ["decompose", "lift", "simulate", "filter", "skewprod", "commute", "weitzenbock", "coefficients", "check",
         "list-systems"]

# key -> (type, default, help)
SCENARIO_KEYS: Dict[str, tuple] = {
    "task": (str, None, "task to run (normally given as the subcommand)"),
    "system": (str, None, "registered system id"),
    "params": (dict, None, "system constructor parameters as a JSON object"),
    "dt": (float, 1e-3, "time step"),
    "T": (float, 1.0, "time horizon"),
    "particles": (int, 1000, "number of particles or paths"),
    "seed": (int, 0, "random seed"),
    "tol": (float, None, "check tolerance (task-specific default when absent)"),
    "x0": (list, None, "start point in chart coordinates"),
    "path": (str, "simulated", "base path for lift: simulated, line or parabola"),
    "scheme": (str, "stratonovich_heun", "integration scheme for simulate"),
    "probes": (int, 10, "number of probe points for skewprod"),
    "seeds": (int, 0, "number of extra seeds for the skewprod correlation test"),
    "degree": (int, None, "form degree for weitzenbock (all degrees when absent)"),
    "suite": (str, "all", "acceptance criteria for check: all or a comma-separated list"),
    "out": (str, "geomfilter-out", "output directory"),
    "threads": (int, None, "cap on BLAS worker threads"),
}


class ScenarioError(ValidationError):
    pass


# --------------------------------------------------------------------------
# scenario handling


def _coerce(key: str, value: Any):
    typ = SCENARIO_KEYS[key][0]
    if value is None:
        return None
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ in (str, dict, list) and isinstance(value, typ):
        return value
    raise ScenarioError(f"scenario key {key!r} must be of type {typ.__name__}, got {value!r}")


def load_scenario(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("a scenario must be a JSON object")
    unknown = sorted(set(data) - set(SCENARIO_KEYS))
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {unknown}")
    return {k: _coerce(k, v) for k, v in data.items()}


def merge(task: str, scenario: Dict[str, Any], flags: Dict[str, Any]) -> Dict[str, Any]:
    """Defaults < scenario file < explicit flags."""
    if scenario.get("task") not in (None, task):
        raise ScenarioError(f"scenario task {scenario['task']!r} does not match subcommand {task!r}")
    cfg = {k: spec[1] for k, spec in SCENARIO_KEYS.items()}
    cfg.update({k: v for k, v in scenario.items() if v is not None})
    cfg.update({k: v for k, v in flags.items() if v is not None})
    cfg["task"] = task
    if cfg["dt"] <= 0 or cfg["T"] <= 0 or cfg["particles"] < 1:
        raise ScenarioError("dt, T and particles must be positive")
    return cfg


def _threads(cfg):
    n = cfg.get("threads") or os.environ.get("GEOMFILTER_THREADS")
    if not n:
        return nullcontext()
    n = int(n)
    if n < 1:
        raise ScenarioError("threads must be at least 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return nullcontext()
    return threadpool_limits(limits=n)


# --------------------------------------------------------------------------
# output helpers


def _num(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def write_csv(path: Path, columns: Dict[str, np.ndarray]):
    names = list(columns)
    data = [np.asarray(columns[k], dtype=float).reshape(-1) for k in names]
    lines = [",".join(names)]
    for row in zip(*data):
        lines.append(",".join(_num(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj):
    from .operators import _jsonable
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _system(cfg):
    from . import examples
    if not cfg.get("system"):
        raise ScenarioError("this task needs a system id")
    return examples.get(cfg["system"], cfg.get("params"))


def _start(cfg, system):
    if cfg.get("x0") is not None:
        return np.asarray(cfg["x0"], dtype=float)
    if "x0" in system.extras:
        return np.asarray(system.extras["x0"], dtype=float)
    if system.samples is None:
        raise ScenarioError("give x0 for this system")
    return np.asarray(system.samples[0], dtype=float)


# --------------------------------------------------------------------------
# tasks; each returns (passed, summary line, payload written to <task>.json)


def task_decompose(cfg, out: Path):
    from .connection import decompose
    s = _system(cfg)
    dec = decompose(s.B, s.A, s.p, s.samples)
    rep = dec.check(s.samples, tol=cfg["tol"] or 1e-8)
    u = s.samples[0]
    payload = {"system": s.id, "params": s.params, "point": u,
               "BV_coefficients": 0.5 * np.asarray(dec.BV.a(u)), "BV_drift": dec.BV.b(u),
               "AH_symbol": 0.5 * np.asarray(dec.AH.a(u)), "AH_drift": dec.AH.b(u),
               "lift_matrix": dec.conn.lift_matrix(u), "report": rep.to_dict()}
    return rep.passed, f"decompose {s.id}: residual {rep.residual_max:.3e}", payload


def _base_path(cfg, s):
    from .geometry import PointPath
    from .simulate import NoiseDriver, integrate
    dt, T = cfg["dt"], cfg["T"]
    n = int(round(T / dt))
    ts = np.linspace(0.0, n * dt, n + 1)
    x0 = np.asarray(s.p(_start(cfg, s)), dtype=float)
    if cfg["path"] == "line":
        return PointPath(ts, x0 + ts[:, None] * np.ones_like(x0))
    if cfg["path"] == "parabola":
        if len(x0) != 2:
            raise ScenarioError("the parabola path needs a two-dimensional base")
        return PointPath(ts, x0 + np.stack([ts, ts * ts], axis=1))
    if cfg["path"] == "simulated":
        H = s.H_A
        if H is None:
            raise ScenarioError("system has no base Hormander form to simulate a path")
        m = H.fields(x0).shape[-1]
        return integrate(H, x0, T, NoiseDriver(cfg["seed"], 0, m, dt), scheme="stratonovich_heun")
    raise ScenarioError(f"unknown path kind {cfg['path']!r}")


def task_lift(cfg, out: Path):
    from .connection import decompose, lift_path
    s = _system(cfg)
    dec = decompose(s.B, s.A, s.p, s.samples)
    sigma = _base_path(cfg, s)
    u0 = _start(cfg, s)
    lifted = lift_path(dec.conn, sigma, u0)
    gap = float(np.max(np.abs(s.p.codomain.displacement(s.p(lifted.points), sigma.points))))
    tol = cfg["tol"] or 1e-6
    cols = {"t": lifted.times}
    cols.update({f"u{i}": lifted.points[:, i] for i in range(lifted.points.shape[1])})
    write_csv(out / "lift.csv", cols)
    payload = {"system": s.id, "path": cfg["path"], "final": lifted.points[-1], "projection_gap": gap,
               "tolerance": tol}
    return gap < tol, f"lift {s.id}: final {np.array2string(lifted.points[-1], precision=6)}", payload


def task_simulate(cfg, out: Path):
    from .simulate import NoiseDriver, integrate
    s = _system(cfg)
    x0 = _start(cfg, s)
    system = s.H_B if (s.H_B is not None and cfg["scheme"] == "stratonovich_heun") else (s.H_B or s.B)
    m = system.fields(x0).shape[-1] if hasattr(system, "fields") else len(x0)
    path = integrate(system, x0, cfg["T"], NoiseDriver(cfg["seed"], 0, m, cfg["dt"]), scheme=cfg["scheme"])
    cols = {"t": path.times}
    cols.update({f"u{i}": path.points[:, i] for i in range(path.points.shape[1])})
    write_csv(out / "path.csv", cols)
    payload = {"system": s.id, "steps": len(path.times) - 1, "final": path.points[-1], "scheme": cfg["scheme"]}
    return True, f"simulate {s.id}: {len(path.times) - 1} steps", payload


def task_filter(cfg, out: Path):
    from .filter import filter_model, innovations, kalman_bucy, ks_filter, simulate_observation
    from .simulate import NoiseDriver
    s = _system(cfg)
    model = filter_model(s)
    m = s.H_B.fields(s.samples[0]).shape[-1]
    dt, T, seed = cfg["dt"], cfg["T"], cfg["seed"]
    _, obs = simulate_observation(model, T, NoiseDriver(seed, 0, m, dt))
    est = ks_filter(model, obs, cfg["particles"], NoiseDriver(seed, 1, m, dt))
    cols = est.columns()
    checks = {"ks_identity": est.ks_identity_residual() < 1e-8}
    inn = innovations(obs, est.pi_b, est.obs_cov)
    checks["innovations"] = bool(inn.passed)
    payload = {"system": s.id, "particles": cfg["particles"], "ks_identity_residual": est.ks_identity_residual(),
               "innovations": inn.report().to_dict(), "resamplings": len(est.resample_times)}
    if s.id == "linear_filter_1d":
        e = s.extras
        mk, Pk = kalman_bucy(obs, e["a"], e["c"], e["q"], e["r"])
        cols["kalman_mean"] = mk
        cols["kalman_var"] = Pk
        P = float(s.reference("stationary_posterior_variance"))
        tail = est.times >= T / 2
        v = float(est.pi_var[tail, 0].mean())
        se = float(est.pi_var[tail, 0].std() / np.sqrt(max(1, tail.sum() * dt)))
        payload.update({"stationary_variance_reference": P, "tail_mean_variance": v, "tail_variance_se": se})
        checks["stationary_variance"] = abs(v - P) < max(0.05 * P, 3 * se)
    write_csv(out / "posterior.csv", cols)
    payload["checks"] = checks
    ok = all(checks.values())
    return ok, f"filter {s.id}: final mean {cols['pi_mean'][-1]:.6g}, variance {cols['pi_var'][-1]:.6g}", payload


def task_skewprod(cfg, out: Path):
    from .flows import KernelSystem, skew_product_check
    from .simulate import NoiseDriver
    s = _system(cfg)
    if s.H_B is None:
        raise ScenarioError("skewprod needs a system with noise fields")
    K = KernelSystem(s.H_B)
    x0 = _start(cfg, s)
    rng = np.random.default_rng(cfg["seed"])
    probes = x0 + rng.normal(scale=0.7, size=(cfg["probes"], len(x0)))
    m = s.H_B.fields(x0).shape[-1]
    seeds = range(cfg["seed"] + 1, cfg["seed"] + 1 + cfg["seeds"]) if cfg["seeds"] else ()
    rep = skew_product_check(K, x0, probes, cfg["T"], NoiseDriver(cfg["seed"], 0, m, cfg["dt"]), seeds=seeds,
                             tol=cfg["tol"] or 1e-6)
    return rep.passed, f"skewprod {s.id}: residual {rep.residual_max:.3e}", rep.to_dict()


def task_commute(cfg, out: Path):
    from .connection import decompose
    from .flows import commutator_check
    s = _system(cfg)
    dec = decompose(s.B, s.A, s.p, s.samples)
    rep = commutator_check(dec, s.samples[:10], floor=cfg["tol"] or 1e-6)
    return rep.passed, f"commute {s.id}: residual {rep.residual_max:.3e}", rep.to_dict()


def task_weitzenbock(cfg, out: Path):
    from .weitzenboeck import (CurvatureData, ExteriorBasis, gl_representation, lambda_wedge,
                               symmetric_space_lambda, weitzenbock_from_curvature)
    from .equivariant import join_frame
    s = _system(cfg)
    rows = {"degree": [], "min_eigenvalue": [], "max_eigenvalue": [], "reference": [], "dual_route_gap": []}
    ok = True
    tol = cfg["tol"] or 1e-8
    if s.id == "symmetric_sphere":
        n, k = s.params["n"], s.params["k"]
        degrees = [cfg["degree"]] if cfg["degree"] is not None else [k]
        for q in degrees:
            lw = symmetric_space_lambda(n, q)
            ev = np.linalg.eigvalsh(lw.matrix)
            ref = -0.25 * q * (n - q)
            ok &= bool(np.max(np.abs(ev - ref)) < tol)
            for key, v in zip(rows, (q, ev.min(), ev.max(), ref, lw.split_residual)):
                rows[key].append(v)
    elif s.id == "sphere_gradient":
        D = s.extras["derivative_flow"]
        n = D.n
        y = s.samples[0][:n]
        U = D.orthonormal_frame(y)
        c = D.predicted(join_frame(y, U))
        R, Ric = D.curvature_in_frame(y, U)
        C = CurvatureData(R, Ric)
        degrees = [cfg["degree"]] if cfg["degree"] is not None else list(range(n + 1))
        for q in degrees:
            b = ExteriorBasis(n, q)
            lw = lambda_wedge(c.alpha, c.beta, gl_representation(n), b)
            wc = weitzenbock_from_curvature(C, b, tol=1e-7)
            gap = float(np.max(np.abs(lw.matrix - wc.matrix)))
            ev = np.linalg.eigvalsh(0.5 * (lw.matrix + lw.matrix.T))
            ref = s.reference("weitzenbock_degree")(q)
            ok &= gap < 1e-6 and bool(np.max(np.abs(ev - ref)) < 1e-6)
            for key, v in zip(rows, (q, ev.min(), ev.max(), ref, gap)):
                rows[key].append(v)
    else:
        raise ScenarioError("weitzenbock supports symmetric_sphere and sphere_gradient")
    write_csv(out / "weitzenbock.csv", rows)
    return ok, f"weitzenbock {s.id}: degrees {rows['degree']}", {"system": s.id, "params": s.params, "rows": rows}


def task_coefficients(cfg, out: Path):
    from .equivariant import equivariance_check
    s = _system(cfg)
    if "derivative_flow" not in s.extras:
        raise ScenarioError("coefficients needs a derivative-flow system such as sphere_gradient")
    D = s.extras["derivative_flow"]
    tol = cfg["tol"] or 1e-8
    a_ref, b_ref = s.reference("alpha"), s.reference("beta")
    rows = []
    ok = True
    for u in s.samples:
        f, g = D.predicted(u), D.generic(u)
        e = {"formula_alpha": float(np.max(np.abs(f.alpha - a_ref))),
             "formula_beta": float(np.max(np.abs(f.beta - b_ref))),
             "route_gap": max(float(np.max(np.abs(f.alpha - g.alpha))), float(np.max(np.abs(f.beta - g.beta))))}
        ok &= max(e.values()) < tol
        rows.append(e)
    rng = np.random.default_rng(cfg["seed"])
    n = D.n
    gs = [np.eye(n) + 0.2 * rng.standard_normal((n, n)) for _ in range(3)]
    eq = equivariance_check(D.predicted, D.chart, gs, s.samples[:3], tol=1e-7)
    ok &= eq.passed
    payload = {"system": s.id, "params": s.params, "samples": rows, "equivariance": eq.to_dict(),
               "alpha_reference": a_ref, "beta_reference": b_ref}
    worst = max(max(r.values()) for r in rows)
    return ok, f"coefficients {s.id}: max error {worst:.3e}", payload


def task_check(cfg, out: Path):
    from .acceptance import CRITERIA, run_suite
    suite = cfg["suite"]
    which = sorted(CRITERIA) if suite == "all" else [int(k) for k in str(suite).split(",") if k.strip()]
    bad = [k for k in which if k not in CRITERIA]
    if bad:
        raise ScenarioError(f"unknown criteria {bad}")
    results = run_suite(which, echo=print)
    ok = all(r.passed for r in results)
    n_pass = sum(r.passed for r in results)
    return ok, f"check: {n_pass}/{len(results)} criteria passed", {"criteria": [r.to_dict() for r in results]}


def task_list(cfg, out: Optional[Path]):
    from .examples import list_systems
    systems = list_systems()
    for e in systems:
        print(f"{e['id']:24s} {json.dumps(e['params'])}  {e['description']} ({e['citation']})")
    return True, f"{len(systems)} systems", {"systems": systems}


HANDLERS = {"decompose": task_decompose, "lift": task_lift, "simulate": task_simulate, "filter": task_filter,
            "skewprod": task_skewprod, "commute": task_commute, "weitzenbock": task_weitzenbock,
            "coefficients": task_coefficients, "check": task_check, "list-systems": task_list}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomfilter", description="Filtering geometry toolkit")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--scenario", help="JSON scenario file; keys mirror the flags")
        for key, (typ, _, help_text) in SCENARIO_KEYS.items():
            if key == "task":
                continue
            flag = f"--{key}"
            if typ in (dict, list):
                p.add_argument(flag, type=json.loads, help=help_text + " (JSON)")
            else:
                p.add_argument(flag, type=typ, help=help_text)
    return parser


def run(task: str, cfg: Dict[str, Any]) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        with _threads(cfg):
            ok, summary, payload = HANDLERS[task](cfg, out)
    except ValidationError as exc:
        print(f"{task}: invalid input: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"{task}: check failed: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, GeomFilterError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"{task}: numerical failure: {exc}", file=sys.stderr)
        return 3
    write_json(out / f"{task}.json", {"pass": bool(ok), "summary": summary, "scenario": cfg, "result": payload})
    print(("PASS " if ok else "FAIL ") + summary)
    return 0 if ok else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    task = args.task
    flags = {k: v for k, v in vars(args).items() if k not in ("task", "scenario")}
    try:
        cfg = merge(task, load_scenario(args.scenario), {k: _coerce(k, v) for k, v in flags.items()})
    except ValidationError as exc:
        print(f"{task}: invalid scenario: {exc}", file=sys.stderr)
        return 2
    return run(task, cfg)


if __name__ == "__main__":
    sys.exit(main())
