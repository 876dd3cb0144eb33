import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from geomfilter import examples
from geomfilter.connection import decompose
from geomfilter.errors import DegenerateWeights, NoBridgeSampler, NotAboveStart, ValidationError
from geomfilter.filter import (ParticleEnsemble, bridge_conditioning, conditional_residual, conditional_sampler,
                               filter_model, filtering_equation_residual, innovations, kalman_bucy, ks_filter,
                               multinomial_resample, partition_conditioning, simulate_observation)
from geomfilter.geometry import PointPath
from geomfilter.operators import ProbeFunction
from geomfilter.simulate import NoiseDriver, integrate


@pytest.fixture(scope="module")
def linear_run():
    ex = examples.get("linear_filter_1d")
    model = filter_model(ex)
    dt = 2e-3
    _, obs = simulate_observation(model, 4.0, NoiseDriver(31, 0, 2, dt))
    ident = ProbeFunction("z", lambda z: z[..., 0], lambda z: np.ones_like(z),
                          lambda z: np.zeros(z.shape + (1,)))
    est = ks_filter(model, obs, 3000, NoiseDriver(31, 1, 2, dt), functions=[ident])
    return ex, model, obs, est


@pytest.fixture(scope="module")
def torus_setup():
    ex = examples.get("torus")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)
    u0 = np.array([1.0, 2.0])
    truth = integrate(ex.H_B, u0, 1.0, NoiseDriver(77, 0, 2, 1e-2), scheme="stratonovich_heun")
    sigma = PointPath(truth.times, truth.points[:, :1])
    return ex, dec, u0, sigma


def test_ensemble_statistics():
    e = ParticleEnsemble(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([1.0, 1.0, 1.0, 1.0]), 0.0)
    assert e.ess == pytest.approx(4.0)
    assert e.mean()[0] == pytest.approx(1.5)
    w = ParticleEnsemble(np.array([[0.0], [10.0]]), np.array([1.0, 0.0]), 0.0)
    assert w.ess == pytest.approx(1.0) and w.mean()[0] == 0.0


def test_multinomial_resample_frequencies(rng):
    W = np.array([0.1, 0.6, 0.3])
    idx = np.concatenate([multinomial_resample(W, rng) for _ in range(4000)])
    freq = np.bincount(idx, minlength=3) / len(idx)
    assert np.max(np.abs(freq - W)) < 0.02


def test_riccati_oracle_agrees_with_scipy():
    for a, c, q, r in ((-1.0, 1.0, 1.0, 1.0), (-0.5, 2.0, 0.3, 0.7)):
        ex = examples.get("linear_filter_1d", {"a": a, "c": c, "q": q, "r": r})
        P = solve_continuous_are(np.array([[a]]), np.array([[c]]), np.array([[q]]), np.array([[r]]))[0, 0]
        assert abs(ex.reference("stationary_posterior_variance") - P) < 1e-12


def test_kalman_bucy_variance_converges(linear_run):
    ex, _, obs, _ = linear_run
    prm = ex.extras
    _, P = kalman_bucy(obs, prm["a"], prm["c"], prm["q"], prm["r"])
    assert abs(P[-1] - ex.reference("stationary_posterior_variance")) < 1e-3


def test_particle_filter_tracks_kalman(linear_run):
    ex, _, obs, est = linear_run
    prm = ex.extras
    m, P = kalman_bucy(obs, prm["a"], prm["c"], prm["q"], prm["r"])
    std = ex.reference("signal_stationary_std")
    assert np.sqrt(np.mean((est.pi_mean[:, 0] - m) ** 2)) < 0.1 * std
    sel = est.times >= 2.0
    assert abs(est.pi_var[sel, 0].mean() - P[sel].mean()) < 0.1 * P[-1]


def test_unnormalised_identity(linear_run):
    *_, est = linear_run
    assert est.ks_identity_residual() < 1e-10
    assert np.all(est.ess > 0) and np.all(est.ess <= 3000 + 1e-9)


def test_kushner_residual(linear_run):
    *_, est = linear_run
    rep = filtering_equation_residual(est, "z", discretisation=0.02)
    assert rep.passed, rep.details
    with pytest.raises(ValidationError):
        filtering_equation_residual(est, "missing")


def test_innovations_of_exact_filter(linear_run):
    ex, _, obs, _ = linear_run
    prm = ex.extras
    m, _ = kalman_bucy(obs, prm["a"], prm["c"], prm["q"], prm["r"])
    good = innovations(obs, prm["c"] * m[:, None], np.array([[prm["r"]]]))
    assert good.passed
    biased = innovations(obs, prm["c"] * (m[:, None] + 3.0), np.array([[prm["r"]]]))
    assert not biased.passed


def test_filter_model_requires_signal_system():
    with pytest.raises(ValidationError):
        filter_model(examples.get("torus"))
    model = filter_model(examples.get("linear_filter_1d"))
    assert model.check_cohesive(examples.get("linear_filter_1d").samples).passed


def test_conditional_sampler_lies_over_path(torus_setup):
    ex, dec, u0, sigma = torus_setup
    tr = conditional_sampler(dec, sigma, u0, 500, NoiseDriver(78, 0, 2, 1e-2))
    gap = ex.A.space.displacement(ex.p(tr.particles), sigma.points[:, None, :])
    assert np.max(np.abs(gap)) < 1e-10


def test_conditional_sampler_moments(torus_setup):
    ex, dec, u0, sigma = torus_setup
    tr = conditional_sampler(dec, sigma, u0, 4000, NoiseDriver(79, 0, 2, 1e-2))
    y = tr.particles[-1, :, 1]
    dx = sigma.points[-1, 0] - sigma.points[0, 0]
    mean_ref = u0[1] + ex.reference("conditional_mean_slope") * dx
    var_ref = ex.reference("conditional_variance_rate") * 1.0
    assert abs(y.mean() - mean_ref) < 4 * np.sqrt(var_ref / len(y))
    assert abs(y.var() / var_ref - 1) < 0.1


def test_conditional_residual(torus_setup):
    _, dec, u0, sigma = torus_setup
    tr = conditional_sampler(dec, sigma, u0, 2000, NoiseDriver(80, 0, 2, 1e-2))
    f = ProbeFunction("sin_y", lambda u: np.sin(u[..., 1]),
                      lambda u: np.stack([0 * u[..., 0], np.cos(u[..., 1])], -1),
                      lambda u: np.stack([np.zeros(u.shape), np.stack([0 * u[..., 0], -np.sin(u[..., 1])], -1)], -2))
    rep = conditional_residual(tr, f, dec, sigma)
    assert rep.passed, rep.details


def test_conditional_sampler_rejects_wrong_start(torus_setup):
    _, dec, _, sigma = torus_setup
    with pytest.raises(NotAboveStart):
        conditional_sampler(dec, sigma, np.array([2.0, 2.0]), 10, NoiseDriver(1, 0, 2, 1e-2))


def test_partition_agrees_with_conditional_sampler(torus_setup):
    ex, dec, u0, sigma = torus_setup
    cs = conditional_sampler(dec, sigma, u0, 3000, NoiseDriver(81, 0, 2, 1e-2), record_every=10 ** 9).final
    pc = partition_conditioning(ex.H_B, ex.p, sigma, u0, 8, 0.05, 3000, NoiseDriver(81, 1, 2, 1e-2))
    comb = np.hypot(cs.standard_error()[1], pc.standard_error()[1])
    assert abs(cs.mean()[1] - pc.mean()[1]) < 3 * comb
    assert pc.ess_trace.shape == (10, 8)


def test_partition_degenerate_weights(torus_setup):
    ex, _, u0, sigma = torus_setup
    shifted = PointPath(sigma.times, sigma.points + 2.0)
    with pytest.raises(DegenerateWeights):
        partition_conditioning(ex.H_B, ex.p, shifted, u0, 2, 1e-12, 50, NoiseDriver(1, 0, 2, 1e-2))


def _loop_area_fine_step(lam, T, paths, steps, seed):
    """Independent Monte Carlo: planar Brownian bridge 0 -> 0 and its midpoint area sum."""
    g = np.random.default_rng(seed)
    dW = g.standard_normal((steps, paths, 2)) * np.sqrt(T / steps)
    W = np.concatenate([np.zeros((1, paths, 2)), np.cumsum(dW, 0)])
    t = np.linspace(0, T, steps + 1)[:, None, None]
    Bb = W - t / T * W[-1]
    d = np.diff(Bb, axis=0)
    mid = 0.5 * (Bb[:-1] + Bb[1:])
    area = 0.5 * np.sum(mid[..., 0] * d[..., 1] - mid[..., 1] * d[..., 0], axis=0)
    c = np.cos(lam * area)
    return c.mean(), c.std(ddof=1) / np.sqrt(paths)


def test_heisenberg_loop_area(rng):
    ex = examples.get("heisenberg")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)
    lam, T = 2.0, 1.0
    target = ex.reference("loop_area_cf")(lam, T)
    m, se = _loop_area_fine_step(lam, T, 40_000, 400, 2)
    assert abs(m - target) < 3 * se
    ens = bridge_conditioning(dec, np.zeros(2), np.zeros(2), T, np.zeros(3), 4000, NoiseDriver(90, 0, 3, 1e-3),
                              n_steps=400, vertical=False)
    c = np.cos(lam * ens.particles[:, 2])
    assert abs(c.mean() - target) < 3 * c.std(ddof=1) / np.sqrt(len(c)) + 2e-3


def test_bridge_needs_flat_base(torus_setup):
    _, dec, u0, _ = torus_setup
    with pytest.raises(NoBridgeSampler):
        bridge_conditioning(dec, u0[:1], u0[:1], 1.0, u0, 10, NoiseDriver(1, 0, 2, 1e-2))
