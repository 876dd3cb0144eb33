import numpy as np
import pytest

from geomfilter import examples
from geomfilter.connection import (SemiConnection, decompose, descends, horizontal_lift, lift_path,
                                   lift_via_factorization)
from geomfilter.errors import FactorizationMismatch, NotAboveStart, PathLeavesE, VNotInE
from geomfilter.geometry import PointPath, coordinate_projection, euclidean, identity_map
from geomfilter.operators import DiffusionOperator, HormanderForm, constant_operator, is_over
from geomfilter.simulate import NoiseDriver, integrate

T_ALPHA = np.tan(np.pi / 6)


@pytest.fixture(scope="module")
def heis():
    ex = examples.get("heisenberg")
    return ex, decompose(ex.B, ex.A, ex.p, ex.samples)


@pytest.fixture(scope="module")
def tor():
    ex = examples.get("torus")
    return ex, decompose(ex.B, ex.A, ex.p, ex.samples)


def test_identity_lift():
    L = constant_operator(euclidean(2), [[2.0, 0.3], [0.3, 1.0]])
    conn = SemiConnection(L, L, identity_map(euclidean(2)))
    assert np.allclose(conn.lift_matrix(np.zeros(2)), np.eye(2), atol=1e-12)


def test_heisenberg_lift_formula(heis, rng):
    _, dec = heis
    for _ in range(5):
        u = rng.normal(size=3)
        v = rng.normal(size=2)
        x, y = u[:2]
        assert np.allclose(horizontal_lift(dec.conn, u, v), [v[0], v[1], 0.5 * (x * v[1] - y * v[0])], atol=1e-12)


def test_torus_lift(tor):
    _, dec = tor
    assert np.allclose(horizontal_lift(dec.conn, np.array([1.0, 2.0]), np.array([1.0])), [1.0, T_ALPHA], atol=1e-14)


def test_lift_rejects_vector_outside_image():
    R2 = euclidean(2)
    A = constant_operator(R2, np.diag([1.0, 0.0]))
    conn = SemiConnection(A, A, identity_map(R2))
    with pytest.raises(VNotInE):
        horizontal_lift(conn, np.zeros(2), np.array([0.0, 1.0]))


def test_right_inverse_and_psd(heis, tor):
    for ex, dec in (heis, tor):
        U = ex.samples
        J = ex.p.jacobian(U)
        h = dec.conn.lift_matrix(U)
        d = ex.A.dim
        assert np.max(np.abs(J @ h - np.eye(d))) < 1e-8
        S = h @ ex.A.symbol(ex.p(U)) @ np.swapaxes(h, -1, -2)
        assert np.min(np.linalg.eigvalsh(S)) > -1e-12


def test_factorization_route(heis):
    ex, dec = heis
    planar = HormanderForm(ex.B.space, lambda u: ex.H_B.fields(u)[..., :2])
    for u in ex.samples[:10]:
        assert np.max(np.abs(lift_via_factorization(planar, ex.H_A, ex.p, u) - dec.conn.lift_matrix(u))) < 1e-10


def test_factorization_mismatch():
    ex = examples.get("heisenberg")
    wrong = HormanderForm(ex.B.space, lambda u: 2 * ex.H_B.fields(u)[..., :2])
    with pytest.raises(FactorizationMismatch):
        lift_via_factorization(wrong, ex.H_A, ex.p, ex.samples[0])


def test_factorization_on_frame_bundle():
    ex = examples.get("sphere_gradient", {"n": 2})
    D = ex.extras["derivative_flow"]
    for u in ex.samples[:4]:
        gap = np.max(np.abs(lift_via_factorization(D.lifted, D.H, D.chart.projection, u) - D.conn.lift_matrix(u)))
        assert gap < 1e-8


def test_decompose_torus(tor):
    ex, dec = tor
    U = ex.samples
    assert np.allclose(0.5 * dec.BV.a(U)[..., 1, 1], 1.0 / 3.0, atol=1e-14)
    assert np.allclose(0.5 * dec.AH.a(U), 0.5 * np.array([[1, T_ALPHA], [T_ALPHA, T_ALPHA ** 2]]), atol=1e-14)
    assert dec.check(U).passed


def test_decompose_heisenberg(heis):
    ex, dec = heis
    U = ex.samples
    BV = 0.5 * dec.BV.a(U)
    expected = np.zeros((3, 3))
    expected[2, 2] = 0.5
    assert np.max(np.abs(BV - expected)) < 1e-10
    assert np.max(np.abs(dec.BV.b(U))) < 1e-8
    X = ex.H_B.fields(U)[..., :2]
    assert np.max(np.abs(dec.AH.a(U) - X @ np.swapaxes(X, -1, -2))) < 1e-10


def test_horizontal_input_has_no_vertical_part(tor):
    ex, dec = tor
    again = decompose(dec.AH, ex.A, ex.p, ex.samples)
    assert np.max(np.abs(again.BV.a(ex.samples))) < 1e-10
    assert np.max(np.abs(again.BV.b(ex.samples))) < 1e-10


def test_decomposition_idempotent(heis):
    ex, dec = heis
    again = decompose(dec.AH + dec.BV, ex.A, ex.p, ex.samples)
    U = ex.samples
    for a, b in ((again.AH, dec.AH), (again.BV, dec.BV)):
        assert np.max(np.abs(a.a(U) - b.a(U))) < 1e-8 and np.max(np.abs(a.b(U) - b.b(U))) < 1e-8


def test_vertical_part_kills_pullbacks(heis):
    ex, dec = heis
    from geomfilter.operators import apply, compose, function_battery
    for f in function_battery(ex.A.space):
        g = compose(f, ex.p)
        assert np.max(np.abs(apply(dec.BV, g.f, ex.samples, grad=g.grad))) < 1e-6


def test_horizontal_symbol_annihilated_by_contact_form(heis):
    ex, dec = heis
    U = ex.samples
    ann = np.stack([0.5 * U[:, 1], -0.5 * U[:, 0], np.ones(len(U))], -1)
    assert np.max(np.abs(np.einsum("ni,nij->nj", ann, dec.AH.symbol(U)))) < 1e-8


def _parabola(dt, T=1.0):
    ts = np.linspace(0, T, int(round(T / dt)) + 1)
    return PointPath(ts, np.stack([ts, ts * ts], 1))


def test_parabola_lift_area(heis):
    _, dec = heis
    for T in (1.0, 0.5):
        lifted = lift_path(dec.conn, _parabola(1e-3, T), np.zeros(3))
        assert abs(lifted.points[-1, 2] - T ** 3 / 6) < 2e-4


def test_parabola_lift_second_order(heis):
    _, dec = heis
    errs = [abs(lift_path(dec.conn, _parabola(dt), np.zeros(3)).points[-1, 2] - 1 / 6) for dt in (4e-2, 2e-2, 1e-2)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_projection_tracks_path(tor):
    ex, dec = tor
    ts = np.linspace(0, 1, 201)
    sigma = PointPath(ts, (0.3 + np.sin(3 * ts))[:, None])
    lifted = lift_path(dec.conn, sigma, np.array([0.3, 1.0]))
    gap = ex.A.space.displacement(ex.p(lifted.points), sigma.points)
    assert np.max(np.abs(gap)) < 1e-12


def test_constant_path(heis):
    _, dec = heis
    sigma = PointPath([0.0, 0.5, 1.0], np.tile([0.2, 0.3], (3, 1)))
    u0 = np.array([0.2, 0.3, -1.0])
    assert np.all(lift_path(dec.conn, sigma, u0).points == u0)


def test_lift_errors(heis):
    _, dec = heis
    with pytest.raises(NotAboveStart):
        lift_path(dec.conn, _parabola(0.1), np.array([1.0, 0.0, 0.0]))
    R2 = euclidean(2)
    A = constant_operator(R2, np.diag([1.0, 0.0]))
    conn = SemiConnection(A, A, identity_map(R2))
    sigma = PointPath([0.0, 1.0], [[0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(PathLeavesE):
        lift_path(conn, sigma, np.zeros(2))


def _levy_area_fine_step(lam, T, paths, steps, seed):
    """Independent Monte Carlo of the Levy area by a midpoint Riemann sum."""
    g = np.random.default_rng(seed)
    dW = g.standard_normal((steps, paths, 2)) * np.sqrt(T / steps)
    W = np.concatenate([np.zeros((1, paths, 2)), np.cumsum(dW, 0)])
    mid = 0.5 * (W[:-1] + W[1:])
    area = 0.5 * np.sum(mid[..., 0] * dW[..., 1] - mid[..., 1] * dW[..., 0], axis=0)
    c = np.cos(lam * area)
    return c.mean(), c.std(ddof=1) / np.sqrt(paths)


def test_levy_area_oracle_and_stratonovich_lift(heis):
    ex, dec = heis
    lam, T = 1.5, 1.0
    target = ex.reference("levy_area_cf")(lam, T)
    # the literature value agrees with an independent simulation first
    m, se = _levy_area_fine_step(lam, T, 40_000, 400, 1)
    assert abs(m - target) < 3 * se
    paths, dt = 4000, 5e-3
    drv = NoiseDriver(21, 0, 2, dt)
    planar = integrate(ex.H_A, np.zeros((paths, 2)), T, drv)
    lifted = lift_path(dec.conn, planar, np.zeros((paths, 3)), mode="stratonovich")
    c = np.cos(lam * lifted.points[-1, :, 2])
    assert abs(c.mean() - target) < 3 * c.std(ddof=1) / np.sqrt(paths) + 2e-3


def test_descends_trivial(tor):
    ex, _ = tor
    d = descends(ex.B, ex.p, ex.A, ex.samples)
    assert np.max(np.abs(d.b(ex.samples))) < 1e-8 and np.max(np.abs(d.bH(ex.samples))) < 1e-8
    assert d.report.passed


def test_descends_linear_filter():
    ex = examples.get("linear_filter_1d", {"c": 2.0})
    d = descends(ex.B, ex.p, ex.A, ex.samples)
    U = ex.samples
    assert np.max(np.abs(d.b(U)[:, 0] - 2.0 * U[:, 1])) < 1e-8
    assert np.max(np.abs(d.bH(U) - np.stack([2.0 * U[:, 1], 0 * U[:, 1]], -1))) < 1e-8
    assert d.report.passed
    assert not is_over(ex.B, ex.A, ex.p, U).passed


def test_descends_round_trip(tor):
    ex, dec = tor
    b_true = lambda u: (0.3 + 0.2 * np.sin(np.asarray(u)[..., 1]))[..., None]
    bH = lambda u: b_true(u) * np.array([1.0, T_ALPHA])
    B = ex.B.plus_drift(bH)
    d = descends(B, ex.p, ex.A, ex.samples)
    assert np.max(np.abs(d.b(ex.samples) - b_true(ex.samples))) < 1e-8
