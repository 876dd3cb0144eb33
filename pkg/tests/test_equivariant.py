import numpy as np
import pytest

from geomfilter import examples
from geomfilter.connection import decompose
from geomfilter.equivariant import (connection_form, derivative_flow_system, equivariance_check, frame_chart, gl,
                                    join_frame, so, split_frame, translation_chart, translations,
                                    vertical_coefficients)
from geomfilter.errors import RankDrop
from geomfilter.geometry import euclidean
from geomfilter.operators import HormanderForm


def test_so_basis_orthonormal_and_closed():
    for n in (2, 3, 4):
        G = so(n)
        assert np.allclose(G.gram(), np.eye(G.algebra_dim), atol=1e-14)
        assert G.closure_residual() < 1e-14


def test_adjoint_is_homomorphism(rng):
    G = so(3)
    g, h = G.random_element(rng), G.random_element(rng)
    assert np.allclose(G.Ad(g @ h), G.Ad(g) @ G.Ad(h), atol=1e-12)
    assert np.allclose(G.Ad(g) @ G.Ad(g).T, np.eye(3), atol=1e-12)


def test_gl_coordinates_round_trip(rng):
    G = gl(3)
    M = rng.normal(size=(3, 3))
    assert np.allclose(G.element(G.coords(M)), M, atol=1e-14)


def test_translation_group_acts_additively():
    G = translations(2)
    g = G.exp(G.element([0.5, -1.0]))
    assert np.allclose(g[:2, 2], [0.5, -1.0])


def test_frame_round_trip(rng):
    y, U = rng.normal(size=3), rng.normal(size=(3, 3))
    y2, U2 = split_frame(join_frame(y, U), 3)
    assert np.all(y2 == y) and np.all(U2 == U)


def test_charts_are_principal(rng):
    fc = frame_chart(euclidean(2))
    U = np.concatenate([rng.normal(size=(5, 2)), (np.eye(2) + 0.1 * rng.normal(size=(5, 2, 2))).reshape(5, 4)], 1)
    gs = [gl(2).random_element(rng, 0.3) for _ in range(3)]
    assert fc.check(U, gs).passed
    tc = translation_chart(euclidean(2), euclidean(3))
    assert tc.check(rng.normal(size=(5, 3)), [translations(1).random_element(rng)]).passed


def test_connection_form_properties_heisenberg():
    ex = examples.get("heisenberg")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)
    chart = translation_chart(ex.A.space, ex.B.space)
    for u in ex.samples[:5]:
        w = connection_form(dec.conn, chart, u)
        assert np.max(np.abs(w @ dec.conn.lift_matrix(u))) < 1e-10
        assert np.allclose(w @ chart.fundamental(u), np.eye(1), atol=1e-12)
        x, y = u[:2]
        assert np.allclose(w, [[0.5 * y, -0.5 * x, 1.0]], atol=1e-10)


def test_vertical_coefficients_match_vertical_part():
    for name in ("heisenberg", "torus"):
        ex = examples.get(name)
        dec = decompose(ex.B, ex.A, ex.p, ex.samples)
        chart = translation_chart(ex.A.space, ex.B.space)
        for u in ex.samples[:3]:
            c = vertical_coefficients(ex.B, dec.conn, chart, u)
            assert abs(c.alpha[0, 0] - 0.5 * dec.BV.a(u)[-1, -1]) < 1e-8
            assert abs(c.beta[0] - dec.BV.b(u)[-1]) < 1e-6


def test_translation_equivariance(rng):
    ex = examples.get("heisenberg")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)
    chart = translation_chart(ex.A.space, ex.B.space)
    gs = [chart.group.random_element(rng) for _ in range(3)]
    rep = equivariance_check(lambda u: vertical_coefficients(ex.B, dec.conn, chart, u), chart, gs, ex.samples[:3],
                             tol=1e-6)
    assert rep.passed


@pytest.mark.parametrize("n", [2, 3])
def test_sphere_coefficients_two_routes(n):
    ex = examples.get("sphere_gradient", {"n": n})
    D = ex.extras["derivative_flow"]
    a_ref, b_ref = ex.reference("alpha"), ex.reference("beta")
    for u in ex.samples[:2]:
        f, g = D.predicted(u), D.generic(u)
        assert np.max(np.abs(f.alpha - a_ref)) < 1e-8 and np.max(np.abs(f.beta - b_ref)) < 1e-8
        assert np.max(np.abs(g.alpha - a_ref)) < 1e-8 and np.max(np.abs(g.beta - b_ref)) < 1e-8


def test_sphere_coefficients_equivariant(rng):
    ex = examples.get("sphere_gradient", {"n": 2})
    D = ex.extras["derivative_flow"]
    gs = [gl(2).random_element(rng, 0.4) for _ in range(3)]
    assert equivariance_check(D.predicted, D.chart, gs, ex.samples[:3], tol=1e-8).passed


def test_ricci_of_round_sphere():
    ex = examples.get("sphere_gradient", {"n": 3})
    D = ex.extras["derivative_flow"]
    y = ex.samples[0][:3]
    U = D.orthonormal_frame(y)
    _, Ric = D.curvature_in_frame(y, U)
    assert np.allclose(Ric, 2.0 * np.eye(3), atol=1e-8)


def test_rank_drop_rejected():
    H = HormanderForm(euclidean(2), lambda y: np.broadcast_to(np.array([[1.0], [0.0]]),
                                                              np.shape(y)[:-1] + (2, 1)).copy())
    with pytest.raises(RankDrop):
        derivative_flow_system(H, samples=np.zeros((1, 2)))
