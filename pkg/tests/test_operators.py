import numpy as np
import pytest

from geomfilter import examples
from geomfilter.geometry import SmoothMap, coordinate_projection, euclidean, identity_map, sample_box
from geomfilter.operators import (DiffusionOperator, Distribution, HormanderForm, OneForm, along_distribution_check,
                                  apply, cohesive_check, constant_operator, delta, from_hormander, function_battery,
                                  is_over, projectible_symbol_check, symbol)

R1, R2, R3 = euclidean(1), euclidean(2), euclidean(3)


def heis():
    return examples.get("heisenberg")


def test_apply_constant_and_square():
    L = constant_operator(R1, [[1.0]])
    assert apply(L, lambda x: 0 * x[..., 0] + 4.0, np.array([0.3])) == 0.0
    assert abs(apply(L, lambda x: x[..., 0] ** 2, np.array([1.7])) - 1.0) < 1e-6


def test_apply_heisenberg_z_squared():
    # 1/2 (1 + (x^2 + y^2)/4) * d^2/dz^2 z^2 at (1, 0, 0) = 1/2 * 5/4 * 2
    val = apply(heis().B, lambda u: u[..., 2] ** 2, np.array([1.0, 0.0, 0.0]))
    assert abs(val - 1.25) < 1e-6


def test_symbols():
    lap = constant_operator(R2, np.eye(2))
    assert np.allclose(symbol(lap)(np.zeros(2)), 0.5 * np.eye(2))
    t = np.tan(np.pi / 6)
    tor = examples.get("torus")
    assert np.allclose(tor.B.symbol(np.array([0.4, 1.0])), 0.5 * np.array([[1, t], [t, 1]]), atol=1e-15)
    x, y, z = 0.3, -0.8, 1.1
    expected = 0.5 * np.array([[1, 0, -y / 2], [0, 1, x / 2], [-y / 2, x / 2, 1 + 0.25 * (x * x + y * y)]])
    assert np.allclose(heis().B.symbol(np.array([x, y, z])), expected, atol=1e-14)


def test_from_hormander_cases(rng):
    H = HormanderForm(R3, lambda x: np.broadcast_to(np.eye(3), np.shape(x)[:-1] + (3, 3)))
    L = from_hormander(H)
    assert np.allclose(L.a(np.ones(3)), np.eye(3)) and np.allclose(L.b(np.ones(3)), 0)
    lin = from_hormander(HormanderForm(R1, lambda x: np.asarray(x)[..., None]))
    x = np.array([1.3])
    assert np.allclose(lin.a(x), [[1.69]]) and np.allclose(lin.b(x), [0.65], atol=1e-8)
    # cross-check 1/2 L_X L_X x^3 = 1/2 x d/dx (x * 3x^2) = 9/2 x^3
    assert abs(apply(lin, lambda u: u[..., 0] ** 3, x) - 4.5 * 1.3 ** 3) < 1e-5
    U = rng.normal(size=(20, 3))
    X = heis().H_B.fields(U)
    assert np.max(np.abs(heis().B.symbol(U) - 0.5 * X @ np.swapaxes(X, -1, -2))) < 1e-12


def test_delta_properties(rng):
    B = heis().B
    U = rng.normal(size=(10, 3))
    f = lambda u: u[..., 0] ** 2 * u[..., 2] + u[..., 1] ** 3
    df = lambda u: np.stack([2 * u[..., 0] * u[..., 2], 3 * u[..., 1] ** 2, u[..., 0] ** 2], -1)
    assert np.max(np.abs(delta(B, df, U) - apply(B, f, U, grad=df))) < 1e-6
    assert np.all(delta(B, lambda u: np.zeros(u.shape), U) == 0)
    lap = constant_operator(R2, np.eye(2))
    assert np.max(np.abs(delta(lap, OneForm(R2, lambda u: u[..., ::-1]), rng.normal(size=(5, 2))))) < 1e-9
    # product rule delta(g phi) = dg sigma phi + g delta(phi)
    g = lambda u: 1 + u[..., 0] * u[..., 1]
    dg = lambda u: np.stack([u[..., 1], u[..., 0], 0 * u[..., 0]], -1)
    phi = lambda u: np.stack([u[..., 2], u[..., 0] ** 2, u[..., 1]], -1)
    lhs = delta(B, lambda u: g(u)[..., None] * phi(u), U)
    rhs = np.einsum("...i,...ij,...j->...", dg(U), B.symbol(U), phi(U)) + g(U) * delta(B, phi, U)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_is_over_examples():
    h = heis()
    assert is_over(h.B, h.A, h.p, h.samples).passed
    L = constant_operator(R2, np.eye(2))
    rep = is_over(L, L, identity_map(R2), sample_box([-1, -1], [1, 1], 10))
    assert rep.residual_max < 1e-8
    b = examples.get("bessel", {"n": 3})
    assert is_over(b.B, b.A, b.p, b.samples, tol=1e-6).passed


def test_is_over_detects_wrong_base():
    h = heis()
    wrong = constant_operator(R2, 2 * np.eye(2))
    assert not is_over(h.B, wrong, h.p, h.samples).passed


def test_projectible_symbol():
    h = heis()
    assert projectible_symbol_check(h.B, h.p, h.extras["fibre_samples"]).passed
    L = constant_operator(R2, np.eye(2))
    assert projectible_symbol_check(L, identity_map(R2), [np.zeros((1, 2))]).passed
    B = DiffusionOperator(R2, lambda u: np.stack([np.stack([1 + u[..., 1] ** 2, 0 * u[..., 0]], -1),
                                                  np.stack([0 * u[..., 0], 1 + 0 * u[..., 0]], -1)], -2),
                          lambda u: np.zeros(np.shape(u)))
    p = coordinate_projection(R2, R1, [0])
    assert not projectible_symbol_check(B, p, [np.array([[0.0, 0.0], [0.0, 1.0]])]).passed


def test_cohesive_cases():
    assert cohesive_check(constant_operator(R3, np.eye(3)), sample_box([-1] * 3, [1] * 3, 10)).details["rank"] == 3
    b = examples.get("bessel", {"n": 3})
    rep = cohesive_check(b.A, np.array([[0.5], [1.0], [3.0]]))
    assert rep.passed and rep.details["rank"] == 1
    bad = constant_operator(R2, np.diag([1.0, 0.0]), b=[0.0, 1.0])
    assert not cohesive_check(bad, np.zeros((3, 2))).passed


def test_along_distribution_cases():
    vert = constant_operator(R2, np.diag([0.0, 1.0]))
    S = Distribution(R2, spanning=lambda u: np.broadcast_to(np.array([[0.0], [1.0]]), np.shape(u)[:-1] + (2, 1)))
    pts = sample_box([-1, -1], [1, 1], 10)
    assert along_distribution_check(vert, S, pts).passed
    lap = constant_operator(R2, np.eye(2))
    Sx = Distribution(R2, spanning=lambda u: np.broadcast_to(np.array([[1.0], [0.0]]), np.shape(u)[:-1] + (2, 1)))
    assert not along_distribution_check(lap, Sx, pts).passed
    from geomfilter.connection import decompose
    h = heis()
    dec = decompose(h.B, h.A, h.p, h.samples)
    ann = lambda u: np.stack([0.5 * u[..., 1], -0.5 * u[..., 0], np.ones(u.shape[:-1])], -1)[..., None, :]
    span = lambda u: h.H_B.fields(u)[..., :2]
    D = Distribution(R3, spanning=span, annihilators=ann)
    assert D.consistency(h.samples) < 1e-12
    assert along_distribution_check(dec.AH, D, h.samples[:10]).passed


def test_operator_invariants(rng):
    h = heis()
    assert h.B.check_invariants(rng.normal(size=(30, 3))).passed
    bad = constant_operator(R2, [[1.0, 0.0], [0.0, -1.0]])
    assert not bad.check_invariants(np.zeros((2, 2))).passed


def test_battery_contents():
    names = [f.name for f in function_battery(R2, max_degree=3)]
    assert len(names) == 9 + 4
    T = examples.get("torus").B.space
    assert all("sin" in n or "cos" in n for n in (f.name for f in function_battery(T)))
