import numpy as np
import pytest

from geomfilter import examples
from geomfilter.connection import decompose
from geomfilter.errors import NewtonDiverged
from geomfilter.flows import (KernelSystem, _horizontal_rhs, coefficient_constancy_check, commutator_check,
                              commutator_residual, full_flow, horizontal_fields, horizontal_flow, invert_horizontal,
                              negative_control_torus, skew_product, skew_product_check)
from geomfilter.equivariant import VerticalCoefficients
from geomfilter.operators import ProbeFunction
from geomfilter.simulate import NoiseDriver, integrate

EPS8 = np.finfo(float).eps ** 0.125


@pytest.fixture(scope="module")
def planar():
    ex = examples.get("planar_flow_redundant")
    return ex, KernelSystem(ex.H_B), ex.extras["x0"]


def test_kernel_identities(planar, rng):
    _, K, _ = planar
    rep = K.check(rng.normal(size=(20, 2)))
    assert rep.passed, rep.details
    x = rng.normal(size=2)
    P = K.K_perp(x)
    assert np.allclose(P @ P, P, atol=1e-12) and abs(np.trace(P) - 2) < 1e-12


def test_full_flow_is_rigid(planar, rng):
    # the noise fields are Killing fields, so pairwise distances are conserved
    # up to the Heun error, which shrinks with the step on a fixed Brownian path
    _, K, _ = planar
    pts = rng.normal(size=(5, 2))
    fine = NoiseDriver(3, 0, 3, 1e-3).block(1000)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    errs = []
    for group in (10, 1):
        out = full_flow(K, pts, fine.reshape(-1, group, 3).sum(1), 1e-3 * group)
        errs.append(np.max(np.abs(np.linalg.norm(out[:, None] - out[None], axis=-1) - d0)))
    assert errs[1] < 3e-3 and errs[0] / errs[1] > 3


def test_single_point_flow_matches_integrator(planar):
    ex, K, x0 = planar
    drv = NoiseDriver(4, 0, 3, 1e-2)
    path = integrate(ex.H_B, x0, 1.0, drv, scheme="stratonovich_heun")
    out = full_flow(K, x0[None], drv.block(100), 1e-2)
    assert np.array_equal(out[0], path.points[-1])


def test_horizontal_flow_carries_base_point(planar):
    _, K, x0 = planar
    dt = 1e-2
    xs, ys = horizontal_flow(K, x0, NoiseDriver(5, 0, 3, dt).block(100), dt, x0[None], record=True)
    assert np.max(np.abs(ys[:, 0] - xs)) < 1e-12


def test_horizontal_noise_is_reduced(planar, rng):
    _, K, x0 = planar
    y = rng.normal(size=(10, 2)) * 2
    n, *_ = _horizontal_rhs(K, x0, y)
    full = K.H.fields(y)
    assert np.all(np.trace(n @ np.swapaxes(n, -1, -2), axis1=-2, axis2=-1)
                  < np.trace(full @ np.swapaxes(full, -1, -2), axis1=-2, axis2=-1) + 1e-12)


def test_skew_product_fixed_point_and_reconstruction(planar, rng):
    _, K, x0 = planar
    probes = x0 + rng.normal(scale=0.7, size=(3, 2))
    res = skew_product(K, x0, probes, 1.0, NoiseDriver(6, 0, 3, 1e-2))
    assert res.fixed_point < 1e-6 and res.reconstruction < 1e-6
    assert res.g.shape == (5, 3, 2)
    rep = skew_product_check(K, x0, probes, 1.0, NoiseDriver(6, 0, 3, 1e-2))
    assert rep.passed


def test_newton_reports_divergence(planar):
    _, K, x0 = planar
    incs = NoiseDriver(7, 0, 3, 1e-2).block(10)
    with pytest.raises(NewtonDiverged):
        invert_horizontal(K, x0, incs, 1e-2, np.array([[3.0, 3.0]]), np.array([[0.0, 0.0]]), max_iter=0)


@pytest.mark.parametrize("name", ["torus", "heisenberg"])
def test_commutators_vanish(name):
    ex = examples.get(name)
    rep = commutator_check(decompose(ex.B, ex.A, ex.p, ex.samples), ex.samples[:6])
    assert rep.passed, rep.details


def test_negative_control_matches_closed_form():
    alpha, eps = np.pi / 6, 0.1
    B, A, p, S = negative_control_torus(alpha, eps)
    dec = decompose(B, A, p, S)
    y = np.linspace(0, 2 * np.pi, 13)
    U = np.stack([np.full_like(y, 0.7), y], -1)
    sin_y = ProbeFunction("sin_y", lambda u: np.sin(u[..., 1]),
                          lambda u: np.stack([0 * u[..., 0], np.cos(u[..., 1])], -1),
                          lambda u: np.stack([np.zeros(u.shape), np.stack([0 * u[..., 0], -np.sin(u[..., 1])], -1)],
                                             -2))
    r = commutator_residual(dec.AH, dec.BV, sin_y, U, EPS8)
    t2 = np.tan(alpha) ** 2
    expected = 0.25 * t2 * (1 - t2) * eps * (np.sin(y) ** 2 - 2 * np.cos(y) ** 2)
    # agreement up to the truncation error of the large difference step
    assert np.max(np.abs(r - expected)) < 5e-5
    assert abs(np.max(np.abs(expected)) - 1 / 90) < 1e-15
    assert not commutator_check(dec, U).passed


def test_coefficient_constancy_sphere():
    ex = examples.get("sphere_gradient", {"n": 2})
    D = ex.extras["derivative_flow"]
    horiz = horizontal_fields(D.conn, D.H)
    assert coefficient_constancy_check(horiz, D.predicted, ex.samples[:3]).passed

    def drifting(u):
        c = D.predicted(u)
        return VerticalCoefficients(c.alpha * (1 + 0.1 * u[0]), c.beta)

    assert not coefficient_constancy_check(horiz, drifting, ex.samples[:3]).passed
