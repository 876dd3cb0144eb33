import numpy as np
import pytest

from geomfilter.errors import NumericalDomainError, ValidationError
from geomfilter.geometry import (ChartSpace, PointPath, SmoothMap, coordinate_projection, euclidean, finite_diff,
                                 identity_map, jacobian, jacobian_fd, sample_box, torus)


def test_second_derivative_of_square():
    assert abs(finite_diff(lambda x: x[..., 0] ** 2, np.array([1.0]), order=2, indices=(0, 0)) - 2.0) < 1e-6


def test_first_derivative_of_constant():
    assert finite_diff(lambda x: 3.0 + 0 * x[..., 0], np.array([0.7, -2.0]), order=1, indices=(1,)) == 0.0


def test_mixed_derivative_of_bilinear():
    val = finite_diff(lambda x: x[..., 0] * x[..., 1], np.array([3.0, 5.0]), order=2, indices=(0, 1))
    assert abs(val - 1.0) < 1e-6


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(NumericalDomainError), np.errstate(invalid="ignore", divide="ignore"):
        finite_diff(lambda x: np.log(x[..., 0]), np.array([0.0]), order=1)


def test_identity_jacobian():
    J = jacobian(identity_map(euclidean(2)), np.array([0.3, 0.4]))
    assert np.array_equal(J, np.eye(2))


def test_heisenberg_projection_jacobian():
    p = coordinate_projection(euclidean(3), euclidean(2), [0, 1])
    assert np.array_equal(jacobian(p, np.array([1.0, 2.0, 3.0])), [[1, 0, 0], [0, 1, 0]])


def test_norm_jacobian_analytic_and_numeric():
    R3 = ChartSpace("R3-minus-origin", 3)
    half = ChartSpace("half-line", 1)
    fn = lambda u: np.linalg.norm(u, axis=-1, keepdims=True)
    analytic = SmoothMap(R3, half, fn, lambda u: (u / np.linalg.norm(u, axis=-1, keepdims=True))[..., None, :])
    numeric = SmoothMap(R3, half, fn)
    u = np.array([0.0, 0.0, 2.0])
    assert np.allclose(jacobian(analytic, u), [[0, 0, 1]], atol=1e-15)
    assert np.allclose(jacobian(numeric, u), [[0, 0, 1]], atol=1e-9)


def test_analytic_jacobians_match_differences(rng):
    R3 = euclidean(3)
    F = lambda u: np.stack([np.sin(u[..., 0]) * u[..., 1], u[..., 2] ** 2, np.exp(u[..., 0] - u[..., 2])], -1)

    def dF(u):
        x, y, z = u[..., 0], u[..., 1], u[..., 2]
        zero = np.zeros_like(x)
        return np.stack([np.stack([np.cos(x) * y, np.sin(x), zero], -1),
                         np.stack([zero, zero, 2 * z], -1),
                         np.stack([np.exp(x - z), zero, -np.exp(x - z)], -1)], -2)

    p = SmoothMap(R3, R3, F, dF)
    U = rng.uniform(-1, 1, size=(100, 3))
    assert np.max(np.abs(jacobian(p, U) - jacobian_fd(F, U))) < 1e-5


def test_periodic_wrapping_exact():
    T2 = torus(2)
    x = np.array([1.0, 2.0])
    p = identity_map(T2)
    # exact up to the rounding of x + period itself
    assert np.allclose(p(x + np.array([2 * np.pi, 0.0])), p(x), rtol=0, atol=4e-16)


def test_periodic_jacobian_unwraps():
    T1 = torus(1)
    p = SmoothMap(euclidean(1), T1, lambda u: u * 1.0)
    J = jacobian(p, np.array([2 * np.pi - 1e-7]))
    assert abs(J[0, 0] - 1.0) < 1e-6


def test_chart_validation():
    with pytest.raises(ValidationError):
        ChartSpace("bad", 0)
    with pytest.raises(ValidationError):
        ChartSpace("bad", 1, periods=(-1.0,))


def test_embedding_rank_check():
    def emb(y):
        s = np.sum(y * y)
        return np.concatenate([2 * y, [s - 1]]) / (1 + s)

    def demb(y):
        return jacobian_fd(emb, y)

    S2 = ChartSpace("S2", 2, embedding=(emb, demb))
    assert S2.check_embedding(sample_box([-1, -1], [1, 1], 20))
    flat = ChartSpace("bad", 2, embedding=(lambda y: np.array([y[0], y[0]]), lambda y: np.array([[1.0, 0], [1.0, 0]])))
    assert not flat.check_embedding(np.zeros((1, 2)))


def test_path_invariants_and_csv(tmp_path):
    with pytest.raises(ValidationError):
        PointPath([0.0, 0.0], [[0.0], [1.0]])
    with pytest.raises(ValidationError):
        PointPath([0.0], [[0.0]])
    ts = np.linspace(0, 1, 11)
    path = PointPath(ts, np.stack([ts, ts ** 2], 1))
    assert np.allclose(path.at(0.55), [0.55, 0.5 * (0.25 + 0.36)])
    f = tmp_path / "p.csv"
    path.to_csv(f)
    assert f.read_text().splitlines()[0] == "t,x0,x1"
    back = PointPath.from_csv(f)
    assert np.array_equal(back.points, path.points) and np.array_equal(back.times, path.times)
