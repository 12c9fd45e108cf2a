import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riembsde.convexdomain import (DomainSpec, PowerP, SinPower, SquaredDistance, d_psi_pair, hess_psi_matrix,
                                   hess_psi_quad, hessian_lower_bound_check, normalized_ball, psi,
                                   psi_comparison_constant)
from riembsde.errors import DomainError
from riembsde.geometry import Euclidean, HyperbolicDisc, Sphere
from riembsde.sampling import Sampler, make_rng, uniform_ball


def _pts(m, seed, radius=0.4):
    return uniform_ball(make_rng(seed, "test-convexdomain"), m, 2, radius)


def test_normalize_examples():
    D = DomainSpec.quadratic(2, a=1.0, c=1.0, c2=1.0)
    y = _pts(100, 1, 1.0)
    assert np.allclose(D.normalize(y), y, atol=1e-12)
    assert np.allclose(D.normalize_inverse(y), y, atol=1e-9)
    assert np.array_equal(D.normalize(np.zeros(2)), np.zeros(2))
    assert np.allclose(D.normalize_inverse(np.zeros(2)), np.zeros(2))

    D2 = DomainSpec.quadratic(2, a=2.0, c=1.0, c2=1.0)
    u = D2.normalize(np.array([1 / np.sqrt(2), 0.0]))
    assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)


def test_domain_build_invariants():
    D = DomainSpec.quadratic(3, a=1.5, c=0.5)
    assert D.lambda_chi == pytest.approx(3.0, rel=1e-9)
    assert D.c2 == pytest.approx(D.lambda_chi / 2)
    assert D.chi(D.center) == 0
    with pytest.raises(DomainError):
        DomainSpec.quadratic(2, a=1.0, c=1.0, c2=5.0)


def test_round_trip_and_boundary():
    D = DomainSpec.quadratic(2, a=1.0, c=0.25, c2=1.0)
    u = uniform_ball(make_rng(2, "u"), 1000, 2, 1.0)
    assert np.max(np.abs(D.normalize(D.normalize_inverse(u)) - u)) < 1e-9
    theta = np.linspace(0, 2 * np.pi, 50)
    yb = 0.5 * np.stack([np.cos(theta), np.sin(theta)], -1)
    assert np.allclose(np.linalg.norm(D.normalize(yb), axis=-1), 1.0, atol=1e-9)


def test_normalize_jacobian_matches_differences():
    D = DomainSpec.quadratic(2, a=1.0, c=0.25, c2=1.0)
    y = _pts(20, 3)
    h = 1e-6
    fd = np.stack([(D.normalize(y + h * e) - D.normalize(y - h * e)) / (2 * h) for e in np.eye(2)], -1)
    assert np.allclose(D.normalize_jacobian(y), fd, atol=1e-7)


def test_project():
    D = normalized_ball(2)
    inside = np.array([0.3, 0.4])
    assert np.array_equal(D.project(inside), inside)
    out = D.project(np.array([1.2, 0.0]))
    assert np.linalg.norm(D.normalize(out)) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(D.project(out), out)


def test_psi_examples():
    E = Euclidean(2)
    assert psi(SquaredDistance(), E, np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(0.5)
    S = Sphere(2, 1.0)
    val = psi(SinPower(2, 1.0), S, np.zeros(2), np.array([np.pi / 2, 0.0]))
    assert val == pytest.approx(0.5, abs=1e-12)
    x = _pts(30, 4)
    for P in (SquaredDistance(), SinPower(2, 1.0), SinPower(4, 1.0)):
        assert np.all(psi(P, S, x, x) == 0)


def test_sinpower_requires_a_at_least_two():
    with pytest.raises(ValueError):
        SinPower(1, 1.0)


def test_d_psi_examples():
    E = Euclidean(2)
    x, xp = np.array([1.0, 0.0]), np.zeros(2)
    assert d_psi_pair(SquaredDistance(), E, x, xp, np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(1.0)
    assert d_psi_pair(SquaredDistance(), Sphere(2), x * 0.3, xp, np.zeros(2), np.zeros(2)) == 0


@pytest.mark.parametrize("Psi", [SquaredDistance(), SinPower(2, 1.0), SinPower(4, 1.0)])
@pytest.mark.parametrize("M", [Sphere(2, 1.0), HyperbolicDisc(2)])
def test_d_psi_matches_central_difference(Psi, M):
    if isinstance(Psi, SinPower) and M.curvature < 0:
        pytest.skip("SinPower is a sphere-cap function")
    rng = make_rng(5, "dpsi")
    x, xp = _pts(1000, 6), _pts(1000, 7)
    u, up = rng.standard_normal((2, 1000, 2))
    h = 1e-5
    fd = (psi(Psi, M, x + h * u, xp + h * up) - psi(Psi, M, x - h * u, xp - h * up)) / (2 * h)
    assert np.max(np.abs(d_psi_pair(Psi, M, x, xp, u, up) - fd)) < 1e-5


def test_d_psi_linear():
    M, P = Sphere(2), SquaredDistance()
    rng = make_rng(8, "lin")
    x, xp = _pts(200, 9), _pts(200, 10)
    u1, u2, v1, v2 = rng.standard_normal((4, 200, 2))
    a, b = 0.7, -1.3
    lhs = d_psi_pair(P, M, x, xp, a * u1 + b * u2, a * v1 + b * v2)
    rhs = a * d_psi_pair(P, M, x, xp, u1, v1) + b * d_psi_pair(P, M, x, xp, u2, v2)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_hessian_examples():
    E = Euclidean(2)
    x, xp = np.array([0.2, 0.1]), np.array([-0.3, 0.4])
    w = np.array([1.0, 0.0])
    assert hess_psi_quad(SquaredDistance(), E, x, xp, w, np.zeros(2)) == pytest.approx(1.0)
    assert hess_psi_quad(SquaredDistance(), Sphere(2), x, xp, np.zeros(2), np.zeros(2)) == 0


@pytest.mark.parametrize("Psi", [SquaredDistance(), SinPower(2, 1.0), SinPower(4, 1.0)])
def test_coordinate_hessian_matches_second_difference(Psi):
    M = Sphere(2, 1.0)
    rng = make_rng(11, "hess")
    x, xp = _pts(1000, 12), _pts(1000, 13)
    w, wp = rng.standard_normal((2, 1000, 2))
    h = 1e-4
    f = lambda t: psi(Psi, M, x + t * w, xp + t * wp)
    fd = (f(h) - 2 * f(0.0) + f(-h)) / h ** 2
    H = hess_psi_quad(Psi, M, x, xp, w, wp, kind="coordinate")
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(H - fd) / scale) < 1e-4


def test_covariant_hessian_along_geodesics():
    # the covariant Hessian is the second derivative along (exp_x(tw), exp_x'(tw'))
    M = HyperbolicDisc(2)
    rng = make_rng(14, "geo")
    x, xp = _pts(200, 15), _pts(200, 16)
    w, wp = 0.5 * rng.standard_normal((2, 200, 2))
    h = 1e-4
    f = lambda t: psi(SquaredDistance(), M, M.exp(x, t * w), M.exp(xp, t * wp))
    fd = (f(h) - 2 * f(0.0) + f(-h)) / h ** 2
    assert np.allclose(hess_psi_quad(SquaredDistance(), M, x, xp, w, wp), fd, atol=1e-5)


def test_hessian_matrix_sums_columns():
    M = Sphere(2)
    x, xp = np.array([0.1, 0.0]), np.array([0.0, 0.2])
    z = np.array([[1.0, 0.5], [0.0, -1.0]])
    zp = np.array([[0.3, 0.0], [0.2, 0.1]])
    total = sum(hess_psi_quad(SquaredDistance(), M, x, xp, z[:, a], zp[:, a]) for a in range(2))
    assert hess_psi_matrix(SquaredDistance(), M, x, xp, z, zp) == pytest.approx(total)


def test_powerp_fallback_matches_closed_form():
    M = Sphere(2)
    P = PowerP(lambda M_, x, xp: 0.5 * M_.distance(x, xp) ** 2, p=2, c_psi=2.0, name="half-square")
    x, xp = _pts(50, 17), _pts(50, 18)
    w, wp = make_rng(19, "w").standard_normal((2, 50, 2))
    assert np.allclose(psi(P, M, x, xp), psi(SquaredDistance(), M, x, xp))
    assert np.allclose(d_psi_pair(P, M, x, xp, w, wp), d_psi_pair(SquaredDistance(), M, x, xp, w, wp), atol=1e-7)


def test_hessian_lower_bound_examples():
    sm = Sampler(seed=0, radius=0.5)
    r = hessian_lower_bound_check(SquaredDistance(), Euclidean(2), sm, 4096)
    assert r["alpha"] == pytest.approx(1.0, abs=1e-9) and r["beta"] == 0.0
    r = hessian_lower_bound_check(SquaredDistance(), HyperbolicDisc(2), sm, 10_000)
    assert r["alpha"] > 0 and r["beta"] == 0.0
    r = hessian_lower_bound_check(SinPower(2, 1.0), Sphere(2), sm, 10_000)
    assert r["alpha"] > 0 and np.isfinite(r["beta"])


def test_psi_comparison_constant_squared_distance():
    assert psi_comparison_constant(SquaredDistance(), Sphere(2), Sampler(seed=1), 2048) == pytest.approx(2.0)


small = st.floats(-0.4, 0.4)


@settings(max_examples=50, deadline=None)
@given(st.tuples(small, small), st.tuples(small, small))
def test_psi_nonnegative_and_symmetric(a, b):
    a, b = np.array(a), np.array(b)
    for M in (Sphere(2), HyperbolicDisc(2), Euclidean(2)):
        v = psi(SquaredDistance(), M, a, b)
        assert v >= 0
        assert v == pytest.approx(psi(SquaredDistance(), M, b, a), abs=1e-12)
