import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riembsde.errors import DomainError, DomainExitError
from riembsde.geometry import (ChartDomain, CustomChart, Euclidean, HyperbolicDisc, Sphere, distance, exp_map,
                               levi_civita_symbols, log_map, metric, ode_chart, oracle_suite, parallel_transport,
                               riem_norm, shoot, transport_estimate_constant)
from riembsde.sampling import Sampler, make_rng, uniform_ball

BUILTINS = [Sphere(2, 1.0), HyperbolicDisc(2)]


def _pts(m, seed, radius=0.5):
    return uniform_ball(make_rng(seed, "test-geometry"), m, 2, radius)


def test_metric_examples():
    assert np.array_equal(metric(Euclidean(2), np.array([0.3, -2.0])), np.eye(2))
    assert np.allclose(metric(HyperbolicDisc(2), np.zeros(2)), 4 * np.eye(2))
    assert np.allclose(metric(Sphere(2), np.zeros(2)), np.eye(2))


@pytest.mark.parametrize("M", BUILTINS)
def test_metric_spd_and_christoffel_symmetric(M):
    x = _pts(200, 1)
    g = M.metric(x)
    assert np.allclose(g, np.swapaxes(g, -1, -2))
    assert np.all(np.linalg.eigvalsh(g) > 0)
    gam = M.christoffel(x)
    assert np.allclose(gam, np.swapaxes(gam, -1, -2), atol=1e-14)


@pytest.mark.parametrize("M", BUILTINS)
def test_christoffel_is_levi_civita(M):
    x = _pts(100, 2)
    assert np.max(np.abs(M.christoffel(x) - levi_civita_symbols(M.metric, x))) < 1e-8


def test_riem_norm_examples():
    assert riem_norm(Euclidean(2), np.eye(2), np.zeros(2)) == pytest.approx(np.sqrt(2))
    assert riem_norm(Sphere(2), np.zeros((2, 3)), np.array([0.1, 0.2])) == 0.0
    assert riem_norm(HyperbolicDisc(2), np.array([[1.0], [0.0]]), np.zeros(2)) == pytest.approx(2.0)


def test_distance_examples():
    S = Sphere(2, 1.0)
    assert distance(S, np.zeros(2), np.array([np.pi / 2, 0.0])) == pytest.approx(np.pi / 2, abs=1e-12)
    H = HyperbolicDisc(2)
    for r in (0.1, 0.5, 0.9):
        assert distance(H, np.zeros(2), np.array([r, 0.0])) == pytest.approx(np.log((1 + r) / (1 - r)), rel=1e-12)
    x = _pts(50, 3)
    for M in BUILTINS + [Euclidean(2)]:
        assert np.all(distance(M, x, x) == 0)


def test_disc_radial_distance_matches_ode():
    H = HyperbolicDisc(2)
    O = ode_chart(H)
    y = np.array([0.5, 0.0])
    assert O.distance(np.zeros(2), y) == pytest.approx(np.log(3), abs=1e-8)


def test_exp_examples():
    assert np.allclose(exp_map(Euclidean(2), np.array([1.0, 2.0]), np.array([0.5, -1.0])), [1.5, 1.0])
    for M in BUILTINS:
        x = _pts(20, 4)
        assert np.array_equal(exp_map(M, x, np.zeros_like(x)), x)
    S = Sphere(2)
    v = np.array([0.3, 0.0])
    end = exp_map(S, np.zeros(2), v)
    assert distance(S, np.zeros(2), end) == pytest.approx(0.3, abs=1e-8)
    assert np.allclose(end, ode_chart(S).exp(np.zeros(2), v), atol=1e-8)


def test_transport_examples():
    E = Euclidean(2)
    z = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(parallel_transport(E, np.zeros(2), np.ones(2), z), z)
    for M in BUILTINS:
        x = _pts(10, 5)
        assert np.array_equal(M.transport(x, x, x), x)


def test_quarter_circle_transport_on_sphere():
    # along the x1-axis great circle: norm and angle to the tangent are preserved
    S = Sphere(2, 1.0)
    x, y = np.zeros(2), np.array([np.pi / 2, 0.0])
    w = np.array([0.6, 0.8])
    Pw = S.transport(x, y, w)
    ode = ode_chart(S).transport(x, y, w)
    assert np.allclose(Pw, ode, atol=1e-8)
    assert S.norm(y, Pw) == pytest.approx(1.0, abs=1e-12)
    t0 = S.log(x, y)
    t1 = -S.log(y, x)
    cos0 = S.inner(x, w, t0) / (S.norm(x, w) * S.norm(x, t0))
    cos1 = S.inner(y, Pw, t1) / (S.norm(y, Pw) * S.norm(y, t1))
    assert cos1 == pytest.approx(cos0, abs=1e-10)


@pytest.mark.parametrize("M", BUILTINS)
def test_closed_forms_match_ode_oracle(M):
    r = oracle_suite(M, count=60, seed=7)
    for key in ("exp", "log", "distance", "transport"):
        assert r[key] < 1e-6, key
    assert r["isometry"] < 1e-7


def test_oracle_suite_deterministic():
    assert oracle_suite(HyperbolicDisc(2), 20, 3) == oracle_suite(HyperbolicDisc(2), 20, 3)


def test_custom_chart_flat_metric_gives_straight_lines():
    C = CustomChart(2, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)).copy(),
                    lambda x: np.zeros(x.shape + (2, 2)), levi_civita=True, name="flat")
    x, y = np.array([0.1, 0.2]), np.array([-0.4, 0.7])
    assert np.allclose(C.log(x, y), y - x, atol=1e-10)
    assert C.distance(x, y) == pytest.approx(np.linalg.norm(y - x), abs=1e-10)


def test_domain_errors():
    S = Sphere(2, 1.0)
    with pytest.raises(DomainError):
        metric(S, np.array([2.0, 0.0]))
    with pytest.raises(DomainError):
        distance(HyperbolicDisc(2), np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(DomainExitError):
        exp_map(S, np.array([1.2, 0.0]), np.array([1.0, 0.0]))
    assert ChartDomain.ball(2, 1.0, closed=True).contains(np.array([1.0, 0.0]))
    assert not ChartDomain.ball(2, 1.0).contains(np.array([1.0, 0.0]))


def test_shooting_recovers_velocity():
    H = HyperbolicDisc(2)
    x = _pts(30, 6)
    v = 0.2 * _pts(30, 7, 1.0)
    y = H.exp(x, v)
    assert np.max(np.abs(shoot(H.christoffel, x, y) - v)) < 1e-6


pts = st.tuples(st.floats(-0.35, 0.35), st.floats(-0.35, 0.35)).map(np.array)


@settings(max_examples=60, deadline=None)
@given(pts, pts, pts)
def test_distance_symmetric_and_triangle(a, b, c):
    for M in BUILTINS:
        assert distance(M, a, b) == pytest.approx(distance(M, b, a), abs=1e-7)
        assert distance(M, a, c) <= distance(M, a, b) + distance(M, b, c) + 1e-7


@settings(max_examples=60, deadline=None)
@given(pts, st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)).map(np.array))
def test_exp_log_round_trip(x, v):
    for M in BUILTINS:
        assert np.allclose(log_map(M, x, exp_map(M, x, v)), v, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(pts, pts, st.tuples(st.floats(-2, 2), st.floats(-2, 2)).map(np.array))
def test_transport_isometry_and_chaining(x, y, w):
    for M in BUILTINS:
        Pw = M.transport(x, y, w)
        assert abs(M.norm(y, Pw) - M.norm(x, w)) <= 1e-7
        m = M.exp(x, 0.5 * M.log(x, y))
        assert np.allclose(M.transport(m, y, M.transport(x, m, w)), Pw, atol=1e-6)


def test_transport_constant_examples():
    sm = Sampler(seed=0, radius=0.5)
    assert transport_estimate_constant(Euclidean(2), sm, 1000) == pytest.approx(1.0)
    c1 = transport_estimate_constant(Sphere(2), sm, 1000)
    c2 = transport_estimate_constant(Sphere(2), sm, 2000)
    assert np.isfinite(c1) and abs(c2 - c1) / c1 < 0.05
    assert np.isfinite(transport_estimate_constant(HyperbolicDisc(2), sm, 1000))


def test_transport_constant_nested_samples_monotone():
    sm = Sampler(seed=4, radius=0.5)
    vals = [transport_estimate_constant(HyperbolicDisc(2), sm, m) for m in (256, 1024, 4096)]
    assert vals == sorted(vals)
