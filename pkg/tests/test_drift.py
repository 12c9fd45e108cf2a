import json

import numpy as np
import pytest

from riembsde.convexdomain import DomainSpec, SquaredDistance, normalized_ball
from riembsde.drift import (DriftSpec, b_sin, check_drift, check_outward, check_smallness, check_uniform_bound,
                            dpsi_lower_bound_check, estimate_lipschitz_bz, estimate_monotonicity, inward,
                            linear_growth_constant, radial, tangential, z_linear, zero)
from riembsde.errors import DomainError, EvaluationError
from riembsde.geometry import Euclidean, HyperbolicDisc, Sphere
from riembsde.sampling import Sampler

E2 = Euclidean(2)


def test_zero_drift_constants():
    sm = Sampler(seed=0, radius=1.0, d_w=2)
    f = zero()
    assert estimate_lipschitz_bz(f, E2, sm, 2000) == 0.0
    assert check_uniform_bound(f, E2, sm, 2000) == 0.0
    assert linear_growth_constant(f, E2, sm, 2000) == 0.0
    r = check_drift(f, E2, SquaredDistance(), normalized_ball(2), sm, 2000)
    assert r.passed


def test_radial_drift_monotonicity_identity():
    # DΨ·(κx, κx') = 2κΨ, so ν̂ = 2κ/(1 + z_max)
    sm = Sampler(seed=0, radius=1.0, z_max=0.0)
    nu = estimate_monotonicity(radial(0.5), E2, SquaredDistance(), sm, 4000)
    assert nu == pytest.approx(1.0, abs=1e-9)
    sm = Sampler(seed=0, radius=1.0, z_max=1.0)
    nu = estimate_monotonicity(radial(0.5), E2, SquaredDistance(), sm, 20000)
    assert 0.5 <= nu < 0.52


def test_z_linear_lipschitz_is_c0():
    sm = Sampler(seed=1, radius=0.5, d_w=2)
    L = estimate_lipschitz_bz(z_linear(0.3), E2, sm, 8000)
    assert 0.29 < L <= 0.3 + 1e-12


def test_b_sin_lipschitz_and_bound():
    sm = Sampler(seed=2, radius=0.5)
    L = estimate_lipschitz_bz(b_sin(), E2, sm, 8000)
    assert 0.9 < L <= 1.0 + 1e-9
    assert check_uniform_bound(b_sin(), E2, sm, 8000) <= 1.0


def test_outward_verdicts():
    sm = Sampler(seed=3, radius=1.0)
    D = normalized_ball(2)
    assert check_outward(radial(1.0), D, sm, 2000) == pytest.approx(1.0)
    assert check_outward(inward(1.0), D, sm, 2000) == pytest.approx(-1.0)
    assert abs(check_outward(tangential(), D, sm, 2000)) < 1e-12


def test_outward_through_nontrivial_domain():
    D = DomainSpec.quadratic(2, a=1.0, c=0.25, c2=1.0)
    sm = Sampler(seed=4, radius=0.5)
    assert check_outward(radial(1.0), D, sm, 2000) > 0
    assert check_outward(inward(1.0), D, sm, 2000) < 0


def test_estimates_nested_in_count():
    sm = Sampler(seed=5, radius=0.5, batch_size=256)
    f = DriftSpec(lambda b, x, z: np.sin(b[..., :1]) * x + z[..., :, 0], True, "mix")
    Ls = [estimate_lipschitz_bz(f, Sphere(2), sm, m) for m in (256, 1024, 4096)]
    assert Ls == sorted(Ls)
    nus = [estimate_monotonicity(f, Sphere(2), SquaredDistance(), sm, m) for m in (256, 1024, 4096)]
    assert nus == sorted(nus, reverse=True)


def test_estimates_deterministic():
    sm = Sampler(seed=6, radius=0.5)
    D = DomainSpec.quadratic(2, a=1.0, c=0.25, c2=1.0)
    a = check_drift(radial(), HyperbolicDisc(2), SquaredDistance(), D, sm, 1000)
    b = check_drift(radial(), HyperbolicDisc(2), SquaredDistance(), D, sm, 1000)
    assert a.to_json() == b.to_json()
    assert json.loads(a.to_json())["sample_count"] == 1000


def test_outward_rejects_domain_outside_chart():
    with pytest.raises(DomainError):
        check_outward(radial(), normalized_ball(2), Sampler(seed=0), 100, M=HyperbolicDisc(2))


def test_nonfinite_drift_raises_with_witness():
    f = DriftSpec(lambda b, x, z: np.full_like(x, np.nan), False, "bad")
    with pytest.raises(EvaluationError) as err:
        f(np.zeros(1), np.ones(2), np.zeros((2, 1)))
    assert "bad" in str(err.value)


def test_check_smallness():
    assert check_smallness(0.1, 0.0, 0.1, 0.2)
    assert not check_smallness(0.2, 0.0, 0.1, 0.2)
    assert not check_smallness(0.1, -0.3, 0.1, 0.2)
    with pytest.raises(ValueError):
        check_smallness(0, 0, 0, 0)


def test_declared_constants_checked():
    sm = Sampler(seed=7, radius=0.5)
    good = check_drift(z_linear(0.3), E2, SquaredDistance(), normalized_ball(2), sm, 2000)
    assert good.verdicts["declared_L"]
    lying = DriftSpec(lambda b, x, z: 0.3 * z[..., :, 0], True, "lying", {"L": 0.1})
    bad = check_drift(lying, E2, SquaredDistance(), normalized_ball(2), sm, 2000)
    assert not bad.verdicts["declared_L"] and not bad.passed


def test_growth_dominated_by_lipschitz_and_bound():
    sm = Sampler(seed=8, radius=0.5)
    f = DriftSpec(lambda b, x, z: 0.2 * np.sin(b[..., :1]) * z[..., :, 0] + 0.1, True, "mixed")
    r = check_drift(f, Sphere(2), SquaredDistance(), None, sm, 4000)
    assert r.verdicts["growth_dominated"]


def test_dpsi_lower_bound_constants_finite():
    sm = Sampler(seed=9, radius=0.4)
    res = dpsi_lower_bound_check(z_linear(0.3), Sphere(2), SquaredDistance(), sm, 2000)
    assert res["count"] == 2000
    for key in ("C_hat", "estim1", "estim3"):
        assert np.isfinite(res[key]) and res[key] >= 0
