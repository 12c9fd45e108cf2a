import numpy as np
import pytest

from riembsde.convexdomain import SquaredDistance
from riembsde.diagnostics import (PairedSolutions, SProcess, SubmartingaleConfig, convergence_table, default_lambda_grid,
                                  exp_integrability, ito_increment_defect, pos_minimum, pos_term, process_S,
                                  submartingale_test, sweep)
from riembsde.drift import radial, zero
from riembsde.geometry import Euclidean, HyperbolicDisc, Sphere
from riembsde.solver import BsdeSolution, ForwardPaths

E2 = Euclidean(2)
PSI = SquaredDistance()


def _sol(X, Z=None, T=1.0):
    P, N1, n = X.shape
    Z = np.zeros((P, N1 - 1, n, 1)) if Z is None else Z
    return BsdeSolution(np.linspace(0, T, N1), X, Z, [0.0], True, 0.0)


def _fwd(P, N, seed=0):
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((P, N, 1)) / np.sqrt(N)
    B = np.concatenate([np.zeros((P, 1, 1)), np.cumsum(dW, axis=1)], axis=1)
    return ForwardPaths(np.linspace(0, 1, N + 1), B, dW)


def test_config_validation():
    with pytest.raises(ValueError):
        SubmartingaleConfig(lam=-1)
    with pytest.raises(ValueError):
        SubmartingaleConfig(alpha=0)
    with pytest.raises(ValueError):
        SubmartingaleConfig(mu=np.inf)


def test_pair_requires_same_grid():
    a = _sol(np.zeros((4, 6, 2)))
    with pytest.raises(ValueError):
        PairedSolutions(a, _sol(np.zeros((4, 5, 2))))
    with pytest.raises(ValueError):
        PairedSolutions(a, _sol(np.zeros((4, 6, 2)), T=2.0))


def test_identical_solutions_give_zero_process():
    X = np.random.default_rng(1).uniform(-0.3, 0.3, (20, 6, 2))
    pair = PairedSolutions(_sol(X), _sol(X.copy()))
    for M in (E2, Sphere(2), HyperbolicDisc(2)):
        S = process_S(pair, PSI, M, SubmartingaleConfig(3.0, 1.0))
        assert np.all(S.S == 0)
        rep = submartingale_test(S)
        assert rep.passed and all(m == 0 for m in rep.mean_increment)


def test_process_S_exponential_weight():
    X = np.zeros((3, 5, 2))
    Xp = np.zeros((3, 5, 2))
    Xp[..., 0] = 1.0
    S = process_S(PairedSolutions(_sol(X), _sol(Xp)), PSI, E2, SubmartingaleConfig(lam=2.0))
    assert np.allclose(S.S, 0.5 * np.exp(2.0 * np.linspace(0, 1, 5)))


def test_process_S_mu_term_uses_left_endpoints():
    X = np.zeros((1, 3, 1))
    Xp = np.ones((1, 3, 1))
    Z = np.array([[[[1.0]], [[2.0]]]])
    pair = PairedSolutions(_sol(X, Z), _sol(Xp, np.zeros_like(Z)))
    S = process_S(pair, PSI, Euclidean(1), SubmartingaleConfig(mu=1.0, alpha=2.0))
    assert np.allclose(S.A[0], [0.0, 0.5, 0.5 + 2.0])


def test_process_S_overflow_excluded():
    X = np.zeros((2, 3, 1))
    Xp = np.ones((2, 3, 1))
    Z = np.zeros((2, 2, 1, 1))
    Z[0] = 100.0
    S = process_S(PairedSolutions(_sol(X, Z), _sol(Xp)), PSI, Euclidean(1), SubmartingaleConfig(mu=1.0))
    assert S.excluded_count == 1 and np.isnan(S.S[0]).all() and np.isfinite(S.S[1]).all()
    assert submartingale_test(S).excluded == 1


def test_submartingale_test_signs():
    t = np.linspace(0, 1, 11)
    rng = np.random.default_rng(2)
    grow = 1 + t[None] + 0.01 * rng.standard_normal((500, 11))
    up = SProcess(t, grow, np.zeros_like(grow), np.zeros(500, bool))
    down = SProcess(t, grow[:, ::-1].copy(), np.zeros_like(grow), np.zeros(500, bool))
    assert submartingale_test(up, _fwd(500, 10)).passed
    rep = submartingale_test(down, _fwd(500, 10))
    assert not rep.passed and max(rep.t_stat) < -3


def test_pos_term_euclidean_identity():
    # Euclidean, Ψ = δ²/2: pos = ½‖z - z'‖² + κ|x - x'|² + λΨ
    rng = np.random.default_rng(3)
    x, xp = rng.standard_normal((2, 50, 2))
    z, zp = rng.standard_normal((2, 50, 2, 1))
    k = 0.7
    cfg = SubmartingaleConfig(lam=1.5)
    got = pos_term(E2, PSI, x, xp, z, zp, k * x, k * xp, cfg)
    d2 = np.sum((x - xp) ** 2, -1)
    want = 0.5 * np.sum((z - zp) ** 2, axis=(-2, -1)) + k * d2 + 1.5 * 0.5 * d2
    assert np.allclose(got, want)


@pytest.mark.parametrize("M", [Sphere(2), HyperbolicDisc(2)])
def test_ito_defect_is_second_order(M):
    rng = np.random.default_rng(4)
    x = 0.3 * rng.uniform(-1, 1, (20, 2))
    xp = 0.3 * rng.uniform(-1, 1, (20, 2))
    z, zp = 0.2 * rng.standard_normal((2, 20, 2, 2))
    b = np.zeros((20, 1))
    cfg = SubmartingaleConfig(lam=1.0, mu=0.5)
    r = [np.max(ito_increment_defect(M, PSI, radial(0.5), b, x, xp, z, zp, dt, cfg)) / dt for dt in (1e-2, 5e-3, 2.5e-3)]
    assert r[1] / r[0] < 0.6 and r[2] / r[1] < 0.6


def test_exp_integrability_examples():
    t = np.linspace(0, 2, 5)
    rep = exp_integrability(np.zeros((10, 4, 2, 1)), t, 1.0)
    assert rep.mean == 1.0 and rep.std_error == 0.0 and not rep.heavy_tail
    Z = np.zeros((10, 4, 1, 1))
    Z[...] = 1.0
    assert exp_integrability(Z, t, 0.5).mean == pytest.approx(np.e)
    heavy = np.zeros((200, 4, 1, 1))
    heavy[0] = 3.0
    assert exp_integrability(heavy, t, 1.0).heavy_tail
    with pytest.raises(ValueError):
        exp_integrability(Z, t, -1.0)


def test_convergence_table_known_offsets(tmp_path):
    base = np.zeros((10, 4, 1))
    sols = {str(l): _sol(base + 1.0 / l) for l in (1, 2, 4)}
    tab = convergence_table(sols, PSI, Euclidean(1), reference=_sol(base), reference_label="f")
    assert tab.psi[0, 1] == pytest.approx(0.5 * 0.25)
    assert tab.psi[1, 2] == pytest.approx(0.5 * 0.0625)
    assert tab.reference_psi == pytest.approx([0.5, 0.125, 0.03125])
    assert tab.pairwise_decreasing() and tab.reference_decreasing() and tab.cauchy(0.1)
    tab.write_csv(tmp_path / "t.csv", "abc")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "scenario_hash,label_a,label_b,mean_psi,z_l2" and len(lines) == 1 + 9 + 3
    assert all(line.startswith("abc,") for line in lines[1:])


def test_default_lambda_grid():
    g = default_lambda_grid()
    assert g[0] == 0.0 and len(g) == 12 and g[-1] == pytest.approx(300.0)


def test_sweep_on_contracting_pair():
    # X - X' = c e^{-t}: Ψ decays like e^{-2t}, so λ >= 2 is needed
    P, N = 50, 20
    t = np.linspace(0, 1, N + 1)
    X = np.zeros((P, N + 1, 1))
    Xp = 0.1 * np.exp(-t)[None, :, None] * np.ones((P, 1, 1))
    pair = PairedSolutions(_sol(X), _sol(Xp))
    first, rows = sweep(pair, _fwd(P, N), zero(), PSI, Euclidean(1), lambdas=[0.0, 1.0, 2.5], mus=(0.0,))
    assert [r["submartingale"] for r in rows] == [False, False, True]
    assert first["lambda"] == 2.5 and first["pos_min"] >= 0
    pmin, where = pos_minimum(pair, _fwd(P, N), zero(), PSI, Euclidean(1), SubmartingaleConfig())
    assert pmin == 0.0 and set(where) == {"path", "step"}
