"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
quantities and its wall time; a runtime over budget counts as a failure.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from riembsde.approximation import (as_drift, correct, mollify, phi_transport_constant, sup_deviation, truncate)
from riembsde.cascade import CascadeConfig, calibrate, run_cascade
from riembsde.cli.commands import _cascade_config, main
from riembsde.cli.scenario import load_scenario
from riembsde.convexdomain import SquaredDistance, psi
from riembsde.diagnostics import PairedSolutions, sweep
from riembsde.drift import DriftSpec, check_outward, check_uniform_bound, estimate_monotonicity
from riembsde.geometry import Euclidean, HyperbolicDisc, Sphere, oracle_suite, transport_estimate_constant
from riembsde.sampling import Sampler
from riembsde.solver import simulate_forward, solve_bsde

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
PSI = SquaredDistance()


@pytest.fixture
def report(capsys):
    def emit(n, passed, detail, seconds, limit):
        ok = passed and seconds <= limit
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f}s / {limit:.0f}s]")
        return ok

    return emit


def _cap_drift(b, x, z):
    s = (1 + 0.5 * np.sin(b[..., 0]))[..., None]
    rot = np.stack([x[..., 1], -x[..., 0]], -1)
    return 0.5 * s * x + 0.3 * z[..., 0, 0][..., None] * rot


def _tangential(b, x, z):
    s = (1 + 0.5 * np.sin(b[..., 0]) + 0.3 * z[..., 0, 0])[..., None]
    return s * np.stack([x[..., 1], -x[..., 0]], -1)


def test_criterion_1_geometry_oracle(report):
    t = time.perf_counter()
    res = {repr(M): oracle_suite(M, count=1000, seed=0) for M in (Sphere(2, 1.0), HyperbolicDisc(2))}
    sec = time.perf_counter() - t
    worst = max(r[q] for r in res.values() for q in ("exp", "log", "distance", "transport"))
    iso = max(r["isometry"] for r in res.values())
    assert report(1, worst <= 1e-6 and iso <= 1e-7, f"max closed-form vs ODE {worst:.2e}, isometry {iso:.2e}", sec, 10)


def test_criterion_2_transport_constant(report):
    t = time.perf_counter()
    rows = []
    for M in (Euclidean(2), Sphere(2, 1.0), HyperbolicDisc(2)):
        sm = Sampler(seed=0, radius=0.5)
        a = transport_estimate_constant(M, sm, 10_000)
        b = transport_estimate_constant(M, sm, 20_000)
        rows.append((repr(M), a, b, abs(b - a) / a))
    sec = time.perf_counter() - t
    ok = all(np.isfinite(a) and np.isfinite(b) and rel < 0.05 for _, a, b, rel in rows)
    detail = ", ".join(f"{m} C={a:.4f}->{b:.4f}" for m, a, b, _ in rows)
    assert report(2, ok, detail, sec, 30)


def test_criterion_3_monotonicity_identity(report):
    t = time.perf_counter()
    z_max = 3.0
    errs = []
    for kappa in (0.5, 1.0, 2.0):
        sm = Sampler(seed=0, radius=1.0, z_max=z_max)
        nu = estimate_monotonicity(DriftSpec(lambda b, x, z, k=kappa: k * x, False), Euclidean(2), PSI, sm, 10_000)
        errs.append(abs(nu / (2 * kappa / (1 + z_max)) - 1))
    sec = time.perf_counter() - t
    assert report(3, max(errs) <= 0.02, f"max relative error {max(errs):.2e}", sec, 5)


def test_criterion_4_euclidean_oracle(report):
    t = time.perf_counter()
    scn = load_scenario(SCENARIOS / "euclidean-linear.toml")
    fwd = simulate_forward(scn.build_sde())
    M, D = scn.build_manifold(), scn.build_domain()
    sol = solve_bsde(M, D, scn.build_drift(D), scn.build_terminal(), fwd, scn.build_picard())
    sec = time.perf_counter() - t
    gamma = 0.7
    exact = fwd.B - gamma * (fwd.times[-1] - fwd.times)[None, :, None]
    rx = float(np.sqrt(np.mean((sol.X - exact) ** 2)))
    rz = float(np.sqrt(np.mean((sol.Z - 1.0) ** 2)))
    assert report(4, rx <= 0.02 and rz <= 0.02, f"rms X {rx:.4f}, rms Z {rz:.4f}, N={fwd.n_steps}, P={fwd.n_paths}",
                  sec, 60)


@pytest.fixture(scope="module")
def cap_pair():
    t = time.perf_counter()
    scn = load_scenario(SCENARIOS / "sphere-cap.toml")
    M, D = scn.build_manifold(), scn.build_domain()
    f = scn.build_drift(D)
    fwd = simulate_forward(scn.build_sde())
    U = scn.build_terminal()
    a = solve_bsde(M, D, f, U, fwd, scn.build_picard("center"))
    b = solve_bsde(M, D, f, U, fwd, scn.build_picard("terminal"))
    return {"scn": scn, "M": M, "D": D, "f": f, "fwd": fwd, "a": a, "b": b, "seconds": time.perf_counter() - t}


def test_criterion_5_uniqueness(report, cap_pair):
    M, a, b = cap_pair["M"], cap_pair["a"], cap_pair["b"]
    tol = cap_pair["scn"].solver.tol
    gap = float(np.mean(2 * psi(PSI, M, a.X, b.X)))
    ok = a.converged and b.converged and gap <= 4 * tol ** 2
    detail = (f"mean E[delta^2] {gap:.2e} (bound {4 * tol ** 2:.0e}), "
              f"iterations {len(a.picard_residuals)}/{len(b.picard_residuals)}")
    assert report(5, ok, detail, cap_pair["seconds"], 180)


def test_criterion_6_submartingale_device(report, cap_pair):
    t = time.perf_counter()
    M, f, fwd = cap_pair["M"], cap_pair["f"], cap_pair["fwd"]
    first, rows = sweep(PairedSolutions(cap_pair["a"], cap_pair["b"]), fwd, f, PSI, M)
    sec = time.perf_counter() - t + cap_pair["seconds"]
    worst = max(rows, key=lambda r: r["min_t_stat"])
    detail = (f"initialization pair: {len(rows)} (lambda, mu) tried, "
              f"best min t-stat {worst['min_t_stat']:.1f} at lambda={worst['lambda']:.3g}, mu={worst['mu']:g}")
    if first is not None:
        detail = f"pass at lambda={first['lambda']:.3g}, mu={first['mu']:g}, pos_min {first['pos_min']:.2e}"
    # the terminal-perturbed pair is informational; it does not decide the criterion
    scn, D = cap_pair["scn"], cap_pair["D"]
    shifted = solve_bsde(M, D, f, _shift(scn.build_terminal(), 0.08), fwd, scn.build_picard())
    alt, _ = sweep(PairedSolutions(cap_pair["a"], shifted), fwd, f, PSI, M)
    if alt is not None:
        detail += f"; distinct-terminal pair passes at lambda={alt['lambda']:.3g}, mu={alt['mu']:g}"
    assert report(6, first is not None, detail, sec, 180)


def _shift(U, delta):
    from riembsde.solver import TerminalMap

    return TerminalMap(lambda beta: U(beta) + np.array([delta, 0.0]), "shifted")


def test_criterion_7_cascade_tables(report):
    t = time.perf_counter()
    scn = load_scenario(SCENARIOS / "cascade-sphere-cap.toml")
    M, D = scn.build_manifold(), scn.build_domain()
    f = DriftSpec(_cap_drift, True, "cap")
    res = run_cascade(M, D, f, scn.build_terminal(), simulate_forward(scn.build_sde()),
                      scn.build_sampler(z_max=scn.cascade.calibration_z_max), _cascade_config(scn),
                      scn.build_picard(), PSI)
    sec = time.perf_counter() - t
    verdicts, parts = [res.converged], []
    for name, tab in [(f"l (k={k})", tab) for k, tab in res.l_tables.items()] + [("k", res.k_table)]:
        e = tab.reference_psi
        verdicts += [tab.reference_decreasing(), e[-1] <= 0.1 * e[0]]
        pair = [tab.psi[i, i + 1] for i in range(len(e) - 1)]
        parts.append(f"{name} vs {tab.reference}: " + "/".join(f"{v:.2e}" for v in e)
                     + " (consecutive " + "/".join(f"{v:.2e}" for v in pair) + ")")
    assert report(7, all(verdicts), "; ".join(parts), sec, 600)


def test_criterion_8_outward_correction(report):
    t = time.perf_counter()
    f = DriftSpec(_tangential, True, "tangential")
    cfg = CascadeConfig()
    sm = Sampler(seed=0, radius=0.5, z_max=3.0)
    M = Sphere(2, 1.0)
    raw_min, cor_min, As = np.inf, np.inf, []
    for k in cfg.k_values:
        cal = calibrate(f, k, sm, 2, cfg)
        As.append(cal.A)
        for i, l in enumerate(cal.l_values):
            fkl = mollify(truncate(f, k), l, 1, 2, 1, cfg.mollifier_samples, cfg.mollifier_seed)
            g = correct(fkl, cal.eps_per_l[i], cal.A)
            raw_min = min(raw_min, check_outward(as_drift(fkl), None, sm, 4096, M=M))
            cor_min = min(cor_min, check_outward(as_drift(g), None, sm, 4096, M=M))
    sec = time.perf_counter() - t
    detail = f"A per k {As}, min radial raw {raw_min:.2e}, corrected {cor_min:.2e}"
    assert report(8, cor_min >= 0, detail, sec, 120)


def test_criterion_9_truncation_mollification(report):
    t = time.perf_counter()
    S = Sphere(2, 1.0)
    sm = Sampler(seed=0, radius=0.5)
    C = [phi_transport_constant(S, k, sm, 10_000) for k in (1, 2, 4, 8)]
    C2 = [phi_transport_constant(S, k, sm, 20_000) for k in (1, 2, 4, 8)]
    envelope_ok = all(np.isfinite(C)) and max(C) <= 1.1 * C[0] and all(abs(b - a) <= 0.05 * a for a, b in zip(C, C2))

    f = DriftSpec(_cap_drift, True, "cap")
    fk = truncate(f, 2)
    dev = [sup_deviation(fk, mollify(fk, l, 1, 2, 1, 512), 1, 2, 1) for l in (4, 8, 16, 32)]
    dev_ok = all(a > b for a, b in zip(dev, dev[1:]))

    E, s1 = Euclidean(2), Sampler(seed=0, radius=1.0)
    L2 = check_uniform_bound(f, E, s1, 4096)
    L2kl = [check_uniform_bound(as_drift(mollify(truncate(f, k), l, 1, 2, 1, 512)), E, s1, 4096)
            for k in (2, 4, 8) for l in (8, 16, 32)]
    bound_ok = max(L2kl) <= L2
    sec = time.perf_counter() - t
    detail = (f"C_k {'/'.join(f'{c:.3f}' for c in C)}; sup|f_kl - f_k| {'/'.join(f'{d:.2e}' for d in dev)}; "
              f"bound f {L2:.5f} >= max f_kl {max(L2kl):.5f}")
    assert report(9, envelope_ok and dev_ok and bound_ok, detail, sec, 120)


SMALL_CASCADE = """
version = 1
name = "cascade-small"
seed = 3

[manifold]
kind = "sphere"
dim = 2

[domain]
c = 0.25
c2 = 1.0

[drift]
kind = "expression"
chart = "normalized"
components = ["0.5*x1 + 0.3*z11*x2", "0.5*x2 - 0.3*z11*x1"]

[terminal]
kind = "expression"
components = ["0.2*sin(b1)", "0.1*cos(b1) - 0.1"]

[forward]
y = [0.0]
n_steps = 8
n_paths = 300

[cascade]
k_values = [2, 4]
l_values = [8, 16]
l_table_k = [2]
mollifier_samples = 32
calibration_count = 128
outward_count = 128
"""


def _artifacts(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*"))
            if p.is_file() and p.name != "metadata.json"}


def test_criterion_10_determinism(report, tmp_path):
    t = time.perf_counter()
    small = tmp_path / "cascade-small.toml"
    small.write_text(SMALL_CASCADE)
    runs = [("check-drift", SCENARIOS / "radial-euclidean.toml", []),
            ("solve", SCENARIOS / "euclidean-linear.toml", []),
            ("diagnose", SCENARIOS / "sphere-cap-distinct.toml", []),
            ("cascade", small, []),
            ("geometry-selftest", None, ["--count", "50"])]
    differing = []
    for cmd, scn, extra in runs:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{cmd}-{rep}"
            args = [cmd, "--out", str(out)] + (["--scenario", str(scn)] if scn else []) + extra
            main(args)
            outs.append(_artifacts(out))
        if not outs[0] or outs[0] != outs[1]:
            differing.append(cmd)
    sec = time.perf_counter() - t
    detail = f"{len(runs)} commands re-run" + (f", differing: {differing}" if differing else ", all byte-identical")
    assert report(10, not differing, detail, sec, float("inf"))
