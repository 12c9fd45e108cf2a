"""Subcommands: check-drift, solve, cascade, diagnose, geometry-selftest.

Exit codes: 0 pass, 1 a mathematical check failed or the solver did not
converge, 2 configuration error. Every report embeds the scenario hash;
wall-clock information goes to metadata.json only, so the other artifacts
are byte-identical across re-runs.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .. import diagnostics as diag
from ..approximation import as_drift, correct, mollify, truncate
from ..convexdomain import psi
from ..cascade import CascadeConfig, calibrate, run_cascade
from ..drift import check_drift, check_outward
from ..geometry import HyperbolicDisc, Sphere, oracle_suite
from ..sampling import set_max_workers
from ..solver import load_solution, save_forward, save_solution, simulate_forward, solution_summary, solve_bsde
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
GEOMETRY_TOL = 1e-6
ISOMETRY_TOL = 1e-7

SCHEMAS = {
    "check_drift": [("scenario_hash", "hash of the validated scenario"), ("quantity", "estimated constant or verdict"),
                    ("value", "numeric value (verdicts as 0/1)")],
    "residuals": [("scenario_hash", "hash of the validated scenario"), ("iteration", "Picard pass, from 1"),
                  ("residual", "max over t of the path mean of |X - X_prev|")],
    "summary": [("scenario_hash", "hash of the validated scenario"), ("time", "grid time"),
                ("mean_chi", "path mean of chi(X_t)"), ("mean_znorm_r", "path mean of the Riemannian norm of Z_t")],
    "convergence": [("scenario_hash", "hash of the validated scenario"), ("label_a", "first solution label"),
                    ("label_b", "second solution label or reference"),
                    ("mean_psi", "mean over t and paths of Psi(X^a_t, X^b_t)"),
                    ("z_l2", "path mean of the time integral of |Z^a - Z^b|^2")],
    "calibration": [("scenario_hash", "hash of the validated scenario"), ("k", "truncation level"),
                    ("l", "mollification level"), ("C", "smallest constant at this l"), ("A", "C + 1"),
                    ("epsilon", "modulus of continuity of f_k at 1/l")],
    "outward": [("scenario_hash", "hash of the validated scenario"), ("k", "truncation level"),
                ("l", "mollification level"), ("radial_min_raw", "boundary radial minimum of f_{k,l}"),
                ("radial_min_corrected", "boundary radial minimum of g_{k,l}")],
    "submartingale": [("scenario_hash", "hash of the validated scenario"), ("time", "left grid time t_i"),
                      ("mean_increment", "path mean of S_{i+1} - S_i"), ("std_error", "standard error of the mean"),
                      ("t_stat", "mean / std_error"), ("min_conditional", "minimum fitted conditional increment")],
    "sweep": [("scenario_hash", "hash of the validated scenario"), ("lambda", "constant lambda"), ("mu", "constant mu"),
              ("alpha", "exponent alpha"), ("submartingale", "1 if the test passed"),
              ("min_t_stat", "smallest increment t statistic"), ("pos_min", "sampled minimum of the pos term")],
    "geometry_selftest": [("scenario_hash", "empty: no scenario"), ("manifold", "chart"),
                          ("quantity", "operation compared"), ("value", "max abs difference")],
}


class Output:
    """Report writer honouring --format; every CSV gets a schema file."""

    def __init__(self, root: Path, fmt: str, scenario_hash: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.hash = scenario_hash

    def json(self, name, obj):
        if self.fmt in ("json", "both"):
            payload = dict(obj)
            payload["scenario_hash"] = self.hash
            (self.root / f"{name}.json").write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")

    def csv(self, name, schema, rows):
        if self.fmt not in ("csv", "both"):
            return
        cols = SCHEMAS[schema]
        with open(self.root / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([c for c, _ in cols])
            for r in rows:
                w.writerow([self.hash] + [_cell(v) for v in r])
        sdir = self.root / "schema"
        sdir.mkdir(exist_ok=True)
        (sdir / f"{schema}.json").write_text(json.dumps(
            {"report": schema, "columns": [{"name": c, "description": d} for c, d in cols]}, indent=2) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_check_drift(scn, out: Output) -> int:
    M, D = scn.build_manifold(), scn.build_domain()
    f = scn.build_drift(D)
    rep = check_drift(f, M, scn.build_psi(), D, scn.build_sampler(), scn.check.count, h=scn.check.h)
    out.json("check_drift", json.loads(rep.to_json()))
    rows = [("L_hat", rep.L_hat), ("nu_hat", rep.nu_hat), ("L2_hat", rep.L2_hat), ("radial_min", rep.radial_min),
            ("C_growth", rep.C_growth)] + [(f"verdict_{k}", v) for k, v in sorted(rep.verdicts.items())]
    out.csv("check_drift", "check_drift", rows)
    for k, v in rows:
        _say(f"{k:<28} {v if isinstance(v, bool) else f'{v + 0.0:.6g}'}")
    _say("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _solve(scn, init=None, terminal=None):
    M, D = scn.build_manifold(), scn.build_domain()
    f = scn.build_drift(D)
    fwd = simulate_forward(scn.build_sde())
    U = scn.build_terminal(terminal)
    return M, D, f, fwd, solve_bsde(M, D, f, U, fwd, scn.build_picard(init))


def cmd_solve(scn, out: Output) -> int:
    M, D, f, fwd, sol = _solve(scn)
    save_forward(fwd, out.root / "forward", out.hash)
    save_solution(sol, out.root / "solution", out.hash, M, D)
    out.json("solve", {"converged": sol.converged, "picard_residuals": sol.picard_residuals,
                       "terminal_error": sol.terminal_error, "X0_mean": sol.X[:, 0].mean(axis=0),
                       "inside_domain": bool(np.all(D.chi(sol.X) <= D.c + 1e-9)), "config": sol.config})
    out.csv("residuals", "residuals", [(j + 1, r) for j, r in enumerate(sol.picard_residuals)])
    out.csv("summary", "summary", solution_summary(sol, M, D))
    _say(f"picard residuals: {', '.join(f'{r:.3g}' for r in sol.picard_residuals)}")
    _say(f"X_0 mean: {np.round(sol.X[:, 0].mean(axis=0), 6).tolist()}")
    _say("converged" if sol.converged else "NOT converged")
    return EXIT_OK if sol.converged else EXIT_FAIL


def _cascade_config(scn):
    c = scn.cascade
    if c is None:
        raise ScenarioError("scenario has no [cascade] table")
    seed = scn.seed if c.mollifier_seed is None else c.mollifier_seed
    return CascadeConfig(tuple(c.k_values), tuple(c.l_values), tuple(c.l_table_k), c.mollifier_samples, seed,
                         c.calibration_count)


def cmd_cascade(scn, out: Output) -> int:
    if scn.drift.chart != "normalized":
        raise ScenarioError("the cascade needs a drift written in the normalized chart (drift.chart = 'normalized')")
    cfg = _cascade_config(scn)
    M, D = scn.build_manifold(), scn.build_domain()
    f = scn.build_drift_normalized()
    fwd = simulate_forward(scn.build_sde())
    sampler = scn.build_sampler(z_max=scn.cascade.calibration_z_max)
    res = run_cascade(M, D, f, scn.build_terminal(), fwd, sampler, cfg, scn.build_picard(), scn.build_psi(), log=_say)

    # outward check for every (k, l), with A calibrated per k
    outward_rows = []
    cals = dict(res.calibrations)
    for k in cfg.k_values:
        cal = cals.get(k) or calibrate(f, k, sampler, M.dim, cfg)
        cals[k] = cal
        for l in cfg.l_values:
            fkl = mollify(truncate(f, k), l, scn.d, M.dim, scn.d_w, cfg.mollifier_samples, cfg.mollifier_seed)
            g = correct(fkl, cal.eps_per_l[cal.l_values.index(l)], cal.A)
            raw = check_outward(as_drift(fkl), None, sampler, scn.cascade.outward_count, M=M)
            cor = check_outward(as_drift(g), None, sampler, scn.cascade.outward_count, M=M)
            outward_rows.append((k, l, raw, cor))

    outward_ok = all(r[3] >= -1e-9 for r in outward_rows)
    tables = {f"l_table_k{k}": t for k, t in res.l_tables.items()}
    tables["k_table"] = res.k_table
    verdicts = {"converged": res.converged, "outward_corrected": outward_ok}
    for name, t in tables.items():
        verdicts[f"{name}_decreasing"] = t.reference_decreasing()
        e = t.reference_psi
        verdicts[f"{name}_finest_le_10pct"] = bool(e[-1] <= 0.1 * e[0]) if len(e) > 1 else True
    out.json("cascade", {
        "calibration": {str(k): {"A": c.A, "C_hat": c.C_hat, "A_per_l": c.A_per_l, "eps_per_l": c.eps_per_l,
                                 "stable": c.stable, "warning": c.warning} for k, c in sorted(cals.items())},
        "tables": {name: t.to_dict() for name, t in tables.items()},
        "residuals": {"f": res.full.picard_residuals,
                      **{f"f_{k}": s.picard_residuals for k, s in res.truncated.items()},
                      **{f"g_{k},{l}": s.picard_residuals for (k, l), s in res.corrected.items()}},
        "outward": [{"k": k, "l": l, "radial_min_raw": a, "radial_min_corrected": b} for k, l, a, b in outward_rows],
        "verdicts": verdicts})
    for name, t in tables.items():
        if out.fmt in ("csv", "both"):
            t.write_csv(out.root / f"{name}.csv", out.hash)
    out.csv("calibration", "calibration",
            [(k, l, c.C_per_l[i], c.A_per_l[i], c.eps_per_l[i]) for k, c in sorted(cals.items())
             for i, l in enumerate(c.l_values)])
    out.csv("outward", "outward", outward_rows)
    if out.fmt in ("csv", "both"):
        _write_schema(out, "convergence")
    for name, t in tables.items():
        _say(f"{name}: " + ", ".join(f"{lab}:{e:.3g}" for lab, e in zip(t.labels, t.reference_psi)))
    for k, v in verdicts.items():
        _say(f"{k:<28} {v}")
    return EXIT_OK if all(verdicts.values()) else EXIT_FAIL


def _write_schema(out: Output, schema):
    sdir = out.root / "schema"
    sdir.mkdir(exist_ok=True)
    cols = SCHEMAS[schema]
    (sdir / f"{schema}.json").write_text(json.dumps(
        {"report": schema, "columns": [{"name": c, "description": d} for c, d in cols]}, indent=2) + "\n")


def _load_pair(paths, expected_hash):
    sols = []
    for p in paths:
        try:
            sol, h = load_solution(p)
        except (FileNotFoundError, KeyError, ValueError) as exc:
            raise ScenarioError(f"{p}: not a solution directory ({exc})") from None
        if h != expected_hash:
            raise ScenarioError(f"{p}: scenario hash {h[:12]}… does not match {expected_hash[:12]}…")
        sols.append(sol)
    return sols


def cmd_diagnose(scn, out: Output, solutions=None) -> int:
    M, D = scn.build_manifold(), scn.build_domain()
    f = scn.build_drift(D)
    Psi = scn.build_psi()
    fwd = simulate_forward(scn.build_sde())
    dcfg = scn.diagnostics
    if solutions:
        a, b = _load_pair(solutions, out.hash)
        if not np.array_equal(a.times, fwd.times) or a.n_paths != fwd.n_paths:
            raise ScenarioError("solution artifacts were not produced on this scenario's forward grid")
    else:
        U = scn.build_terminal()
        picard = scn.build_picard
        if dcfg.pair == "initializations":
            a = solve_bsde(M, D, f, U, fwd, picard("center"))
            b = solve_bsde(M, D, f, U, fwd, picard("terminal"))
        else:
            a = solve_bsde(M, D, f, U, fwd, picard())
            b = solve_bsde(M, D, f, scn.build_terminal(dcfg.second_terminal), fwd, picard())
    pair = diag.PairedSolutions(a, b)
    first, rows = diag.sweep(pair, fwd, f, Psi, M, dcfg.lambdas, dcfg.mus, dcfg.alpha, n_se=dcfg.n_se)
    cfg0 = diag.SubmartingaleConfig(first["lambda"], first["mu"], dcfg.alpha) if first else \
        diag.SubmartingaleConfig(0.0, 0.0, dcfg.alpha)
    rep = diag.submartingale_test(diag.process_S(pair, Psi, M, cfg0), fwd, n_se=dcfg.n_se)
    integ = [diag.exp_integrability(s.Z, s.times, dcfg.integrability_mu, M, s.X) for s in (a, b)]
    out.json("diagnose", {
        "pair": dcfg.pair if not solutions else "artifacts",
        "converged": [a.converged, b.converged],
        "mean_psi": float(np.mean(psi(Psi, M, a.X, b.X))),
        "first_pass": first, "sweep": rows, "submartingale": rep.to_dict(),
        "exp_integrability": [vars(r) for r in integ], "inconclusive": first is None})
    out.csv("submartingale", "submartingale",
            list(zip(rep.times, rep.mean_increment, rep.std_error, rep.t_stat, rep.min_conditional)))
    out.csv("sweep", "sweep", [(r["lambda"], r["mu"], r["alpha"], r["submartingale"], r["min_t_stat"], r["pos_min"])
                               for r in rows])
    _say(f"mean Psi(X, X'): {np.mean(psi(Psi, M, a.X, b.X)):.3g}")
    if first is None:
        _say("no swept (lambda, mu) passed: inconclusive")
    else:
        _say(f"first passing constants: lambda={first['lambda']:.4g} mu={first['mu']:.4g} pos_min={first['pos_min']:.3g}")
    for s, r in zip(("first", "second"), integ):
        _say(f"E exp(mu int |Z|^2) {s}: {r.mean:.6g} ± {1.96 * r.std_error:.2g}{' (heavy tail)' if r.heavy_tail else ''}")
    return EXIT_OK if first is not None else EXIT_FAIL


def cmd_geometry_selftest(out: Output, count: int, seed: int) -> int:
    results = {}
    rows = []
    ok = True
    for M in (Sphere(2, 1.0), HyperbolicDisc(2)):
        r = oracle_suite(M, count, seed)
        results[repr(M)] = r
        for q in ("exp", "log", "distance", "transport", "isometry"):
            rows.append((repr(M), q, r[q]))
            tol = ISOMETRY_TOL if q == "isometry" else GEOMETRY_TOL
            ok &= r[q] <= tol
            _say(f"{repr(M):<24} {q:<10} {r[q]:.3e}")
    out.json("geometry_selftest", {"results": results, "tolerance": GEOMETRY_TOL,
                                   "isometry_tolerance": ISOMETRY_TOL, "passed": ok})
    out.csv("geometry_selftest", "geometry_selftest", rows)
    _say("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="riembsde", description="Manifold-valued BSDE experiments from scenario files.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("check-drift", "solve", "cascade", "diagnose", "geometry-selftest"):
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=name != "geometry-selftest")
        s.add_argument("--out")
        s.add_argument("--seed-override", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--format", choices=("json", "csv", "both"), default="both")
        if name == "diagnose":
            s.add_argument("--solutions", nargs=2, metavar="DIR", help="two solution directories written by solve")
        if name == "geometry-selftest":
            s.add_argument("--count", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = dt.datetime.now(dt.timezone.utc)
    t0 = time.perf_counter()
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        set_max_workers(args.threads)
    try:
        if args.command == "geometry-selftest":
            scn, h = None, ""
            if args.scenario:
                scn = load_scenario(args.scenario, args.seed_override)
                h = scn.hash()
            seed = scn.seed if scn is not None else (args.seed_override or 0)
            out = Output(Path(args.out or "runs/geometry-selftest"), args.format, h)
            code = cmd_geometry_selftest(out, args.count, seed)
        else:
            scn = load_scenario(args.scenario, args.seed_override)
            out = Output(Path(args.out or scn.output_dir or f"runs/{scn.name}"), args.format, scn.hash())
            if args.command == "check-drift":
                code = cmd_check_drift(scn, out)
            elif args.command == "solve":
                code = cmd_solve(scn, out)
            elif args.command == "cascade":
                code = cmd_cascade(scn, out)
            else:
                code = cmd_diagnose(scn, out, args.solutions)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    meta = {"command": args.command, "argv": sys.argv[1:] if argv is None else list(argv),
            "started": started.isoformat(), "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
            "duration_s": time.perf_counter() - t0, "exit_code": code, "scenario_hash": out.hash,
            "python": platform.python_version(), "numpy": np.__version__}
    (out.root / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
