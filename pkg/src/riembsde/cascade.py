"""Driving the smoothing cascade through the solver.

The drift ``f`` is given in the normalized chart of ``D``; every member of the
cascade is pulled back to the original chart before solving. Two tables come
out: in l for a fixed k (solutions of g_{k,l} against the solution of f_k, the
l → ∞ limit) and in k (solutions of f_k against the solution of f).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .approximation import Calibration, calibrate_A, correct, mollify, pullback, truncate
from .diagnostics import ConvergenceTable, convergence_table
from .sampling import Sampler
from .solver import BsdeSolution, ForwardPaths, PicardConfig, TerminalMap, solve_bsde


@dataclass(frozen=True)
class CascadeConfig:
    k_values: tuple = (2, 4, 8)
    l_values: tuple = (8, 16, 32)
    l_table_k: tuple = (2,)  # k values for which the g_{k,l} solves are run
    mollifier_samples: int = 512
    mollifier_seed: int = 0
    calibration_count: int = 2048

    def __post_init__(self):
        if not self.k_values or not self.l_values:
            raise ValueError("k_values and l_values must be nonempty")
        if any(k not in self.k_values for k in self.l_table_k):
            raise ValueError("l_table_k must be a subset of k_values")


@dataclass
class CascadeResult:
    config: CascadeConfig
    calibrations: dict = field(default_factory=dict)  # k -> Calibration
    truncated: dict = field(default_factory=dict)  # k -> solution of f_k
    corrected: dict = field(default_factory=dict)  # (k, l) -> solution of g_{k,l}
    full: BsdeSolution | None = None
    l_tables: dict = field(default_factory=dict)  # k -> ConvergenceTable
    k_table: ConvergenceTable | None = None

    @property
    def converged(self):
        sols = list(self.truncated.values()) + list(self.corrected.values()) + [self.full]
        return all(s.converged for s in sols if s is not None)


def corrected_drift(f, k, l, calibration: Calibration, d, n, d_w, cfg: CascadeConfig):
    """g_{k,l} in the normalized chart, with ε_{k,l} and A from ``calibration``."""
    fk = truncate(f, k)
    fkl = mollify(fk, l, d, n, d_w, cfg.mollifier_samples, cfg.mollifier_seed)
    eps = calibration.eps_per_l[calibration.l_values.index(l)]
    return correct(fkl, eps, calibration.A)


def calibrate(f, k, sampler: Sampler, n: int, cfg: CascadeConfig) -> Calibration:
    return calibrate_A(truncate(f, k), cfg.l_values, sampler, cfg.calibration_count, n,
                       cfg.mollifier_samples, cfg.mollifier_seed)


def run_cascade(M, D, f, U: TerminalMap, fwd: ForwardPaths, sampler: Sampler, cfg: CascadeConfig = CascadeConfig(),
                picard: PicardConfig = PicardConfig(), Psi=None, log=None) -> CascadeResult:
    """Solve f, every f_k and the g_{k,l} for k in ``cfg.l_table_k``; build both tables."""
    from .convexdomain import SquaredDistance

    Psi = SquaredDistance() if Psi is None else Psi
    n, d, d_w = M.dim, fwd.B.shape[-1], fwd.dW.shape[-1]
    say = log or (lambda msg: None)
    res = CascadeResult(cfg)
    res.full = solve_bsde(M, D, pullback(f, D), U, fwd, picard)
    say(f"f: residuals {res.full.picard_residuals[-1]:.3g}")
    for k in cfg.k_values:
        res.truncated[k] = solve_bsde(M, D, pullback(truncate(f, k), D), U, fwd, picard)
        say(f"f_{k}: residuals {res.truncated[k].picard_residuals[-1]:.3g}")
    for k in cfg.l_table_k:
        cal = calibrate(f, k, sampler, n, cfg)
        res.calibrations[k] = cal
        say(f"k={k}: A={cal.A:.6g} stable={cal.stable}")
        for l in cfg.l_values:
            g = corrected_drift(f, k, l, cal, d, n, d_w, cfg)
            res.corrected[(k, l)] = solve_bsde(M, D, pullback(g, D), U, fwd, picard)
            say(f"g_{k},{l}: residuals {res.corrected[(k, l)].picard_residuals[-1]:.3g}")
        sols = {l: res.corrected[(k, l)] for l in cfg.l_values}
        res.l_tables[k] = convergence_table(sols, Psi, M, reference=res.truncated[k], reference_label=f"f_{k}")
    res.k_table = convergence_table(dict(res.truncated), Psi, M, reference=res.full, reference_label="f")
    return res
