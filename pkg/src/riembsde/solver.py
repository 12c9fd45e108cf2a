"""Forward simulation and the backward Picard/regression solver for the coordinate BSDE.

The equation, in chart coordinates, is

    dX = Z dW + (-½ Γ(X)(Z, Z) + f(B, X, Z)) dt,   X_T = U(B_T),

with Γ(X)(Z, Z)^i = Σ_jk Γ^i_jk(X) (Z Zᵀ)_jk. Each Picard pass sweeps backward:

    Z_i = E_i[(X_{i+1} - E_i X_{i+1}) ΔW_iᵀ] / Δt
    X_i = E_i X_{i+1} - Δt (-½ Γ(X⁻_i)(Z_i, Z_i) + f(B_i, X⁻_i, Z_i))

where E_i is least-squares regression on a polynomial basis of B_i and X⁻ is
the previous pass. Each X_i is then retracted onto ω̄.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .convexdomain import DomainSpec
from .errors import BasisError, DomainError, SimulationError
from .geometry import ManifoldChart, riem_norm
from .sampling import make_rng

RIDGE = 1e-8
MAX_COND = 1e12


@dataclass(frozen=True)
class SdeConfig:
    """dB = b(B) dt + σ(B) dW on [0, T]; ``b`` maps (..., d) → (..., d), ``sigma`` → (..., d, d_w)."""

    b: Callable
    sigma: Callable
    y: tuple
    T: float = 1.0
    n_steps: int = 50
    n_paths: int = 10_000
    seed: int = 0
    d_w: int = 1

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("n_steps and n_paths must be >= 1")

    @property
    def d(self):
        return len(self.y)

    @classmethod
    def constant(cls, y, mu=None, sigma=None, d_w=None, **kw):
        """Constant coefficients: drift vector ``mu`` (default 0), matrix ``sigma`` (default I)."""
        y = tuple(float(v) for v in np.atleast_1d(y))
        d = len(y)
        mu = np.zeros(d) if mu is None else np.asarray(mu, float).reshape(d)
        sig = np.eye(d) if sigma is None else np.asarray(sigma, float)
        if sig.ndim == 0:
            sig = float(sig) * np.eye(d)
        d_w = sig.shape[-1] if d_w is None else d_w
        return cls(lambda B: np.broadcast_to(mu, B.shape), lambda B: np.broadcast_to(sig, B.shape[:-1] + sig.shape),
                   y, d_w=d_w, **kw)


@dataclass(frozen=True)
class ForwardPaths:
    times: np.ndarray
    B: np.ndarray  # (P, N+1, d)
    dW: np.ndarray  # (P, N, d_w)

    @property
    def n_paths(self):
        return self.B.shape[0]

    @property
    def n_steps(self):
        return self.B.shape[1] - 1

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def simulate_forward(cfg: SdeConfig) -> ForwardPaths:
    """Euler–Maruyama on a uniform grid; deterministic given ``cfg.seed``."""
    N, P = cfg.n_steps, cfg.n_paths
    dt = cfg.T / N
    rng = make_rng(cfg.seed, "forward")
    dW = np.sqrt(dt) * rng.standard_normal((P, N, cfg.d_w))
    B = np.empty((P, N + 1, cfg.d))
    B[:, 0] = np.asarray(cfg.y, float)
    for i in range(N):
        drift = np.asarray(cfg.b(B[:, i]), float)
        sig = np.asarray(cfg.sigma(B[:, i]), float)
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(sig))):
            raise SimulationError(f"non-finite SDE coefficient at step {i}", i)
        B[:, i + 1] = B[:, i] + drift * dt + np.einsum("pij,pj->pi", sig, dW[:, i])
    return ForwardPaths(np.linspace(0.0, cfg.T, N + 1), B, dW)


# ---------------------------------------------------------------------------
# regression


@dataclass(frozen=True)
class PolynomialBasis:
    """Monomials of standardized B up to ``degree`` (at most 2); constant columns dropped."""

    degree: int = 2

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError("basis degree must be 0, 1 or 2")

    def design(self, B):
        B = np.asarray(B, float)
        P, d = B.shape
        cols = [np.ones(P)]
        if self.degree >= 1:
            sd = B.std(axis=0)
            live = sd > 1e-12 * (1 + np.abs(B).max(axis=0))
            U = (B[:, live] - B[:, live].mean(axis=0)) / sd[live]
            cols += [U[:, j] for j in range(U.shape[1])]
            if self.degree == 2:
                cols += [U[:, j] * U[:, k] for j in range(U.shape[1]) for k in range(j, U.shape[1])]
        return np.stack(cols, axis=1)


class Regression:
    """Cached least-squares projector onto a basis of B_i (ridge-regularized normal equations).

    The intercept is not penalized, so constants are reproduced exactly.
    """

    def __init__(self, basis: PolynomialBasis, B):
        if not np.all(np.isfinite(B)):
            raise BasisError("non-finite regressor values")
        A = basis.design(B)
        G = A.T @ A
        G[np.diag_indices_from(G)] += RIDGE * len(A)
        G[0, 0] -= RIDGE * len(A)
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > MAX_COND:
            raise BasisError(f"regression system ill-conditioned (cond {cond:.3e})")
        self.A = A
        self.factor = cho_factor(G)

    def fit(self, Y):
        """Fitted values E[Y | basis], Y of shape (P, ...)."""
        flat = Y.reshape(len(Y), -1)
        coef = cho_solve(self.factor, self.A.T @ flat)
        return (self.A @ coef).reshape(Y.shape)


def conditional_expectation(basis: PolynomialBasis, B, Y):
    return Regression(basis, B).fit(np.asarray(Y, float))


# ---------------------------------------------------------------------------
# terminal maps and solutions


@dataclass(frozen=True)
class TerminalMap:
    U: Callable
    name: str = "U"

    def __call__(self, beta):
        return np.asarray(self.U(np.asarray(beta, float)), float)

    def check(self, D: DomainSpec, beta, tol=1e-9):
        vals = self(beta)
        chi = D.chi(vals)
        if np.any(chi > D.c + tol):
            i = int(np.argmax(chi))
            raise DomainError(f"terminal value outside the domain: chi={chi[i]:.6g} > c={D.c} at beta={np.asarray(beta)[i]}")
        return vals


@dataclass(frozen=True)
class PicardConfig:
    max_iter: int = 50
    tol: float = 1e-4
    init: str = "center"  # or "terminal"
    basis_degree: int = 2

    def __post_init__(self):
        if self.init not in ("center", "terminal"):
            raise ValueError("init must be 'center' or 'terminal'")


@dataclass
class BsdeSolution:
    times: np.ndarray
    X: np.ndarray  # (P, N+1, n)
    Z: np.ndarray  # (P, N, n, d_w)
    picard_residuals: list
    converged: bool
    terminal_error: float
    config: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.X.shape[0]


def _christoffel_term(M, X, Z):
    ZZ = np.einsum("pja,pka->pjk", Z, Z)
    return -0.5 * np.einsum("pijk,pjk->pi", M.christoffel(X), ZZ)


def _solve(M, D, f, U, fwd, picard, tau=None, U_tau=None):
    P, N = fwd.n_paths, fwd.n_steps
    n, dw = M.dim, fwd.dW.shape[-1]
    dt = fwd.dt
    basis = PolynomialBasis(picard.basis_degree)
    if tau is None:
        tau = np.full(P, N, dtype=int)
    tau = np.asarray(tau, dtype=int)
    if tau.shape != (P,) or np.any(tau < 0) or np.any(tau > N):
        raise ValueError("tau must be an integer array of path indices in [0, N]")
    stopped = tau < N
    terminal = U.check(D, fwd.B[:, N])
    if np.any(stopped):
        frozen = (U if U_tau is None else TerminalMap(U_tau)).check(D, fwd.B[np.arange(P), tau])
    else:
        frozen = terminal
    p = np.asarray(D.center, float)
    if picard.init == "center":
        prev = np.broadcast_to(p, (P, N + 1, n)).copy()
    else:
        prev = np.stack([U(fwd.B[:, i]) for i in range(N + 1)], axis=1)
        prev = np.stack([D.project(prev[:, i]) for i in range(N + 1)], axis=1)
    regs = {}
    residuals = []
    converged = False
    X = prev
    Z = np.zeros((P, N, n, dw))
    for _ in range(picard.max_iter):
        X = np.empty((P, N + 1, n))
        Z = np.zeros((P, N, n, dw))
        X[:, N] = np.where(stopped[:, None], frozen, terminal)
        for i in range(N - 1, -1, -1):
            active = tau > i
            if not np.any(active):
                X[:, i] = frozen
                continue
            full = bool(np.all(active))
            idx = slice(None) if full else active
            if i not in regs:
                regs[i] = Regression(basis, fwd.B[idx, i])
            reg = regs[i]
            Y = X[idx, i + 1]
            EY = reg.fit(Y)
            dW = fwd.dW[idx, i]
            Zi = reg.fit((Y - EY)[:, :, None] * dW[:, None, :]) / dt
            Xp = prev[idx, i]
            step = _christoffel_term(M, Xp, Zi) + f(fwd.B[idx, i], Xp, Zi)
            Xi = D.project(EY - dt * step)
            if full:
                X[:, i] = Xi
                Z[:, i] = Zi
            else:
                X[:, i] = frozen
                X[active, i] = Xi
                Z[active, i] = Zi
        res = float(np.max(np.mean(np.linalg.norm(X - prev, axis=-1), axis=0)))
        residuals.append(res)
        prev = X
        if res <= picard.tol:
            converged = True
            break
    term_err = float(np.max(np.abs(X[:, N] - np.where(stopped[:, None], frozen, terminal)), initial=0.0))
    cfg = {"manifold": repr(M), "domain": D.name, "drift": getattr(f, "name", "f"), "terminal": U.name,
           "n_paths": P, "n_steps": N, "T": float(fwd.times[-1]), "max_iter": picard.max_iter,
           "tol": picard.tol, "init": picard.init, "basis_degree": picard.basis_degree}
    return BsdeSolution(fwd.times, X, Z, residuals, converged, term_err, cfg)


def solve_bsde(M: ManifoldChart, D: DomainSpec, f, U: TerminalMap, fwd: ForwardPaths,
               picard: PicardConfig = PicardConfig()) -> BsdeSolution:
    """Picard iteration of the backward regression sweep; see the module docstring.

    Non-convergence within ``picard.max_iter`` is reported through
    ``converged=False`` with the residual history, not raised.
    """
    return _solve(M, D, f, U, fwd, picard)


def solve_bsde_bounded_stopping(M: ManifoldChart, D: DomainSpec, f, U: TerminalMap, fwd: ForwardPaths,
                                tau, picard: PicardConfig = PicardConfig(), U_tau: Callable | None = None) -> BsdeSolution:
    """Same sweep on [0, τ]: on each path X_i = U^τ and Z_i = 0 for t_i >= τ.

    ``tau`` holds per-path stopping indices in [0, N]; U^τ defaults to
    U(B_τ). With τ ≡ N this is exactly :func:`solve_bsde`.
    """
    return _solve(M, D, f, U, fwd, picard, tau, U_tau)


def first_exit_index(fwd: ForwardPaths, lo, hi):
    """First grid index at which B leaves the open box (lo, hi), or N if it never does."""
    B = fwd.B
    out = np.any((B <= np.asarray(lo)) | (B >= np.asarray(hi)), axis=-1)
    N = fwd.n_steps
    hit = out.any(axis=1)
    return np.where(hit, np.argmax(out, axis=1), N)


def project_to_domain(x, D: DomainSpec):
    """Retract onto ω̄ along rays from p in the normalized chart; identity inside."""
    return D.project(x)


# ---------------------------------------------------------------------------
# serialization


def save_forward(fwd: ForwardPaths, path, scenario_hash: str = ""):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for key in ("times", "B", "dW"):
        np.save(path / f"{key}.npy", getattr(fwd, key))
    _write_json(path / "forward.json", {"scenario_hash": scenario_hash, "n_paths": fwd.n_paths,
                                        "n_steps": fwd.n_steps, "files": ["times.npy", "B.npy", "dW.npy"]})


def load_forward(path) -> ForwardPaths:
    path = Path(path)
    return ForwardPaths(*(np.load(path / f"{k}.npy") for k in ("times", "B", "dW")))


def save_solution(sol: BsdeSolution, path, scenario_hash: str = "", M=None, D=None):
    """Columnar dump (one .npy per array) plus manifest.json, residuals.csv and summary.csv."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "times.npy", sol.times)
    np.save(path / "X.npy", sol.X)
    np.save(path / "Z.npy", sol.Z)
    _write_json(path / "manifest.json", {
        "scenario_hash": scenario_hash, "converged": sol.converged, "terminal_error": sol.terminal_error,
        "picard_residuals": sol.picard_residuals, "config": sol.config,
        "files": ["times.npy", "X.npy", "Z.npy"]})
    with open(path / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_hash", "iteration", "residual"])
        for j, r in enumerate(sol.picard_residuals):
            w.writerow([scenario_hash, j + 1, repr(r)])
    if M is not None and D is not None:
        rows = solution_summary(sol, M, D)
        with open(path / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_hash", "time", "mean_chi", "mean_znorm_r"])
            for t, c, z in rows:
                w.writerow([scenario_hash, repr(t), repr(c), repr(z)])


def load_solution(path) -> tuple[BsdeSolution, str]:
    path = Path(path)
    man = json.loads((path / "manifest.json").read_text())
    sol = BsdeSolution(np.load(path / "times.npy"), np.load(path / "X.npy"), np.load(path / "Z.npy"),
                       man["picard_residuals"], man["converged"], man["terminal_error"], man["config"])
    return sol, man["scenario_hash"]


def solution_summary(sol: BsdeSolution, M, D):
    """Per-time (t, mean χ(X_t), mean ‖Z_t‖_r); ‖Z‖ at t_N is reported as 0."""
    rows = []
    N = len(sol.times) - 1
    for i in range(N + 1):
        chi = float(np.mean(D.chi(sol.X[:, i])))
        zn = float(np.mean(riem_norm(M, sol.Z[:, i], sol.X[:, i]))) if i < N else 0.0
        rows.append((float(sol.times[i]), chi, zn))
    return rows


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
