"""Drivers f(b, x, z) and Monte Carlo estimates of the conditions placed on them.

A :class:`DriftSpec` wraps a vectorized function ``eval(b, x, z)`` with
``b`` of shape (..., d), ``x`` (..., n) and ``z`` (..., n, d_w), returning
tangent vectors (..., n). The estimators below sample (b, x, z) through a
:class:`~riembsde.sampling.Sampler` in fixed-size batches, so a run with more
samples always contains the samples of a smaller run, and report the sampled
ranges with every constant. All constants are Monte Carlo estimates, not bounds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .convexdomain import (DomainSpec, SinPower, SquaredDistance, _dist, _weight, d_psi_pair, psi)
from .errors import DomainError, EvaluationError, PropertyViolation
from .geometry import ManifoldChart, riem_norm
from .sampling import Sampler, run_batches, uniform_sphere

NEAR_DIAGONAL = 1e-6
OUTWARD_TOL = 1e-9


@dataclass(frozen=True)
class DriftSpec:
    """Driver with optional declared constants ``{"L": .., "nu": .., "L2": ..}``."""

    eval: Callable
    depends_on_z: bool = True
    name: str = "drift"
    declared: dict = field(default_factory=dict, compare=False)

    def __call__(self, b, x, z):
        b, x, z = (np.asarray(a, float) for a in (b, x, z))
        out = np.asarray(self.eval(b, x, z), float)
        out = np.broadcast_to(out, np.broadcast_shapes(x.shape, out.shape))
        bad = ~np.all(np.isfinite(out), axis=-1)
        if np.any(bad):
            i = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.ndim else ()
            witness = {"b": np.broadcast_to(b, bad.shape + b.shape[-1:])[i].tolist(),
                       "x": np.broadcast_to(x, bad.shape + x.shape[-1:])[i].tolist(),
                       "z": np.broadcast_to(z, bad.shape + z.shape[-2:])[i].tolist()}
            raise EvaluationError(f"drift {self.name} returned a non-finite value", witness)
        return out


# ---------------------------------------------------------------------------
# built-in drivers


def zero():
    return DriftSpec(lambda b, x, z: np.zeros_like(x), False, "zero", {"L": 0.0, "nu": 0.0, "L2": 0.0})


def radial(kappa=1.0):
    """f = κ x."""
    return DriftSpec(lambda b, x, z: kappa * x, False, f"radial({kappa})")


def inward(kappa=1.0):
    """f = -|κ| x."""
    k = -abs(kappa)
    return DriftSpec(lambda b, x, z: k * x, False, f"inward({kappa})")


def tangential(scale=1.0):
    """f = scale · (x2, -x1, 0, ...), orthogonal to x."""

    def ev(b, x, z):
        out = np.zeros_like(x)
        out[..., 0] = scale * x[..., 1]
        out[..., 1] = -scale * x[..., 0]
        return out

    return DriftSpec(ev, False, f"tangential({scale})")


def z_linear(c0=0.3):
    """f = c0 · z e1, the first Brownian column of z."""
    return DriftSpec(lambda b, x, z: c0 * z[..., :, 0], True, f"z_linear({c0})", {"L": abs(c0)})


def b_sin(direction=None):
    """f = sin(b1) v0 for a fixed unit vector v0 (default e1)."""

    def ev(b, x, z):
        v0 = np.zeros(x.shape[-1]) if direction is None else np.asarray(direction, float)
        if direction is None:
            v0[0] = 1.0
        return np.sin(b[..., :1]) * v0

    return DriftSpec(ev, False, "b_sin")


# ---------------------------------------------------------------------------
# estimators


def _zr(M, x, z):
    return riem_norm(M, z, x)


def estimate_lipschitz_bz(f: DriftSpec, M: ManifoldChart, sampler: Sampler, count: int) -> float:
    """Smallest L with |f(b,x,z) - f(b',x,z')|_r <= L(|b-b'|(1+‖z‖_r+‖z'‖_r) + ‖z-z'‖_r) on the samples.

    Strata (by sample index mod 4): independent (b', z'); same b with z' = z
    changed in one Brownian column; same z with nearby b'; same as the previous
    with ‖z‖_r small.
    """
    n, dw = M.dim, sampler.d_w

    def batch(rng, full, size):
        kind = np.arange(full) % 4
        x = sampler.points(rng, full, n)
        b = sampler.b_values(rng, full)
        bp = sampler.b_values(rng, full)
        z = sampler.z_matrices(rng, M, x)
        zp = sampler.z_matrices(rng, M, x)
        col = np.zeros((full, n, dw))
        col[:, :, 0] = zp[:, :, 0]
        small_b = b + 0.01 * rng.standard_normal((full, sampler.d))
        z = np.where((kind == 3)[:, None, None], 0.01 * z, z)
        bp = np.where((kind == 1)[:, None], b, bp)
        bp = np.where((kind >= 2)[:, None], small_b, bp)
        zp = np.where((kind == 1)[:, None, None], z + col, zp)
        zp = np.where((kind >= 2)[:, None, None], z, zp)
        x, b, bp, z, zp = x[:size], b[:size], bp[:size], z[:size], zp[:size]
        lhs = M.norm(x, f(b, x, z) - f(bp, x, zp))
        db = np.linalg.norm(b - bp, axis=-1)
        rhs = db * (1 + _zr(M, x, z) + _zr(M, x, zp)) + _zr(M, x, z - zp)
        ok = rhs > 1e-14
        return float(np.max(lhs[ok] / rhs[ok], initial=0.0))

    return run_batches(sampler, count, "lipschitz-bz", batch, max)


def _pair_points(M, sampler, rng, full):
    """x, x' with every 4th x' a small perturbation of x (inside the chart)."""
    n = M.dim
    x = sampler.points(rng, full, n)
    xp = sampler.points(rng, full, n)
    near = x + 0.02 * sampler.radius * uniform_sphere(rng, full, n) * rng.random((full, 1))
    ok = M.domain.contains(near)
    if sampler.domain is not None:
        ok &= sampler.domain.contains(near)
    return x, np.where(((np.arange(full) % 4 == 0) & ok)[:, None], near, xp)


def estimate_monotonicity(f: DriftSpec, M: ManifoldChart, Psi, sampler: Sampler, count: int) -> float:
    """ν̂ = inf DΨ(x,x')·(f(b,x,z), f(b,x',P z)) / (Ψ(x,x')(1 + ‖z‖_r)), P = transport x → x'.

    The same b is used in both slots; pairs with δ(x,x') < 1e-6 are skipped.
    """

    def batch(rng, full, size):
        x, xp = _pair_points(M, sampler, rng, full)
        b = sampler.b_values(rng, full)
        z = sampler.z_matrices(rng, M, x)
        x, xp, b, z = x[:size], xp[:size], b[:size], z[:size]
        keep = _dist(M, x, xp) >= NEAR_DIAGONAL
        x, xp, b, z = x[keep], xp[keep], b[keep], z[keep]
        Pz = M.transport_matrix(x, xp, z)
        num = d_psi_pair(Psi, M, x, xp, f(b, x, z), f(b, xp, Pz))
        den = psi(Psi, M, x, xp) * (1 + _zr(M, x, z))
        return float(np.min(num / den, initial=np.inf))

    return run_batches(sampler, count, "monotonicity", batch, min)


def check_uniform_bound(f: DriftSpec, M: ManifoldChart, sampler: Sampler, count: int) -> float:
    """L̂₂ = max |f(b, x, 0)|_r."""
    n = M.dim

    def batch(rng, full, size):
        x = sampler.points(rng, full, n)[:size]
        b = sampler.b_values(rng, full)[:size]
        z0 = np.zeros((size, n, sampler.d_w))
        return float(np.max(M.norm(x, f(b, x, z0)), initial=0.0))

    return run_batches(sampler, count, "uniform-bound", batch, max)


def linear_growth_constant(f: DriftSpec, M: ManifoldChart, sampler: Sampler, count: int) -> float:
    """Smallest C with |f(b,x,z)|_r <= C(‖z‖_r + 1); every 4th sample has z = 0."""
    n = M.dim

    def batch(rng, full, size):
        x = sampler.points(rng, full, n)
        b = sampler.b_values(rng, full)
        z = sampler.z_matrices(rng, M, x)
        z = np.where((np.arange(full) % 4 == 0)[:, None, None], 0.0, z)
        x, b, z = x[:size], b[:size], z[:size]
        return float(np.max(M.norm(x, f(b, x, z)) / (1 + _zr(M, x, z)), initial=0.0))

    return run_batches(sampler, count, "linear-growth", batch, max)


def check_outward(f: DriftSpec, D: DomainSpec | None, sampler: Sampler, count: int,
                  M: ManifoldChart | None = None) -> float:
    """Minimum radial component u·(DN f) over boundary points u of the unit sphere.

    Boundary points are y = N⁻¹(u); the drift is pushed through DN(y). With
    ``D=None`` the drift is taken to live in the normalized chart already.
    ``M`` supplies the Riemannian norm used to sample z (Euclidean otherwise).
    """
    n = D.dim if D is not None else sampler_dim(sampler, M)

    def batch(rng, full, size):
        u = uniform_sphere(rng, full, n)
        b = sampler.b_values(rng, full)
        y = u if D is None else D.normalize_inverse(u)
        if M is not None and not np.all(M.domain.contains(y)):
            raise DomainError(f"boundary of the domain leaves the chart of {M!r}")
        if M is not None:
            z = sampler.z_matrices(rng, M, y)
        else:
            g = rng.standard_normal((full, n, sampler.d_w))
            z = g / np.linalg.norm(g, axis=(-2, -1), keepdims=True) * (sampler.z_max * rng.random(full))[:, None, None]
        u, b, y, z = u[:size], b[:size], y[:size], z[:size]
        v = f(b, y, z)
        if D is not None:
            v = np.einsum("...ij,...j->...i", D.normalize_jacobian(y), v)
        return float(np.min(np.sum(u * v, axis=-1)))

    return run_batches(sampler, count, "outward", batch, min)


def sampler_dim(sampler, M):
    if M is not None:
        return M.dim
    if sampler.center is not None:
        return len(sampler.center)
    raise ValueError("dimension unknown: pass a domain or a manifold")


def check_smallness(L: float, nu: float, L2: float, h: float) -> bool:
    """L < h, ν > -h and L₂ < h, all strict."""
    if h <= 0:
        raise ValueError("h must be positive")
    return bool(L < h and nu > -h and L2 < h)


def dpsi_lower_bound_check(f: DriftSpec, M: ManifoldChart, Psi, sampler: Sampler, count: int,
                           epsilon: float = 0.25, e: float = 2.0, alpha: float = 1.0) -> dict:
    """Empirical constants of the lower bounds on DΨ(x,x')·(f(b,x,z), f(b,x',z')).

    ``C_hat``: DΨ·(f,f') >= -Ĉ δ^{p-1}(‖Pz - z'‖_r + δ(1 + ‖z‖_r + ‖z'‖_r)).
    ``estim1`` (Ψ = δ²/2): DΨ·(f,f') >= -C δ²(1+‖z‖+‖z'‖) - ¼‖Pz - z'‖².
    ``estim2`` (SinPower, parameters e and alpha):
        DΨ·(f,f') >= -C Ψ - ((e-1)/2)(K/4) Ψ(‖z‖²+‖z'‖²) - (alpha/2) sin^{a-2}(y) ‖Pz - z'‖².
    ``estim3`` (any Ψ ≈ δ^p, parameter epsilon):
        DΨ·(f,f') >= -C_ε Ψ(1+‖z‖+‖z'‖) - ε δ^{p-2} ‖Pz - z'‖².
    Each constant is the smallest nonnegative C satisfying its inequality on
    the samples. Raises :class:`PropertyViolation` when a sample violates an
    inequality whose C-term vanishes there.
    """
    p = Psi.p

    def batch(rng, full, size):
        x, xp = _pair_points(M, sampler, rng, full)
        b = sampler.b_values(rng, full)
        z = sampler.z_matrices(rng, M, x)
        zp = sampler.z_matrices(rng, M, xp)
        x, xp, b, z, zp = x[:size], xp[:size], b[:size], z[:size], zp[:size]
        d = _dist(M, x, xp)
        keep = d >= NEAR_DIAGONAL
        x, xp, b, z, zp, d = x[keep], xp[keep], b[keep], z[keep], zp[keep], d[keep]
        Pz = M.transport_matrix(x, xp, z)
        # every other sample matches z' to the transported z
        same = (np.arange(len(x)) % 2 == 1)[:, None, None]
        zp = np.where(same, Pz, zp)
        lhs = d_psi_pair(Psi, M, x, xp, f(b, x, z), f(b, xp, zp))
        gap = _zr(M, xp, Pz - zp)
        nz, nzp = _zr(M, x, z), _zr(M, xp, zp)
        ps = psi(Psi, M, x, xp)
        out = {"C_hat": (-lhs, d ** (p - 1) * (gap + d * (1 + nz + nzp)))}
        if isinstance(Psi, SquaredDistance):
            out["estim1"] = (-lhs - 0.25 * gap ** 2, d * d * (1 + nz + nzp))
        if isinstance(Psi, SinPower):
            extra = (e - 1) / 2 * Psi.K / 4 * ps * (nz ** 2 + nzp ** 2) + alpha / 2 * _weight(Psi, M, x, xp) * gap ** 2
            out["estim2"] = (-lhs - extra, ps)
        out["estim3"] = (-lhs - epsilon * d ** (p - 2) * gap ** 2, ps * (1 + nz + nzp))
        res = {}
        for key, (num, den) in out.items():
            bad = (num > 1e-12) & (den <= 0)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise PropertyViolation(f"{key}: no finite constant",
                                        {"b": b[i].tolist(), "x": x[i].tolist(), "x'": xp[i].tolist()})
            ok = den > 0
            res[key] = float(max(0.0, np.max(num[ok] / den[ok], initial=0.0)))
        return res

    def reduce(parts):
        return {k: max(p_[k] for p_ in parts) for k in parts[0]}

    res = run_batches(sampler, count, "dpsi-lower-bound", batch, reduce)
    res["count"] = int(count)
    return res


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class ConditionReport:
    L_hat: float
    nu_hat: float
    L2_hat: float
    radial_min: float
    C_growth: float
    sample_count: int
    seed: int
    verdicts: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())


def check_drift(f: DriftSpec, M: ManifoldChart, Psi, D: DomainSpec | None, sampler: Sampler, count: int,
                h: float | None = None) -> ConditionReport:
    """Run every estimator and collect verdicts.

    Verdicts: ``outward`` (radial_min >= -1e-9), ``growth_dominated``
    (Ĉ <= max(L̂, L̂₂) within 1%), declared-constant consistency for any
    constants in ``f.declared``, and ``small`` when ``h`` is given.
    """
    L = estimate_lipschitz_bz(f, M, sampler, count)
    nu = estimate_monotonicity(f, M, Psi, sampler, count)
    L2 = check_uniform_bound(f, M, sampler, count)
    C = linear_growth_constant(f, M, sampler, count)
    rad = check_outward(f, D, sampler, count, M=M)
    verdicts = {
        "outward": rad >= -OUTWARD_TOL,
        "growth_dominated": C <= max(L, L2) * 1.01 + 1e-12,
    }
    dec = f.declared or {}
    if "L" in dec:
        verdicts["declared_L"] = L <= dec["L"] * 1.01 + 1e-12
    if "nu" in dec:
        verdicts["declared_nu"] = nu >= dec["nu"] - 0.01
    if "L2" in dec:
        verdicts["declared_L2"] = L2 <= dec["L2"] * 1.01 + 1e-12
    if h is not None:
        verdicts["small"] = check_smallness(L, nu, L2, h)
    return ConditionReport(L, nu, L2, rad, C, int(count), int(sampler.seed), {k: bool(v) for k, v in verdicts.items()})
