"""Convex sublevel domains, the normalizing chart onto the unit ball, and Ψ-functions.

A :class:`DomainSpec` describes ω̄ = {χ <= c} around the minimum point p of a
strictly convex χ, together with the map

    N(y) = sqrt(c2) (y - p) / sqrt(c2 |y - p|^2 + c - χ(y))

which sends ω̄ onto the closed unit ball and ∂ω̄ onto the unit sphere.

Ψ-functions are comparison functions on pairs of points. ``d_psi_pair`` is the
derivative DΨ(x, x')·(u, u') and ``hess_psi_quad`` the quadratic form of the
Hessian of Ψ on the product manifold. The covariant Hessian is the default
since it is what appears in the Itô expansion once the -½Γ(Z, Z) drift of the
coordinate equation is accounted for; ``kind="coordinate"`` gives the plain
second derivative in chart coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConvergenceError, DomainError, PropertyViolation
from .geometry import ManifoldChart
from .sampling import Sampler, run_batches, uniform_ball

FD_STEP = 1e-4
LAMBDA_SAMPLES = 2048


def _fd_grad(fn, y, h=1e-5):
    n = y.shape[-1]
    return np.stack([(fn(y + h * e) - fn(y - h * e)) / (2 * h) for e in np.eye(n)], axis=-1)


def _fd_hess(fn, y, h=1e-4):
    n = y.shape[-1]
    eye = np.eye(n)
    H = np.empty(y.shape + (n,))
    for i in range(n):
        for j in range(i, n):
            ei, ej = h * eye[i], h * eye[j]
            v = (fn(y + ei + ej) - fn(y + ei - ej) - fn(y - ei + ej) + fn(y - ei - ej)) / (4 * h * h)
            H[..., i, j] = v
            H[..., j, i] = v
    return H


def _ball_sobol(n, m, radius):
    """Deterministic low-discrepancy points of the ball (unscrambled Sobol, cube rejection)."""
    k = int(np.ceil(np.log2(m))) + n + 1
    pts = 2 * qmc.Sobol(d=n, scramble=False).random_base2(k) - 1
    pts = pts[np.linalg.norm(pts, axis=-1) <= 1][:m]
    return radius * pts


@dataclass(frozen=True)
class DomainSpec:
    """ω̄ = {χ <= c} in chart coordinates, with its normalizing diffeomorphism.

    ``inner_radius`` and ``outer_radius`` are the radii about ``center`` of the
    nested charts O₁ ⊂ O. ``lambda_chi`` is the smallest Hessian eigenvalue of χ
    found on a Sobol sample of O₁ and ``c2`` defaults to ``lambda_chi / 2``.
    """

    chi: Callable
    grad_chi: Callable
    hess_chi: Callable
    c: float
    center: tuple
    inner_radius: float
    outer_radius: float
    c2: float
    lambda_chi: float
    name: str = field(default="domain", compare=False)

    @classmethod
    def build(cls, chi, c, center, inner_radius, outer_radius=None, grad_chi=None, hess_chi=None,
              c2=None, name="domain"):
        center = tuple(float(v) for v in center)
        p = np.asarray(center)
        n = p.size
        if c <= 0:
            raise ValueError("level c must be positive")
        outer_radius = 1.5 * inner_radius if outer_radius is None else float(outer_radius)
        if outer_radius <= inner_radius:
            raise ValueError("outer chart must strictly contain the inner chart")
        grad_chi = grad_chi or (lambda y: _fd_grad(chi, y))
        hess_chi = hess_chi or (lambda y: _fd_hess(chi, y))
        if abs(float(chi(p))) > 1e-12:
            raise DomainError("chi must vanish at the center point")
        pts = p + _ball_sobol(n, LAMBDA_SAMPLES, inner_radius)
        lam = float(np.min(np.linalg.eigvalsh(hess_chi(pts))))
        if lam <= 0:
            raise DomainError(f"chi is not strictly convex on the inner chart (min eigenvalue {lam:.3e})")
        others = pts[np.linalg.norm(pts - p, axis=-1) > 0]
        if np.any(chi(others) <= 0):
            raise DomainError("chi must have a strict minimum at the center")
        if c2 is None:
            c2 = lam / 2
        elif c2 > lam / 2 * (1 + 1e-12):
            raise DomainError(f"c2={c2} exceeds lambda_chi/2={lam / 2}")
        return cls(chi, grad_chi, hess_chi, float(c), center, float(inner_radius), outer_radius,
                   float(c2), lam, name)

    @classmethod
    def quadratic(cls, n, a=1.0, c=1.0, center=None, inner_radius=None, c2=None):
        """χ(y) = a |y - p|^2 with closed-form derivatives."""
        p = np.zeros(n) if center is None else np.asarray(center, float)
        chi = lambda y: a * np.sum((y - p) ** 2, axis=-1)
        grad = lambda y: 2 * a * (y - p)
        hess = lambda y: np.broadcast_to(2 * a * np.eye(n), np.shape(y) + (n,)).copy()
        if inner_radius is None:
            inner_radius = 1.25 * sqrt(c / a)
        return cls.build(chi, c, p, inner_radius, grad_chi=grad, hess_chi=hess, c2=c2,
                         name=f"quadratic(a={a}, c={c})")

    @property
    def dim(self):
        return len(self.center)

    @property
    def margin(self):
        """dist(O₁, ∂O) for the nested ball charts."""
        return self.outer_radius - self.inner_radius

    def contains(self, y, tol=0.0):
        return self.chi(np.asarray(y, float)) <= self.c + tol

    def _q(self, y):
        d = y - np.asarray(self.center)
        return d, self.c2 * np.sum(d * d, axis=-1) + self.c - self.chi(y)

    def normalize(self, y):
        """N(y); norm 1 exactly on the boundary χ = c."""
        y = np.asarray(y, float)
        d, q = self._q(y)
        if np.any(q <= 0):
            raise DomainError("point too far outside the domain for the normalizing chart")
        return sqrt(self.c2) * d / np.sqrt(q)[..., None]

    def normalize_jacobian(self, y):
        """DN(y), shape (..., n, n)."""
        y = np.asarray(y, float)
        d, q = self._q(y)
        if np.any(q <= 0):
            raise DomainError("point too far outside the domain for the normalizing chart")
        gq = 2 * self.c2 * d - self.grad_chi(y)
        eye = np.eye(self.dim)
        return sqrt(self.c2) * (eye / np.sqrt(q)[..., None, None]
                                - 0.5 * d[..., :, None] * gq[..., None, :] / (q ** 1.5)[..., None, None])

    def normalize_inverse(self, u, tol=1e-9):
        """N⁻¹(u) for |u| <= 1 + 1e-9, found on the ray through u by bisection plus Newton."""
        u = np.asarray(u, float)
        s = np.sum(u * u, axis=-1)
        if np.any(s > (1 + 1e-9) ** 2):
            raise DomainError("normalize_inverse needs |u| <= 1")
        p = np.asarray(self.center)
        nu = np.sqrt(s)
        uhat = np.where((nu > 0)[..., None], u / np.where(nu > 0, nu, 1)[..., None], 0.0)

        def F(t):
            y = p + t[..., None] * uhat
            return self.c2 * t * t * (1 - s) - s * (self.c - self.chi(y))

        lo = np.zeros_like(s)
        hi = np.full_like(s, self.inner_radius)
        for _ in range(60):
            grow = F(hi) < 0
            if not np.any(grow):
                break
            hi = np.where(grow, 2 * hi, hi)
        else:
            raise ConvergenceError("normalize_inverse could not bracket the preimage", float("nan"))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            neg = F(mid) < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        t = 0.5 * (lo + hi)
        for _ in range(3):
            y = p + t[..., None] * uhat
            dF = 2 * self.c2 * t * (1 - s) + s * np.sum(self.grad_chi(y) * uhat, axis=-1)
            t = np.where(dF > 0, t - F(t) / np.where(dF > 0, dF, 1), t)
        y = p + t[..., None] * uhat
        res = np.max(np.abs(self.normalize(y) - u), initial=0.0)
        if res > tol:
            raise ConvergenceError(f"normalize_inverse residual {res:.3e}", float(res))
        return y

    def project(self, y):
        """Radial retraction onto ω̄ along the ray from p in the normalized chart."""
        y = np.asarray(y, float)
        inside = self.chi(y) <= self.c
        if np.all(inside):
            return y
        out = y.copy()
        u = self.normalize(y[~inside])
        out[~inside] = self.normalize_inverse(u / np.linalg.norm(u, axis=-1, keepdims=True))
        return out


def normalized_ball(n) -> DomainSpec:
    """χ = |y|^2, c = 1, c2 = 1: the unit ball, where N is the identity."""
    return DomainSpec.quadratic(n, 1.0, 1.0, c2=1.0)


# ---------------------------------------------------------------------------
# Ψ-functions


@dataclass(frozen=True)
class SquaredDistance:
    """Ψ = δ²/2."""

    p: int = 2
    c_psi: float = 2.0


@dataclass(frozen=True)
class SinPower:
    """Ψ = sin^a(sqrt(K) δ / 2), valid while sqrt(K) δ / 2 < π/2."""

    a: float = 2.0
    K: float = 1.0

    def __post_init__(self):
        if self.a < 2:
            raise ValueError("SinPower needs a >= 2 for a C^2 Hessian on the diagonal")
        if self.K <= 0:
            raise ValueError("SinPower needs K > 0")

    @property
    def p(self):
        return self.a


@dataclass(frozen=True)
class PowerP:
    """User-supplied Ψ with Ψ ≈ δ^p, checked against the constant ``c_psi``.

    ``func(M, x, x')`` must be smooth; derivatives are taken by 4th-order
    central differences.
    """

    func: Callable
    p: int = 2
    c_psi: float = 2.0
    name: str = "PowerP"

    def __post_init__(self):
        if self.p < 2 or self.p % 2:
            raise ValueError("PowerP needs an even integer p >= 2")


def _dist(M, x, xp):
    return M.distance(x, xp)


def _sin_y(Psi, d):
    y = sqrt(Psi.K) * d / 2
    if np.any(y >= pi / 2):
        raise DomainError("SinPower argument sqrt(K) δ/2 left the increasing branch")
    return y


def psi(Psi, M: ManifoldChart, x, xp):
    """Ψ(x, x') >= 0, zero on the diagonal."""
    x, xp = np.asarray(x, float), np.asarray(xp, float)
    if isinstance(Psi, SquaredDistance):
        return 0.5 * _dist(M, x, xp) ** 2
    if isinstance(Psi, SinPower):
        return np.sin(_sin_y(Psi, _dist(M, x, xp))) ** Psi.a
    return Psi.func(M, x, xp)


def _fd_first(fn, h=FD_STEP):
    return (-fn(2 * h) + 8 * fn(h) - 8 * fn(-h) + fn(-2 * h)) / (12 * h)


def _fd_second(fn, h=FD_STEP):
    return (-fn(2 * h) + 16 * fn(h) - 30 * fn(0.0) + 16 * fn(-h) - fn(-2 * h)) / (12 * h * h)


def _pair_scale(u, up):
    s = np.sqrt(np.sum(u * u, axis=-1) + np.sum(up * up, axis=-1))
    return np.where(s > 0, s, 1.0)


def _sq_grad(M, x, xp, u, up):
    """DΨ·(u, u') for Ψ = δ²/2: -g(log_x x', u) - g(log_x' x, u')."""
    return -M.inner(x, M.log(x, xp), u) - M.inner(xp, M.log(xp, x), up)


def d_psi_pair(Psi, M: ManifoldChart, x, xp, u, up):
    """DΨ(x, x')·(u, u') for u at x and u' at x'."""
    x, xp, u, up = (np.asarray(a, float) for a in (x, xp, u, up))
    if isinstance(Psi, (SquaredDistance, SinPower)):
        g = _sq_grad(M, x, xp, u, up)
        if isinstance(Psi, SquaredDistance):
            return g
        d = _dist(M, x, xp)
        y = _sin_y(Psi, d)
        # F'(δ)/δ with F = sin^a(sqrt(K) δ / 2)
        fp_over_d = Psi.a * (Psi.K / 4) * np.sin(y) ** (Psi.a - 2) * np.sinc(y / pi) * np.cos(y)
        return fp_over_d * g
    s = _pair_scale(u, up)[..., None]
    return s[..., 0] * _fd_first(lambda t: Psi.func(M, x + t * u / s, xp + t * up / s))


def _sn_cs(kappa, d):
    """sn_κ(δ)/δ and cs_κ(δ) for constant curvature κ."""
    if kappa > 0:
        r = sqrt(kappa) * d
        return np.sinc(r / pi), np.cos(r)
    if kappa < 0:
        r = sqrt(-kappa) * d
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, np.sinh(safe) / safe, 1.0), np.cosh(r)
    return np.ones_like(d), np.ones_like(d)


def _sq_hess_constant_curvature(M, x, xp, w, wp):
    """Covariant Hessian of δ²/2 on M × M for constant sectional curvature."""
    V = M.log(x, xp)
    Vp = M.log(xp, x)
    d = M.norm(x, V)
    safe = np.where(d > 0, d, 1.0)[..., None]
    e = V / safe
    ep = -Vp / safe  # tangent of the same geodesic at x'
    a = M.inner(x, w, e)
    ap = M.inner(xp, wp, ep)
    W0 = w - a[..., None] * e
    W1 = M.transport(xp, x, wp - ap[..., None] * ep)
    sn_d, cs = _sn_cs(M.curvature, d)  # sn/δ, cs
    coef = cs / sn_d  # δ cs / sn
    cross = 2 / sn_d  # 2δ / sn
    H = (ap - a) ** 2 + coef * (M.inner(x, W0, W0) + M.inner(x, W1, W1)) - cross * M.inner(x, W0, W1)
    # on the diagonal the split along e is undefined; the form is |P w' - w|^2 there
    diag = M.transport(xp, x, wp) - w
    return np.where(d > 0, H, M.inner(x, diag, diag))


def _gamma_ww(M, x, w):
    return np.einsum("...ijk,...j,...k->...i", M.christoffel(x), w, w)


def hess_psi_quad(Psi, M: ManifoldChart, x, xp, w, wp, kind="covariant"):
    """Hessian quadratic form of Ψ at (x, x') applied to (w, w').

    ``kind="covariant"`` is the Riemannian Hessian of Ψ on M × M;
    ``kind="coordinate"`` the second derivative along the chart line
    t ↦ (x + t w, x' + t w'). They differ by DΨ·(Γ(x)(w,w), Γ(x')(w',w')).
    """
    x, xp, w, wp = (np.asarray(a, float) for a in (x, xp, w, wp))
    if kind not in ("covariant", "coordinate"):
        raise ValueError("kind must be 'covariant' or 'coordinate'")
    closed = M.curvature is not None and isinstance(Psi, (SquaredDistance, SinPower))
    if closed:
        H2 = _sq_hess_constant_curvature(M, x, xp, w, wp)
        if isinstance(Psi, SquaredDistance):
            H = H2
        else:
            H = _sinpower_hess(Psi, M, x, xp, w, wp, H2)
        if kind == "coordinate":
            H = H + d_psi_pair(Psi, M, x, xp, _gamma_ww(M, x, w), _gamma_ww(M, xp, wp))
        return H
    s = _pair_scale(w, wp)[..., None]
    if isinstance(Psi, SquaredDistance):
        # differentiate the exact gradient once, along the chart line
        coord = s[..., 0] * _fd_first(
            lambda t: _sq_grad(M, x + t * w / s, xp + t * wp / s, w, wp))
    elif isinstance(Psi, SinPower):
        coord = s[..., 0] * _fd_first(
            lambda t: d_psi_pair(Psi, M, x + t * w / s, xp + t * wp / s, w, wp))
    else:
        coord = s[..., 0] ** 2 * _fd_second(lambda t: Psi.func(M, x + t * w / s, xp + t * wp / s))
    if kind == "coordinate":
        return coord
    return coord - d_psi_pair(Psi, M, x, xp, _gamma_ww(M, x, w), _gamma_ww(M, xp, wp))


def _sinpower_hess(Psi, M, x, xp, w, wp, H2):
    # Ψ = F(δ): Hess Ψ = F''(δ) (Dδ)^2 + (F'(δ)/δ) (Hess(δ²/2) - (Dδ)^2)
    d = _dist(M, x, xp)
    y = _sin_y(Psi, d)
    a, K = Psi.a, Psi.K
    sy, cy = np.sin(y), np.cos(y)
    fp_over_d = a * (K / 4) * sy ** (a - 2) * np.sinc(y / pi) * cy
    fpp = (K / 4) * a * ((a - 1) * sy ** (a - 2) * cy * cy - sy ** a)
    safe = np.where(d > 0, d, 1.0)
    Dd2 = np.where(d > 0, (_sq_grad(M, x, xp, w, wp) / safe) ** 2, 0.0)
    H = fpp * Dd2 + fp_over_d * (H2 - Dd2)
    # at δ = 0 only a = 2 survives, with F'' = F'/δ = K/2
    return np.where(d > 0, H, fp_over_d * H2)


def _column_sum(fn, z, zp):
    return sum(fn(z[..., :, a], zp[..., :, a]) for a in range(z.shape[-1]))


def hess_psi_matrix(Psi, M, x, xp, z, zp, kind="covariant"):
    """Σ over Brownian columns of hess_psi_quad, for tangent matrices z, z'."""
    return _column_sum(lambda w, wp: hess_psi_quad(Psi, M, x, xp, w, wp, kind), np.asarray(z, float),
                       np.asarray(zp, float))


# ---------------------------------------------------------------------------
# empirical constants


def _weight(Psi, M, x, xp):
    """δ-power weight of the ‖P z - z'‖² term: sin^{a-2} y for SinPower, δ^{p-2} otherwise."""
    if isinstance(Psi, SquaredDistance):
        return np.ones(np.shape(x)[:-1])
    d = _dist(M, x, xp)
    if isinstance(Psi, SinPower):
        return np.sin(_sin_y(Psi, d)) ** (Psi.a - 2)
    return d ** (Psi.p - 2)


def _pair_samples(M, sampler, rng, full, size):
    """(x, x', z, z') with a near-diagonal stratum (every 4th sample has x' within 1e-2 of x)."""
    n = M.dim
    x = sampler.points(rng, full, n)
    xp = sampler.points(rng, full, n)
    near = x + uniform_ball(rng, full, n, 1e-2 * sampler.radius)
    kind = np.arange(full) % 4
    ok = M.domain.contains(near)
    if sampler.domain is not None:
        ok &= sampler.domain.contains(near)
    xp = np.where(((kind == 0) & ok)[:, None], near, xp)
    z = sampler.z_matrices(rng, M, x)
    zp = sampler.z_matrices(rng, M, xp)
    return x[:size], xp[:size], z[:size], zp[:size], (kind[:size] == 0) & ok[:size]


def hessian_lower_bound_check(Psi, M: ManifoldChart, sampler: Sampler, count: int = 10_000):
    """Empirical (α̂, β̂) with Σ Hess Ψ(z, z') >= α̂ w ‖P z - z'‖² - β̂ Ψ (‖z‖² + ‖z'‖²).

    ``w`` is 1 for δ²/2, sin^{a-2}(sqrt(K) δ/2) for SinPower and δ^{p-2} for PowerP.
    If the ratio Hess / (w ‖Pz - z'‖²) is positive on every sample, α̂ is its
    minimum and β̂ = 0. Otherwise α̂ is half the minimum ratio over the
    near-diagonal stratum and β̂ the smallest value making every sample hold.
    Returns a dict with ``alpha``, ``beta``, ``count`` and the minimizing ratios.
    """

    def batch(rng, full, size):
        x, xp, z, zp, near = _pair_samples(M, sampler, rng, full, size)
        H = hess_psi_matrix(Psi, M, x, xp, z, zp)
        Pz = M.transport_matrix(x, xp, z)
        diff = Pz - zp
        D = np.einsum("...ia,...ij,...ja->...", diff, M.metric(xp), diff) * _weight(Psi, M, x, xp)
        Q = psi(Psi, M, x, xp) * (np.einsum("...ia,...ij,...ja->...", z, M.metric(x), z)
                                  + np.einsum("...ia,...ij,...ja->...", zp, M.metric(xp), zp))
        return H, D, Q, near, x, xp

    parts = run_batches(sampler, count, "hessian-lower-bound", batch, list)
    H, D, Q, near, x, xp = (np.concatenate(a) for a in zip(*parts))
    valid = D > 1e-14
    ratio = np.where(valid, H / np.where(valid, D, 1), np.inf)
    r_min = float(np.min(ratio))
    if r_min > 0:
        return {"alpha": r_min, "beta": 0.0, "count": int(count), "ratio_min": r_min}
    near_ratio = ratio[near & valid]
    alpha = 0.5 * float(np.min(near_ratio)) if near_ratio.size else 0.0
    if not alpha > 0:
        i = int(np.argmin(np.where(near & valid, ratio, np.inf))) if near_ratio.size else int(np.argmin(ratio))
        raise PropertyViolation("no positive alpha: Hessian degenerate near the diagonal",
                                {"x": x[i].tolist(), "x'": xp[i].tolist(), "ratio": float(ratio[i])})
    slack = alpha * D - H
    need = slack > 0
    if np.any(need & (Q <= 0)):
        i = int(np.argmax(need & (Q <= 0)))
        raise PropertyViolation("Hessian bound fails where Ψ vanishes",
                                {"x": x[i].tolist(), "x'": xp[i].tolist()})
    beta = float(np.max(np.where(need, slack / np.where(Q > 0, Q, 1), 0.0)))
    return {"alpha": alpha, "beta": beta, "count": int(count), "ratio_min": r_min}


def psi_comparison_constant(Psi, M: ManifoldChart, sampler: Sampler, count: int = 10_000):
    """Smallest c with δ^p / c <= Ψ <= c δ^p over sampled off-diagonal pairs."""

    def batch(rng, full, size):
        n = M.dim
        x = sampler.points(rng, full, n)[:size]
        xp = sampler.points(rng, full, n)[:size]
        d = _dist(M, x, xp)
        keep = d > 1e-6
        r = psi(Psi, M, x[keep], xp[keep]) / d[keep] ** Psi.p
        return float(max(np.max(r), np.max(1 / r)))

    return run_batches(sampler, count, "psi-comparison", batch, max)


def dpsi_bound_constant(Psi, M: ManifoldChart, sampler: Sampler, count: int = 10_000):
    """Smallest C with |DΨ·(u,u')| <= C δ^{p-1} (δ(|u|_r + |u'|_r) + |P u - u'|_r)."""

    def batch(rng, full, size):
        x, xp, z, zp, _ = _pair_samples(M, sampler, rng, full, size)
        u, up = z[..., 0], zp[..., 0]
        lhs = np.abs(d_psi_pair(Psi, M, x, xp, u, up))
        d = _dist(M, x, xp)
        rhs = d ** (Psi.p - 1) * (d * (M.norm(x, u) + M.norm(xp, up)) + M.norm(xp, M.transport(x, xp, u) - up))
        ok = (d > 1e-6) & (rhs > 1e-14)
        return float(np.max(lhs[ok] / rhs[ok], initial=0.0))

    return run_batches(sampler, count, "dpsi-bound", batch, max)
