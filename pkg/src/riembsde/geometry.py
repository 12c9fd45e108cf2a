"""Chart-based Riemannian geometry kernels.

Points are arrays of shape ``(..., n)`` in chart coordinates, tangent vectors
``(..., n)`` and tangent matrices ``(..., n, d_w)`` whose columns are tangent
vectors (row index = manifold dimension, column index = Brownian dimension).
All routines broadcast over leading axes.

The built-in charts (:class:`Euclidean`, :class:`Sphere`, :class:`HyperbolicDisc`)
use closed forms. :class:`CustomChart` integrates the geodesic and transport
equations with RK4 and solves boundary-value geodesics by shooting; wrapping a
built-in chart's metric and Christoffel symbols in a :class:`CustomChart`
(see :func:`ode_chart`) gives an independent ODE oracle for the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial, pi, sqrt

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ConvergenceError, DomainError, DomainExitError
from .sampling import make_rng, uniform_ball

RK4_STEPS = 200
SHOOT_TOL = 1e-10
SHOOT_MAX_ITER = 50


# ---------------------------------------------------------------------------
# chart domains


@dataclass(frozen=True)
class ChartDomain:
    """Open ball (``center``, ``radius``) or box (``lo``, ``hi``) in coordinates.

    ``closed=True`` also accepts boundary points.
    """

    center: tuple | None = None
    radius: float = np.inf
    lo: tuple | None = None
    hi: tuple | None = None
    closed: bool = False

    @classmethod
    def ball(cls, n, radius, center=None, closed=False):
        c = tuple([0.0] * n) if center is None else tuple(map(float, center))
        return cls(center=c, radius=float(radius), closed=closed)

    @classmethod
    def box(cls, lo, hi):
        return cls(lo=tuple(map(float, lo)), hi=tuple(map(float, hi)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if self.lo is not None:
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            return np.all((x > lo) & (x < hi), axis=-1)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        if self.closed:
            return r <= self.radius * (1 + 1e-12)
        return r < self.radius

    def check(self, x, what="point"):
        ok = self.contains(x)
        if not np.all(ok):
            bad = np.asarray(x)[~ok] if np.ndim(ok) else np.asarray(x)
            raise DomainError(f"{what} outside chart domain: {np.asarray(bad).reshape(-1, np.shape(x)[-1])[0]}")


# ---------------------------------------------------------------------------
# RK4 geodesic and transport integration (generic connection)


def _gamma_vv(gam, v, w):
    return np.einsum("...ijk,...j,...k->...i", gam, v, w)


def integrate_geodesic(christoffel, x, v, steps=RK4_STEPS, domain=None, carry=None):
    """RK4 for x'' = -Γ(x)(x', x') over t in [0, 1].

    ``carry`` is an optional array (..., n, m) of vectors transported along the
    way (dW/dt = -Γ(x)(x', W)). Returns ``(x1, v1, carry1, exited, t_exit)``;
    ``exited`` marks batch entries that left ``domain``.
    """
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    x, v = np.broadcast_arrays(x, v)
    x, v = x.copy(), v.copy()
    h = 1.0 / steps
    exited = np.zeros(x.shape[:-1], dtype=bool)
    t_exit = np.full(x.shape[:-1], np.inf)
    W = None if carry is None else np.array(np.broadcast_to(carry, x.shape + carry.shape[-1:]), dtype=float)

    def rhs(x_, v_, W_):
        gam = christoffel(x_)
        a = -_gamma_vv(gam, v_, v_)
        if W_ is None:
            return v_, a, None
        return v_, a, -np.einsum("...ijk,...j,...km->...im", gam, v_, W_)

    for step in range(steps):
        k1 = rhs(x, v, W)
        k2 = rhs(x + 0.5 * h * k1[0], v + 0.5 * h * k1[1], None if W is None else W + 0.5 * h * k1[2])
        k3 = rhs(x + 0.5 * h * k2[0], v + 0.5 * h * k2[1], None if W is None else W + 0.5 * h * k2[2])
        k4 = rhs(x + h * k3[0], v + h * k3[1], None if W is None else W + h * k3[2])
        x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if W is not None:
            W = W + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if domain is not None:
            out = ~domain.contains(x) & ~exited
            if np.any(out):
                t_exit[out] = (step + 1) * h
                exited |= out
                # freeze escaped entries where they are, so later stages stay finite
                x[exited] = np.nan_to_num(x[exited])
    return x, v, W, exited, t_exit


def shoot(christoffel, x, y, v0=None, domain=None, tol=SHOOT_TOL, max_iter=SHOOT_MAX_ITER, steps=RK4_STEPS):
    """Initial velocity of the RK4 geodesic from ``x`` reaching ``y`` at t = 1.

    Damped Newton on the endpoint miss with a forward-difference Jacobian.
    """
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    n = x.shape[-1]
    v = (y - x).copy() if v0 is None else np.array(np.broadcast_to(v0, x.shape), dtype=float)

    def miss(vv):
        end, _, _, ex, _ = integrate_geodesic(christoffel, x, vv, steps, domain)
        err = np.linalg.norm(end - y, axis=-1)
        err = np.where(ex | ~np.isfinite(err), np.inf, err)
        return end - y, err

    r, err = miss(v)
    for _ in range(max_iter):
        if np.all(err <= tol):
            return v
        hstep = 1e-7 * np.maximum(1.0, np.linalg.norm(v, axis=-1))[..., None]
        J = np.empty(x.shape + (n,))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            rp, _ = miss(v + hstep * e)
            J[..., :, j] = (rp - r) / hstep
        dv = np.linalg.solve(J, r[..., None])[..., 0]
        alpha = np.ones(x.shape[:-1])
        todo = err > tol
        v_new, r_new, err_new = v.copy(), r.copy(), err.copy()
        for _ in range(12):
            trial = v - alpha[..., None] * dv
            rt, et = miss(trial)
            better = todo & (et < err)
            v_new[better], r_new[better], err_new[better] = trial[better], rt[better], et[better]
            todo &= ~better
            if not np.any(todo):
                break
            alpha = np.where(todo, alpha * 0.5, alpha)
        if np.array_equal(err_new, err) and np.all(err_new > tol):
            break
        v, r, err = v_new, r_new, err_new
    if np.all(err <= tol):
        return v
    raise ConvergenceError(f"geodesic shooting did not converge (max miss {np.max(err):.3e})", float(np.max(err)))


# ---------------------------------------------------------------------------
# manifolds


class ManifoldChart:
    """Base chart: metric, connection, and the geodesic operations built on them.

    The defaults integrate the connection numerically; built-in charts override
    them with closed forms.
    """

    dim: int
    domain: ChartDomain
    levi_civita = True
    curvature = None  # constant sectional curvature where known

    def metric(self, x):
        raise NotImplementedError

    def christoffel(self, x):
        raise NotImplementedError

    # -- norms ----------------------------------------------------------
    def inner(self, x, u, v):
        return np.einsum("...i,...ij,...j->...", u, self.metric(x), v)

    def norm(self, x, v):
        return np.sqrt(np.maximum(self.inner(x, v, v), 0.0))

    # -- geodesics (ODE defaults) ----------------------------------------
    def exp(self, x, v):
        x = np.asarray(x, float)
        self.domain.check(x)
        end, _, _, exited, t_exit = integrate_geodesic(self.christoffel, x, v, domain=self.domain)
        if np.any(exited):
            raise DomainExitError("geodesic left the chart domain", float(np.min(t_exit)))
        return end

    def log(self, x, y):
        self.domain.check(x)
        self.domain.check(y)
        return shoot(self.christoffel, x, y, domain=self.domain)

    def distance(self, x, y):
        return self.norm(x, self.log(x, y))

    def transport(self, x, y, w):
        """Parallel transport of vectors ``w`` (..., n) along the geodesic x → y."""
        w = np.asarray(w, float)
        v = self.log(x, y)
        _, _, W, _, _ = integrate_geodesic(self.christoffel, np.asarray(x, float), v, carry=w[..., None])
        return W[..., 0]

    def transport_matrix(self, x, y, z):
        """Transport each column of tangent matrices ``z`` (..., n, d_w)."""
        z = np.asarray(z, float)
        cols = np.swapaxes(z, -1, -2)  # (..., d_w, n)
        out = self.transport(np.asarray(x, float)[..., None, :], np.asarray(y, float)[..., None, :], cols)
        return np.swapaxes(out, -1, -2)

    def sample_points(self, rng, m, radius=None):
        radius = self.default_radius if radius is None else radius
        return uniform_ball(rng, m, self.dim, radius)

    default_radius = 0.5


class Euclidean(ManifoldChart):
    curvature = 0.0

    def __init__(self, n):
        self.dim = n
        self.domain = ChartDomain.ball(n, np.inf)

    def __repr__(self):
        return f"Euclidean({self.dim})"

    def metric(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()

    def christoffel(self, x):
        x = np.asarray(x, float)
        return np.zeros(x.shape + (self.dim, self.dim))

    def exp(self, x, v):
        return np.asarray(x, float) + np.asarray(v, float)

    def log(self, x, y):
        return np.asarray(y, float) - np.asarray(x, float)

    def distance(self, x, y):
        return np.linalg.norm(np.asarray(y, float) - np.asarray(x, float), axis=-1)

    def transport(self, x, y, w):
        w = np.asarray(w, float)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), w.shape)
        return np.broadcast_to(w, shape).copy()


# power series in w = u^2 for the normal-coordinate sphere functions
_NTERMS = 30
_SINC = np.array([(-1) ** k / factorial(2 * k + 1) for k in range(_NTERMS)])  # sin(u)/u
_COS = np.array([(-1) ** k / factorial(2 * k) for k in range(_NTERMS)])  # cos(u)
_VERS = -_COS[1:]  # (1 - cos u)/u^2
_SINC_D = P.polyder(_SINC)
_S2 = P.polymul(_SINC, _SINC)[:_NTERMS]  # (sin u/u)^2
_S2_D = P.polyder(_S2)
_H = -_S2[1:]  # (1 - (sin u/u)^2)/u^2
_H_D = P.polyder(_H)




def _trim(c, w_max=(pi / 2) ** 2 * 1.01):
    # drop terms below double precision on the chart (w = K r^2 <= (pi/2)^2)
    keep = np.nonzero(np.abs(c) * w_max ** np.arange(len(c)) > 1e-19)[0]
    return c[: keep[-1] + 1]


_SINC, _COS, _VERS, _SINC_D, _S2, _S2_D, _H, _H_D = map(_trim, (_SINC, _COS, _VERS, _SINC_D, _S2, _S2_D, _H, _H_D))


def _pv(c, w):
    return P.polyval(w, c)


def _stack_series(*cs):
    out = np.zeros((len(cs), max(len(c) for c in cs)))
    for i, c in enumerate(cs):
        out[i, :len(c)] = c
    return out


def _pv_stack(C, w):
    """Several power series in w at once (Horner on the stacked coefficients)."""
    w = np.asarray(w, float)
    C = C.reshape(C.shape + (1,) * w.ndim)
    acc = C[:, -1] * w + C[:, -2]
    for j in range(C.shape[1] - 3, -1, -1):
        acc = acc * w + C[:, j]
    return acc


_METRIC_SERIES = _stack_series(_S2, _S2_D, _H, _H_D)


class Sphere(ManifoldChart):
    """Round sphere of curvature ``K`` in normal coordinates at the cap center.

    The chart is the closed coordinate ball of radius ``chart_radius`` (default
    ``pi / (2 sqrt(K))``, where the cap is a regular geodesic ball). Closed forms
    use the embedding of the sphere of radius 1/sqrt(K) in R^{n+1}.
    """

    def __init__(self, n, K=1.0, chart_radius=None):
        if K <= 0:
            raise ValueError("sphere curvature must be positive")
        limit = pi / (2 * sqrt(K))
        if chart_radius is None:
            chart_radius = limit
        if chart_radius > limit * (1 + 1e-12):
            raise ValueError("sphere chart radius must not exceed pi/(2 sqrt K)")
        self.dim = n
        self.K = float(K)
        self.curvature = float(K)
        self.domain = ChartDomain.ball(n, chart_radius, closed=True)

    def __repr__(self):
        return f"Sphere({self.dim}, K={self.K})"

    def _w(self, x):
        return self.K * np.einsum("...i,...i->...", x, x)

    def metric(self, x):
        x = np.asarray(x, float)
        w = self._w(x)
        S = _pv(_S2, w)
        Hx = self.K * _pv(_H, w)
        eye = np.eye(self.dim)
        return S[..., None, None] * eye + Hx[..., None, None] * x[..., :, None] * x[..., None, :]

    def christoffel(self, x):
        # g = S I + Hx x x^T with S + Hx r^2 = 1, so g^{-1} = (I - Hx x x^T) / S and
        # Γ^i_jk = a (x_j δ_ik + x_k δ_ij) + x_i (A x_j x_k + B δ_jk)
        x = np.asarray(x, float)
        K = self.K
        w = self._w(x)
        r2 = w / K
        S, Sd, H, Hd = _pv_stack(_METRIC_SERIES, w)
        Sr, Hx, Hr = 2 * K * Sd, K * H, 2 * K * K * Hd
        a = 0.5 * Sr / S
        A = (0.5 * Hr - Hx * (Sr + 0.5 * Hr * r2)) / S
        B = (Hx - 0.5 * Sr) * (1 - Hx * r2) / S
        inner = A[..., None, None] * (x[..., :, None] * x[..., None, :])
        ax = a[..., None] * x
        for j in range(self.dim):
            inner[..., j, j] += B
        gam = x[..., :, None, None] * inner[..., None, :, :]
        for i in range(self.dim):
            gam[..., i, :, i] += ax
            gam[..., i, i, :] += ax
        return gam

    # embedding helpers -----------------------------------------------------
    def embed(self, x):
        x = np.asarray(x, float)
        w = self._w(x)
        R = 1 / sqrt(self.K)
        return np.concatenate([(R * _pv(_COS, w))[..., None], _pv(_SINC, w)[..., None] * x], axis=-1)

    def unembed(self, q):
        q = np.asarray(q, float)
        qv = q[..., 1:]
        u = np.arctan2(np.linalg.norm(qv, axis=-1), q[..., 0])
        return qv / _pv(_SINC, u * u)[..., None]

    def jacobian(self, x):
        x = np.asarray(x, float)
        w = self._w(x)
        s = _pv(_SINC, w)
        sd = _pv(_SINC_D, w)
        top = -sqrt(self.K) * s[..., None] * x
        body = s[..., None, None] * np.eye(self.dim) + 2 * self.K * sd[..., None, None] * x[..., :, None] * x[..., None, :]
        return np.concatenate([top[..., None, :], body], axis=-2)

    def _to_chart(self, x, V):
        J = self.jacobian(x)
        rhs = np.einsum("...ai,...a->...i", J, V)
        return np.linalg.solve(self.metric(x), rhs[..., None])[..., 0]

    def _log_embedded(self, p, q):
        K = self.K
        c = K * np.sum(p * q, axis=-1)
        q_perp = q - c[..., None] * p
        sin_t = sqrt(K) * np.linalg.norm(q_perp, axis=-1)
        theta = np.arctan2(sin_t, c)
        same = np.all(p == q, axis=-1)
        theta = np.where(same, 0.0, theta)
        q_perp = np.where(same[..., None], 0.0, q_perp)
        return q_perp / _pv(_SINC, theta * theta)[..., None], theta

    # closed forms ------------------------------------------------------
    def exp(self, x, v):
        x = np.asarray(x, float)
        self.domain.check(x)
        p = self.embed(x)
        V = np.einsum("...ai,...i->...a", self.jacobian(x), v)
        th2 = self.K * np.sum(V * V, axis=-1)
        q = _pv(_COS, th2)[..., None] * p + _pv(_SINC, th2)[..., None] * V
        y = np.where(np.all(v == 0, axis=-1)[..., None], x, self.unembed(q))
        ok = self.domain.contains(y)
        if not np.all(ok):
            # exit parameter along the geodesic, by bisection on the chart radius
            lo, hi = np.zeros(x.shape[:-1]), np.ones(x.shape[:-1])
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                t2 = th2 * mid * mid
                qm = _pv(_COS, t2)[..., None] * p + (mid * _pv(_SINC, t2))[..., None] * V
                inside = self.domain.contains(self.unembed(qm))
                lo = np.where(inside, mid, lo)
                hi = np.where(inside, hi, mid)
            raise DomainExitError("geodesic left the sphere chart", float(np.min(np.where(ok, np.inf, hi))))
        return y

    def log(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self.domain.check(x)
        self.domain.check(y)
        V, _ = self._log_embedded(self.embed(x), self.embed(y))
        return self._to_chart(x, V)

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self.domain.check(x)
        self.domain.check(y)
        _, theta = self._log_embedded(self.embed(x), self.embed(y))
        return theta / sqrt(self.K)

    def transport(self, x, y, w):
        x, y, w = (np.asarray(a, float) for a in (x, y, w))
        self.domain.check(x)
        self.domain.check(y)
        p = self.embed(x)
        V, theta = self._log_embedded(p, self.embed(y))
        W = np.einsum("...ai,...i->...a", self.jacobian(x), w)
        th2 = theta * theta
        WV = np.sum(W * V, axis=-1)
        PW = W - self.K * WV[..., None] * (_pv(_VERS, th2)[..., None] * V + _pv(_SINC, th2)[..., None] * p)
        return np.where(np.all(x == y, axis=-1)[..., None], w, self._to_chart(y, PW))


def _mobius_add(x, y):
    xy = np.sum(x * y, axis=-1)[..., None]
    x2 = np.sum(x * x, axis=-1)[..., None]
    y2 = np.sum(y * y, axis=-1)[..., None]
    return ((1 + 2 * xy + y2) * x + (1 - x2) * y) / (1 + 2 * xy + x2 * y2)


def _mobius_diff(x, y):
    """(-x) ⊕ y, exactly 0 on the diagonal."""
    return np.where(np.all(x == y, axis=-1)[..., None], 0.0, _mobius_add(-x, y))


def _gyration(u, v, w):
    uv = np.sum(u * v, axis=-1)[..., None]
    uw = np.sum(u * w, axis=-1)[..., None]
    vw = np.sum(v * w, axis=-1)[..., None]
    u2 = np.sum(u * u, axis=-1)[..., None]
    v2 = np.sum(v * v, axis=-1)[..., None]
    A = -uw * v2 + vw + 2 * uv * vw
    B = -vw * u2 - uw
    D = 1 + 2 * uv + u2 * v2
    return w + 2 * (A * u + B * v) / D


def _tanh_c(t):
    """tanh(t)/t, finite at 0."""
    small = np.abs(t) < 1e-4
    ts = np.where(small, 1.0, t)
    return np.where(small, 1 - t * t / 3, np.tanh(ts) / ts)


def _artanh_c(t):
    """artanh(t)/t, finite at 0."""
    small = np.abs(t) < 1e-4
    ts = np.where(small, 0.5, t)
    return np.where(small, 1 + t * t / 3, np.arctanh(ts) / ts)


class HyperbolicDisc(ManifoldChart):
    """Poincaré ball model of curvature -1, metric 4/(1-|x|^2)^2 I."""

    curvature = -1.0

    def __init__(self, n=2):
        self.dim = n
        self.domain = ChartDomain.ball(n, 1.0)

    def __repr__(self):
        return f"HyperbolicDisc({self.dim})"

    @staticmethod
    def _lam(x):
        return 2.0 / (1.0 - np.einsum("...i,...i->...", x, x))

    def metric(self, x):
        x = np.asarray(x, float)
        lam = self._lam(x)
        return (lam * lam)[..., None, None] * np.eye(self.dim)

    def christoffel(self, x):
        x = np.asarray(x, float)
        # Γ^i_jk = δ_ij ∂_k φ + δ_ik ∂_j φ - δ_jk ∂_i φ with φ = log λ, ∂φ = λ x
        dphi = self._lam(x)[..., None] * x
        n = self.dim
        gam = np.zeros(x.shape[:-1] + (n, n, n))
        for i in range(n):
            gam[..., i, i, :] += dphi
            gam[..., i, :, i] += dphi
            for j in range(n):
                gam[..., i, j, j] -= dphi[..., i]
        return gam

    def exp(self, x, v):
        x, v = np.asarray(x, float), np.asarray(v, float)
        self.domain.check(x)
        nv = np.linalg.norm(v, axis=-1)
        lam = self._lam(x)
        step = (0.5 * lam * _tanh_c(0.5 * lam * nv))[..., None] * v
        return _mobius_add(x, step)

    def log(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self.domain.check(x)
        self.domain.check(y)
        m = _mobius_diff(x, y)
        nm = np.linalg.norm(m, axis=-1)
        return ((2.0 / self._lam(x)) * _artanh_c(nm))[..., None] * m

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self.domain.check(x)
        self.domain.check(y)
        return 2.0 * np.arctanh(np.linalg.norm(_mobius_diff(x, y), axis=-1))

    def transport(self, x, y, w):
        x, y, w = (np.asarray(a, float) for a in (x, y, w))
        self.domain.check(x)
        self.domain.check(y)
        out = (self._lam(x) / self._lam(y))[..., None] * _gyration(y, -x, w)
        return np.where(np.all(x == y, axis=-1)[..., None], w, out)


class CustomChart(ManifoldChart):
    """User-supplied metric and (symmetric) connection on a chart domain.

    Geodesics, distance and transport are computed by RK4 integration with
    ``RK4_STEPS`` steps on [0, 1] and shooting for boundary values.
    ``levi_civita`` records whether the connection is the metric one; the two
    are not reconciled otherwise.
    """

    def __init__(self, n, metric, christoffel, domain=None, levi_civita=False, curvature=None, name="CustomChart"):
        self.dim = n
        self._metric = metric
        self._christoffel = christoffel
        self.domain = domain if domain is not None else ChartDomain.ball(n, np.inf)
        self.levi_civita = levi_civita
        self.curvature = curvature
        self.name = name

    def __repr__(self):
        return f"{self.name}({self.dim})"

    def metric(self, x):
        return self._metric(np.asarray(x, float))

    def christoffel(self, x):
        return self._christoffel(np.asarray(x, float))


def ode_chart(M: ManifoldChart) -> CustomChart:
    """The same chart with every geodesic operation done by RK4 + shooting."""
    return CustomChart(M.dim, M.metric, M.christoffel, M.domain, levi_civita=M.levi_civita,
                       curvature=None, name=f"ODE[{M!r}]")


def levi_civita_symbols(metric, x, h=1e-5):
    """Christoffel symbols of ``metric`` at ``x`` from central differences of g."""
    x = np.asarray(x, float)
    n = x.shape[-1]
    dg = np.stack([(metric(x + h * e) - metric(x - h * e)) / (2 * h) for e in np.eye(n)], axis=-3)  # [k, i, j] = d_k g_ij
    # low[l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    low = 0.5 * (np.einsum("...jlk->...ljk", dg) + np.einsum("...klj->...ljk", dg) - dg)
    return np.einsum("...il,...ljk->...ijk", np.linalg.inv(metric(x)), low)


# ---------------------------------------------------------------------------
# module-level operations


def metric(M: ManifoldChart, x):
    """Metric tensor at ``x``; raises :class:`DomainError` outside the chart."""
    M.domain.check(x)
    return M.metric(x)


def riem_norm(M: ManifoldChart, z, base):
    """Riemannian norm of tangent matrices ``z`` (..., n, d_w) at ``base``.

    sqrt(sum_a z[:, a]^T g z[:, a]); the Frobenius norm when g is the identity.
    """
    M.domain.check(base)
    z = np.asarray(z, float)
    sq = np.einsum("...ia,...ij,...ja->...", z, M.metric(base), z)
    return np.sqrt(np.maximum(sq, 0.0))


def distance(M: ManifoldChart, x, y):
    return M.distance(x, y)


def exp_map(M: ManifoldChart, x, v):
    return M.exp(x, v)


def log_map(M: ManifoldChart, x, y):
    return M.log(x, y)


def parallel_transport(M: ManifoldChart, x, y, z):
    """Transport tangent matrices (or vectors) ``z`` at ``x`` to ``y`` along the geodesic."""
    z = np.asarray(z, float)
    if z.ndim >= 2 and z.shape[-2] == M.dim and np.ndim(x) < z.ndim:
        return M.transport_matrix(x, y, z)
    return M.transport(x, y, z)


def transport_estimate_constant(M: ManifoldChart, sampler, count: int) -> float:
    """Smallest C satisfying both transport comparison inequalities on the samples.

    For points x, x' and vectors z at x, z' at x' (P = transport x → x', δ = distance):

        |P z - z'|_r <= C (|z - z'| + δ (|z| + |z'|))
        |z - z'|     <= C (|P z - z'|_r + δ (|z|_r + |z'|_r))

    Samples mix independent pairs, coincident points and near-matched vectors
    (z' close to P z), which is where the ratios are largest.
    """
    from .sampling import run_batches, uniform_sphere

    n = M.dim

    def batch(rng, full, size):
        x = sampler.points(rng, full, n)
        xp = sampler.points(rng, full, n)
        kind = np.arange(full) % 4
        xp = np.where((kind == 1)[:, None], x, xp)
        z = uniform_sphere(rng, full, n) * (sampler.z_max * rng.random(full))[:, None]
        zp = uniform_sphere(rng, full, n) * (sampler.z_max * rng.random(full))[:, None]
        x, xp, z, zp = x[:size], xp[:size], z[:size], zp[:size]
        kind = kind[:size]
        Pz = M.transport(x, xp, z)
        noise = 0.05 * uniform_sphere(rng, full, n)[:size] * rng.random(full)[:size, None]
        zp = np.where((kind == 2)[:, None], Pz + noise * np.linalg.norm(z, axis=-1, keepdims=True), zp)
        zp = np.where((kind == 3)[:, None], z, zp)
        d = M.distance(x, xp)
        e = np.linalg.norm
        lhs1 = M.norm(xp, Pz - zp)
        rhs1 = e(z - zp, axis=-1) + d * (e(z, axis=-1) + e(zp, axis=-1))
        lhs2 = e(z - zp, axis=-1)
        rhs2 = lhs1 + d * (M.norm(x, z) + M.norm(xp, zp))
        r1 = np.where(rhs1 > 1e-14, lhs1 / np.where(rhs1 > 1e-14, rhs1, 1), 0.0)
        r2 = np.where(rhs2 > 1e-14, lhs2 / np.where(rhs2 > 1e-14, rhs2, 1), 0.0)
        return float(max(r1.max(), r2.max()))

    return run_batches(sampler, count, "transport-constant", batch, max)


def oracle_suite(M: ManifoldChart, count: int = 1000, seed: int = 0, radius: float | None = None) -> dict:
    """Closed-form exp/log/distance/transport against RK4 + shooting on ``count`` random cases.

    One shooting solve per case serves log, distance and transport. Also
    reports the transport isometry defect |‖P w‖ - ‖w‖| of the closed form.
    """
    rng = make_rng(seed, "oracle-suite", repr(M))
    x = M.sample_points(rng, count, radius)
    y = M.sample_points(rng, count, radius)
    w = rng.standard_normal((count, M.dim))
    v = 0.3 * rng.standard_normal((count, M.dim))
    v_ode = shoot(M.christoffel, x, y)
    end, _, W, _, _ = integrate_geodesic(M.christoffel, x, v_ode, carry=w[..., None])
    exp_end, _, _, _, _ = integrate_geodesic(M.christoffel, x, v)
    Pw = M.transport(x, y, w)
    return {
        "count": int(count),
        "exp": float(np.max(np.abs(M.exp(x, v) - exp_end))),
        "log": float(np.max(np.abs(M.log(x, y) - v_ode))),
        "distance": float(np.max(np.abs(M.distance(x, y) - M.norm(x, v_ode)))),
        "transport": float(np.max(np.abs(Pw - W[..., 0]))),
        "isometry": float(np.max(np.abs(M.norm(y, Pw) - M.norm(x, w)))),
    }
