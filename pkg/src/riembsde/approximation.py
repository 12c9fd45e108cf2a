"""The smoothing cascade f → f_k → f_{k,l} → g_{k,l} in the normalized chart.

f_k truncates f smoothly in |b| and ‖z‖; f_{k,l} averages f_k over a bump of
radius 1/l in the joint (b, x, z) space; g_{k,l} adds the outward correction
(ε_{k,l} + (A/l)(1 + ‖z‖)) x. Everything here lives in the normalized chart
where ω̄ is the closed unit ball, so norms are Euclidean (Frobenius for z).
Use :func:`pullback` to evaluate a normalized-chart drift in the original chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convexdomain import DomainSpec
from .drift import DriftSpec
from .errors import DomainError
from .sampling import Sampler, make_rng, uniform_ball, uniform_sphere

DEFAULT_MOLLIFIER_SAMPLES = 4096


def _psi(t):
    t = np.asarray(t, float)
    pos = t > 0
    return np.where(pos, np.exp(-1.0 / np.where(pos, t, 1.0)), 0.0)


def bump_phi(u):
    """Smooth nonincreasing φ with φ = 1 on (-∞, 1] and φ = 0 on [2, ∞)."""
    u = np.asarray(u, float)
    a = _psi(2.0 - u)
    return a / (a + _psi(u - 1.0))


def phi_k(u, k):
    """φ_k(u) = φ(u - (k - 1)): 1 for u <= k, 0 for u >= k + 1."""
    return bump_phi(np.asarray(u, float) - (k - 1))


def _znorm(z):
    return np.sqrt(np.sum(z * z, axis=(-2, -1)))


def _dims(f):
    return getattr(f, "dims", None)


@dataclass(frozen=True)
class TruncatedDrift:
    """f_k(b, x, z) = f(b, x, z) φ_k(|b|) φ_k(‖z‖)."""

    base: object
    k: int

    @property
    def name(self):
        return f"{self.base.name}|k={self.k}"

    depends_on_z = True
    declared: dict = field(default_factory=dict)

    def eval(self, b, x, z):
        w = phi_k(np.linalg.norm(b, axis=-1), self.k) * phi_k(_znorm(z), self.k)
        return self.base(b, x, z) * w[..., None]

    def __call__(self, b, x, z):
        return self.eval(np.asarray(b, float), np.asarray(x, float), np.asarray(z, float))


def truncate(f, k: int) -> TruncatedDrift:
    if k < 1:
        raise ValueError("k must be >= 1")
    return TruncatedDrift(f, int(k))


@dataclass(frozen=True)
class MollifiedDrift:
    """f_{k,l}(v) = Σ_j w_j f_k(v - node_j), nodes in the joint ball of radius 1/l.

    Nodes are drawn once (in antithetic pairs) from the uniform law on the unit
    ball of dimension d + n + n·d_w and weighted by exp(-1/(1 - |s|^2)); the
    weights are normalized to sum to 1 and the offsets scaled by 1/l.
    """

    base: TruncatedDrift
    l: int
    sample_count: int
    seed: int
    d: int
    n: int
    d_w: int
    offsets: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)
    chunk: int = 256

    depends_on_z = True
    declared: dict = field(default_factory=dict)

    @property
    def name(self):
        return f"{self.base.name}|l={self.l}"

    def eval(self, b, x, z):
        shape = np.broadcast_shapes(b.shape[:-1], x.shape[:-1], z.shape[:-2])
        b = np.broadcast_to(b, shape + (self.d,)).reshape(-1, self.d)
        x = np.broadcast_to(x, shape + (self.n,)).reshape(-1, self.n)
        z = np.broadcast_to(z, shape + (self.n, self.d_w)).reshape(-1, self.n, self.d_w)
        ob, ox, oz = self._split()
        out = np.empty_like(x)
        for s in range(0, len(x), self.chunk):
            sl = slice(s, s + self.chunk)
            vals = self.base(b[sl, None] - ob, x[sl, None] - ox, z[sl, None] - oz)
            out[sl] = np.einsum("mjn,j->mn", vals, self.weights)
        return out.reshape(shape + (self.n,))

    def _split(self):
        o = self.offsets
        d, n = self.d, self.n
        return o[:, :d], o[:, d:d + n], o[:, d + n:].reshape(-1, n, self.d_w)

    def __call__(self, b, x, z):
        return self.eval(np.asarray(b, float), np.asarray(x, float), np.asarray(z, float))


def mollifier_nodes(dim, sample_count, seed, l):
    """Offsets (sample_count, dim) within radius 1/l and normalized weights."""
    if sample_count < 2 or sample_count % 2:
        raise ValueError("sample_count must be a positive even number (antithetic pairs)")
    rng = make_rng(seed, "mollifier", dim)
    half = uniform_ball(rng, sample_count // 2, dim, 1.0)
    nodes = np.concatenate([half, -half])
    s2 = np.sum(nodes * nodes, axis=-1)
    w = np.where(s2 < 1, np.exp(-1.0 / np.where(s2 < 1, 1 - s2, 1.0)), 0.0)
    w = w / w.sum()
    return nodes / l, w


def mollify(f_k: TruncatedDrift, l: int, d: int, n: int, d_w: int, sample_count: int = DEFAULT_MOLLIFIER_SAMPLES,
            seed: int = 0, domain: DomainSpec | None = None) -> MollifiedDrift:
    """Build f_{k,l}. With ``domain`` given, requires 1/l < dist(O₁, ∂O)."""
    if l < 1:
        raise ValueError("l must be >= 1")
    if domain is not None and not 1.0 / l < domain.margin:
        raise DomainError(f"l={l} too small: need 1/l < dist(O1, boundary of O) = {domain.margin}")
    offsets, weights = mollifier_nodes(d + n + n * d_w, sample_count, seed, l)
    return MollifiedDrift(f_k, int(l), int(sample_count), int(seed), d, n, d_w, offsets, weights)


@dataclass(frozen=True)
class CorrectedDrift:
    """g(b, x, z) = f_{k,l}(b, x, z) + (ε + (A/l)(1 + ‖z‖)) x."""

    base: MollifiedDrift
    epsilon: float
    A: float

    depends_on_z = True
    declared: dict = field(default_factory=dict)

    @property
    def name(self):
        return f"{self.base.name}|A={self.A:g}"

    @property
    def l(self):
        return self.base.l

    def eval(self, b, x, z):
        c = self.epsilon + self.A / self.base.l * (1 + _znorm(z))
        return self.base(b, x, z) + c[..., None] * x

    def __call__(self, b, x, z):
        return self.eval(np.asarray(b, float), np.asarray(x, float), np.asarray(z, float))


def correct(f_kl: MollifiedDrift, epsilon: float, A: float) -> CorrectedDrift:
    if not (np.isfinite(epsilon) and np.isfinite(A)):
        raise ValueError("epsilon and A must be finite")
    return CorrectedDrift(f_kl, float(epsilon), float(A))


# ---------------------------------------------------------------------------
# uniform continuity and calibration


def _x_grid(n, spacing, radius, max_points):
    """Cartesian grid (aligned at 0) inside the ball; spacing doubled until it fits."""
    h = spacing
    while True:
        m = int(np.floor(radius / h))
        if (2 * m + 1) ** n <= 8 * max_points:
            axes = [np.arange(-m, m + 1) * h] * n
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
            pts = pts[np.linalg.norm(pts, axis=-1) <= radius + 1e-12]
            if len(pts) <= max_points:
                return pts, h
        h *= 2


def _directions(n, seed, extra=8):
    eye = np.eye(n)
    diag = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T / np.sqrt(n)
    rnd = uniform_sphere(make_rng(seed, "modulus-directions"), extra, n)
    return np.concatenate([eye, -eye, diag, rnd])


def modulus_of_continuity(f_k, eta: float, d: int, n: int, d_w: int, spacing: float | None = None,
                          radius: float = 1.0, probes: int = 32, max_points: int = 1024, seed: int = 0) -> float:
    """ε(η) = max |f_k(b, x, z) - f_k(b, x + v, z)| over a grid, |v| <= η.

    x runs over a grid of the ball of ``radius`` (spacing ``eta/4`` by default,
    coarsened until at most ``max_points`` points remain); (b, z) over seeded
    probes with |b|, ‖z‖ <= k + 1 (one probe has b = 0, z = 0); v over fixed
    directions times the radii {2^-j <= η} ∪ {η}. For fixed ``spacing`` the
    search sets are nested in η, so ε is nondecreasing in η.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    pb, pz = _probes(f_k, d, n, d_w, probes, seed)
    xs, _ = _x_grid(n, eta / 4 if spacing is None else spacing, radius, max_points)
    radii = [2.0 ** -j for j in range(0, 16) if 2.0 ** -j <= eta] + [eta]
    V = np.concatenate([r * _directions(n, seed) for r in sorted(set(radii))])
    best = 0.0
    for j in range(probes):
        b = pb[j]
        z = pz[j]
        base = f_k(b, xs, z)  # (P, n)
        moved = f_k(b, xs[:, None, :] + V[None], z)  # (P, V, n)
        best = max(best, float(np.max(np.linalg.norm(moved - base[:, None], axis=-1))))
    return best


def _probes(f_k, d, n, d_w, probes, seed):
    k = getattr(f_k, "k", None)
    reach = (k + 1) if k is not None else 1.0
    rng = make_rng(seed, "modulus-probes")
    pb = uniform_ball(rng, probes, d, reach)
    pz = uniform_ball(rng, probes, n * d_w, reach).reshape(probes, n, d_w)
    pb[0], pz[0] = 0.0, 0.0
    return pb, pz


def sup_deviation(f_a, f_b, d: int, n: int, d_w: int, spacing: float = 1 / 16, radius: float = 1.0,
                  probes: int = 32, max_points: int = 1024, seed: int = 0) -> float:
    """max |f_a - f_b| over the x-grid and (b, z) probes used by :func:`modulus_of_continuity`.

    Probes are drawn for ``f_a`` (its ``k`` sets the reach), so tables over l
    with a fixed f_k share one search set.
    """
    pb, pz = _probes(f_a, d, n, d_w, probes, seed)
    xs, _ = _x_grid(n, spacing, radius, max_points)
    best = 0.0
    for j in range(probes):
        diff = f_a(pb[j], xs, pz[j]) - f_b(pb[j], xs, pz[j])
        best = max(best, float(np.max(np.linalg.norm(diff, axis=-1))))
    return best


def phi_transport_constant(M, k: int, sampler: Sampler, count: int, reach: float = 2.0) -> float:
    """Smallest Ĉ with |φ_k(‖P z‖) - φ_k(‖z‖)| <= Ĉ k δ(x, x') on the samples.

    P is parallel transport from x to x' and the norms are Frobenius norms in
    the chart. Points come from ``sampler`` (every fourth x' close to x); z has
    a Gaussian direction and norm uniform in [0, k + reach], so the cutoff
    region of φ_k is covered for every k.
    """
    from .drift import NEAR_DIAGONAL, _pair_points
    from .sampling import run_batches

    def batch(rng, full, size):
        x, xp = _pair_points(M, sampler, rng, full)
        g = rng.standard_normal((full, M.dim, sampler.d_w))
        z = g / _znorm(g)[:, None, None] * ((k + reach) * rng.random(full))[:, None, None]
        x, xp, z = x[:size], xp[:size], z[:size]
        dist = M.distance(x, xp)
        keep = dist >= NEAR_DIAGONAL
        x, xp, z, dist = x[keep], xp[keep], z[keep], dist[keep]
        Pz = M.transport_matrix(x, xp, z)
        lhs = np.abs(phi_k(_znorm(Pz), k) - phi_k(_znorm(z), k))
        return float(np.max(lhs / (k * dist), initial=0.0))

    return run_batches(sampler, count, f"phi-transport-{k}", batch, max)


@dataclass(frozen=True)
class Calibration:
    """Outcome of :func:`calibrate_A`."""

    A: float
    C_hat: float
    l_values: tuple
    C_per_l: tuple
    A_per_l: tuple
    eps_per_l: tuple
    stable: bool
    warning: str = ""


def calibrate_A(f_k: TruncatedDrift, l_values, sampler: Sampler, count: int = 4096, n: int = 2,
                sample_count: int = DEFAULT_MOLLIFIER_SAMPLES, mollifier_seed: int = 0, modulus_kw=None) -> Calibration:
    """Smallest Ĉ with |f_{k,l} - f_k| <= ε_{k,l} + (Ĉ/l)(1 + ‖z‖) at boundary probes, for every l.

    Probes have x on the unit sphere, b uniform in the sampler box and z with
    Frobenius norm uniform in [0, z_max]. Returns A = Ĉ + 1 and per-l values;
    ``stable`` records whether the per-l values of A vary by at most 10%.
    """
    l_values = tuple(int(l) for l in l_values)
    if not l_values:
        raise ValueError("l_values must be nonempty")
    d, d_w = sampler.d, sampler.d_w
    rng = sampler.rng("calibrate-A")
    x = uniform_sphere(rng, count, n)
    b = sampler.b_values(rng, count)
    g = rng.standard_normal((count, n, d_w))
    z = g / _znorm(g)[:, None, None] * (sampler.z_max * rng.random(count))[:, None, None]
    fk = f_k(b, x, z)
    C, eps = [], []
    for l in l_values:
        e = modulus_of_continuity(f_k, 1.0 / l, d, n, d_w, **(modulus_kw or {}))
        fkl = mollify(f_k, l, d, n, d_w, sample_count, mollifier_seed)(b, x, z)
        dev = np.linalg.norm(fkl - fk, axis=-1)
        C.append(max(0.0, float(np.max(l * (dev - e) / (1 + _znorm(z))))))
        eps.append(e)
    C_hat = max(C)
    A_l = [c + 1 for c in C]
    stable = (max(A_l) - min(A_l)) <= 0.1 * min(A_l)
    warning = "" if stable else f"A varies across l: {['%.4g' % a for a in A_l]}"
    return Calibration(C_hat + 1, C_hat, l_values, tuple(C), tuple(A_l), tuple(eps), stable, warning)


def epsilon_kl(f_k, l, d, n, d_w, **kw) -> float:
    """ε_{k,l}: the modulus of continuity of f_k at η = 1/l."""
    return modulus_of_continuity(f_k, 1.0 / l, d, n, d_w, **kw)


# ---------------------------------------------------------------------------
# chart change


@dataclass(frozen=True)
class PulledBackDrift:
    """A normalized-chart drift seen in the original chart: DN(y)⁻¹ f(b, N(y), DN(y) z)."""

    base: object
    domain: DomainSpec

    depends_on_z = True
    declared: dict = field(default_factory=dict)

    @property
    def name(self):
        return f"{self.base.name}@{self.domain.name}"

    def eval(self, b, y, z):
        J = self.domain.normalize_jacobian(y)
        v = self.base(b, self.domain.normalize(y), J @ z)
        return np.linalg.solve(J, v[..., None])[..., 0]

    def __call__(self, b, y, z):
        return self.eval(np.asarray(b, float), np.asarray(y, float), np.asarray(z, float))


def pullback(f, domain: DomainSpec) -> PulledBackDrift:
    return PulledBackDrift(f, domain)


def as_drift(obj, name=None) -> DriftSpec:
    """Wrap any cascade object in a DriftSpec (adds the finiteness check)."""
    return DriftSpec(obj.eval, getattr(obj, "depends_on_z", True), name or obj.name)
