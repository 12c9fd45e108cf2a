"""Seeded, counter-based random streams and the sample generators used by the estimators.

All randomness goes through :func:`make_rng`, which keys a Philox generator on
``(seed, *stream)``. Estimators draw samples in fixed-size batches, each batch
owning its own stream, so a run with ``count`` samples is always a prefix of a
run with more samples and the result does not depend on how batches are scheduled.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_MAX_WORKERS = 1


def set_max_workers(n: int) -> None:
    """Cap the number of threads used to evaluate sample batches."""
    global _MAX_WORKERS
    _MAX_WORKERS = max(1, int(n))


def _stream_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator for ``stream`` (ints or strings) under ``seed``."""
    entropy = [int(seed)] + [_stream_key(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def uniform_ball(rng: np.random.Generator, m: int, n: int, radius: float = 1.0) -> np.ndarray:
    """``m`` points uniform in the Euclidean ball of dimension ``n``."""
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    r = radius * rng.random(m) ** (1.0 / n)
    return g * r[:, None]


def uniform_sphere(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    g = rng.standard_normal((m, n))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def unit_riemannian(M, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Rescale tangent matrices ``g`` (..., n, d_w) at ``x`` to unit Riemannian norm."""
    gx = M.metric(x)
    sq = np.einsum("...ia,...ij,...ja->...", g, gx, g)
    return g / np.sqrt(sq)[..., None, None]


@dataclass(frozen=True)
class Sampler:
    """Sampling measure for the Monte Carlo estimators.

    Points are uniform in the coordinate ball of ``radius`` about ``center``
    (or, when ``domain`` is set, uniform in the normalized unit ball and mapped
    back through the domain chart). ``b`` is uniform in ``[-b_box, b_box]^d``;
    tangent matrices have a Gaussian direction and Riemannian norm uniform in
    ``[0, z_max]``.
    """

    seed: int = 0
    radius: float = 0.5
    center: tuple | None = None
    b_box: float = 5.0
    z_max: float = 3.0
    d: int = 1
    d_w: int = 1
    batch_size: int = 1024
    domain: object = field(default=None, compare=False)

    def rng(self, *stream) -> np.random.Generator:
        return make_rng(self.seed, *stream)

    def points(self, rng: np.random.Generator, m: int, n: int) -> np.ndarray:
        if self.domain is not None:
            return self.domain.normalize_inverse(uniform_ball(rng, m, n))
        x = uniform_ball(rng, m, n, self.radius)
        if self.center is not None:
            x = x + np.asarray(self.center, dtype=float)
        return x

    def b_values(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.uniform(-self.b_box, self.b_box, size=(m, self.d))

    def z_matrices(self, rng, M, x: np.ndarray, z_max: float | None = None) -> np.ndarray:
        """Tangent matrices at each row of ``x`` with Riemannian norm uniform in [0, z_max]."""
        z_max = self.z_max if z_max is None else z_max
        m, n = x.shape
        g = unit_riemannian(M, x, rng.standard_normal((m, n, self.d_w)))
        return g * (z_max * rng.random(m))[:, None, None]

    def batches(self, count: int) -> list[tuple[int, int]]:
        """``(batch_index, size)`` pairs covering ``count`` samples."""
        if count < 1:
            raise ValueError("count must be >= 1")
        full, rest = divmod(count, self.batch_size)
        out = [(i, self.batch_size) for i in range(full)]
        if rest:
            out.append((full, rest))
        return out


def run_batches(sampler: Sampler, count: int, tag: str, fn: Callable, reduce: Callable[[Sequence], object]):
    """Evaluate ``fn(rng, batch_size)`` on each batch and combine with ``reduce``.

    Every batch is generated at full size and then truncated, so the samples of a
    smaller ``count`` are a prefix of those of a larger one.
    """
    jobs = sampler.batches(count)

    def one(job):
        idx, size = job
        return fn(sampler.rng(tag, idx), sampler.batch_size, size)

    if _MAX_WORKERS > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=_MAX_WORKERS) as ex:
            parts = list(ex.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    return reduce(parts)
