"""Finite-dimensional increments of the driving Gaussian field.

The field has covariance ``min(t, s) * phi(x - y)``; the simulators only ever
need its increments over a time step at the current particle positions, which
are jointly Gaussian with covariance ``dt * G`` for the Gram matrix ``G`` of
the kernel.  Sampling therefore reduces to a matrix square root.

Coincident positions are deduplicated before factorisation so perfectly
correlated coordinates share one Gaussian draw exactly; that sidesteps the
rank-deficient factorisations the coalescing regime would otherwise produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import get_lapack_funcs

from .covariance import CovarianceSpec, DomainError, eval_phi

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
POSITION_QUANTUM = 1e-9


class FactorizationError(Exception):
    """Raised when no square root of the Gram matrix could be produced."""

    def __init__(self, minor_index: int, message: str | None = None) -> None:
        self.minor_index = minor_index
        super().__init__(message or
                         f"factorization failed at leading minor {minor_index}")


@dataclass
class Factorization:
    """A square root of ``G + jitter*I`` with provenance.

    ``root`` is lower-triangular when the plain Cholesky ladder succeeded and
    a permuted square root when the pivoted fallback was used; either way
    ``root @ root.T`` reconstructs the (jittered) Gram matrix.
    """

    root: np.ndarray
    jitter: float
    pivoted: bool = False


def gram(spec: CovarianceSpec, points) -> np.ndarray:
    """Gram matrix ``G[i, j] = phi(x_i - x_j)`` with an exact unit diagonal."""
    pts = np.asarray(points, dtype=float)
    g = np.asarray(eval_phi(spec, pts[:, None] - pts[None, :]), dtype=float)
    np.fill_diagonal(g, 1.0)
    return g


def _pivoted_root(g: np.ndarray) -> np.ndarray | None:
    (dpstrf,) = get_lapack_funcs(("pstrf",), (g,))
    c, piv, rank, info = dpstrf(g, lower=1)
    if info < 0:
        return None
    n = g.shape[0]
    l = np.tril(c)
    l[:, rank:] = 0.0
    root = np.zeros_like(g)
    root[piv - 1, :] = l
    if np.max(np.abs(root @ root.T - g)) > 1e-8:
        return None
    return root


def factorize(g: np.ndarray, ladder=JITTER_LADDER) -> Factorization:
    """Square root of a Gram matrix, robust to near-coincident coordinates.

    Plain Cholesky is attempted first; if it fails the pivoted routine is
    tried (it copes with the semidefinite limit of nearly equal positions),
    and only then the jitter ladder escalates.  The failing leading minor is
    reported when everything is exhausted.
    """
    g = np.asarray(g, dtype=float)
    try:
        return Factorization(np.linalg.cholesky(g), 0.0)
    except np.linalg.LinAlgError:
        pass
    root = _pivoted_root(g)
    if root is not None:
        return Factorization(root, 0.0, pivoted=True)
    eye = np.eye(g.shape[0])
    for jitter in ladder:
        if jitter == 0.0:
            continue
        try:
            return Factorization(np.linalg.cholesky(g + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(_failing_minor(g + ladder[-1] * eye))


def _failing_minor(g: np.ndarray) -> int:
    # Reproduce the factorization by hand to locate the offending pivot.
    n = g.shape[0]
    l = np.zeros_like(g)
    for j in range(n):
        d = g[j, j] - np.dot(l[j, :j], l[j, :j])
        if d <= 0.0 or not math.isfinite(d):
            return j + 1
        l[j, j] = math.sqrt(d)
        if j + 1 < n:
            l[j + 1:, j] = (g[j + 1:, j] - l[j + 1:, :j] @ l[j, :j]) / l[j, j]
    return n


@dataclass
class FieldSampler:
    """Per-replica sampler of field increments at particle positions.

    Owns a small factorization cache keyed by the quantised position vector;
    positions move every step, so the cache only pays off for frozen
    configurations, which is exactly the case the simulators hit after
    coalescence.  Not safe for concurrent mutation: one sampler per replica.
    """

    spec: CovarianceSpec
    ladder: tuple = JITTER_LADDER
    cache_quantum: float = POSITION_QUANTUM
    cache_size: int = 8
    _cache: dict = field(default_factory=dict, repr=False)

    def factor_for(self, points: np.ndarray) -> Factorization:
        key = tuple(np.round(points / self.cache_quantum).astype(np.int64))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        fac = factorize(gram(self.spec, points), self.ladder)
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = fac
        return fac


def sample_increment(sampler: FieldSampler, points, dt: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw one field increment over ``dt`` at ``points``.

    Returns ``sqrt(dt) * L @ z``, with coincident input positions receiving
    exactly equal entries (they share the same deduplicated coordinate).
    """
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    pts = np.asarray(points, dtype=float)
    quantised = np.round(pts / sampler.cache_quantum).astype(np.int64)
    uniq, inverse = np.unique(quantised, return_inverse=True)
    unique_pts = uniq * sampler.cache_quantum
    fac = sampler.factor_for(unique_pts)
    z = rng.standard_normal(len(unique_pts))
    inc = math.sqrt(dt) * (fac.root @ z)
    return inc[inverse]
