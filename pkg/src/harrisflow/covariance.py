"""Covariance kernels for the flow simulators.

The exact kernel family is ``phi(x) = exp(-beta * |x|**alpha)`` with
``alpha in (0, 2)`` and ``beta > 0``.  A smoothed member ``phi_eps`` is built
by convolving ``phi`` with a scaled mollifier and renormalising so that
``phi_eps(0) == 1``.  The smoothed kernels are the ones driven through the
SDE simulator; the exact kernel drives the coalescing simulator, and the
boundary classifier below predicts which behaviour a kernel produces.

Mollified kernels are cached on a dense grid with a cubic spline because the
simulators evaluate them millions of times; the interpolation error budget is
1e-6 and is checked in the test suite.  Quantities of the form
``1 - phi(x)`` are computed through dedicated cancellation-free code paths
(``one_minus_phi``), never by subtracting interpolated values from 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

EXACT = "exact"
MOLLIFIED = "mollified"

COALESCING = "coalescing"
NON_COALESCING = "non_coalescing"

GAUSSIAN = "gaussian"
COMPACT_BUMP = "compact-bump"

# Half-width of the standard mollifier support used by the quadrature.  The
# Gaussian is truncated where its density falls below ~1e-13 of the peak.
_MOLLIFIER_SPAN = {GAUSSIAN: 7.6, COMPACT_BUMP: 2.0}


class CovarianceError(Exception):
    """Base error for kernel construction and evaluation."""


class DomainError(CovarianceError, ValueError):
    """Kernel parameters outside their admissible ranges."""


class QuadratureError(CovarianceError):
    """Convolution or boundary quadrature failed to converge on refinement."""


class DegenerateKernelError(CovarianceError):
    """``1 - phi`` vanishes on the classification interval."""


def _mollifier(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name == GAUSSIAN:
        return lambda v: np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
    if name == COMPACT_BUMP:
        return _cubic_bspline
    raise DomainError(f"unknown mollifier {name!r}")


def _mollifier_d2(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name == GAUSSIAN:
        return lambda v: (v * v - 1.0) * np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
    if name == COMPACT_BUMP:
        return _cubic_bspline_d2
    raise DomainError(f"unknown mollifier {name!r}")


def _cubic_bspline_d2(v: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(v, dtype=float))
    out = np.zeros_like(a)
    inner = a <= 1.0
    outer = (a > 1.0) & (a < 2.0)
    out[inner] = 3.0 * a[inner] - 2.0
    out[outer] = 2.0 - a[outer]
    return out


def _cubic_bspline(v: np.ndarray) -> np.ndarray:
    # Cubic B-spline on [-2, 2]: compactly supported, C^2, unit mass, and
    # nonnegative definite after convolution (its Fourier transform is
    # sinc^4 >= 0), which the smoothed kernels must preserve.
    a = np.abs(np.asarray(v, dtype=float))
    out = np.zeros_like(a)
    inner = a <= 1.0
    outer = (a > 1.0) & (a < 2.0)
    out[inner] = (4.0 - 6.0 * a[inner] ** 2 + 3.0 * a[inner] ** 3) / 6.0
    out[outer] = (2.0 - a[outer]) ** 3 / 6.0
    return out


@dataclass(frozen=True)
class CovarianceSpec:
    """A covariance kernel, either exact or mollified.

    ``normalization`` is the constant that rescales the raw convolution so
    the kernel equals 1 at the origin; it is 1.0 for exact kernels.
    """

    kind: str
    alpha: float
    beta: float
    epsilon: float | None = None
    mollifier: str = GAUSSIAN
    normalization: float = 1.0
    quadrature_points: int = 256
    _table: object = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in (EXACT, MOLLIFIED):
            raise DomainError(f"kind must be 'exact' or 'mollified', got {self.kind!r}")
        if not (0.0 < self.alpha < 2.0):
            raise DomainError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta}")
        if self.kind == MOLLIFIED:
            if self.epsilon is None or not (0.0 < self.epsilon < 1.0):
                raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
            if self.mollifier not in _MOLLIFIER_SPAN:
                raise DomainError(f"unknown mollifier {self.mollifier!r}")
            if self.quadrature_points < 8:
                raise DomainError("quadrature_points must be at least 8")
        elif self.epsilon is not None:
            raise DomainError("exact kernels take no epsilon")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "mollifier": self.mollifier,
            "normalization": self.normalization,
            "quadrature_points": self.quadrature_points,
        }

    @staticmethod
    def from_dict(d: dict) -> "CovarianceSpec":
        return CovarianceSpec(
            kind=d["kind"],
            alpha=float(d["alpha"]),
            beta=float(d["beta"]),
            epsilon=None if d.get("epsilon") is None else float(d["epsilon"]),
            mollifier=d.get("mollifier", GAUSSIAN),
            normalization=float(d.get("normalization", 1.0)),
            quadrature_points=int(d.get("quadrature_points", 256)),
        )


def build_exact(alpha: float, beta: float) -> CovarianceSpec:
    return CovarianceSpec(kind=EXACT, alpha=float(alpha), beta=float(beta))


def _phi_exact(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    return np.exp(-beta * np.abs(x) ** alpha)


class _MollifiedTable:
    """Dense-grid cubic-spline cache of a normalised mollified kernel."""

    def __init__(self, alpha: float, beta: float, epsilon: float,
                 mollifier: str, quadrature_points: int) -> None:
        self.alpha = alpha
        self.beta = beta
        self.epsilon = epsilon
        self.mollifier = mollifier
        span = _MOLLIFIER_SPAN[mollifier]
        h = _mollifier(mollifier)

        # Trapezoid nodes in mollifier coordinates: step 1/Q, i.e. eps/Q in
        # the original variable.  A doubled rule plus Richardson kills the
        # O(step^2) term; the doubling difference is the convergence guard.
        q = quadrature_points
        probes = np.arange(8) * (16.0 / q)
        converged = False
        for _ in range(4):
            nodes_a, w_a = self._trapezoid(span, q)
            nodes_b, w_b = self._trapezoid(span, 2 * q)
            hw_a = h(nodes_a) * w_a
            hw_b = h(nodes_b) * w_b
            cur_a = self._raw(probes, nodes_a, hw_a)
            cur_b = self._raw(probes, nodes_b, hw_b)
            if np.max(np.abs(cur_b - cur_a)) <= 3e-5:
                converged = True
                break
            q *= 2
        if not converged:
            raise QuadratureError(
                f"convolution quadrature did not converge by Q={q}")
        self._q = q
        self._nodes_a, self._hw_a, self._wa_raw = nodes_a, hw_a, w_a
        self._nodes_b, self._hw_b, self._wb_raw = nodes_b, hw_b, w_b
        raw0 = self._raw2(np.array([0.0]))[0]
        if raw0 <= 0.0:
            raise QuadratureError("convolution mass at the origin is not positive")
        self.normalization = 1.0 / raw0

        # phi(x) < 1e-16 once beta*x**alpha > 37; beyond that (plus the
        # mollifier span) the smoothed kernel is below 1e-14 and eval
        # returns 0.  The kink region near 0 gets a fine grid, and nodes are
        # multiples of eps/Q so the kernel kink always sits on a quadrature
        # node (keeps the composite rule's error expansion clean).
        tail = (37.0 / beta) ** (1.0 / alpha)
        fine_step = epsilon * max(1, q // 256) / 64.0
        self.x_max = (math.ceil((tail + span * epsilon) / fine_step)) * fine_step
        fine_stop = min(4.0 + 2.0 * span * epsilon, self.x_max)
        n_fine = int(math.ceil(fine_stop / fine_step))
        fine = fine_step * np.arange(n_fine)
        coarse_step = fine_step * max(
            1, int(math.ceil((self.x_max - fine_stop) / 4000.0 / fine_step)),
            int(round(epsilon / 8.0 / fine_step)))
        coarse = np.arange(fine[-1] + coarse_step, self.x_max, coarse_step)
        grid = np.unique(np.concatenate([fine, coarse, [self.x_max]]))
        vals = self.normalization * self._raw2(grid)
        vals[0] = 1.0
        self._spline = CubicSpline(grid, vals, bc_type=((1, 0.0), (1, 0.0)))

        # curvature at the origin via the mollifier's second derivative
        # (phi_eps'' = phi * h_eps''), used by the cancellation-free branch
        # of one_minus below the crossover |x| <= eps/16
        d2 = _mollifier_d2(mollifier)
        qa = _phi_exact(alpha, beta, epsilon * self._nodes_a) @ (d2(self._nodes_a) * self._wa_raw)
        qb = _phi_exact(alpha, beta, epsilon * self._nodes_b) @ (d2(self._nodes_b) * self._wb_raw)
        d2_int = (4.0 * qb - qa) / 3.0
        self.curvature = -0.5 * self.normalization * d2_int / (epsilon * epsilon)

    @staticmethod
    def _trapezoid(span: float, q: int) -> tuple[np.ndarray, np.ndarray]:
        n = 2 * int(math.ceil(span * q)) + 1
        nodes = np.linspace(-span, span, n)
        w = np.full(n, nodes[1] - nodes[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return nodes, w

    def _raw(self, x: np.ndarray, nodes: np.ndarray, hw: np.ndarray) -> np.ndarray:
        # (phi * h_eps)(x) = sum_v phi(x - eps*v) h(v) dv
        shifted = x[:, None] - self.epsilon * nodes[None, :]
        return _phi_exact(self.alpha, self.beta, shifted) @ hw

    def _raw2(self, x: np.ndarray) -> np.ndarray:
        # Richardson-extrapolated pair of trapezoid rules.
        a = self._raw(x, self._nodes_a, self._hw_a)
        b = self._raw(x, self._nodes_b, self._hw_b)
        return (4.0 * b - a) / 3.0

    def eval(self, x: np.ndarray) -> np.ndarray:
        ax = np.abs(x)
        out = np.zeros_like(ax, dtype=float)
        inside = ax <= self.x_max
        out[inside] = self._spline(ax[inside])
        return out

    def _one_minus_raw(self, x: np.ndarray, nodes: np.ndarray,
                       hw: np.ndarray) -> np.ndarray:
        ev = self.epsilon * nodes
        a = self.beta * np.abs(ev) ** self.alpha
        b = self.beta * np.abs(x[:, None] - ev[None, :]) ** self.alpha
        diff = -np.exp(-a)[None, :] * np.expm1(a[None, :] - b)
        return self.normalization * (diff @ hw)

    def one_minus(self, x: np.ndarray) -> np.ndarray:
        # 1 - c*(phi*h_eps)(x) = c * sum_v h(v) dv * (phi(eps v) - phi(x - eps v));
        # each difference of exponentials goes through expm1 so the quadrature
        # keeps relative accuracy down to moderate x.  Below eps/16 even that
        # hits the rule's absolute error floor, so the quadratic Taylor branch
        # (curvature from phi * h_eps'') takes over; the classifier depends on
        # the exact small-x power, not just the value.
        x = np.asarray(x, dtype=float)
        a = self._one_minus_raw(x, self._nodes_a, self._hw_a)
        b = self._one_minus_raw(x, self._nodes_b, self._hw_b)
        out = (4.0 * b - a) / 3.0
        small = np.abs(x) <= self.epsilon / 16.0
        if np.any(small):
            out[small] = self.curvature * x[small] * x[small]
        return out


def _ensure_table(spec: CovarianceSpec) -> _MollifiedTable:
    table = spec._table
    if table is None:
        table = _MollifiedTable(spec.alpha, spec.beta, spec.epsilon,
                                spec.mollifier, spec.quadrature_points)
        object.__setattr__(spec, "_table", table)
    return table


def build_mollified(alpha: float, beta: float, epsilon: float,
                    mollifier: str = GAUSSIAN,
                    quadrature_points: int = 256) -> CovarianceSpec:
    """Construct the smoothed kernel with its normalisation precomputed."""
    table = _MollifiedTable(float(alpha), float(beta), float(epsilon),
                            mollifier, int(quadrature_points))
    spec = CovarianceSpec(
        kind=MOLLIFIED, alpha=float(alpha), beta=float(beta),
        epsilon=float(epsilon), mollifier=mollifier,
        normalization=table.normalization,
        quadrature_points=int(quadrature_points),
    )
    object.__setattr__(spec, "_table", table)
    return spec


def eval_phi(spec: CovarianceSpec, x) -> np.ndarray | float:
    """Evaluate the kernel at ``x`` (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if spec.kind == EXACT:
        out = _phi_exact(spec.alpha, spec.beta, arr)
    else:
        out = _ensure_table(spec).eval(arr)
    return float(out[0]) if scalar else out


def one_minus_phi(spec: CovarianceSpec, x) -> np.ndarray | float:
    """``1 - phi(x)`` without cancellation, for the boundary classifier."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if spec.kind == EXACT:
        out = -np.expm1(-spec.beta * np.abs(arr) ** spec.alpha)
    else:
        out = _ensure_table(spec).one_minus(arr)
    return float(out[0]) if scalar else out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _band_integral(spec: CovarianceSpec, lo: float, hi: float) -> float:
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    x = mid + half * _GL_NODES
    denom = one_minus_phi(spec, x)
    if np.any(denom <= 0.0):
        raise DegenerateKernelError(
            f"1 - phi vanishes inside [{lo:g}, {hi:g}]")
    return half * float(np.sum(_GL_WEIGHTS * x / denom))


def classify_boundary(spec: CovarianceSpec, delta: float, *,
                      cap: float = 1e6, conv_tol: float = 1e-10,
                      increment_tol: float = 1e-3, consecutive: int = 8,
                      ratio_floor: float = 0.97,
                      max_refinements: int = 64) -> str:
    """Decide whether ``int_0^delta x / (1 - phi(x)) dx`` converges.

    A convergent integral means the two-point distance of the flow hits zero
    in finite time (coalescence); divergence means it never does.  The
    integral is accumulated over dyadic bands ``[delta 2^-(k+1), delta 2^-k]``.
    Divergence is declared when the running total exceeds ``cap`` or when
    ``consecutive`` successive band increments each exceed ``increment_tol``
    without geometric decay (band ratio at least ``ratio_floor``); for the
    kernels in scope divergent integrands behave like ``1/x``, whose band
    increments are constant.
    """
    if not (delta > 0.0):
        raise DomainError(f"delta must be positive, got {delta}")
    probes = delta * np.array([0.25, 0.5, 0.75, 1.0])
    if np.all(np.atleast_1d(one_minus_phi(spec, probes)) < 1e-18):
        raise DegenerateKernelError(
            "kernel is numerically identical to 1 on (0, delta]")

    partial = 0.0
    increments: list[float] = []
    hi = delta
    for _ in range(max_refinements):
        lo = hi * 0.5
        inc = _band_integral(spec, lo, hi)
        partial += inc
        increments.append(inc)
        hi = lo
        if partial > cap:
            return NON_COALESCING
        if len(increments) >= 3 and inc < conv_tol:
            return COALESCING
        if len(increments) >= consecutive:
            window = increments[-consecutive:]
            ratios = [b / a for a, b in zip(window, window[1:]) if a > 0.0]
            if (all(v > increment_tol for v in window)
                    and ratios and min(ratios) >= ratio_floor):
                return NON_COALESCING
    # Refinement budget exhausted: project the tail geometrically.
    tail_ratio = increments[-1] / increments[-2] if increments[-2] > 0 else 1.0
    return COALESCING if tail_ratio <= 0.995 else NON_COALESCING


def check_positive_definite(spec_or_kernel, points, tol: float | None = None) -> bool:
    """True iff the Gram matrix of the kernel on ``points`` is PSD up to ``tol``.

    Accepts a :class:`CovarianceSpec` or any callable mapping separation to
    covariance, so hand-built kernels can be screened the same way.
    """
    pts = np.asarray(points, dtype=float)
    if callable(spec_or_kernel):
        kern = spec_or_kernel
    else:
        kern = lambda d: eval_phi(spec_or_kernel, d)
    gram = np.asarray(kern(pts[:, None] - pts[None, :]), dtype=float)
    if tol is None:
        tol = 1e-8 * len(pts)
    return bool(np.linalg.eigvalsh(gram)[0] >= -tol)
