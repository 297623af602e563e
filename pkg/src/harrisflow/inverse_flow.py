"""Backward (inverse) flow built from a family of forward trajectories.

The inverse value at query time is the infimum, over forward trajectories
started early enough whose terminal value clears the queried threshold, of
their value at the reflected time ``t1 + t2 - s``.  For homeomorphic flows
this recovers the functional inverse; for coalescing flows it is the
definition of the backward flow.  Works against anything exposing
``query_atoms(eval_time, terminal_time)``: full trajectory bundles or the
snapshot-based dense-start bundles.

Truncation is loud: if no simulated trajectory clears the threshold the
spatial window or dyadic level was too small, and a dedicated error is
raised instead of returning a silently wrong infimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import DomainError


class WindowExhaustedError(RuntimeError):
    """No trajectory in the bundle qualifies for the queried infimum."""


@dataclass(frozen=True)
class InverseQuery:
    """Backward query: value at time ``t1 + t2 - s`` of the lineage of ``x``.

    ``s`` runs over ``[t1, t2]``; ``s == t1`` evaluates at the horizon (the
    anchor end), ``s == t2`` gives the full functional inverse of the
    ``t1 -> t2`` map.
    """

    x: float
    t1: float
    t2: float
    s: float

    def __post_init__(self) -> None:
        if not (self.t1 <= self.s <= self.t2):
            raise DomainError(f"need t1 <= s <= t2, got {self}")

    @property
    def eval_time(self) -> float:
        return self.t1 + self.t2 - self.s


def embed(times, values, a: float):
    """Extend a grid path on ``[a1, b]`` to ``[a, b]``, constant before ``a1``.

    Under piecewise-linear reading of the grid path the output is continuous
    and equals the original left endpoint value on ``[a, a1]``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if a > times[0]:
        raise DomainError(f"embedding start {a} is above path start {times[0]}")
    if a == times[0]:
        return times.copy(), values.copy()
    return (np.concatenate([[a], times]),
            np.concatenate([[values[0]], values]))


def invert(bundle, query: InverseQuery) -> float:
    """Evaluate the inverse flow at one query point.

    Returns ``inf { value_at(t1+t2-s) : value_at(t2) >= x }`` over the
    bundle's trajectories started by ``t1 + t2 - s``.
    """
    values, terminals = bundle.query_atoms(query.eval_time, query.t2)
    ok = terminals >= query.x
    if not np.any(ok):
        raise WindowExhaustedError(
            f"no trajectory reaches {query.x} at t2={query.t2}; "
            "enlarge the window M or the dyadic level L")
    return float(np.min(values[ok]))


def backward_path(bundle, x: float, t1: float, T: float, *,
                  sweep_times=None):
    """The embedded backward path ``u -> inverse at s = T + t1 - u``.

    Sweeps the query over a grid of ``[t1, T]`` (by default the bundle's
    snapshot times in that range), reparametrises to forward time ``u`` and
    embeds the result as a constant on ``[0, t1]``.  Returns (times, values)
    arrays; the path is anchored near ``x`` at ``u == T``.
    """
    if sweep_times is None:
        if hasattr(bundle, "snapshot_times"):
            grid = np.asarray(bundle.snapshot_times, dtype=float)
        else:
            grid = np.asarray(bundle.time_grid, dtype=float)
        sweep_times = grid[(grid >= t1 - 1e-12) & (grid <= T + 1e-12)]
    u_grid = np.asarray(sorted(sweep_times), dtype=float)
    vals = np.array([invert(bundle, InverseQuery(x=x, t1=t1, t2=T,
                                                 s=T + t1 - u))
                     for u in u_grid])
    if t1 > 0.0:
        return embed(u_grid, vals, 0.0)
    return u_grid, vals
