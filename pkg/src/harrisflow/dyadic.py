"""Dense space-time start families for inverse-flow computations.

The backward construction takes an infimum over *all* forward trajectories,
so a simulated stand-in needs a dense family of starts: dyadic space points
at spacing ``2^-level`` on ``[-M, M]``, injected in waves at dyadic times.
Everything is driven jointly (one noise realisation per replica), because the
infimum is pathwise with respect to the forward flow.

A :class:`DyadicBundle` stores, per snapshot time, the live class values
together with each class's terminal value at the horizon; that pair is all
the infimum formula consumes.  Full path matrices for tens of thousands of
trajectories are never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import EXACT, CovarianceSpec, DomainError
from .harris_flow import MERGE_C_DEFAULT, GridError
from .montecarlo import dyadic_grid, harris_waves, smooth_waves


@dataclass
class DyadicBundle:
    """Snapshot view of one jointly-driven dense-start realisation."""

    spec: CovarianceSpec
    T: float
    dt: float
    window_m: float
    level: int
    kind: str
    wave_times: np.ndarray
    snapshot_times: np.ndarray
    values: list[np.ndarray]      # live class values per snapshot
    terminals: list[np.ndarray]   # matching values at the horizon T

    def query_atoms(self, eval_time: float, terminal_time: float):
        """(values at ``eval_time``, values at ``terminal_time``) per atom."""
        if abs(terminal_time - self.T) > 1e-9:
            raise DomainError(
                f"bundle terminals are recorded at T={self.T}, "
                f"not {terminal_time}")
        hit = np.flatnonzero(np.abs(self.snapshot_times - eval_time) <= 1e-9)
        if len(hit) == 0:
            raise GridError(
                f"no snapshot at evaluation time {eval_time}; "
                f"available: {self.snapshot_times}")
        s = int(hit[0])
        return self.values[s], self.terminals[s]


def default_wave_times(T: float, level: int, max_start: float | None = None) -> np.ndarray:
    """Dyadic injection times ``l * 2^-level`` up to ``max_start`` (or T)."""
    stop = T if max_start is None else min(max_start, T)
    step = 2.0 ** (-level)
    n = int(np.floor(stop / step + 1e-9))
    return step * np.arange(n + 1)


def simulate_dyadic_bundle(spec: CovarianceSpec, T: float, dt: float,
                           window_m: float = 6.0, level: int = 6, *,
                           wave_times=None, max_start: float | None = None,
                           snapshot_times=None, seed: int = 0,
                           merge_c: float = MERGE_C_DEFAULT) -> DyadicBundle:
    """Simulate one dense-start realisation and keep snapshot views.

    ``max_start`` truncates the injection schedule to the window actually
    relevant for the intended queries (waves after the last evaluation time
    cannot enter any infimum); snapshots default to the wave times plus the
    horizon.  ``dt`` must divide the wave spacing, so dyadic steps pair
    naturally with dyadic levels.
    """
    if wave_times is None:
        wave_times = default_wave_times(T, level, max_start)
    wave_times = np.asarray(wave_times, dtype=float)
    if snapshot_times is None:
        snapshot_times = sorted(set(wave_times.tolist()) | {float(T)})
    grid = dyadic_grid(window_m, level)
    waves = [(float(t), grid) for t in wave_times]
    runner = harris_waves if spec.kind == EXACT else smooth_waves
    kwargs = dict(tracked=(), queries={}, snapshot_times=snapshot_times,
                  dump=True)
    if spec.kind == EXACT:
        kwargs["merge_c"] = merge_c
    run = runner(spec, waves, T, dt, 1, seed, **kwargs)
    dump_pos, dump_term, dump_n = run.dump
    values = [dump_pos[s, : dump_n[s]].copy() for s in range(len(run.snapshot_times))]
    terms = [dump_term[s, : dump_n[s]].copy() for s in range(len(run.snapshot_times))]
    return DyadicBundle(spec=spec, T=float(T), dt=float(dt),
                        window_m=float(window_m), level=int(level),
                        kind="harris" if spec.kind == EXACT else "smooth",
                        wave_times=wave_times,
                        snapshot_times=run.snapshot_times,
                        values=values, terminals=terms)
