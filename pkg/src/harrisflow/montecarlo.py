"""Replica ensembles, reproducible seed streams, and kernel wrappers.

Seed discipline: every entry point takes a root seed; replica seeds are
derived with ``numpy.random.SeedSequence(root).generate_state`` (the spawn
tree for Generator-based code), so runs are bit-for-bit reproducible and
independent of the numba thread count — each replica seeds the thread-local
RNG itself at the start of its iteration.

Fast paths and their scope:

* coalescing runs require the exact kernel with ``alpha == 1`` (the AR(1)
  spatial-Markov factorisation is exact there); other parameters go through
  the generic ``harris_flow`` stepper.
* smooth runs with many particles use the grid-convolution field whose
  covariance matches the mollified kernel up to a documented relative
  tolerance of about 2e-3 (Riemann discretisation of the convolution square
  root); the few-particle path uses an in-kernel Cholesky of the exact
  tabulated kernel instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .covariance import (COMPACT_BUMP, EXACT, GAUSSIAN, MOLLIFIED,
                         CovarianceSpec, DomainError, _ensure_table, eval_phi)
from .harris_flow import MERGE_C_DEFAULT, GridError

SUB_OFFSETS = 64


class CapacityError(RuntimeError):
    """A replica exceeded its particle capacity (internal sizing bug)."""


def spawn_streams(root_seed: int, n: int) -> list[np.random.Generator]:
    """n independent generators derived from one root seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(root_seed).spawn(n)]


def spawn_seeds(root_seed: int, n: int) -> np.ndarray:
    """Per-replica integer seeds for the numba kernels (int64, < 2^31)."""
    state = np.random.SeedSequence(root_seed).generate_state(n, dtype=np.uint32)
    return (state & 0x7FFFFFFF).astype(np.int64)


def dyadic_grid(window_m: float, level: int) -> np.ndarray:
    """Start grid at spacing 2^-level covering [-M, M]."""
    n = int(round(2.0 * window_m * 2 ** level))
    return np.linspace(-window_m, window_m, n + 1)


def _step_of(t: float, dt: float, what: str, snap: bool = False) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) <= 1e-9:
        return k
    if snap:
        # wave and snapshot times snap to the grid point below
        return int(math.floor(t / dt + 1e-9))
    raise GridError(f"{what} {t} is not on the dt={dt} grid")


def _require_ou(spec: CovarianceSpec) -> None:
    if spec.kind != EXACT or spec.alpha != 1.0:
        raise DomainError(
            "this fast path needs the exact kernel with alpha == 1; "
            "use the generic harris_flow stepper otherwise")


@dataclass
class WaveRun:
    """Outputs of a wave-structured ensemble run."""

    snapshot_times: np.ndarray          # (S,)
    inverse: np.ndarray                 # (R, S, Q), +inf = window exhausted
    tracked: np.ndarray                 # (R, S, n_track)
    measure_images: np.ndarray | None   # (R, n_measure_atoms)
    class_counts: np.ndarray | None     # (R, S) live classes, coalescing only
    dump: tuple | None = None           # (values (S,cap), terminals, counts) if R == 1


def _build_waves(waves, tracked, dt):
    entries = [(float(t), np.asarray(xs, dtype=float), w)
               for w, (t, xs) in enumerate(waves)]
    for x, t in tracked:
        entries.append((float(t), np.asarray([x], dtype=float), -1))
    entries.sort(key=lambda e: e[0])
    inj_step, flat, off, tags = [], [], [0], []
    track_ids = []
    for t, xs, tag in entries:
        if np.any(np.diff(xs) < 0):
            raise DomainError("wave positions must be sorted")
        inj_step.append(_step_of(t, dt, "wave time", snap=True))
        if tag == -1:
            track_ids.append(off[-1])
        flat.append(xs)
        off.append(off[-1] + len(xs))
        tags.append(tag)
    return (np.asarray(inj_step, dtype=np.int64),
            np.concatenate(flat) if flat else np.empty(0),
            np.asarray(off, dtype=np.int64),
            tags,
            np.asarray(track_ids, dtype=np.int64))


def _snapshot_matrix(snapshot_times, queries, dt):
    steps = sorted({_step_of(t, dt, "snapshot time", snap=True)
                    for t in snapshot_times})
    snap_step = np.asarray(steps, dtype=np.int64)
    snap_times = snap_step * dt
    n_q = max((len(v) for v in queries.values()), default=0)
    inv_x = np.full((len(snap_times), max(n_q, 1)), np.nan)
    for t, xs in queries.items():
        k = _step_of(t, dt, "query time", snap=True)
        row = int(np.searchsorted(snap_step, k))
        if row == len(snap_step) or snap_step[row] != k:
            raise GridError(f"query time {t} has no snapshot")
        inv_x[row, : len(xs)] = xs
    return snap_times, snap_step, inv_x


def harris_waves(spec: CovarianceSpec, waves, T: float, dt: float,
                 replicas: int, root_seed: int, *,
                 tracked=(), queries=None, measure_wave: int | None = None,
                 snapshot_times=(), merge_c: float = MERGE_C_DEFAULT,
                 dump: bool = False) -> WaveRun:
    """Coalescing ensemble over an injection schedule of start waves.

    ``waves`` is a list of (time, sorted positions); ``tracked`` is a list of
    (x, t) singleton starts whose class positions are reported at every
    snapshot; ``queries`` maps a snapshot time to backward-query thresholds
    evaluated in-kernel (values at that time of trajectories whose terminal
    value at T clears the threshold, minimised).
    """
    _require_ou(spec)
    queries = dict(queries or {})
    n_steps = _step_of(T, dt, "horizon")
    inj_step, inj_flat, inj_off, tags, track_ids = _build_waves(waves, tracked, dt)
    all_times = set(snapshot_times) | set(queries)
    snap_times, snap_step, inv_x = _snapshot_matrix(all_times, queries, dt)
    cap = int(inj_off[-1]) + 1
    R, S, Q = replicas, len(snap_times), inv_x.shape[1]

    seeds = spawn_seeds(root_seed, R)
    inv_out = np.full((R, S, Q), np.nan)
    track_out = np.full((R, S, len(track_ids)), np.nan)
    mw = -1 if measure_wave is None else tags.index(measure_wave)
    n_meas = int(inj_off[mw + 1] - inj_off[mw]) if mw >= 0 else 1
    meas_out = np.full((R, n_meas), np.nan)
    counts = np.zeros((R, S), dtype=np.int64)
    err = np.zeros(R, dtype=np.int64)
    dcap = cap if dump else 1
    dump_pos = np.full((R if dump else 1, S, dcap), np.nan)
    dump_term = np.full((R if dump else 1, S, dcap), np.nan)
    dump_n = np.zeros((R if dump else 1, S), dtype=np.int64)

    _kernels.harris_dyadic_ensemble(
        seeds, inj_step, inj_flat, inj_off, n_steps, float(dt),
        float(spec.beta), merge_c * math.sqrt(dt), snap_step, inv_x,
        track_ids, mw, cap, inv_out, track_out, meas_out, counts, err,
        1 if dump else 0, dump_pos, dump_term, dump_n)
    if np.any(err != 0):
        raise CapacityError(f"{int(np.sum(err != 0))} replicas overflowed")
    return WaveRun(snapshot_times=snap_times, inverse=inv_out,
                   tracked=track_out,
                   measure_images=meas_out if mw >= 0 else None,
                   class_counts=counts,
                   dump=(dump_pos[0], dump_term[0], dump_n[0]) if dump else None)


def gc_sampler_params(spec: CovarianceSpec):
    """Auxiliary-grid step, tap half-width, and tap table for the smooth field.

    The field is ``sqrt(c_eps) * (q conv base)`` sampled on a uniform grid:
    ``q`` is the convolution square root of the scaled mollifier (Gaussian of
    std eps/sqrt(2), or the triangle kernel for the compact bump).  Tap rows
    are indexed by the particle's quantised sub-grid offset.
    """
    if spec.kind != MOLLIFIED:
        raise DomainError("grid-convolution sampling needs a mollified kernel")
    if spec.alpha != 1.0:
        raise DomainError("grid-convolution sampling needs alpha == 1 "
                          "(spatially Markov base field)")
    eps = spec.epsilon
    table = _ensure_table(spec)
    if spec.mollifier == GAUSSIAN:
        du = eps / 10.0
        sigma_q = eps / math.sqrt(2.0)
        half = int(math.ceil(4.0 * sigma_q / du))
        q = lambda y: np.exp(-0.5 * (y / sigma_q) ** 2) / (sigma_q * math.sqrt(2 * math.pi))
    elif spec.mollifier == COMPACT_BUMP:
        du = eps / 16.0
        half = 16
        q = lambda y: np.maximum(0.0, 1.0 - np.abs(y) / eps) / eps
    else:  # pragma: no cover
        raise DomainError(f"unsupported mollifier {spec.mollifier!r}")
    m = np.arange(2 * half + 1)
    sub = np.arange(SUB_OFFSETS) / SUB_OFFSETS
    offsets = (sub[:, None] + half - m[None, :]) * du
    taps = q(offsets) * du * math.sqrt(table.normalization)
    return du, half, taps


def gc_effective_covariance(spec: CovarianceSpec, separations) -> np.ndarray:
    """Exact covariance realised by the grid-convolution sampler.

    Used by the tests to pin the fast path's documented tolerance against
    ``eval_phi``; the difference is the Riemann error of the tap sums.
    """
    du, half, taps = gc_sampler_params(spec)
    out = []
    for d in np.atleast_1d(np.asarray(separations, dtype=float)):
        c = d / du
        cell = int(c)
        subf = (c - cell) * SUB_OFFSETS
        sub = int(subf + 0.5)
        if sub >= SUB_OFFSETS:
            cell += 1
            sub = 0
        m = np.arange(2 * half + 1)
        lag = cell + m[None, :] - m[:, None]
        base_cov = np.exp(-spec.beta * np.abs(lag) * du)
        out.append(float(taps[0] @ base_cov @ taps[sub]))
    return np.asarray(out)


def smooth_waves(spec: CovarianceSpec, waves, T: float, dt: float,
                 replicas: int, root_seed: int, *,
                 tracked=(), queries=None, measure_wave: int | None = None,
                 snapshot_times=(), dump: bool = False) -> WaveRun:
    """Homeomorphic-flow ensemble over an injection schedule (no merging)."""
    queries = dict(queries or {})
    n_steps = _step_of(T, dt, "horizon")
    inj_step, inj_flat, inj_off, tags, track_ids = _build_waves(waves, tracked, dt)
    all_times = set(snapshot_times) | set(queries)
    snap_times, snap_step, inv_x = _snapshot_matrix(all_times, queries, dt)
    du, half, taps = gc_sampler_params(spec)
    margin = 5.0 * math.sqrt(T) + (half + 2) * du + 0.5
    lo = float(inj_flat.min()) - margin if len(inj_flat) else -margin
    hi = float(inj_flat.max()) + margin if len(inj_flat) else margin
    n_grid = int(math.ceil((hi - lo) / du)) + 2 * half + 3
    rho = math.exp(-spec.beta * du)
    R, S, Q = replicas, len(snap_times), inv_x.shape[1]

    seeds = spawn_seeds(root_seed, R)
    inv_out = np.full((R, S, Q), np.nan)
    track_out = np.full((R, S, len(track_ids)), np.nan)
    mw = -1 if measure_wave is None else tags.index(measure_wave)
    n_meas = int(inj_off[mw + 1] - inj_off[mw]) if mw >= 0 else 1
    meas_out = np.full((R, n_meas), np.nan)
    err = np.zeros(R, dtype=np.int64)
    total = int(inj_off[-1])
    dcap = total if dump else 1
    dump_pos = np.full((R if dump else 1, S, dcap), np.nan)
    dump_term = np.full((R if dump else 1, S, dcap), np.nan)
    dump_n = np.zeros((R if dump else 1, S), dtype=np.int64)

    _kernels.smooth_dyadic_ensemble(
        seeds, inj_step, inj_flat, inj_off, n_steps, float(dt),
        lo, du, n_grid, rho, taps, half, snap_step, inv_x,
        track_ids, mw, inv_out, track_out, meas_out, err,
        1 if dump else 0, dump_pos, dump_term, dump_n)
    return WaveRun(snapshot_times=snap_times, inverse=inv_out,
                   tracked=track_out,
                   measure_images=meas_out if mw >= 0 else None,
                   class_counts=None,
                   dump=(dump_pos[0], dump_term[0], dump_n[0]) if dump else None)


def harris_smalln(spec: CovarianceSpec, x0, T: float, dt: float,
                  replicas: int, root_seed: int, *,
                  marginal_times=(), cov_pair: tuple[int, int] | None = None,
                  merge_c: float = MERGE_C_DEFAULT) -> dict:
    """Few-point coalescing ensemble, all coordinates started at time 0.

    Returns marginal positions at the requested times (terminal time is
    always appended), realized/predicted covariation sums for ``cov_pair``,
    and the final class count per replica.
    """
    _require_ou(spec)
    x0 = np.asarray(x0, dtype=float)
    if np.any(np.diff(x0) < 0):
        raise DomainError("x0 must be sorted")
    n_steps = _step_of(T, dt, "horizon")
    times = sorted(set(float(t) for t in marginal_times) | {float(T)})
    marg_steps = np.asarray([_step_of(t, dt, "marginal time") for t in times],
                            dtype=np.int64)
    R = replicas
    seeds = spawn_seeds(root_seed, R)
    marg_out = np.full((R, len(times), len(x0)), np.nan)
    cov_out = np.zeros((R, 2))
    n_class = np.zeros(R, dtype=np.int64)
    ci, cj = cov_pair if cov_pair is not None else (-1, -1)
    _kernels.harris_smalln_ensemble(
        seeds, x0, n_steps, float(dt), float(spec.beta),
        merge_c * math.sqrt(dt), marg_steps, ci, cj,
        marg_out, cov_out, n_class)
    return {"times": np.asarray(times), "marginals": marg_out,
            "realized": cov_out[:, 0], "predicted": cov_out[:, 1],
            "n_classes": n_class}


def _phi_lookup_table(spec: CovarianceSpec) -> tuple[np.ndarray, float]:
    if spec.kind == MOLLIFIED:
        table = _ensure_table(spec)
        dx = spec.epsilon / 256.0
        xs = np.arange(0.0, table.x_max + dx, dx)
    else:
        dx = 1e-3
        xs = np.arange(0.0, (37.0 / spec.beta) ** (1.0 / spec.alpha) + dx, dx)
    return np.asarray(eval_phi(spec, xs), dtype=float), dx


def smooth_smalln(spec: CovarianceSpec, x0, T: float, dt: float,
                  replicas: int, root_seed: int, *,
                  marginal_times=(), cov_pair: tuple[int, int] | None = None,
                  occupation_gap: float = 0.0) -> dict:
    """Few-point smooth ensemble (exact tabulated kernel, per-step Cholesky).

    Also reports, per replica, the number of steps the ``cov_pair`` gap spent
    at or below ``occupation_gap`` and the number of steps observed in
    inverted order (diagnostics for the homeomorphy refinement checks).
    """
    if spec.kind != MOLLIFIED:
        raise DomainError("smooth_smalln needs a mollified kernel")
    x0 = np.asarray(x0, dtype=float)
    if np.any(np.diff(x0) < 0):
        raise DomainError("x0 must be sorted")
    n_steps = _step_of(T, dt, "horizon")
    times = sorted(set(float(t) for t in marginal_times) | {float(T)})
    marg_steps = np.asarray([_step_of(t, dt, "marginal time") for t in times],
                            dtype=np.int64)
    phi_tab, dx_tab = _phi_lookup_table(spec)
    R = replicas
    seeds = spawn_seeds(root_seed, R)
    marg_out = np.full((R, len(times), len(x0)), np.nan)
    cov_out = np.zeros((R, 2))
    diag_out = np.zeros((R, 2), dtype=np.int64)
    ci, cj = cov_pair if cov_pair is not None else (-1, -1)
    _kernels.smooth_smalln_ensemble(
        seeds, x0, n_steps, float(dt), phi_tab, dx_tab, marg_steps,
        ci, cj, float(occupation_gap), marg_out, cov_out, diag_out)
    return {"times": np.asarray(times), "marginals": marg_out,
            "realized": cov_out[:, 0], "predicted": cov_out[:, 1],
            "occupation_steps": diag_out[:, 0], "inverted_steps": diag_out[:, 1]}


def harris_flow_map_terminal(spec: CovarianceSpec, starts: np.ndarray,
                             duration: float, dt: float,
                             rng: np.random.Generator, *,
                             merge_c: float = MERGE_C_DEFAULT) -> np.ndarray:
    """Terminal images of a start grid under one coalescing realisation."""
    _require_ou(spec)
    seed = int(rng.integers(0, 2 ** 31))
    run = harris_waves(spec, [(0.0, np.asarray(starts, dtype=float))],
                       duration, dt, 1, seed, measure_wave=0,
                       merge_c=merge_c)
    return run.measure_images[0].copy()
