"""Coalescing n-point motions of the exact-kernel flow.

Each coordinate is a Brownian motion; the pairwise quadratic covariation
density is ``phi`` evaluated at the current separation, and coordinates stick
together forever once they meet.  Only distinct class representatives are
simulated: members of a merged class copy their representative exactly, which
keeps the Gram matrices nonsingular and the cost cubic in the number of
*classes* rather than coordinates.

The discrete merge rule combines a crossing detector with a proximity
threshold of ``merge_c * sqrt(dt)``: a discrete scheme overshoots the
continuum contact time by O(sqrt(dt)), and the threshold removes that bias
(validated against a finer-step reference in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .covariance import EXACT, CovarianceSpec, DomainError
from .gaussian_field import FieldSampler, sample_increment

MERGE_C_DEFAULT = 0.05

KIND_HARRIS = "harris"
KIND_SMOOTH = "smooth"


class GridError(ValueError):
    """Time grid and step are inconsistent."""


class InvariantViolation(AssertionError):
    """A stored bundle failed one of its structural invariants."""


def snap_below(time_grid: np.ndarray, t: float) -> int:
    """Index of the nearest grid point at or below ``t``."""
    idx = int(np.searchsorted(time_grid, t + 1e-12, side="right")) - 1
    return max(idx, 0)


def make_time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    if t1 == t0:
        return np.array([t0])
    if not (dt > 0.0) or dt > (t1 - t0) + 1e-15:
        raise GridError(f"dt={dt} incompatible with [{t0}, {t1}]")
    n = int(round((t1 - t0) / dt))
    if abs(t0 + n * dt - t1) > 1e-9:
        raise GridError(f"dt={dt} does not divide the window [{t0}, {t1}]")
    return t0 + dt * np.arange(n + 1)


@dataclass
class TrajectoryBundle:
    """n paths on a shared time grid with coalescence-class bookkeeping.

    ``paths[i, k]`` equals the start point for all grid times at or before
    the start time (the paths are embedded as constants before activation),
    ``class_id[i, k]`` is the smallest member index of i's class at grid
    index k.  Coalescence is absorbing and, for the coalescing kind, order
    between coordinates started together is preserved.
    """

    time_grid: np.ndarray
    start_x: np.ndarray
    start_t: np.ndarray
    paths: np.ndarray
    class_id: np.ndarray
    kind: str
    spec: CovarianceSpec | None = None
    order_inversions: int = 0

    @property
    def n(self) -> int:
        return len(self.start_x)

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    def activation_index(self, i: int) -> int:
        return snap_below(self.time_grid, self.start_t[i])

    def value_at(self, i: int, t: float) -> float:
        return float(self.paths[i, snap_below(self.time_grid, t)])

    def query_atoms(self, eval_time: float, terminal_time: float,
                    t_min: float = 0.0):
        """Per-trajectory (value at ``eval_time``, value at ``terminal_time``)
        over trajectories started inside ``[t_min, eval_time]``."""
        keep = (self.start_t <= eval_time + 1e-12) & (self.start_t >= t_min - 1e-12)
        ke = snap_below(self.time_grid, eval_time)
        kt = snap_below(self.time_grid, terminal_time)
        return self.paths[keep, ke], self.paths[keep, kt]

    def check_invariants(self) -> None:
        grid, paths, cls = self.time_grid, self.paths, self.class_id
        for i in range(self.n):
            k0 = self.activation_index(i)
            if not np.all(paths[i, : k0 + 1] == self.start_x[i]):
                raise InvariantViolation(f"path {i} not constant before start")
        merged = cls[:, :-1] == cls[:, 1:]
        for i in range(self.n):
            for j in range(i + 1, self.n):
                same = cls[i] == cls[j]
                if np.any(same):
                    first = int(np.argmax(same))
                    if not np.all(same[first:]):
                        raise InvariantViolation(
                            f"classes of {i},{j} split after merging")
                    if not np.all(paths[i, first:] == paths[j, first:]):
                        raise InvariantViolation(
                            f"merged paths {i},{j} differ after index {first}")
        if self.kind == KIND_HARRIS:
            for i in range(self.n):
                for j in range(i + 1, self.n):
                    if self.start_t[i] == self.start_t[j]:
                        k0 = max(self.activation_index(i), self.activation_index(j))
                        lo, hi = ((i, j) if self.start_x[i] <= self.start_x[j]
                                  else (j, i))
                        if np.any(paths[lo, k0:] > paths[hi, k0:] + 1e-12):
                            raise InvariantViolation(
                                f"order of {i},{j} not preserved")
        del merged

    def to_rows(self, direction: str = "forward"):
        """Yield (time, coord, value, class_id, direction) CSV rows."""
        for k, t in enumerate(self.time_grid):
            for i in range(self.n):
                yield (float(t), i, float(self.paths[i, k]),
                       int(self.class_id[i, k]), direction)


@dataclass(frozen=True)
class FlowMap:
    """Monotone forward map ``y -> X(y, s, t)`` evaluated on a start grid."""

    starts: np.ndarray
    images: np.ndarray
    s: float
    t: float

    def __post_init__(self) -> None:
        if np.any(np.diff(self.starts) < 0):
            raise DomainError("flow map starts must be sorted")
        if np.any(np.diff(self.images) < -1e-12):
            raise InvariantViolation("flow map images are not monotone")

    @property
    def spacing(self) -> float:
        return float(self.starts[1] - self.starts[0]) if len(self.starts) > 1 else 0.0

    def n_distinct(self, quantum: float = 0.0) -> int:
        if quantum <= 0.0:
            return len(np.unique(self.images))
        return len(np.unique(np.round(self.images / quantum)))


def coalesce_rule(pre: np.ndarray, post: np.ndarray, labels: np.ndarray,
                  threshold: float):
    """Merge class slots that crossed or ended within ``threshold``.

    ``pre`` and ``post`` are sorted pre-step / raw post-step representative
    positions; ``labels`` maps coordinates to slots.  Crossing pairs merge at
    the linearly interpolated meeting point; proximity pairs merge at the
    midpoint.  Returns the merged (sorted) positions and remapped labels.
    """
    k = len(pre)
    new_pre: list[float] = []
    new_post: list[float] = []
    groups: list[list[int]] = []
    for i in range(k):
        cur_pre, cur_post, members = float(pre[i]), float(post[i]), [i]
        while new_post and cur_post - new_post[-1] <= threshold:
            top_pre, top_post = new_pre.pop(), new_post.pop()
            members = groups.pop() + members
            d0 = cur_pre - top_pre
            d1 = cur_post - top_post
            if d1 < 0.0 and d0 > 0.0:
                theta = d0 / (d0 - d1)
                merged = top_pre + theta * (top_post - top_pre)
            else:
                merged = 0.5 * (top_post + cur_post)
            cur_pre, cur_post = merged, merged
        new_pre.append(cur_pre)
        new_post.append(cur_post)
        groups.append(members)
    remap = np.empty(k, dtype=np.int64)
    for slot, members in enumerate(groups):
        for m in members:
            remap[m] = slot
    out_labels = labels.copy()
    active = labels >= 0
    out_labels[active] = remap[labels[active]]
    return np.asarray(new_post), out_labels


def _check_starts_sorted(start_x: np.ndarray, start_t: np.ndarray) -> None:
    order = np.lexsort((start_x, start_t))
    if not np.all(order == np.arange(len(start_x))):
        raise DomainError("starts must be sorted by (t, x)")


def evolve_harris(spec: CovarianceSpec, starts, T: float, dt: float,
                  rng: np.random.Generator, *, merge_c: float = MERGE_C_DEFAULT,
                  validate: bool = True) -> TrajectoryBundle:
    """Euler scheme for the coalescing n-point motion on [0, T].

    ``starts`` is a sequence of (x, t) pairs sorted by (t, x); start times are
    snapped to the grid point below.  At every step the Gram matrix of the
    *distinct class representatives* drives one correlated increment, then the
    merge rule collapses crossing or touching classes.
    """
    if spec.kind != EXACT:
        raise DomainError("evolve_harris requires an exact kernel")
    start_x = np.asarray([s[0] for s in starts], dtype=float)
    start_t = np.asarray([s[1] for s in starts], dtype=float)
    _check_starts_sorted(start_x, start_t)
    bundle = _evolve(spec, start_x, start_t, T, dt, rng,
                     merge=True, threshold_c=merge_c, kind=KIND_HARRIS)
    if validate:
        bundle.check_invariants()
    return bundle


def _evolve(spec: CovarianceSpec, start_x: np.ndarray, start_t: np.ndarray,
            T: float, dt: float, rng: np.random.Generator, *,
            merge: bool, threshold_c: float, kind: str,
            t0: float = 0.0) -> TrajectoryBundle:
    grid = make_time_grid(t0, T, dt)
    n, steps = len(start_x), len(grid) - 1
    if np.any(start_t > T + 1e-12) or np.any(start_t < t0 - 1e-12):
        raise DomainError("start times must lie inside the simulated window")
    paths = np.repeat(start_x[:, None], steps + 1, axis=1)
    class_id = np.repeat(np.arange(n, dtype=np.int32)[:, None], steps + 1, axis=1)
    activation = np.array([snap_below(grid, t) for t in start_t])

    sampler = FieldSampler(spec)
    threshold = threshold_c * np.sqrt(dt)
    labels = np.full(n, -1, dtype=np.int64)
    slot_pos = np.empty(0)
    slot_min = np.empty(0, dtype=np.int64)
    inversions = 0

    for k in range(steps + 1):
        arriving = np.flatnonzero(activation == k)
        for i in arriving:
            at = int(np.searchsorted(slot_pos, start_x[i]))
            slot_pos = np.insert(slot_pos, at, start_x[i])
            slot_min = np.insert(slot_min, at, i)
            labels[labels >= at] += 1
            labels[i] = at
        if k == steps:
            break
        if len(slot_pos) == 0:
            continue
        inc = sample_increment(sampler, slot_pos, dt, rng)
        post = slot_pos + inc
        if merge:
            slot_pos, labels = coalesce_rule(slot_pos, post, labels, threshold)
            mins = np.full(len(slot_pos), n, dtype=np.int64)
            active = labels >= 0
            np.minimum.at(mins, labels[active], np.flatnonzero(active))
            slot_min = mins
        else:
            inversions += int(np.sum(np.diff(post) < 0))
            slot_pos = post
        active = labels >= 0
        paths[active, k + 1] = slot_pos[labels[active]]
        class_id[active, k + 1] = slot_min[labels[active]]

    return TrajectoryBundle(time_grid=grid, start_x=start_x, start_t=start_t,
                            paths=paths, class_id=class_id, kind=kind,
                            spec=spec, order_inversions=inversions)


def flow_map(spec: CovarianceSpec, grid_starts, s: float, t: float, dt: float,
             rng: np.random.Generator, *, merge_c: float = MERGE_C_DEFAULT,
             method: str = "auto") -> FlowMap:
    """Forward map of a whole start grid from time ``s`` to ``t``.

    The grid evolves jointly as one coalescing bundle so the returned array
    of (start, image) pairs is monotone by construction.  ``method='ou'``
    selects the O(k)-per-step sampler that is exact for the alpha=1 kernel;
    'auto' picks it whenever it applies.
    """
    starts = np.asarray(grid_starts, dtype=float)
    if np.any(np.diff(starts) < 0):
        raise DomainError("start grid must be sorted")
    if t < s:
        raise DomainError("flow map needs s <= t")
    if t == s:
        return FlowMap(starts=starts, images=starts.copy(), s=s, t=t)
    if method == "auto":
        method = ("ou" if spec.kind == EXACT and spec.alpha == 1.0 else "dense")
    if method == "ou":
        from .montecarlo import harris_flow_map_terminal

        images = harris_flow_map_terminal(spec, starts, t - s, dt,
                                          rng, merge_c=merge_c)
        return FlowMap(starts=starts, images=images, s=s, t=t)
    start_t = np.full(len(starts), s)
    bundle = _evolve(spec, starts, start_t, t, dt, rng, merge=True,
                     threshold_c=merge_c, kind=KIND_HARRIS, t0=s)
    return FlowMap(starts=starts, images=bundle.paths[:, -1].copy(), s=s, t=t)
