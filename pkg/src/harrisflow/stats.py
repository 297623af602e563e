"""Statistical harness: two-sample tests, covariation and moment checks,
and the epsilon-sweep convergence study.

The sweep compares, for a descending list of smoothing widths, the smooth
flow against the coalescing reference through three groups of statistics:
forward marginals of tracked starts, backward values obtained through the
dense-start inverse construction, and pushforward measures of a window grid.
All three are summarised as W1 distances between the two ensembles; as the
smoothing vanishes the distances fall to the finite-sample self-distance
floor (there is no rate available, so the harness checks the monotone trend
rather than a limit value).

Everything here is deterministic given (config, root seed): replica seeds
come from a fixed spawn order and aggregation runs in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .covariance import CovarianceSpec, DomainError, build_exact, build_mollified, eval_phi
from .harris_flow import TrajectoryBundle
from .measure import EmpiricalMeasure, wasserstein1
from .montecarlo import dyadic_grid, harris_waves, smooth_waves


def _kolmogorov_sf(lam: float) -> float:
    # Asymptotic two-sided Kolmogorov survival function.
    if lam < 1.1e-16:
        return 1.0
    total = 0.0
    for k in range(1, 101):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-12 * max(abs(total), 1.0):
            break
    return min(max(total, 0.0), 1.0)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value.

    The statistic is the sup-difference of the empirical CDFs evaluated at
    all sample points; it depends on the data only through ranks.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise DomainError("both samples must be nonempty")
    everything = np.concatenate([a, b])
    cdf1 = np.searchsorted(a, everything, side="right") / n1
    cdf2 = np.searchsorted(b, everything, side="right") / n2
    stat = float(np.max(np.abs(cdf1 - cdf2)))
    en = math.sqrt(n1 * n2 / (n1 + n2))
    p = _kolmogorov_sf((en + 0.12 + 0.11 / en) * stat)
    return stat, p


def ks_one_sample_normal(sample, mean: float = 0.0, std: float = 1.0) -> tuple[float, float]:
    """KS test of a sample against a normal law."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    cdf = ndtr((x - mean) / std)
    d_plus = np.max(np.arange(1, n + 1) / n - cdf)
    d_minus = np.max(cdf - np.arange(0, n) / n)
    stat = float(max(d_plus, d_minus))
    rn = math.sqrt(n)
    return stat, _kolmogorov_sf((rn + 0.12 + 0.11 / rn) * stat)


def empirical_covariation(bundle: TrajectoryBundle, i: int, j: int) -> tuple[float, float]:
    """Realised vs predicted quadratic covariation of coordinates i, j.

    Realised sums the increment products over the common active range;
    predicted integrates the kernel along the pair's separation.
    """
    if bundle.spec is None:
        raise DomainError("bundle carries no kernel spec")
    k0 = max(bundle.activation_index(i), bundle.activation_index(j))
    pi = bundle.paths[i, k0:]
    pj = bundle.paths[j, k0:]
    realized = float(np.sum(np.diff(pi) * np.diff(pj)))
    phi = np.asarray(eval_phi(bundle.spec, pi[:-1] - pj[:-1]))
    predicted = float(np.sum(phi) * bundle.dt)
    return realized, predicted


@dataclass(frozen=True)
class MomentBoundResult:
    passed: bool
    mean_square: float
    bound: float
    stderr: float
    margin: float


def moment_bound_check(diffs_or_bundles, y1: float, y2: float,
                       i: int = 0, j: int = 1) -> MomentBoundResult:
    """Check ``E (X(y1) - X(y2))^2 <= (y1-y2)^2 + (8/pi)|y1-y2|`` empirically.

    Accepts terminal difference samples directly, or a list of two-point
    bundles from which the terminal difference of coordinates (i, j) is
    taken.  Valid for windows of length at most 1.
    """
    first = diffs_or_bundles[0] if len(diffs_or_bundles) else None
    if isinstance(first, TrajectoryBundle):
        diffs = np.array([b.paths[i, -1] - b.paths[j, -1]
                          for b in diffs_or_bundles])
    else:
        diffs = np.asarray(diffs_or_bundles, dtype=float)
    sq = diffs * diffs
    mean_sq = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / math.sqrt(len(sq))) if len(sq) > 1 else 0.0
    bound = (y1 - y2) ** 2 + (8.0 / math.pi) * abs(y1 - y2)
    margin = bound + 3.0 * se - mean_sq
    return MomentBoundResult(passed=margin >= 0.0, mean_square=mean_sq,
                             bound=bound, stderr=se, margin=margin)


def w1_samples(a, b) -> float:
    """Exact W1 between two equal-size empirical laws."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) != len(b):
        raise DomainError("w1_samples needs equally sized samples")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class SweepConfig:
    """Everything the epsilon sweep needs for a reproducible run."""

    epsilons: tuple[float, ...] = (0.8, 0.4, 0.2, 0.1)
    start_xs: tuple[float, ...] = (-0.5, 0.5)
    T: float = 1.0
    dt: float = 1e-3
    replicas: int = 2000
    root_seed: int = 2024
    alpha: float = 1.0
    beta: float = 1.0
    mollifier: str = "gaussian"
    window_m: float = 6.0
    level: int = 5
    marginal_times: tuple[float, ...] = (0.25, 0.5, 1.0)
    backward_times: tuple[float, ...] = (0.25, 0.5)
    merge_c: float = 0.05
    bootstrap: int = 64
    stub_exact: bool = False

    def validate(self) -> None:
        if len(self.epsilons) == 0 or any(not 0 < e < 1 for e in self.epsilons):
            raise DomainError("epsilons must be a nonempty tuple inside (0, 1)")
        if any(np.diff(self.epsilons) > 0):
            raise DomainError("epsilons must be listed in descending order")
        if not self.start_xs:
            raise DomainError("start_xs must be nonempty")
        if self.dt > self.T:
            raise DomainError("dt must not exceed T")


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    metric: str
    value: float
    stderr: float
    n_replicas: int
    seed: int


def _wave_runs(config: SweepConfig, spec: CovarianceSpec, seed: int, smooth: bool):
    grid = dyadic_grid(config.window_m, config.level)
    wave_times = sorted({0.0} | set(config.backward_times))
    waves = [(t, grid) for t in wave_times]
    tracked = [(x, 0.0) for x in config.start_xs]
    queries = {u: list(config.start_xs) for u in config.backward_times}
    snaps = sorted(set(config.marginal_times) | set(config.backward_times))
    runner = smooth_waves if smooth else harris_waves
    kwargs = {} if smooth else {"merge_c": config.merge_c}
    return runner(spec, waves, config.T, config.dt, config.replicas, seed,
                  tracked=tracked, queries=queries, measure_wave=0,
                  snapshot_times=snaps, **kwargs)


def _snap_row(run, t: float, dt: float) -> int:
    row = int(np.argmin(np.abs(run.snapshot_times - t)))
    if abs(run.snapshot_times[row] - t) > dt:
        raise DomainError(f"no snapshot near {t}")
    return row


def _measures(run, h: float, window: tuple[float, float]) -> list[EmpiricalMeasure]:
    out = []
    for row in run.measure_images:
        uniq, inv = np.unique(row, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inv, h)
        out.append(EmpiricalMeasure(uniq, w, window))
    return out


def convergence_sweep(config: SweepConfig) -> list[SweepRow]:
    """Distance table of smooth flows against the coalescing reference.

    Emits one row per (epsilon, metric) for metrics ``forward_w1``,
    ``backward_w1`` and ``measure_w1``; values are means over the metric's
    cells, standard errors come from a replica bootstrap (forward/backward)
    or the replica spread (measure).  ``stub_exact`` replaces every smooth
    run with an independent coalescing run, which turns each distance into a
    same-law baseline for calibration tests.
    """
    config.validate()
    seeds = np.random.SeedSequence(config.root_seed).generate_state(
        2 + len(config.epsilons)).astype(np.int64)
    boot_rng = np.random.Generator(np.random.PCG64(int(seeds[0])))
    exact = build_exact(config.alpha, config.beta)
    reference = _wave_runs(config, exact, int(seeds[1]), smooth=False)
    h = 2.0 ** (-config.level)
    window = (-config.window_m, config.window_m)
    ref_measures = _measures(reference, h, window)

    marg_rows = [_snap_row(reference, t, config.dt) for t in config.marginal_times]
    back_rows = [_snap_row(reference, t, config.dt) for t in config.backward_times]
    rows: list[SweepRow] = []
    for e_idx, eps in enumerate(config.epsilons):
        seed = int(seeds[2 + e_idx])
        if config.stub_exact:
            run = _wave_runs(config, exact, seed, smooth=False)
        else:
            spec = build_mollified(config.alpha, config.beta, eps,
                                   mollifier=config.mollifier)
            run = _wave_runs(config, spec, seed, smooth=True)
        if not (np.all(np.isfinite(run.inverse[:, back_rows, :]))
                and np.all(np.isfinite(reference.inverse[:, back_rows, :]))):
            raise DomainError("inverse window exhausted; enlarge window_m")

        fwd_cells = [(r, i) for r in marg_rows for i in range(len(config.start_xs))]
        bwd_cells = [(r, i) for r in back_rows for i in range(len(config.start_xs))]

        def cell_mean(a_run, b_run, cells, field, idx_a, idx_b):
            vals = [w1_samples(getattr(a_run, field)[idx_a, r, i],
                               getattr(b_run, field)[idx_b, r, i])
                    for (r, i) in cells]
            return float(np.mean(vals))

        r_all = np.arange(config.replicas)
        fwd = cell_mean(run, reference, fwd_cells, "tracked", r_all, r_all)
        bwd = cell_mean(run, reference, bwd_cells, "inverse", r_all, r_all)
        fwd_boot, bwd_boot = [], []
        for _ in range(config.bootstrap):
            ia = boot_rng.integers(0, config.replicas, config.replicas)
            ib = boot_rng.integers(0, config.replicas, config.replicas)
            fwd_boot.append(cell_mean(run, reference, fwd_cells, "tracked", ia, ib))
            bwd_boot.append(cell_mean(run, reference, bwd_cells, "inverse", ia, ib))

        eps_measures = _measures(run, h, window)
        mvals = np.array([wasserstein1(a, b)
                          for a, b in zip(eps_measures, ref_measures)])

        rows.append(SweepRow(eps, "forward_w1", fwd,
                             float(np.std(fwd_boot, ddof=1)), config.replicas, seed))
        rows.append(SweepRow(eps, "backward_w1", bwd,
                             float(np.std(bwd_boot, ddof=1)), config.replicas, seed))
        rows.append(SweepRow(eps, "measure_w1", float(np.mean(mvals)),
                             float(np.std(mvals, ddof=1) / math.sqrt(len(mvals))),
                             config.replicas, seed))
    return rows
