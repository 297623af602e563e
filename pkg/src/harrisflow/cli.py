"""Batch experiment runner.

Subcommands read one config file, write CSV artifacts plus a JSON run
manifest (config hash, seed, package versions) into the output directory,
and exit with 0 on success, 1 on config validation errors, 2 on numerical
failures, and 3 on statistical acceptance failures so CI can gate on the
code.  Reruns with the same config and seed produce byte-identical CSV
bodies; the manifest carries the volatile metadata instead.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .covariance import (CovarianceError, build_exact, build_mollified,
                         eval_phi)
from .dyadic import simulate_dyadic_bundle
from .gaussian_field import FactorizationError
from .harris_flow import GridError, evolve_harris, flow_map
from .inverse_flow import WindowExhaustedError
from .measure import pushforward
from .montecarlo import CapacityError, dyadic_grid, harris_smalln, harris_waves, spawn_streams
from .smooth_flow import evolve_smooth
from .stats import SweepConfig, convergence_sweep, ks_two_sample

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_STATISTICAL = 3

NUMERICAL_ERRORS = (CovarianceError, FactorizationError, GridError,
                    CapacityError, WindowExhaustedError, np.linalg.LinAlgError)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _manifest(outdir: Path, subcommand: str, config: ExperimentConfig,
              outputs: list[str], status: str, detail: str = "") -> None:
    payload = {
        "subcommand": subcommand,
        "config_sha256": config.sha256(),
        "config": config.to_text(),
        "root_seed": config.root_seed,
        "harrisflow_version": __version__,
        "numpy_version": np.__version__,
        "outputs": outputs,
        "status": status,
        "detail": detail,
    }
    with open(outdir / f"manifest_{subcommand.replace('-', '_')}.json", "w",
              encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def cmd_kernel_dump(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    exact = build_exact(config.alpha, config.beta)
    specs = [build_mollified(config.alpha, config.beta, e, config.mollifier,
                             config.quadrature_points)
             for e in config.epsilons]
    half = int(round(config.window_m / config.dump_spacing))
    xs = config.dump_spacing * np.arange(-half, half + 1)
    header = ["x", "phi"] + [f"phi_eps_{e}" for e in config.epsilons]
    cols = [np.asarray(eval_phi(exact, xs))] + \
        [np.asarray(eval_phi(s, xs)) for s in specs]
    rows = [[x] + [c[i] for c in cols] for i, x in enumerate(xs)]
    _write_csv(outdir / "kernel.csv", header, rows)
    return EXIT_OK, ["kernel.csv"]


def cmd_simulate(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    streams = spawn_streams(config.root_seed, 1 + len(config.epsilons))
    outputs = []
    exact = build_exact(config.alpha, config.beta)
    bundle = evolve_harris(exact, config.starts, config.t_final, config.dt,
                           streams[0], merge_c=config.merge_c)
    _write_csv(outdir / "bundle_harris.csv",
               ["time", "coord", "value", "class_id", "direction"],
               bundle.to_rows())
    outputs.append("bundle_harris.csv")
    for k, eps in enumerate(config.epsilons):
        spec = build_mollified(config.alpha, config.beta, eps,
                               config.mollifier, config.quadrature_points)
        smooth = evolve_smooth(spec, config.starts, config.t_final, config.dt,
                               streams[1 + k])
        name = f"bundle_smooth_eps{eps}.csv"
        _write_csv(outdir / name,
                   ["time", "coord", "value", "class_id", "direction"],
                   smooth.to_rows())
        outputs.append(name)
    return EXIT_OK, outputs


def cmd_flowmap(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    exact = build_exact(config.alpha, config.beta)
    grid = dyadic_grid(config.window_m, config.dyadic_level)
    rng = spawn_streams(config.root_seed, 1)[0]
    fmap = flow_map(exact, grid, 0.0, config.t_final, config.dt, rng,
                    merge_c=config.merge_c)
    _write_csv(outdir / "flowmap.csv", ["start", "image"],
               zip(fmap.starts, fmap.images))
    return EXIT_OK, ["flowmap.csv"]


def cmd_invert_check(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    """Distributional identity of backward values against forward runs.

    For each checkpoint s in (0, T) and each configured start point x, the
    backward value with evaluation time s (lineage of x over a window of
    length T - s) must match forward samples X(x, s, T) in law.
    """
    exact = build_exact(config.alpha, config.beta)
    svals = [s for s in config.checkpoints if 0.0 < s < config.t_final]
    xs = sorted({x for x, _ in config.starts})
    grid = dyadic_grid(config.window_m, config.dyadic_level)
    seeds = np.random.SeedSequence(config.root_seed).generate_state(
        1 + len(svals)).astype(np.int64)
    wave_times = sorted({0.0} | set(svals))
    run = harris_waves(exact, [(t, grid) for t in wave_times],
                       config.t_final, config.dt, config.replicas,
                       int(seeds[0]), queries={s: xs for s in svals},
                       merge_c=config.merge_c)
    rows = []
    worst_fail = False
    threshold = 0.01 / (len(svals) * len(xs))
    for si, s in enumerate(svals):
        row = int(np.argmin(np.abs(run.snapshot_times - s)))
        s_eff = float(run.snapshot_times[row])
        fwd = harris_smalln(exact, np.asarray(xs), config.t_final - s_eff,
                            config.dt, config.replicas, int(seeds[1 + si]),
                            merge_c=config.merge_c)
        for xi, x in enumerate(xs):
            backward = run.inverse[:, row, xi]
            forward = fwd["marginals"][:, -1, xi]
            stat, p = ks_two_sample(backward, forward)
            ok = p > threshold
            worst_fail |= not ok
            rows.append([x, s, stat, p, threshold, int(ok)])
    _write_csv(outdir / "invert_check.csv",
               ["x", "s", "ks_stat", "p", "p_threshold", "pass"], rows)
    return (EXIT_STATISTICAL if worst_fail else EXIT_OK), ["invert_check.csv"]


def cmd_measure_check(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    exact = build_exact(config.alpha, config.beta)
    grid = dyadic_grid(config.window_m, config.dyadic_level)
    rngs = spawn_streams(config.root_seed, config.replicas)
    s_val = config.mass_s
    masses = np.empty(config.replicas)
    totals = np.empty(config.replicas)
    for r, rng in enumerate(rngs):
        fmap = flow_map(exact, grid, 0.0, config.t_final, config.dt, rng,
                        merge_c=config.merge_c)
        mu = pushforward(fmap)
        masses[r] = mu.mass(-s_val, s_val)
        totals[r] = mu.total_weight
    bound = 2.0 * s_val + 2.0 * config.t_final
    se = float(np.std(masses, ddof=1) / np.sqrt(len(masses)))
    mean = float(np.mean(masses))
    ok_mass = mean <= bound + 3.0 * se
    expected_total = len(grid) * (grid[1] - grid[0])
    ok_total = bool(np.allclose(totals, expected_total, rtol=0, atol=1e-9))
    rows = [["mean_mass", mean, bound, se, int(ok_mass)],
            ["total_weight", float(np.mean(totals)), expected_total, 0.0,
             int(ok_total)]]
    _write_csv(outdir / "measure_check.csv",
               ["metric", "value", "bound", "stderr", "pass"], rows)
    code = EXIT_OK if (ok_mass and ok_total) else EXIT_STATISTICAL
    return code, ["measure_check.csv"]


def cmd_converge(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    xs = tuple(x for x, _ in config.starts)
    sweep = SweepConfig(
        epsilons=tuple(config.epsilons), start_xs=xs, T=config.t_final,
        dt=config.dt, replicas=config.replicas, root_seed=config.root_seed,
        alpha=config.alpha, beta=config.beta, mollifier=config.mollifier,
        window_m=config.window_m,
        level=min(config.dyadic_level, 5),
        marginal_times=tuple(config.checkpoints),
        backward_times=tuple(c for c in config.checkpoints
                             if c < config.t_final),
        merge_c=config.merge_c)
    rows = convergence_sweep(sweep)
    _write_csv(outdir / "report.csv",
               ["epsilon", "metric", "value", "stderr", "n_replicas", "seed"],
               [[r.epsilon, r.metric, r.value, r.stderr, r.n_replicas, r.seed]
                for r in rows])
    return EXIT_OK, ["report.csv"]


def cmd_backward_dump(config: ExperimentConfig, outdir: Path) -> tuple[int, list[str]]:
    """One realisation of the backward paths of the configured starts."""
    from .inverse_flow import backward_path

    exact = build_exact(config.alpha, config.beta)
    bundle = simulate_dyadic_bundle(
        exact, config.t_final, config.dt, config.window_m,
        config.dyadic_level, seed=config.root_seed, merge_c=config.merge_c)
    rows = []
    for i, (x, t1) in enumerate(config.starts):
        times, values = backward_path(bundle, x, t1, config.t_final)
        for t, v in zip(times, values):
            rows.append([t, i, v, -1, "backward"])
    _write_csv(outdir / "bundle_backward.csv",
               ["time", "coord", "value", "class_id", "direction"], rows)
    return EXIT_OK, ["bundle_backward.csv"]


_COMMANDS = {
    "kernel-dump": cmd_kernel_dump,
    "simulate": cmd_simulate,
    "flowmap": cmd_flowmap,
    "invert-check": cmd_invert_check,
    "measure-check": cmd_measure_check,
    "converge": cmd_converge,
    "backward-dump": cmd_backward_dump,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="harrisflow",
        description="Coalescing-flow simulation experiments (batch, CSV out).")
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("config", help="path to a key=value config file")
    parser.add_argument("--output-dir", default=None,
                        help="override the config's output directory")
    args = parser.parse_args(argv)

    try:
        config = ExperimentConfig.from_file(args.config)
        config.validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(args.output_dir or config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    command = _COMMANDS[args.subcommand]
    try:
        code, outputs = command(config, outdir)
    except NUMERICAL_ERRORS as exc:
        _manifest(outdir, args.subcommand, config, [], "failed", repr(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    status = "ok" if code == EXIT_OK else "statistical-failure"
    _manifest(outdir, args.subcommand, config, outputs, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
