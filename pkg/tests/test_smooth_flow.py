import numpy as np
import pytest

from harrisflow.covariance import DomainError, build_exact, build_mollified
from harrisflow.harris_flow import TrajectoryBundle
from harrisflow.montecarlo import smooth_smalln
from harrisflow.smooth_flow import evolve_smooth, min_gap_statistics


def test_requires_mollified_kernel(exact_spec, rng):
    with pytest.raises(DomainError):
        evolve_smooth(exact_spec, [(0.0, 0.0)], 0.1, 0.01, rng)


def test_zero_duration_is_identity(moll_spec, rng):
    b = evolve_smooth(moll_spec, [(0.2, 0.0), (0.9, 0.0)], 0.0, 1e-2, rng)
    assert b.paths.shape == (2, 1)
    assert b.paths[:, 0].tolist() == [0.2, 0.9]


def test_single_point_is_brownian(moll_spec):
    res = smooth_smalln(moll_spec, [0.0], 1.0, 1e-3, 5000, 11)
    var = res["marginals"][:, -1, 0].var()
    assert 0.94 <= var <= 1.06


def test_no_merging_ever(moll_spec, rng):
    for _ in range(5):
        b = evolve_smooth(moll_spec, [(-0.1, 0.0), (0.0, 0.0), (0.1, 0.0)],
                          0.5, 1e-2, rng)
        for k in range(len(b.time_grid)):
            assert len(set(b.class_id[:, k])) == 3


def test_min_gap_positive_without_coalescence(rng):
    spec = build_mollified(1.0, 1.0, 0.4)
    for seed in range(20):
        b = evolve_smooth(spec, [(0.0, 0.0), (1.0, 0.0)], 1.0, 1e-2,
                          np.random.default_rng(seed), validate=False)
        assert min_gap_statistics(b)[(0, 1)] > 0.0


def test_min_gap_coincident_and_frozen(moll_spec):
    grid = np.linspace(0, 1, 6)
    paths = np.array([[0.3] * 6, [0.3] * 6, [0.8] * 6])
    frozen = TrajectoryBundle(
        time_grid=grid, start_x=np.array([0.3, 0.3, 0.8]),
        start_t=np.zeros(3), paths=paths,
        class_id=np.repeat(np.arange(3, dtype=np.int32)[:, None], 6, axis=1),
        kind="smooth")
    gaps = min_gap_statistics(frozen)
    assert gaps[(0, 1)] == 0.0
    assert gaps[(0, 2)] == 0.5  # zero-noise: min gap equals initial gap


def test_order_inversions_vanish_under_refinement(moll_spec):
    means = []
    for dt, seed in ((1e-2, 1), (1e-3, 2), (1e-4, 3)):
        res = smooth_smalln(moll_spec, [0.0, 0.5], 1.0, dt, 300, seed,
                            cov_pair=(0, 1))
        means.append(res["inverted_steps"].mean())
    assert means[0] >= means[1] >= means[2]
    assert means[0] > means[2] or means[0] == 0.0


def test_quadratic_covariation_with_smoothed_kernel(moll_spec):
    res = smooth_smalln(moll_spec, [0.0, 0.5], 1.0, 1e-3, 1000, 5,
                        cov_pair=(0, 1))
    rel = np.abs(res["realized"] - res["predicted"]) / res["predicted"]
    assert rel.mean() <= 0.10


def test_near_zero_occupation_grows_as_smoothing_vanishes():
    occ = []
    for eps, seed in ((0.8, 11), (0.4, 12), (0.2, 13), (0.1, 14)):
        spec = build_mollified(1.0, 1.0, eps)
        res = smooth_smalln(spec, [0.0, 0.25], 1.0, 1e-3, 400, seed,
                            cov_pair=(0, 1), occupation_gap=0.05)
        occ.append(res["occupation_steps"].mean())
    assert occ[0] < occ[1] < occ[2] < occ[3]


def test_marginal_stationarity(moll_spec):
    res = smooth_smalln(moll_spec, [0.0], 1.0, 1e-3, 10_000, 15,
                        marginal_times=(0.25, 0.75))
    m = res["marginals"][:, :, 0]
    inc1 = m[:, 0]          # increment over [0, 0.25]
    inc2 = m[:, 1] - m[:, 0]  # over [0.25, 0.75]
    assert abs(inc1.var() / 0.25 - 1.0) < 0.05
    assert abs(inc2.var() / 0.5 - 1.0) < 0.05
