import numpy as np
import pytest

from harrisflow.covariance import DomainError, build_exact, build_mollified
from harrisflow.dyadic import simulate_dyadic_bundle
from harrisflow.harris_flow import TrajectoryBundle
from harrisflow.inverse_flow import (InverseQuery, WindowExhaustedError,
                                     backward_path, embed, invert)
from harrisflow.montecarlo import harris_smalln, harris_waves, dyadic_grid
from harrisflow.stats import ks_two_sample


def synthetic_bundle(starts, drift=0.0, n_times=9, T=1.0):
    """Deterministic flow X(y, 0, t) = y + drift * t as a bundle."""
    starts = np.asarray(starts, dtype=float)
    grid = np.linspace(0.0, T, n_times)
    paths = starts[:, None] + drift * grid[None, :]
    return TrajectoryBundle(
        time_grid=grid, start_x=starts, start_t=np.zeros(len(starts)),
        paths=paths,
        class_id=np.repeat(np.arange(len(starts), dtype=np.int32)[:, None],
                           n_times, axis=1),
        kind="harris")


def test_embed_noop_and_constant():
    t = np.array([1.0, 2.0])
    v = np.array([5.0, 6.0])
    t2, v2 = embed(t, v, 1.0)
    assert t2.tolist() == [1.0, 2.0] and v2.tolist() == [5.0, 6.0]
    t3, v3 = embed(t, np.array([4.0, 4.0]), 0.0)
    assert v3.tolist() == [4.0, 4.0, 4.0]


def test_embed_linear_path():
    t = np.linspace(1.0, 2.0, 5)
    v = t.copy()  # f(u) = u on [1, 2]
    t2, v2 = embed(t, v, 0.0)
    assert t2[0] == 0.0 and v2[0] == 1.0  # value 1 on [0, 1]
    assert np.array_equal(v2[1:], v)


def test_embed_rejects_late_start():
    with pytest.raises(DomainError):
        embed(np.array([1.0, 2.0]), np.array([0.0, 0.0]), 1.5)


def test_invert_frozen_grid():
    starts = np.linspace(-1, 1, 2 ** 6 + 1)
    b = synthetic_bundle(starts)
    got = invert(b, InverseQuery(x=0.5, t1=0.0, t2=1.0, s=0.4))
    assert got == starts[np.searchsorted(starts, 0.5)]


def test_invert_monotone_shift_matches_bruteforce():
    starts = np.linspace(-2, 2, 65)
    b = synthetic_bundle(starts, drift=0.3)
    for x in (-0.7, 0.0, 0.55):
        q = InverseQuery(x=x, t1=0.0, t2=1.0, s=0.25)
        # exhaustive scan over all trajectories
        eval_k = np.searchsorted(b.time_grid, q.eval_time + 1e-12) - 1
        vals = [b.paths[i, eval_k] for i in range(b.n)
                if b.paths[i, -1] >= x]
        assert invert(b, q) == min(vals)


def test_invert_monotone_in_x():
    starts = np.linspace(-2, 2, 65)
    b = synthetic_bundle(starts, drift=0.1)
    vals = [invert(b, InverseQuery(x=x, t1=0.0, t2=1.0, s=0.5))
            for x in np.linspace(-1.5, 1.5, 31)]
    assert np.all(np.diff(vals) >= 0)


def test_invert_refinement_never_increases():
    starts_fine = np.linspace(-2, 2, 129)
    b_fine = synthetic_bundle(starts_fine, drift=0.3)
    b_coarse = synthetic_bundle(starts_fine[::2], drift=0.3)
    for x in np.linspace(-1, 1, 17):
        q = InverseQuery(x=x, t1=0.0, t2=1.0, s=0.3)
        assert invert(b_fine, q) <= invert(b_coarse, q)


def test_invert_window_exhausted():
    b = synthetic_bundle(np.linspace(-1, 1, 17))
    with pytest.raises(WindowExhaustedError):
        invert(b, InverseQuery(x=2.5, t1=0.0, t2=1.0, s=0.5))


def test_query_validation():
    with pytest.raises(DomainError):
        InverseQuery(x=0.0, t1=0.5, t2=1.0, s=0.2)


def test_backward_path_frozen_flow():
    starts = np.linspace(-1, 1, 65)
    b = synthetic_bundle(starts)
    times, vals = backward_path(b, 0.33, 0.0, 1.0)
    assert np.all(vals == starts[np.searchsorted(starts, 0.33)])


def test_backward_path_endpoints_consistent():
    starts = np.linspace(-2, 2, 65)
    b = synthetic_bundle(starts, drift=0.3)
    times, vals = backward_path(b, 0.4, 0.0, 1.0)
    assert vals[-1] == invert(b, InverseQuery(x=0.4, t1=0.0, t2=1.0, s=0.0))
    assert vals[0] == invert(b, InverseQuery(x=0.4, t1=0.0, t2=1.0, s=1.0))


def test_backward_path_constant_before_start(exact_spec):
    bundle = simulate_dyadic_bundle(exact_spec, 0.5, 2 ** -7, window_m=2.0,
                                    level=4, seed=9)
    times, vals = backward_path(bundle, 0.1, 0.25, 0.5)
    before = times <= 0.25 + 1e-12
    assert before.sum() >= 2
    assert len(set(vals[before])) == 1


def test_smooth_inverse_consistency():
    # full inverse composed with the forward map: identity up to one spacing
    spec = build_mollified(1.0, 1.0, 0.4)
    bundle = simulate_dyadic_bundle(spec, 0.5, 2 ** -7, window_m=3.0,
                                    level=5, seed=10)
    h = 2.0 ** -5
    starts, terminals = bundle.query_atoms(0.0, 0.5)
    for idx in range(5, len(starts) - 5, 37):
        y, image = starts[idx], terminals[idx]
        back = invert(bundle, InverseQuery(x=image, t1=0.0, t2=0.5, s=0.5))
        assert abs(back - y) <= h + 1e-12


def test_backward_forward_distributional_identity(exact_spec):
    # lineage values at time s match forward runs of duration T - s in law
    T, dt, level, M, R = 1.0, 2 ** -9, 5, 4.0, 800
    grid = dyadic_grid(M, level)
    step = 2.0 ** -level
    wave_times = step * np.arange(int(0.5 / step) + 1)
    xs = [-0.5, 0.5]
    run = harris_waves(exact_spec, [(float(t), grid) for t in wave_times],
                       T, dt, R, 301, queries={0.25: xs, 0.5: xs})
    cells = 0
    for si, s in enumerate((0.25, 0.5)):
        fwd = harris_smalln(exact_spec, xs, T - s, dt, R, 400 + si)
        row = int(np.flatnonzero(np.abs(run.snapshot_times - s) <= 1e-9)[0])
        for xi in range(len(xs)):
            _, p = ks_two_sample(run.inverse[:, row, xi],
                                 fwd["marginals"][:, -1, xi])
            assert p > 0.01 / 4
            cells += 1
    assert cells == 4
