import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harrisflow.covariance import build_exact
from harrisflow.harris_flow import evolve_harris
from harrisflow.stats import (MomentBoundResult, SweepConfig,
                              convergence_sweep, empirical_covariation,
                              ks_one_sample_normal, ks_two_sample,
                              moment_bound_check, w1_samples)


def test_ks_identical_samples():
    stat, p = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert stat == 0.0 and p == pytest.approx(1.0)


def test_ks_disjoint_supports():
    stat, _ = ks_two_sample([0.0, 0.1, 0.2], [5.0, 5.1])
    assert stat == 1.0


def test_ks_interleaved_exact_value():
    # exhaustive ECDF evaluation gives sup-difference 1/3
    stat, _ = ks_two_sample([1.0, 2.0, 3.0], [1.5, 2.5, 3.5])
    assert stat == pytest.approx(1.0 / 3.0)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30, unique=True),
       st.lists(st.floats(-100, 100), min_size=2, max_size=30, unique=True))
@settings(max_examples=80, deadline=None)
def test_ks_rank_invariance(a, b):
    transform = lambda xs: [math.atan(x) + x ** 3 for x in xs]
    s1, p1 = ks_two_sample(a, b)
    s2, p2 = ks_two_sample(transform(a), transform(b))
    assert s1 == pytest.approx(s2, abs=1e-12)
    assert p1 == pytest.approx(p2, abs=1e-12)


def test_ks_one_sample_normal(rng):
    ok = rng.standard_normal(4000)
    _, p = ks_one_sample_normal(ok)
    assert p > 0.01
    _, p_bad = ks_one_sample_normal(ok + 0.4)
    assert p_bad < 1e-6


def test_empirical_covariation_diagonal(exact_spec, rng):
    b = evolve_harris(exact_spec, [(0.0, 0.0), (8.0, 0.0)], 0.5, 1e-3, rng,
                      validate=False)
    realized, predicted = empirical_covariation(b, 0, 0)
    assert predicted == pytest.approx(0.5, abs=1e-9)
    assert realized == pytest.approx(0.5, rel=0.25)


def test_empirical_covariation_far_pair(rng):
    spec = build_exact(1.0, 8.0)
    b = evolve_harris(spec, [(0.0, 0.0), (6.0, 0.0)], 0.5, 1e-3, rng,
                      validate=False)
    realized, predicted = empirical_covariation(b, 0, 1)
    assert abs(predicted) < 1e-8
    assert abs(realized) < 0.05


def test_moment_bound_trivial_equal_points():
    out = moment_bound_check(np.zeros(100), 0.7, 0.7)
    assert isinstance(out, MomentBoundResult)
    assert out.passed and out.bound == 0.0


def test_w1_samples_exact():
    assert w1_samples([0.0, 1.0], [0.5, 1.5]) == pytest.approx(0.5)


def _tiny_config(**kw):
    base = dict(epsilons=(0.5,), start_xs=(-0.5, 0.5), T=0.5, dt=4e-3,
                replicas=160, root_seed=77, window_m=3.0, level=4,
                marginal_times=(0.25, 0.5), backward_times=(0.25,),
                bootstrap=24)
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_stub_matches_self_distance_baseline():
    rows_a = convergence_sweep(_tiny_config(stub_exact=True))
    rows_b = convergence_sweep(_tiny_config(stub_exact=True, root_seed=78))
    for ra, rb in zip(rows_a, rows_b):
        assert ra.metric == rb.metric
        tol = 3.0 * math.hypot(ra.stderr, rb.stderr)
        assert abs(ra.value - rb.value) <= tol


def test_sweep_deterministic():
    rows_a = convergence_sweep(_tiny_config())
    rows_b = convergence_sweep(_tiny_config())
    for ra, rb in zip(rows_a, rows_b):
        assert ra.value == rb.value and ra.stderr == rb.stderr


def test_sweep_se_shrinks_with_replicas():
    rows_small = convergence_sweep(_tiny_config(bootstrap=96))
    rows_big = convergence_sweep(_tiny_config(replicas=640, bootstrap=96))
    small = {r.metric: r.stderr for r in rows_small}
    big = {r.metric: r.stderr for r in rows_big}
    # quadrupling replicas should halve the SE, within bootstrap noise
    for metric in ("forward_w1", "backward_w1"):
        ratio = big[metric] / small[metric]
        assert 0.3 <= ratio <= 0.75


def test_sweep_config_validation():
    from harrisflow.covariance import DomainError

    with pytest.raises(DomainError):
        convergence_sweep(_tiny_config(epsilons=(0.2, 0.4)))
    with pytest.raises(DomainError):
        convergence_sweep(_tiny_config(epsilons=()))
