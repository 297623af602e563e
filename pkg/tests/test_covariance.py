import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harrisflow.covariance import (COALESCING, NON_COALESCING, CovarianceSpec,
                                   DegenerateKernelError, DomainError,
                                   build_exact, build_mollified,
                                   check_positive_definite, classify_boundary,
                                   eval_phi, one_minus_phi)


def conv_oracle(alpha, beta, eps, x, n):
    """Independent high-resolution trapezoid of the Gaussian-mollified kernel."""
    v = np.linspace(-9.0, 9.0, n)
    h = np.exp(-0.5 * v * v) / math.sqrt(2 * math.pi)
    w = np.full(n, v[1] - v[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    raw = lambda y: float(np.sum(np.exp(-beta * np.abs(y - eps * v) ** alpha) * h * w))
    return raw(x) / raw(0.0)


def test_exact_values():
    spec = build_exact(1.0, 1.0)
    assert eval_phi(spec, 0.0) == 1.0
    assert eval_phi(spec, 1.0) == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_parameter_validation():
    with pytest.raises(DomainError):
        build_exact(2.0, 1.0)
    with pytest.raises(DomainError):
        build_exact(1.0, 0.0)
    with pytest.raises(DomainError):
        build_mollified(1.0, 1.0, 1.5)
    with pytest.raises(DomainError):
        CovarianceSpec(kind="exact", alpha=1.0, beta=1.0, epsilon=0.2)


def test_mollified_matches_quadrature_oracle(moll_spec):
    # oracle refined until two levels agree to 1e-6
    for x in (0.0, 0.3, 0.7, 1.5, 3.0):
        o1 = conv_oracle(1.0, 1.0, 0.2, x, 40001)
        o2 = conv_oracle(1.0, 1.0, 0.2, x, 80001)
        assert abs(o1 - o2) < 1e-6
        assert eval_phi(moll_spec, x) == pytest.approx(o2, abs=5e-6)
    # the renormalisation that pins phi_eps(0) = 1 lifts the whole kernel by
    # c_eps ~ 1.165 at eps = 0.2, so the pointwise gap to the unsmoothed
    # kernel is ~0.09 here (the oracle equality above is the sharp check)
    assert abs(eval_phi(moll_spec, 0.7) - math.exp(-0.7)) < 0.1


def test_mollified_interpolation_budget(moll_spec):
    rng = np.random.default_rng(1)
    xs = rng.uniform(0, 5, 200)
    oracle = np.array([conv_oracle(1.0, 1.0, 0.2, x, 40001) for x in xs])
    got = np.asarray(eval_phi(moll_spec, xs))
    assert np.max(np.abs(got - oracle)) < 1e-6 + 5e-6


def test_constant_kernel_preserved_by_mollification():
    # beta ~ 0 makes phi constant 1 on any compact; the unit-mass convolution
    # must keep it there
    spec = build_mollified(1.0, 1e-8, 0.3)
    xs = np.linspace(-4, 4, 23)
    assert np.max(np.abs(np.asarray(eval_phi(spec, xs)) - 1.0)) < 1e-6


def test_normalized_at_zero():
    for eps in (0.4, 0.1):
        for moll in ("gaussian", "compact-bump"):
            spec = build_mollified(1.0, 1.0, eps, mollifier=moll)
            assert abs(eval_phi(spec, 0.0) - 1.0) < 1e-9


def test_sup_distance_decreases_with_epsilon():
    exact = build_exact(1.0, 1.0)
    grid = np.linspace(-3, 3, 601)
    target = np.asarray(eval_phi(exact, grid))
    sups = []
    for eps in (0.4, 0.2, 0.1):
        spec = build_mollified(1.0, 1.0, eps)
        sups.append(np.max(np.abs(np.asarray(eval_phi(spec, grid)) - target)))
    assert sups[0] > sups[1] > sups[2]


@given(st.floats(min_value=-30, max_value=30, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_symmetry_and_bound(x):
    spec = build_mollified(1.0, 1.0, 0.25)
    left, right = eval_phi(spec, x), eval_phi(spec, -x)
    assert abs(left - right) <= 1e-12
    assert abs(left) <= 1.0 + 1e-12
    ex = build_exact(0.7, 2.0)
    assert abs(eval_phi(ex, x) - eval_phi(ex, -x)) <= 1e-12
    assert abs(eval_phi(ex, x)) <= 1.0 + 1e-12


def test_mollified_twice_differentiable(moll_spec):
    # central second differences must settle as the step shrinks
    for x in (0.0, 0.13, 0.4, 1.1):
        prev = None
        diffs = []
        for h in (4e-2, 2e-2, 1e-2, 5e-3):
            d2 = (eval_phi(moll_spec, x + h) - 2 * eval_phi(moll_spec, x)
                  + eval_phi(moll_spec, x - h)) / (h * h)
            if prev is not None:
                diffs.append(abs(d2 - prev))
            prev = d2
        assert diffs[-1] < diffs[0] + 1e-3
        assert diffs[-1] < 2e-2


def test_one_minus_consistency(moll_spec):
    # cancellation-free branch agrees with direct evaluation where both hold
    for x in (0.05, 0.2, 1.0):
        direct = 1.0 - eval_phi(moll_spec, x)
        assert one_minus_phi(moll_spec, x) == pytest.approx(direct, rel=2e-3, abs=1e-9)
    # quadratic behaviour near zero
    r = one_minus_phi(moll_spec, 1e-5) / 1e-10
    r2 = one_minus_phi(moll_spec, 2e-5) / 4e-10
    assert r == pytest.approx(r2, rel=1e-6)


def test_classify_boundary_dichotomy():
    for alpha in (0.5, 1.0, 1.5):
        assert classify_boundary(build_exact(alpha, 1.0), 0.5) == COALESCING
    for eps in (0.4, 0.1):
        spec = build_mollified(1.0, 1.0, eps)
        assert classify_boundary(spec, 0.5) == NON_COALESCING


def test_classify_boundary_integrand_bounded_for_exact():
    # analytic cross-check: x / (1 - e^-x) -> 1 as x -> 0
    spec = build_exact(1.0, 1.0)
    xs = np.array([1e-8, 1e-6, 1e-4])
    vals = xs / np.asarray(one_minus_phi(spec, xs))
    assert np.all(np.abs(vals - 1.0) < 1e-3)


def test_classify_boundary_degenerate():
    spec = build_exact(1.0, 1e-30)
    with pytest.raises(DegenerateKernelError):
        classify_boundary(spec, 0.5)


def test_classify_boundary_validates_delta(exact_spec):
    with pytest.raises(DomainError):
        classify_boundary(exact_spec, -1.0)


def _eig3_charpoly(g):
    """Roots of the characteristic polynomial of a symmetric 3x3 matrix."""
    c2 = -np.trace(g)
    c1 = 0.5 * (np.trace(g) ** 2 - np.trace(g @ g))
    c0 = -np.linalg.det(g)
    return np.sort(np.roots([1.0, c2, c1, c0]).real)


def test_check_positive_definite_single_point(exact_spec):
    assert check_positive_definite(exact_spec, [3.7])


def test_check_positive_definite_oracle(exact_spec):
    pts = np.array([0.0, 1.0, 2.0])
    g = np.asarray(eval_phi(exact_spec, pts[:, None] - pts[None, :]))
    eigs = _eig3_charpoly(g)
    assert np.all(eigs > 0)
    assert check_positive_definite(exact_spec, pts)


def test_check_positive_definite_rejects_bad_kernel():
    bad = lambda d: np.cos(3.0 * np.asarray(d)) + 0.5 * np.abs(np.asarray(d))
    pts = np.array([0.0, 1.0, 2.0])
    g = bad(pts[:, None] - pts[None, :])
    assert _eig3_charpoly(g)[0] < -1e-6
    assert not check_positive_definite(bad, pts)


def test_gram_matrices_unit_diagonal_psd():
    from harrisflow.gaussian_field import gram

    rng = np.random.default_rng(7)
    for spec in (build_exact(1.3, 0.7), build_mollified(1.0, 1.0, 0.3)):
        pts = np.sort(rng.uniform(-4, 4, 12))
        g = gram(spec, pts)
        assert np.allclose(g, g.T)
        assert np.all(np.diag(g) == 1.0)
        assert np.linalg.eigvalsh(g)[0] >= -1e-8 * len(pts)
