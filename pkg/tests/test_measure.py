import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harrisflow.harris_flow import FlowMap
from harrisflow.measure import (EmpiricalMeasure, WindowTruncationWarning,
                                integrate, pushforward, wasserstein1)


def identity_map(lo=-1.0, hi=1.0, h=0.01):
    starts = np.arange(lo / h, hi / h + 0.5).astype(float) * h
    return FlowMap(starts=starts, images=starts.copy(), s=0.0, t=1.0)


def test_pushforward_identity():
    mu = pushforward(identity_map())
    val = integrate(mu, lambda x: ((x >= -1) & (x <= 1)).astype(float))
    assert abs(val - 2.0) <= 0.011


def test_pushforward_shift():
    fm = identity_map()
    shifted = FlowMap(starts=fm.starts, images=fm.starts + 0.3, s=0.0, t=1.0)
    mu = pushforward(shifted)
    f = lambda x: np.exp(-x * x)
    expected = float(np.sum(np.exp(-(fm.starts + 0.3) ** 2) * 0.01))
    assert integrate(mu, f) == pytest.approx(expected, abs=1e-12)


def test_pushforward_fully_coalesced():
    starts = np.linspace(-6, 6, 385)
    fm = FlowMap(starts=starts, images=np.full(385, 1.25), s=0.0, t=1.0)
    mu = pushforward(fm)
    assert len(mu.locations) == 1
    assert mu.total_weight == pytest.approx(12.0, abs=0.04)
    assert integrate(mu, lambda x: x * 0 + 2.0) == pytest.approx(2 * mu.total_weight)


def test_pushforward_total_mass_exact():
    starts = np.linspace(-6, 6, 385)
    h = starts[1] - starts[0]
    fm = FlowMap(starts=starts, images=np.round(starts * 0.25) * 1.0,
                 s=0.0, t=1.0)
    mu = pushforward(fm)
    assert mu.total_weight == pytest.approx(len(starts) * h, abs=1e-12)


def test_integrate_zero_and_linearity():
    mu = pushforward(identity_map())
    assert integrate(mu, lambda x: x * 0.0) == 0.0
    f = lambda x: np.sin(x)
    g = lambda x: x ** 2
    lhs = integrate(mu, lambda x: 2.0 * f(x) + 3.0 * g(x))
    rhs = 2.0 * integrate(mu, f) + 3.0 * integrate(mu, g)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_integrate_triangular_bump():
    mu = pushforward(identity_map())
    bump = lambda x: np.maximum(0.0, 1.0 - np.abs(x / 0.5)) / 0.5  # mass 1
    assert integrate(mu, bump, support=(-0.5, 0.5)) == pytest.approx(1.0, abs=0.02)


def test_integrate_warns_on_support_violation():
    mu = pushforward(identity_map())
    with pytest.warns(WindowTruncationWarning):
        integrate(mu, lambda x: np.ones_like(x), support=(-3.0, 3.0))


def test_wasserstein_identical_and_units():
    a = EmpiricalMeasure(np.array([0.0]), np.array([1.0]), (-2, 2))
    b = EmpiricalMeasure(np.array([1.0]), np.array([1.0]), (-2, 2))
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(a, b) == pytest.approx(1.0)


def w1_trapezoid_oracle(a, b, n=200_001):
    lo = min(a.locations.min(), b.locations.min()) - 1.0
    hi = max(a.locations.max(), b.locations.max()) + 1.0
    xs = np.linspace(lo, hi, n)
    fa = np.cumsum(np.histogram(a.locations, bins=xs, weights=a.weights)[0])
    fb = np.cumsum(np.histogram(b.locations, bins=xs, weights=b.weights)[0])
    return float(np.sum(np.abs(fa - fb) * np.diff(xs)[0]))


def test_wasserstein_matches_trapezoid_oracle(rng):
    for _ in range(5):
        xa = np.sort(rng.uniform(-3, 3, 10))
        xb = np.sort(rng.uniform(-3, 3, 10))
        w = rng.uniform(0.1, 1.0, 10)
        a = EmpiricalMeasure(xa, w, (-4, 4))
        b = EmpiricalMeasure(xb, w[rng.permutation(10)], (-4, 4))
        got = wasserstein1(a, b)
        assert got == pytest.approx(w1_trapezoid_oracle(a, b), abs=2e-4)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=8),
       st.lists(st.floats(-5, 5), min_size=3, max_size=8),
       st.lists(st.floats(-5, 5), min_size=3, max_size=8))
@settings(max_examples=60, deadline=None)
def test_wasserstein_symmetry_triangle(xa, xb, xc):
    mk = lambda xs: EmpiricalMeasure(np.array(sorted(xs)),
                                     np.full(len(xs), 1.0 / len(xs)), (-6, 6))
    a, b, c = mk(xa), mk(xb), mk(xc)
    assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-9)
    assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9


def test_mass_interval():
    mu = EmpiricalMeasure(np.array([-1.0, 0.0, 1.0]),
                          np.array([0.5, 1.0, 2.0]), (-2, 2))
    assert mu.mass(-1.0, 1.0) == pytest.approx(3.0)  # half-open: excludes -1
    assert mu.mass(-1.5, 0.5) == pytest.approx(1.5)


def test_mass_location_bound(exact_spec):
    # pushforward mass near the origin stays within the drift-free envelope
    from harrisflow.harris_flow import flow_map

    grid = np.linspace(-6, 6, 193)
    masses = []
    for k in range(200):
        fm = flow_map(exact_spec, grid, 0.0, 1.0, 2e-3,
                      np.random.default_rng(1000 + k))
        masses.append(pushforward(fm).mass(-1.0, 1.0))
    masses = np.asarray(masses)
    se = masses.std(ddof=1) / np.sqrt(len(masses))
    assert masses.mean() <= 4.0 + 3 * se
