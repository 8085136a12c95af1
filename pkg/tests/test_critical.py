import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biflab import critical as cr
from biflab import family as fam
from biflab.critical import CritKind, Stability
from biflab.errors import BranchCapExceeded, InsufficientPoints, PreconditionError
from biflab.family import ParameterDomain

LOG2 = math.log(2)
UNIT_SQUARE = ParameterDomain(0.5 + 0.5j, 0.5, 0.5, 1, 1)


def _square_integral(x0, x1, y0, y1):
    """Integral of 1 + |2 lam + 1|^2 = 1 + (2x + 1)^2 + 4 y^2 over a rectangle."""
    fx = lambda x: x + (2 * x + 1) ** 3 / 6
    return (fx(x1) - fx(x0)) * (y1 - y0) + (x1 - x0) * 4 * (y1 ** 3 - y0 ** 3) / 3


# -- critical components ----------------------------------------------------

def test_quadratic_critical_point(quad):
    comps = cr.critical_components(quad, 0.3j)
    assert len(comps) == 1
    c = comps[0]
    assert c.kind is CritKind.FIBER_POINT and c.multiplicity == 1 and abs(c.value) < 1e-12


def test_cubic_critical_points():
    lam = -0.6 + 0.9j
    comps = cr.critical_components(fam.cubic(), lam)
    got = sorted((c.value for c in comps), key=lambda v: (v.real, v.imag))
    root = np.sqrt(-lam / 3)
    want = sorted([root, -root], key=lambda v: (v.real, v.imag))
    assert np.allclose(got, want, atol=1e-12)
    assert all(abs(fam.jacobian(fam.cubic(), lam, c.value)) < 1e-8 for c in comps)


def test_skew_critical_curves(skew):
    comps = cr.critical_components(skew, 0.05)
    kinds = {c.kind: c for c in comps}
    assert set(kinds) == {CritKind.Z_CRIT_CURVE, CritKind.W_CRIT_CURVE}
    assert all(c.multiplicity == 1 and abs(c.value) < 1e-12 for c in comps)


def test_critical_points_batch_shape():
    lam = np.array([[0.1, -0.2j], [1.0, 0.5]])
    pts = cr.critical_points_batch(fam.cubic(), lam)
    assert pts.shape == (2, 2, 2)
    assert np.allclose(np.sort_complex(pts[1, 0]), np.sort_complex([np.sqrt(-1 / 3 + 0j), -np.sqrt(-1 / 3 + 0j)]))


# -- pushforward mass ------------------------------------------------------

def test_unit_square_closed_forms():
    spec = fam.quadratic(escape_radius=10.0)
    assert math.exp(cr.pushforward_mass(spec, UNIT_SQUARE, 1)) == pytest.approx(2.0, abs=1e-10)
    assert math.exp(cr.pushforward_mass(spec, UNIT_SQUARE, 2)) == pytest.approx(20 / 3, abs=1e-10)


def test_unit_square_without_refinement():
    spec = fam.quadratic(escape_radius=10.0)
    m = cr.pushforward_mass(spec, UNIT_SQUARE, 2, adaptive=False, base=1)
    assert math.exp(m) == pytest.approx(20 / 3, abs=1e-12)


@given(cx=st.floats(-0.4, 0.2), cy=st.floats(-0.4, 0.4), w=st.floats(0.01, 0.2), m=st.integers(1, 3))
def test_gauss_rule_exact_on_polynomial_integrand(cx, cy, w, m):
    hh = w * m / 2
    window = ParameterDomain(complex(cx, cy), w, hh, 2, m)
    got = math.exp(cr.pushforward_mass(fam.quadratic(), window, 2))
    want = _square_integral(cx - w, cx + w, cy - hh, cy + hh)
    assert got == pytest.approx(want, rel=1e-10)


def test_misiurewicz_window_mass_tracks_log2(quad):
    window = ParameterDomain.square(-2, 0.2, 4)
    m = cr.pushforward_mass(quad, window, 15)
    assert abs(m - 15 * LOG2) < 2.0


def test_stable_window_mass_saturates(quad):
    s = cr.volume_series(quad, ParameterDomain.square(-0.1, 0.2, 4), range(8, 16))
    assert np.ptp(s.log_mass) < 1e-3
    # the integrand is at least 1, so the mass never drops below the window area
    assert np.all(s.log_mass >= math.log(0.04))
    assert np.all(s.escaped_fraction == 0)


def test_all_samples_escaped():
    spec = fam.quadratic(escape_radius=100.0)
    window = ParameterDomain.square(5 + 0j, 0.2, 2)
    with pytest.raises(cr.AllSamplesEscaped) as err:
        cr.pushforward_mass(spec, window, 6)
    assert "all_samples_escaped" in err.value.series.flags


def test_skew_volume_is_seeded_and_grows(skew):
    window = ParameterDomain.square(0, 0.2, 4)
    a = cr.volume_series(skew, window, range(1, 8), strata=2000, seed=3)
    b = cr.volume_series(skew, window, range(1, 8), strata=2000, seed=3)
    assert np.array_equal(a.log_mass, b.log_mass)
    assert np.all(np.isfinite(a.log_mass)) and np.all(np.diff(a.log_mass) > 0)
    assert a.method.startswith("stratified-mc")


# -- growth rate -------------------------------------------------------------

def test_growth_rate_exact_line():
    n = np.arange(1, 21)
    g = cr.growth_rate((n, n * LOG2))
    assert g.rate == pytest.approx(LOG2, abs=1e-12) and g.ci < 1e-10


def test_growth_rate_bounded_perturbation():
    n = np.arange(1, 21)
    g = cr.growth_rate((n, n * LOG2 + np.sin(n)))
    assert LOG2 - 0.2 <= g.rate <= LOG2 + 0.2


def test_growth_rate_uses_tail_half():
    n = np.arange(1, 21)
    y = np.where(n <= 10, 0.0, n * 0.5)
    g = cr.growth_rate((n, y))
    assert g.rate == pytest.approx(0.5) and g.n_used == tuple(range(11, 21))


def test_growth_rate_insufficient_points():
    with pytest.raises(InsufficientPoints):
        cr.growth_rate((np.arange(1, 8), np.arange(1, 8) * 1.0))


def test_growth_rate_sets_series_fields(quad):
    s = cr.volume_series(quad, ParameterDomain.square(-2, 0.2, 4), range(5, 15))
    g = cr.growth_rate(s)
    assert s.fitted_rate == g.rate and s.rate_ci == g.ci
    assert abs(g.rate - LOG2) < 0.15


def test_classify_examples():
    assert cr.classify_stability((LOG2, 0.05), 1, 2) is Stability.BIFURCATING
    assert cr.classify_stability((0.1, 0.05), 1) is Stability.BIFURCATING
    assert cr.classify_stability((-0.3, 0.1), 1) is Stability.STABLE
    assert cr.classify_stability((0.02, 0.05), 1) is Stability.INCONCLUSIVE
    with pytest.raises(ValueError):
        cr.classify_stability((0.5, 0.1), 2, 2)


# -- inverse-branch census --------------------------------------------------

def _roots_of_unity_count(n, center=1.0, radius=0.3, m=cr.CENSUS_BOUNDARY):
    """Branches of z -> z^(2^n) are w -> omega * w^(1/2^n); count those mapping the disk into itself."""
    d = 2 ** n
    ring = center + radius * np.exp(2j * np.pi * np.arange(m) / m)
    pts = np.concatenate([[center], ring])
    roots = np.exp(np.log(pts) / d)
    omega = np.exp(2j * np.pi * np.arange(d) / d)
    imgs = omega[:, None] * roots[None, :]
    return int(np.sum(np.all(np.abs(imgs - center) < radius, axis=1)))


def test_census_first_step():
    c = cr.inverse_branch_census(fam.power(2), 0, 1.0, 0.3, 1.0, 1)
    assert (c.count, c.total) == (1, 2)


@pytest.mark.parametrize("n", range(1, 10))
def test_census_matches_roots_of_unity_oracle(n):
    c = cr.inverse_branch_census(fam.power(2), 0, 1.0, 0.3, 1.0, n)
    assert c.count == _roots_of_unity_count(n)


def test_census_frozen_counts():
    counts = [cr.inverse_branch_census(fam.power(2), 0, 1.0, 0.3, 1.0, n).count for n in range(1, 11)]
    assert counts == [1, 1, 1, 1, 3, 7, 13, 25, 49, 99]


def test_census_ratio_approaches_arc_fraction():
    limit = 2 * math.asin(0.15) / math.pi
    c = cr.inverse_branch_census(fam.power(2), 0, 1.0, 0.3, 1.0, 12)
    assert abs(c.ratio - limit) < 0.01
    assert c.count <= c.total


def test_census_ball_off_julia_set():
    with pytest.raises(PreconditionError):
        cr.inverse_branch_census(fam.power(2), 0, 3.0, 0.3, 1.0, 4)


def test_census_branch_cap(skew):
    with pytest.raises(BranchCapExceeded):
        cr.inverse_branch_census(skew, 0, (0.5, 0.5), 0.3, 1.0, 7)


def test_census_skew_runs(skew):
    c = cr.inverse_branch_census(fam.product_power(2), 0, (1.0, 1.0), 0.3, 1.0, 3)
    assert 0 < c.count <= 64


@given(n=st.integers(3, 8), r1=st.floats(0.1, 0.5), r2=st.floats(0.1, 0.5),
       p1=st.floats(0.05, 2.0), p2=st.floats(0.05, 2.0))
def test_census_monotone(n, r1, r2, p1, p2):
    spec = fam.power(2)
    sample = cr.sample_equilibrium(spec, 0, 20, 2000, seed=0)
    r_lo, r_hi = sorted((r1, r2))
    p_lo, p_hi = sorted((p1, p2))
    count = lambda r, p: cr.inverse_branch_census(spec, 0, 1.0, r, p, n, sample=sample).count
    assert count(r_hi, p_lo) <= count(r_hi, p_hi)
    assert count(r_lo, p_hi) <= count(r_hi, p_hi)
