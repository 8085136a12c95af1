import math

import numpy as np
import pytest

from biflab import family as fam
from biflab import measure
from biflab.errors import DegreeCapExceeded
from biflab.measure import MeasureSample


def test_z2_sample_on_unit_circle():
    s = measure.sample_equilibrium(fam.power(2), 0, depth=30, count=4000, seed=1)
    assert s.count == 4000
    assert 0.99 <= np.mean(np.abs(s.points)) <= 1.01
    assert s.weights.sum() == pytest.approx(1.0)


def test_chebyshev_julia_set_is_interval(quad):
    s = measure.sample_equilibrium(quad, -2, depth=30, count=4000, seed=2)
    assert np.max(np.abs(s.points.imag)) < 0.01
    assert np.max(np.abs(s.points.real)) <= 2 + 1e-9


def test_empty_sample(quad):
    s = measure.sample_equilibrium(quad, 0.1, depth=10, count=0, seed=0)
    assert s.count == 0 and s.weights.size == 0


def test_sampling_is_seeded(quad):
    a = measure.sample_equilibrium(quad, -0.5 + 0.3j, depth=20, count=300, seed=9)
    b = measure.sample_equilibrium(quad, -0.5 + 0.3j, depth=20, count=300, seed=9)
    c = measure.sample_equilibrium(quad, -0.5 + 0.3j, depth=20, count=300, seed=10)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_tree_mode_holds_all_preimages(quad):
    s = measure.sample_equilibrium(quad, -0.1, depth=8, count=0, seed=3, mode="tree")
    assert s.count == 2 ** 8
    # the whole tree maps onto itself two-to-one
    img = quad.p(-0.1, s.points)
    d = np.abs(img[:, None] - s.points[None, :]).min(axis=1)
    assert np.quantile(d, 0.5) < 0.2


def test_skew_sample_inside_polydisk(skew):
    s = measure.sample_equilibrium(skew, 0.05, depth=20, count=500, seed=4)
    assert s.points.shape == (500, 2)
    assert np.all(np.abs(s.points) <= fam.certified_radius(skew, fam.ParameterDomain(0.05, 1e-9, 1e-9, 1, 1)))


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_pushforward_gap(lam):
    spec = fam.power(2) if lam == 0 else fam.quadratic()
    s = measure.sample_equilibrium(spec, lam, depth=30, count=10_000, seed=5)
    assert measure.pushforward_check(s, spec).gap < 0.05


def test_pushforward_gap_zero_at_fixed_point(quad):
    fixed = (1 + math.sqrt(1 - 4 * 0.1)) / 2
    s = MeasureSample(0.1, np.array([fixed], dtype=complex), 0, 0, 0)
    assert measure.pushforward_check(s, quad).gap == pytest.approx(0.0, abs=1e-14)


def test_find_periodic_z2_fixed_points():
    cs = measure.find_periodic(fam.power(2), 0, 1)
    order = np.argsort(np.abs(cs.points))
    assert np.allclose(cs.points[order], [0, 1], atol=1e-12)
    assert np.allclose(np.abs(cs.multipliers[order]), [0, 2], atol=1e-12)
    assert list(cs.repelling[order]) == [False, True]


def test_find_periodic_z2_period_four():
    cs = measure.find_periodic(fam.power(2), 0, 4)
    assert cs.count_with_multiplicity == 16
    on_circle = np.abs(np.abs(cs.points) - 1) < 1e-9
    assert on_circle.sum() == 15
    assert np.allclose(np.abs(cs.multipliers[on_circle]), 16)
    assert cs.repelling[on_circle].all() and not cs.repelling[~on_circle].any()
    assert np.all(cs.residuals < 1e-10)


def test_find_periodic_basilica_period_two(quad):
    cs = measure.find_periodic(quad, -1, 2)
    pts = cs.points
    golden = np.array([(1 + math.sqrt(5)) / 2, (1 - math.sqrt(5)) / 2])
    for target, mult in [(0, 0.0), (-1, 0.0)]:
        k = np.argmin(np.abs(pts - target))
        assert abs(pts[k] - target) < 1e-10 and abs(cs.multipliers[k]) < 1e-9
    for g in golden:
        k = np.argmin(np.abs(pts - g))
        assert abs(pts[k] - g) < 1e-10 and cs.repelling[k]


def test_degree_cap(quad):
    with pytest.raises(DegreeCapExceeded):
        measure.find_periodic(quad, 0, 13, method="direct")


def test_repelling_flags_match_multipliers(quad):
    cs = measure.find_periodic(quad, -0.75 + 0.1j, 6)
    mods = np.abs(cs.multipliers)
    assert np.array_equal(cs.repelling, mods > 1 + measure.REPELLING_TOL)


def test_repelling_fraction_grows(quad):
    fr = [measure.find_periodic(quad, -0.1 + 0.2j, n).repelling_fraction() for n in (1, 4, 8)]
    assert fr[0] <= fr[1] <= fr[2]
    assert fr[2] > 0.99


def test_skew_periodic_points_by_newton(skew):
    cs = measure.find_periodic(skew, 0.0, 2, seed=1, seed_count=512)
    assert cs.method != "direct"
    assert np.all(cs.residuals < 1e-10)
    assert cs.multipliers.shape[1] == 2


def test_discrepancy_examples():
    circle = measure.sample_equilibrium(fam.power(2), 0, depth=30, count=5000, seed=6)
    assert measure.discrepancy(circle, circle) == 0.0
    origin = MeasureSample(0.0, np.zeros(10, dtype=complex), 0, 0, 0)
    assert measure.discrepancy(circle, origin) >= 1 - 0.02


def test_period_ten_points_equidistribute():
    spec = fam.power(2)
    cs = measure.find_periodic(spec, 0, 10)
    rep = MeasureSample(0.0, cs.repelling_points(), 0, 0, 0)
    s = measure.sample_equilibrium(spec, 0, depth=30, count=10_000, seed=7)
    assert measure.discrepancy(rep, s) < 0.05


def test_moments_against_closed_form():
    s = measure.sample_equilibrium(fam.power(2), 0, depth=24, count=10_000, seed=8)
    gap = np.max(np.abs(measure.moments(s.points) - measure.circle_moments()))
    assert gap < 0.05


def test_derive_seed_is_stable():
    assert measure.derive_seed(1, 2, 3) == measure.derive_seed(1, 2, 3)
    assert measure.derive_seed(1, 2, 3) != measure.derive_seed(1, 3, 2)
