import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biflab import family as fam
from biflab import lyapunov as lyap
from biflab import misiurewicz as mz
from biflab.errors import BaseNotRepelling
from biflab.family import FamilySpec, Kind, ParameterDomain
from biflab.lyapunov import LyapunovGrid


def beta(lam):
    """Closed-form repelling fixed point of z^2 + lam on the branch through 1 at lam = 0."""
    return (1 + cmath.sqrt(1 - 4 * lam)) / 2


@pytest.fixture(scope="module")
def big_domain():
    return ParameterDomain(-1 + 0j, 1.5, 1.5, 61, 61)


@pytest.fixture(scope="module")
def big_tracks(big_domain):
    return mz.default_tracks(fam.quadratic(), big_domain, [1, 2], base_lam=0j)


# -- continuation ------------------------------------------------------------

def test_fixed_point_track_closed_form():
    q = fam.quadratic()
    dom = ParameterDomain(-1 + 0j, 1.0, 1.0, 41, 41)
    tr = mz.continue_cycle(q, dom, 1.0 + 0j, 1, base_lam=0j)
    assert tr.valid_fraction > 0.99
    want = np.vectorize(beta)(dom.nodes())
    ok = tr.valid
    assert np.max(np.abs(tr.points[ok] - want[ok])) < 1e-10
    assert np.all(tr.residual[ok] < mz.CYCLE_TOL) and np.all(tr.multiplier[ok] > 1)
    x, dx = tr.value_at(-2)
    assert abs(x - 2) < 1e-12
    assert abs(dx - (-1 / cmath.sqrt(1 - 4 * -2))) < 1e-9


def test_base_not_repelling():
    dom = ParameterDomain(0j, 0.1, 0.1, 3, 3)
    with pytest.raises(BaseNotRepelling):
        mz.continue_cycle(fam.power(2), dom, 0j, 1, base_lam=0j)


def test_period_two_cycle_at_i(big_domain, big_tracks):
    q = fam.quadratic()
    two = [t for t in big_tracks if t.period == 2]
    assert len(two) == 1
    x, _ = two[0].value_at(1j)
    other = x * x + 1j
    assert {round(v.real, 9) + 1j * round(v.imag, 9) for v in (x, other)} == {-1 + 1j, -1j}
    mult = 4 * x * other
    assert abs(mult - 4 * (1 + 1j)) < 1e-9 and abs(mult) == pytest.approx(4 * math.sqrt(2))
    assert np.all(two[0].multiplier[two[0].valid] > 1)


def test_track_orbit_images(big_tracks):
    tr = [t for t in big_tracks if t.period == 2][0]
    img, dimg = tr.orbit(2)
    ok = tr.valid
    assert np.max(np.abs(img[ok] - tr.points[ok])) < 1e-8


def test_group_cycles_counts():
    q = fam.quadratic()
    cs = mz.find_periodic(q, 0.1j, 3)
    cycles = mz.group_cycles(q, cs)
    assert len(cycles) == 2 and all(p == 3 for _, p, _ in cycles)


@given(cx=st.floats(-2.3, -1.2), cy=st.floats(-0.6, 0.6), side=st.floats(0.1, 0.6),
       n=st.integers(5, 15))
def test_continuation_is_path_independent(cx, cy, side, n):
    """Forward and reverse neighbour orders agree on windows without branch points."""
    q = fam.quadratic()
    dom = ParameterDomain.square(complex(cx, cy), side, n)
    base = dom.center
    a = mz.continue_cycle(q, dom, beta(base), 1, base_lam=base, order="forward")
    b = mz.continue_cycle(q, dom, beta(base), 1, base_lam=base, order="reverse")
    both = a.valid & b.valid
    assert both.mean() > 0.9
    assert np.max(np.abs(a.points[both] - b.points[both])) < 1e-9


def test_misiurewicz_window_path_independent_period_two():
    q = fam.quadratic()
    dom = ParameterDomain.square(-2 + 0j, 0.4, 31)
    base = complex(-2)
    start = mz.find_periodic(q, base, 2)
    rep = mz.group_cycles(q, start)[0][0]
    a = mz.continue_cycle(q, dom, rep, 2, base_lam=base, order="forward")
    b = mz.continue_cycle(q, dom, rep, 2, base_lam=base, order="reverse")
    both = a.valid & b.valid
    assert both.all()
    assert np.max(np.abs(a.points - b.points)) < 1e-9


# -- scan ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def scan(big_domain, big_tracks):
    return mz.misiurewicz_scan(fam.quadratic(), big_domain, big_tracks, 3)


def _hit_near(hits, lam, tol=1e-6):
    near = [h for h in hits if abs(h.lam_star - lam) < tol]
    return near[0] if near else None


def test_scan_finds_chebyshev_parameter(scan):
    h = _hit_near(scan.hits, -2)
    assert h is not None
    assert h.n0 == 2 and h.residual < 1e-12
    assert h.multiplier == pytest.approx(4.0, rel=1e-9)
    assert h.transversality > mz.TRANSVERSALITY_FLOOR


def test_scan_finds_i(scan):
    h = _hit_near(scan.hits, 1j)
    assert h is not None and h.n0 == 2
    assert h.multiplier == pytest.approx(4 * math.sqrt(2), rel=1e-9)
    assert h.julia_distance < h.julia_resolution


def _cycle_points(lam):
    """Fixed points (roots of z^2 - z + lam) and the 2-cycle (roots of z^2 + z + lam + 1)."""
    out = []
    for b, c in ((-1, lam), (1, lam + 1)):
        s = cmath.sqrt(b * b - 4 * c)
        out += [(-b + s) / 2, (-b - s) / 2]
    return np.array(out)


def _crit_orbit(lam, n):
    z = 0j
    for _ in range(n):
        z = z * z + lam
    return z


def test_every_hit_revalidates_from_scratch(scan):
    """Residual, multiplier and transversality recomputed from closed-form cycles."""
    assert len(scan.hits) > 2
    eps = 1e-6
    for h in scan.hits:
        lam = h.lam_star
        pts = _cycle_points(lam)
        z = _crit_orbit(lam, h.n0)
        k = int(np.argmin(np.abs(pts - z)))
        assert abs(pts[k] - z) < 1e-8
        period = 1 if k < 2 else 2
        mult = 2 * pts[k] if period == 1 else 4 * pts[k] * (pts[k] ** 2 + lam)
        assert abs(mult) > 1
        r = []
        for dl in (eps, -eps):
            near = _cycle_points(lam + dl)
            sig = near[int(np.argmin(np.abs(near - pts[k])))]
            r.append(_crit_orbit(lam + dl, h.n0) - sig)
        assert abs(r[0] - r[1]) / (2 * eps) > mz.TRANSVERSALITY_FLOOR


def test_no_hits_in_attracting_region():
    q = fam.quadratic()
    dom = ParameterDomain(0j, 0.2, 0.2, 21, 21)
    tracks = mz.default_tracks(q, dom, [1, 2, 3], base_lam=0j)
    res = mz.misiurewicz_scan(q, dom, tracks, 10)
    assert len(res) == 0


def test_hits_are_deduplicated_with_least_n0(scan):
    lams = np.array([h.lam_star for h in scan.hits])
    d = np.abs(lams[:, None] - lams[None, :]) + np.eye(len(lams))
    assert d.min() > mz.HIT_MERGE


def test_persistent_collision_rejected():
    # z^2 - 2 for every lam: 0 -> -2 -> 2 lands on the fixed point 2 identically
    spec = FamilySpec(Kind.UNIVARIATE, ((-2, 0.0), (0,), (1,)), name="frozen")
    dom = ParameterDomain(0j, 0.5, 0.5, 11, 11)
    tr = mz.continue_cycle(spec, dom, 2 + 0j, 1, base_lam=0j)
    assert len(mz.misiurewicz_scan(spec, dom, [tr], 3)) == 0
    state = (np.asarray(2 + 0j), np.asarray(0j))
    args = (spec, tr, 0j, state, 2, 0, 0, 0, dom.h, mz.RESIDUAL_TOL)
    assert "transversality" in mz._validate(*args, mz.TRANSVERSALITY_FLOOR, False, 0)
    assert "persistent" in mz._validate(*args, -1.0, False, 0)


# -- verification against the bifurcation field --------------------------------

def test_verify_hit_flags_constant_lyapunov():
    dom = ParameterDomain(0j, 0.2, 0.2, 16, 16)
    flat = lyap.ddc_field(LyapunovGrid.from_values(dom, np.full(dom.shape, 2 * math.log(2))))
    hit = mz.MisiurewiczHit(0.01 + 0.01j, 1, 0, 0, 0, 0.0, 1.0, 2.0)
    rep = mz.verify_hit(fam.product_power(2), hit, flat, noise_floor=0.0)
    assert rep.neighborhood_mass == 0.0 and rep.contradiction and not rep.above_floor


def test_verify_hit_at_chebyshev_parameter():
    q = fam.quadratic()
    dom = ParameterDomain.square(-2 + 0j, 0.4, 32)
    grid = lyap.sweep_grid(q, dom, depth=11, count=0, seed=1, mode="tree")
    base = lyap.sweep_grid(q, ParameterDomain.square(-0.1 + 0j, 0.2, 16), depth=11, count=0, seed=1,
                           mode="tree")
    floor = lyap.noise_floor(lyap.ddc_field(base))
    rep = mz.verify_hit(q, complex(-2), lyap.ddc_field(grid), floor, n_range=range(6, 16))
    assert rep.above_floor and not rep.contradiction
    assert abs(rep.growth_rate - math.log(2)) < 0.2
