"""Holomorphic continuation of repelling cycles and Misiurewicz parameter detection.

A Misiurewicz parameter is a ``lam*`` where some iterate of a critical
point lands on a repelling cycle ``sigma(lam)`` which moves holomorphically
near ``lam*`` and the collision is not persistent.  The scan looks for
zeros of ``r(lam) = f_lam^{n0}(c(lam)) - sigma(lam)`` on a parameter grid.
For skew products only the critical curves ``{p_z = 0} x C`` are scanned:
there the collision reduces to the base map, because ``f^{n0}`` maps each
vertical line onto a vertical line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .critical import critical_points_batch, growth_rate, volume_series
from .errors import BaseNotRepelling, InsufficientPoints
from .family import ParameterDomain
from .measure import REPELLING_TOL, derive_seed, find_periodic, sample_equilibrium

CYCLE_TOL = 1e-10
RESIDUAL_TOL = 1e-8
TRANSVERSALITY_FLOOR = 1e-6
JUMP_TOL = 0.05
JULIA_RESOLUTION_FACTOR = 3.0
HIT_MERGE = 1e-7
NEWTON_MAX_ITER = 100
FD_STEP = 1e-6
WALK_SUBSTEPS = 8

# neighbour offsets (drow, dcol) tried in this order when choosing a predecessor
NEIGHBOR_ORDERS = {
    "forward": ((0, -1), (-1, 0), (0, 1), (1, 0)),
    "reverse": ((1, 0), (0, 1), (-1, 0), (0, -1)),
}


# -- vectorized orbit jets ---------------------------------------------------

def _jet(spec, lam, pts, n, dpts=None):
    """Image of ``f^n``, its spatial derivative and its lam-derivative.

    Maps of C: ``pts`` shape ``(N,)``; returns ``(img, a, g)`` with
    ``a = (f^n)'`` and ``g = d/dlam f^n(pts(lam))``.  Skew products:
    ``pts`` shape ``(N, 2)``; the derivative is the lower-triangular
    ``[[a, 0], [b, c]]`` returned as ``(a, b, c)``.
    """
    lam = np.asarray(lam, dtype=complex)
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.k == 1:
            z = np.array(pts, dtype=complex)
            a = np.ones_like(z)
            g = np.zeros_like(z) if dpts is None else np.array(dpts, dtype=complex)
            for _ in range(n):
                pz = spec.p_z(lam, z)
                g = pz * g + spec.p_lam(lam, z)
                a = pz * a
                z = spec.p(lam, z)
            return z, a, g
        z, w = np.array(pts[..., 0], dtype=complex), np.array(pts[..., 1], dtype=complex)
        a, b, c = np.ones_like(z), np.zeros_like(z), np.ones_like(z)
        if dpts is None:
            gz, gw = np.zeros_like(z), np.zeros_like(z)
        else:
            gz, gw = np.array(dpts[..., 0], dtype=complex), np.array(dpts[..., 1], dtype=complex)
        for _ in range(n):
            pz, qz, qw = spec.p_z(lam, z), spec.q_z(lam, z, w), spec.q_w(lam, z, w)
            gz, gw = pz * gz + spec.p_lam(lam, z), qz * gz + qw * gw + spec.q_lam(lam, z, w)
            a, b, c = pz * a, qz * a + qw * b, qw * c
            z, w = spec.p(lam, z), spec.q(lam, z, w)
        return np.stack([z, w], axis=-1), (a, b, c), np.stack([gz, gw], axis=-1)


def _solve_shifted(spec, D, rhs):
    """Solve ``(D - I) x = rhs`` for the (triangular) jet derivative ``D``."""
    if spec.k == 1:
        return rhs / (D - 1.0)
    a, b, c = D
    xz = rhs[..., 0] / (a - 1.0)
    xw = (rhs[..., 1] - b * xz) / (c - 1.0)
    return np.stack([xz, xw], axis=-1)


def _min_multiplier(spec, D):
    if spec.k == 1:
        return np.abs(D)
    return np.minimum(np.abs(D[0]), np.abs(D[2]))


def _dist(spec, x, y):
    d = np.abs(np.asarray(x) - np.asarray(y))
    return d if spec.k == 1 else d.max(axis=-1)


def cycle_newton(spec, lam, pts, n, tol=CYCLE_TOL, max_iter=50):
    """Vectorized Newton on ``f^n(x) = x``.

    Returns ``(pts, residual, min_multiplier, dpts)`` where ``dpts`` is the
    implicit derivative ``d pts / d lam`` at the final points.
    """
    x = np.array(pts, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_iter):
            img, D, _ = _jet(spec, lam, x, n)
            F = img - x
            res = np.abs(F) if spec.k == 1 else np.abs(F).max(axis=-1)
            if not np.any(res > 0.01 * tol):
                break
            step = _solve_shifted(spec, D, F)
            step[~np.isfinite(step)] = 0.0
            x = x - step
        img, D, g = _jet(spec, lam, x, n)
        res = _dist(spec, img, x)
        dx = -_solve_shifted(spec, D, g)
    res = np.where(np.isfinite(res), res, np.inf)
    return x, res, _min_multiplier(spec, D), dx


# -- continuation ------------------------------------------------------------

@dataclass
class CycleTrack:
    """A repelling periodic point continued over the nodes of a grid.

    ``points[j, i]`` is the continued point at node ``(j, i)`` (an extra
    trailing axis of length 2 for skew products), ``derivative`` its
    lam-derivative, ``multiplier`` the minimal multiplier modulus of the
    cycle.  ``valid`` marks nodes where Newton converged, the jump from
    the predictor stayed below ``jump_tol`` and the cycle is repelling.
    """

    spec: object = field(repr=False)
    dom: ParameterDomain
    period: int
    base_lam: complex
    base_point: object
    points: np.ndarray = field(repr=False)
    derivative: np.ndarray = field(repr=False)
    multiplier: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    order: str = "forward"

    @property
    def valid_fraction(self):
        return float(self.valid.mean())

    def orbit(self, j):
        """Grid of the ``j``-th cycle point ``f^j(sigma)`` and its lam-derivative."""
        pts = self.points.reshape((-1,) + self.points.shape[2:])
        dpts = self.derivative.reshape(pts.shape)
        lam = self.dom.nodes().ravel()
        img, _, g = _jet(self.spec, lam, pts, j, dpts)
        return img.reshape(self.points.shape), g.reshape(self.points.shape)

    def value_at(self, lam):
        """Continue from the nearest valid node to an arbitrary ``lam``."""
        j, i = self.dom.index_of(lam)
        if not self.valid[j, i]:
            return None
        lam0 = self.dom.node(j, i)
        pred = self.points[j, i] + self.derivative[j, i] * (lam - lam0)
        x, res, mult, dx = cycle_newton(self.spec, np.array([lam]), pred[None], self.period)
        if not (res[0] < CYCLE_TOL and mult[0] > 1.0 + REPELLING_TOL):
            return None
        return x[0], dx[0]


def _walk(spec, lam_from, lam_to, x, dx, n, max_step, jump_tol=JUMP_TOL):
    """Continue a cycle point along a straight segment in small steps."""
    steps = max(1, int(math.ceil(abs(lam_to - lam_from) / max_step)))
    for t in range(1, steps + 1):
        lam = lam_from + (lam_to - lam_from) * t / steps
        prev = lam_from + (lam_to - lam_from) * (t - 1) / steps
        pred = x + dx * (lam - prev)
        xs, res, mult, dxs = cycle_newton(spec, np.array([lam]), np.asarray(pred)[None], n)
        if not res[0] < CYCLE_TOL or not np.all(_dist(spec, xs[0], pred) < jump_tol):
            return None
        x, dx = xs[0], dxs[0]
    return x, dx


def continue_cycle(spec, dom, base_point, period, base_lam=None, order="forward",
                   jump_tol=JUMP_TOL, tol=CYCLE_TOL):
    """Breadth-first continuation of a repelling periodic point over ``dom``.

    The frontier advances one ring of grid neighbours at a time.  Each new
    node is predicted from its first valid neighbour in ``order`` by the
    tangent ``x + x'(lam) dlam`` and corrected by Newton on
    ``f^n(x) - x``.  A node whose correction exceeds ``jump_tol`` is
    retried by walking from its predecessor in steps of ``h / 8``.  Nodes
    where Newton fails, a step still jumps or the cycle stops repelling
    are invalid and do not seed further nodes.
    """
    n = int(period)
    base_lam = complex(dom.center if base_lam is None else base_lam)
    offsets = NEIGHBOR_ORDERS[order] if isinstance(order, str) else tuple(order)
    x0 = np.asarray(base_point, dtype=complex)
    xs, res, mult, dxs = cycle_newton(spec, np.array([base_lam]), x0[None], n, tol)
    if not res[0] < tol:
        raise BaseNotRepelling(f"base point is not periodic of period {n} (residual {res[0]:.2e})")
    if not mult[0] > 1.0 + REPELLING_TOL:
        raise BaseNotRepelling(f"base cycle has multiplier modulus {mult[0]:.6g} <= 1")

    ny, nx = dom.shape
    tail = () if spec.k == 1 else (2,)
    points = np.full((ny, nx) + tail, np.nan + 0j)
    deriv = np.full((ny, nx) + tail, np.nan + 0j)
    multiplier = np.full((ny, nx), np.nan)
    residual = np.full((ny, nx), np.inf)
    valid = np.zeros((ny, nx), dtype=bool)
    tried = np.zeros((ny, nx), dtype=bool)
    nodes = dom.nodes()

    j0, i0 = dom.index_of(base_lam)
    walked = _walk(spec, base_lam, nodes[j0, i0], xs[0], dxs[0], n, dom.h / 2)
    tried[j0, i0] = True
    if walked is not None:
        x, dx = walked
        img, D, _ = _jet(spec, np.array([nodes[j0, i0]]), np.asarray(x)[None], n)
        m = _min_multiplier(spec, D)
        if m[0] > 1.0 + REPELLING_TOL:
            points[j0, i0], deriv[j0, i0], multiplier[j0, i0] = x, dx, m[0]
            residual[j0, i0] = _dist(spec, img, np.asarray(x)[None])[0]
            valid[j0, i0] = True
    frontier = [(j0, i0)] if valid[j0, i0] else []
    while frontier:
        cand, parents = [], []
        for (j, i) in frontier:
            for dj, di in offsets:
                jj, ii = j + dj, i + di
                if 0 <= jj < ny and 0 <= ii < nx and not tried[jj, ii]:
                    tried[jj, ii] = True
                    cand.append((jj, ii))
        if not cand:
            break
        # predecessor: first valid neighbour in the given order
        for (jj, ii) in cand:
            for dj, di in offsets:
                pj, pi = jj - dj, ii - di
                if 0 <= pj < ny and 0 <= pi < nx and valid[pj, pi]:
                    parents.append((pj, pi))
                    break
        cj, ci = np.array(cand).T
        pj, pi = np.array(parents).T
        lam = nodes[cj, ci]
        dl = lam - nodes[pj, pi]
        dl = dl if spec.k == 1 else dl[:, None]
        pred = points[pj, pi] + deriv[pj, pi] * dl
        x, res, mult, dx = cycle_newton(spec, lam, pred, n, tol)
        ok = (res < tol) & (mult > 1.0 + REPELLING_TOL) & (_dist(spec, x, pred) < jump_tol)
        # one tangent step can overshoot on coarse grids; retry in small steps
        for k in np.flatnonzero(~ok & (mult > 1.0 + REPELLING_TOL)):
            walked = _walk(spec, nodes[pj[k], pi[k]], lam[k], points[pj[k], pi[k]], deriv[pj[k], pi[k]],
                           n, dom.h / WALK_SUBSTEPS, jump_tol)
            if walked is not None:
                xk = np.asarray(walked[0])[None]
                img, D, _ = _jet(spec, lam[k:k + 1], xk, n)
                m = _min_multiplier(spec, D)[0]
                x[k], dx[k], mult[k], res[k] = walked[0], walked[1], m, _dist(spec, img, xk)[0]
                ok[k] = m > 1.0 + REPELLING_TOL
        points[cj, ci] = x
        deriv[cj, ci] = dx
        multiplier[cj, ci] = mult
        residual[cj, ci] = res
        valid[cj, ci] = ok
        frontier = [c for c, good in zip(cand, ok) if good]
    points[~valid] = np.nan
    deriv[~valid] = np.nan
    base = complex(xs[0]) if spec.k == 1 else tuple(complex(v) for v in xs[0])
    return CycleTrack(spec, dom, n, base_lam, base, points, deriv, multiplier, residual, valid,
                      order if isinstance(order, str) else "custom")


def group_cycles(spec, cycle_set, exact=True):
    """Split a :class:`CycleSet` into cycles; one representative per cycle.

    With ``exact`` only cycles whose minimal period equals the set's period
    are returned.  Returns ``[(representative, minimal_period, repelling)]``.
    """
    pts = np.asarray(cycle_set.points)
    n = cycle_set.period
    lam = cycle_set.lam
    seen = np.zeros(len(pts), dtype=bool)
    out = []
    for idx in range(len(pts)):
        if seen[idx]:
            continue
        orbit = [idx]
        cur = pts[idx]
        minimal = n
        for step in range(1, n + 1):
            cur = _jet(spec, np.array([lam]), np.asarray(cur)[None], 1)[0][0]
            d = _dist(spec, pts, cur[None] if spec.k == 2 else cur)
            hit = int(np.argmin(d))
            if hit == idx:
                minimal = step
                break
            orbit.append(hit)
        seen[orbit] = True
        if exact and minimal != n:
            continue
        out.append((pts[idx], minimal, bool(cycle_set.repelling[idx])))
    return out


def default_tracks(spec, dom, periods, base_lam=None, order="forward"):
    """Continue one point of every repelling cycle of each period found at ``base_lam``."""
    base_lam = complex(dom.center if base_lam is None else base_lam)
    tracks = []
    for n in periods:
        cs = find_periodic(spec, base_lam, n)
        for rep, _, repelling in group_cycles(spec, cs):
            if repelling:
                tracks.append(continue_cycle(spec, dom, rep, n, base_lam, order))
    return tracks


# -- scan --------------------------------------------------------------------

@dataclass(frozen=True)
class MisiurewiczHit:
    lam_star: complex
    n0: int
    critical_id: int
    track_id: int
    orbit_index: int
    residual: float
    transversality: float
    multiplier: float
    julia_distance: float | None = None
    julia_resolution: float | None = None

    @property
    def cycle_id(self):
        return (self.track_id, self.orbit_index)

    def as_dict(self):
        return {
            "lam_star": [self.lam_star.real, self.lam_star.imag],
            "n0": self.n0,
            "critical_id": self.critical_id,
            "cycle_id": list(self.cycle_id),
            "residual": self.residual,
            "transversality": self.transversality,
            "multiplier": self.multiplier,
            "julia_distance": self.julia_distance,
            "julia_resolution": self.julia_resolution,
        }


@dataclass
class ScanResult:
    hits: list
    candidates: int
    rejected: list
    skipped_cells: dict

    def __iter__(self):
        return iter(self.hits)

    def __len__(self):
        return len(self.hits)


def _base(spec, x):
    """Base (z) coordinate of a point array."""
    return x if spec.k == 1 else x[..., 0]


def _critical_orbit(spec, lam, crit, n0):
    """``f^{n0}(c)`` and its lam-derivative in the base coordinate."""
    if spec.k == 1:
        img, _, g = _jet(spec, lam, crit, n0)
        return img, g
    # the base of a skew product is the map p itself
    z = np.array(crit, dtype=complex)
    g = np.zeros_like(z)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n0):
            g = spec.p_z(lam, z) * g + spec.p_lam(lam, z)
            z = spec.p(lam, z)
    return z, g


def _match_to(ref, options):
    """For each row pick the column of ``options`` closest to ``ref``."""
    k = np.argmin(np.abs(options - ref[:, None]), axis=1)
    return options[np.arange(len(ref)), k]


def _winding(values):
    """Winding number of the closed polygon through ``values`` (last axis) about 0."""
    ang = np.angle(values)
    inc = np.diff(np.concatenate([ang, ang[..., :1]], axis=-1), axis=-1)
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    total = np.where(np.all(np.isfinite(values), axis=-1), inc.sum(axis=-1), 0.0)
    return np.rint(total / (2 * np.pi)).astype(int)


class _Residual:
    """``r(lam) = f^{n0}(c(lam)) - sigma_j(lam)`` evaluated off-grid by local continuation."""

    def __init__(self, spec, track, j, n0):
        self.spec, self.track, self.j, self.n0 = spec, track, j, n0

    def sigma(self, lam, x_prev, dx_prev, lam_prev):
        """Continue the tracked periodic point from ``lam_prev`` to ``lam``."""
        dl = lam - lam_prev
        pred = x_prev + dx_prev * (dl if self.spec.k == 1 else dl[:, None])
        return cycle_newton(self.spec, lam, pred, self.track.period)

    def evaluate(self, lam, x, dx, crit):
        """``(r, r', sigma_j, mult)`` at ``lam`` given the continued base point ``x``."""
        img, _, g = _jet(self.spec, lam, x, self.j, dx)
        F, dF = _critical_orbit(self.spec, lam, crit, self.n0)
        return F - _base(self.spec, img), dF - _base(self.spec, g), img


def _critical_at(spec, lam, ref):
    cps = critical_points_batch(spec, lam)
    return _match_to(ref, cps)


def _refine(spec, resid, lam, x, dx, crit, h, tol):
    """Damped Newton on ``r`` for a batch of candidates; steps are clamped to ``h``."""
    lam = lam.copy()
    active = np.ones(lam.shape, dtype=bool)
    r = np.full(lam.shape, np.inf + 0j)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(NEWTON_MAX_ITER):
            r, dr, _ = resid.evaluate(lam, x, dx, crit)
            step = r / dr
            big = np.abs(step) > h
            step = np.where(big, step / np.abs(step) * h, step)
            step = np.where(np.isfinite(step) & active, step, 0.0)
            active &= np.isfinite(r) & (np.abs(r) > 1e-3 * tol) & (np.abs(step) > 1e-16 * np.maximum(1, np.abs(lam)))
            if not active.any():
                break
            new_lam = lam - step
            xn, res, mult, dxn = resid.sigma(new_lam, x, dx, lam)
            dl = new_lam - lam
            pred = x + dx * (dl if spec.k == 1 else dl[:, None])
            # stay on the continued cycle: no jumps, still repelling
            good = (res < CYCLE_TOL) & (mult > 1.0 + REPELLING_TOL) & (_dist(spec, xn, pred) < JUMP_TOL)
            upd = active & good
            lam = np.where(upd, new_lam, lam)
            sel = upd if spec.k == 1 else upd[:, None]
            x = np.where(sel, xn, x)
            dx = np.where(sel, dxn, dx)
            crit = np.where(upd, _critical_at(spec, lam, crit), crit)
            active &= good
        r, dr, _ = resid.evaluate(lam, x, dx, crit)
    return lam, x, dx, crit, np.abs(r)


def _julia_check(spec, lam, point, seed, count=4000, depth=30):
    sample = sample_equilibrium(spec, lam, depth, count, seed)
    pts = sample.points
    flat = np.column_stack([pts.real, pts.imag]) if spec.k == 1 else \
        np.column_stack([pts[:, 0].real, pts[:, 0].imag, pts[:, 1].real, pts[:, 1].imag])
    tree = cKDTree(flat)
    nn, _ = tree.query(flat, k=2)
    # mu can be thin near endpoints of the Julia set, hence the generous factor
    resolution = JULIA_RESOLUTION_FACTOR * float(np.quantile(nn[:, 1], 0.99))
    p = np.atleast_1d(np.asarray(point, dtype=complex))
    q = np.column_stack([p.real, p.imag]).ravel()
    dist, _ = tree.query(q)
    return float(dist), resolution


def misiurewicz_scan(spec, dom, tracks, n0_max, residual_tol=RESIDUAL_TOL,
                     transversality_floor=TRANSVERSALITY_FLOOR, julia_check=True, seed=0):
    """Find parameters where a critical iterate hits a continued repelling cycle.

    For every critical point ``c_i``, every track and cycle point ``sigma_j``
    and every ``n0 <= n0_max``, a grid cell becomes a candidate when the
    residual ``r`` winds around 0 on its corners or a Newton step from a
    corner lands inside it.  Candidates are refined by damped Newton and
    re-validated from scratch: residual below ``residual_tol``, repelling
    cycle, ``|r'|`` above ``transversality_floor`` (finite difference), not
    identically zero on 9 probe points, and ``sigma(lam*)`` within sampling
    resolution of an equilibrium-measure sample.  Hits at the same
    parameter keep the smallest ``n0``.
    """
    nodes = dom.nodes()
    ny, nx = dom.shape
    h = dom.h
    flat_lam = nodes.ravel()
    crit_nodes = critical_points_batch(spec, flat_lam)                 # (N, m)
    n_crit = crit_nodes.shape[1]
    raw, rejected = [], []
    skipped = {}
    candidates = 0
    for t_id, track in enumerate(tracks):
        cells_ok = track.valid[:-1, :-1] & track.valid[1:, :-1] & track.valid[:-1, 1:] & track.valid[1:, 1:]
        skipped[t_id] = int((~cells_ok).sum())
        base_pts = track.points.reshape((-1,) + track.points.shape[2:])
        base_d = track.derivative.reshape(base_pts.shape)
        for j in range(track.period):
            for n0 in range(1, n0_max + 1):
                resid = _Residual(spec, track, j, n0)
                for ci in range(n_crit):
                    # match critical points around each cell to its lower-left corner
                    crit = crit_nodes[:, ci]
                    r, dr, _ = resid.evaluate(flat_lam, base_pts, base_d, crit)
                    r = r.reshape(ny, nx)
                    dr = dr.reshape(ny, nx)
                    with np.errstate(invalid="ignore", divide="ignore"):
                        target = nodes - r / dr
                    corners = np.stack([r[:-1, :-1], r[:-1, 1:], r[1:, 1:], r[1:, :-1]], axis=-1)
                    wind = _winding(corners) != 0
                    lo_x, lo_y = nodes[:-1, :-1].real, nodes[:-1, :-1].imag
                    inside = np.zeros((ny - 1, nx - 1), dtype=bool)
                    for sj, si in ((0, 0), (0, 1), (1, 0), (1, 1)):
                        tg = target[sj:sj + ny - 1, si:si + nx - 1]
                        inside |= (tg.real >= lo_x) & (tg.real <= lo_x + h) & \
                                  (tg.imag >= lo_y) & (tg.imag <= lo_y + h)
                    cand = np.argwhere((wind | inside) & cells_ok)
                    if cand.size == 0:
                        continue
                    candidates += len(cand)
                    cj, cx_ = cand[:, 0], cand[:, 1]
                    start = nodes[cj, cx_] + (0.5 + 0.5j) * h
                    idx = cj * nx + cx_
                    xs, res, mult, dxs = resid.sigma(start, base_pts[idx], base_d[idx], flat_lam[idx])
                    ok = res < CYCLE_TOL
                    if not ok.any():
                        continue
                    start, xs, dxs, idx = start[ok], xs[ok], dxs[ok], idx[ok]
                    crit0 = _critical_at(spec, start, crit[idx])
                    lam_s, x_s, dx_s, crit_s, rabs = _refine(spec, resid, start, xs, dxs, crit0, h, residual_tol)
                    for k in range(len(lam_s)):
                        if rabs[k] < residual_tol and dom.contains(lam_s[k]):
                            raw.append((complex(lam_s[k]), n0, ci, t_id, j, x_s[k], dx_s[k]))
    hits = []
    raw.sort(key=lambda e: (e[1], e[2], e[3], e[4], e[0].real, e[0].imag))
    accepted = []
    for lam_star, n0, ci, t_id, j, x, dx in raw:
        if any(abs(lam_star - a) < HIT_MERGE for a in accepted):
            continue
        verdict = _validate(spec, tracks[t_id], lam_star, (x, dx), n0, ci, t_id, j, h, residual_tol,
                            transversality_floor, julia_check, seed)
        if isinstance(verdict, MisiurewiczHit):
            hits.append(verdict)
            accepted.append(verdict.lam_star)
        else:
            rejected.append({"lam": [lam_star.real, lam_star.imag], "n0": n0, "reason": verdict})
    hits.sort(key=lambda hh: (hh.lam_star.real, hh.lam_star.imag))
    return ScanResult(hits, candidates, rejected, skipped)


def _validate(spec, track, lam_star, state, n0, ci, t_id, j, h, residual_tol, floor, julia_check,
              seed):
    """Re-evaluate a refined root; returns a hit or a rejection reason.

    ``state`` is the continued cycle point reached by the refinement (near a
    branch cut of the track the nearest grid node may sit on another branch).
    """
    resid = _Residual(spec, track, j, n0)
    xs, res, mult0, dxs = cycle_newton(spec, np.array([lam_star]), np.asarray(state[0])[None], track.period)
    if not (res[0] < CYCLE_TOL):
        return "cycle does not continue to lam*"
    x, dx = xs[0], dxs[0]
    crit = critical_points_batch(spec, np.array([lam_star]))[0]

    def r_at(lams):
        lams = np.asarray(lams, dtype=complex)
        xs, res, _, dxs = resid.sigma(lams, np.repeat(np.asarray(x)[None], len(lams), 0),
                                      np.repeat(np.asarray(dx)[None], len(lams), 0),
                                      np.full(lams.shape, lam_star))
        cr = _critical_at(spec, lams, np.full(lams.shape, crit[ci]))
        r, _, img = resid.evaluate(lams, xs, dxs, cr)
        return r, res, img

    r0, res0, img0 = r_at([lam_star])
    if not (abs(r0[0]) < residual_tol and res0[0] < CYCLE_TOL):
        return f"residual {abs(r0[0]):.3e} above tolerance"
    mult = float(_min_multiplier(spec, _jet(spec, np.array([lam_star]), np.asarray(x)[None], track.period)[1])[0])
    if not mult > 1.0 + REPELLING_TOL:
        return f"cycle not repelling at lam* (multiplier {mult:.6g})"
    rp, _, _ = r_at([lam_star + FD_STEP, lam_star - FD_STEP])
    trans = float(abs(rp[0] - rp[1]) / (2 * FD_STEP))
    if not trans > floor:
        return f"transversality {trans:.3e} below floor"
    probes = lam_star + h * np.array([a + 1j * b for a in (-1, 0, 1) for b in (-1, 0, 1)])
    rpr, respr, _ = r_at(probes)
    if np.all(np.abs(rpr) < residual_tol):
        return "persistent collision: residual vanishes at all 9 probes"
    jd = jr = None
    if julia_check:
        sigma = img0[0]
        jd, jr = _julia_check(spec, lam_star, sigma, derive_seed(seed, 11))
        if not jd < jr:
            return f"cycle point {jd:.3e} from the Julia sample (resolution {jr:.3e})"
    return MisiurewiczHit(lam_star, n0, ci, t_id, j, float(abs(r0[0])), trans, mult, jd, jr)


# -- verification ------------------------------------------------------------

@dataclass(frozen=True)
class HitReport:
    lam_star: complex
    neighborhood_mass: float
    noise_floor: float
    above_floor: bool
    contradiction: bool
    growth_rate: float | None = None
    rate_ci: float | None = None

    def as_dict(self):
        return {
            "lam_star": [self.lam_star.real, self.lam_star.imag],
            "neighborhood_mass": self.neighborhood_mass,
            "noise_floor": self.noise_floor,
            "above_floor": self.above_floor,
            "contradiction": self.contradiction,
            "growth_rate": self.growth_rate,
            "rate_ci": self.rate_ci,
        }


def verify_hit(spec, hit, bif, noise_floor=0.0, n_range=None, radius_cells=2):
    """Compare a hit with the bifurcation field around it.

    Reports the ``dd^c L`` mass of the ``(2r+1)^2`` node block around
    ``lam*``; a mass at or below ``noise_floor`` is flagged as a
    contradiction.  With ``n_range`` the postcritical volume growth rate
    over the same block is fitted as well.
    """
    lam = hit.lam_star if isinstance(hit, MisiurewiczHit) else complex(hit)
    mass = bif.neighborhood_mass(lam, radius_cells)
    above = mass > noise_floor
    rate = ci = None
    if n_range is not None:
        side = (2 * radius_cells + 1) * bif.h
        window = ParameterDomain.square(lam, side, 2 * radius_cells + 1)
        try:
            fit = growth_rate(volume_series(spec, window, n_range))
            rate, ci = fit.rate, fit.ci
        except InsufficientPoints:
            pass
    return HitReport(lam, float(mass), float(noise_floor), bool(above), not above, rate, ci)
