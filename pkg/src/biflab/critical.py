"""Postcritical volume growth, stability classification and inverse-branch census.

The graph of ``lam -> f_lam^n(c(lam))`` over a parameter window has area
``int (1 + |d/dlam f_lam^n(c(lam))|^2) dA`` (Wirtinger), which is the mass
of ``(f^n)_* C_f`` for one-dimensional families.  Only parameters whose
critical orbit is still inside U at step ``n`` count.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import polyroots
from .errors import (AllSamplesEscaped, BranchCapExceeded, InsufficientPoints,
                     PreconditionError)
from .family import Kind, ParameterDomain, certified_radius
from .measure import derive_seed, sample_equilibrium

GAUSS_ORDER = 2
BASE_CELLS = 16
REFINE_TAU = 1.0
MIN_CELL = 1e-13
MAX_NODES_PER_BATCH = 2_000_000
MAX_TOTAL_CELLS = 50_000_000
MC_STRATA = 10_000
CENSUS_BOUNDARY = 32
SKEW_BRANCH_CAP = 4096
UNIVARIATE_BRANCH_CAP = 1 << 20


class CritKind(str, enum.Enum):
    FIBER_POINT = "FiberPoint"
    Z_CRIT_CURVE = "ZCritCurve"
    W_CRIT_CURVE = "WCritCurve"


@dataclass(frozen=True)
class CriticalComponent:
    kind: CritKind
    multiplicity: int
    lam: complex
    value: complex | None = None   # z of a FiberPoint / ZCritCurve; w at z=0 for WCritCurve
    index: int = 0


def critical_components(spec, lam):
    """Critical set of ``f_lam`` split into components with multiplicities."""
    lam = complex(lam)
    out = []
    dp = np.polynomial.polynomial.polyder(spec.p_coefficients(lam), axis=0)
    zs = polyroots.solve(dp[::-1]) if dp.size > 1 else None
    kind = CritKind.FIBER_POINT if spec.k == 1 else CritKind.Z_CRIT_CURVE
    if zs is not None:
        for idx, (z, m) in enumerate(zip(zs.roots, zs.multiplicities)):
            out.append(CriticalComponent(kind, int(m), lam, complex(z), idx))
    if spec.k == 2:
        dq = np.polynomial.polynomial.polyder(spec.q_coefficients(lam, 0.0), axis=0)
        if dq.shape[0] > 1:
            ws = polyroots.solve(dq[::-1])
            for idx, (w, m) in enumerate(zip(ws.roots, ws.multiplicities)):
                out.append(CriticalComponent(CritKind.W_CRIT_CURVE, int(m), lam, complex(w), idx))
    return out


def critical_points_batch(spec, lam):
    """Roots of ``p_z(lam, .)`` listed with multiplicity, shape ``lam.shape + (deg_z - 1,)``."""
    lam = np.asarray(lam, dtype=complex)
    coeffs = spec.p_coefficients(lam.ravel())                 # (d+1, B)
    dcoef = np.polynomial.polynomial.polyder(coeffs, axis=0)   # (d, B)
    roots = polyroots.solve_batch(dcoef[::-1].T)
    return roots.reshape(lam.shape + (roots.shape[-1],))


# -- volume series ---------------------------------------------------------

@dataclass
class VolumeSeries:
    """Log-masses ``log ||(f^n)_* C_f||`` restricted to U over a window."""

    window: ParameterDomain
    n_range: np.ndarray
    log_mass: np.ndarray
    escaped_fraction: np.ndarray
    method: str
    flags: list = field(default_factory=list)
    fitted_rate: float | None = None
    rate_ci: float | None = None

    def as_dict(self):
        return {
            "window": {"center": [self.window.center.real, self.window.center.imag],
                       "half_width": self.window.half_width, "half_height": self.window.half_height},
            "n": [int(n) for n in self.n_range],
            "log_mass": [float(v) for v in self.log_mass],
            "escaped_fraction": [float(v) for v in self.escaped_fraction],
            "method": self.method,
            "flags": list(self.flags),
            "fitted_rate": self.fitted_rate,
            "rate_ci": self.rate_ci,
        }


def _gauss_template(order):
    x, w = np.polynomial.legendre.leggauss(order)
    gx, gy = np.meshgrid(x, x)
    return gx.ravel(), gy.ravel(), np.outer(w, w).ravel()


def _horner_first(coeffs, x):
    """In-place Horner on ascending coefficients stored along the first axis."""
    acc = np.multiply(coeffs[-1], x)
    acc += coeffs[-2]
    for j in range(coeffs.shape[0] - 3, -1, -1):
        acc *= x
        acc += coeffs[j]
    return acc


class _GaussCells:
    """Composite Gauss cells carrying critical orbits and their lam-derivatives.

    Per-node coefficient tables of ``p``, ``p_z`` and ``p_lam`` in ``z`` are
    built once per block so each iterate costs three short Horner passes.
    """

    def __init__(self, spec, order):
        self.spec = spec
        self.gx, self.gy, self.gw = _gauss_template(order)

    def nodes(self, cx, cy, s):
        half = s[:, None] / 2
        return (cx[:, None] + self.gx[None, :] * half) + 1j * (cy[:, None] + self.gy[None, :] * half)

    def tables(self, lam):
        """``(d+1, cells, nodes, 1)`` coefficient tables for p, p_z and p_lam (zero-padded)."""
        a = self.spec.p_coefficients(lam)[..., None]
        az = np.zeros_like(a)
        az[:-1] = a[1:] * np.arange(1, a.shape[0]).reshape((-1, 1, 1, 1))
        al = np.zeros_like(a)
        pl = self.spec.p_lam_coefficients(lam)[..., None]
        al[:pl.shape[0]] = pl
        return a, az, al

    def start(self, lam):
        c = critical_points_batch(self.spec, lam)
        return np.zeros_like(c), c

    def advance(self, tab, z, dz, out, r):
        """One step on nodes still inside U; nodes that leave keep their exit values."""
        a, az, al = tab
        with np.errstate(over="ignore", invalid="ignore"):
            dz_new = _horner_first(az, z)
            dz_new *= dz
            dz_new += _horner_first(al, z)
            z_new = _horner_first(a, z)
        bad = ~np.isfinite(z_new) | ~np.isfinite(dz_new)
        z_new[bad] = r
        dz_new[bad] = 0.0
        z_new[out] = z[out]
        dz_new[out] = dz[out]
        return z_new, dz_new, out | (np.abs(z_new) >= r)


_FIELDS = ("cx", "cy", "s", "lam", "tab", "z", "dz", "out")


def _take(block, idx):
    return {k: (tuple(t[:, idx] for t in v) if k == "tab" else v[idx]) for k, v in block.items()}


def _concat(first, second):
    out = {}
    for k in _FIELDS:
        if k == "tab":
            out[k] = tuple(np.concatenate([x, y], axis=1) for x, y in zip(first[k], second[k]))
        else:
            out[k] = np.concatenate([first[k], second[k]])
    return out


def _replay(cells, lam, tab, n, r):
    dz, z = cells.start(lam)
    out = np.zeros(z.shape, dtype=bool)
    for _ in range(n):
        z, dz, out = cells.advance(tab, z, dz, out, r)
    return z, dz, out


def _volume_univariate(spec, window, n_max, r, order, base, tau, min_cell, adaptive):
    """Adaptive composite Gauss rule; returns per-n log-masses and escaped fractions.

    A cell is split while the image of its nodes under ``lam -> f^n(c)``
    spreads over more than ``tau * r`` (linearized by the lam-derivative).
    Nodes that leave U keep their exit values, so a fully escaped cell is
    dropped unless its image at exit was still coarse enough to hide
    parameters that stay.  Cells are independent: work is a stack of
    blocks, and a block whose refinement would exceed
    ``MAX_NODES_PER_BATCH`` nodes is halved, both halves resuming from the
    same iterate.
    """
    cells = _GaussCells(spec, order)
    h = 2 * window.half_width / base
    nyb = max(1, int(round(2 * window.half_height / h)))
    c = complex(window.center)
    ii, jj = np.meshgrid(np.arange(base), np.arange(nyb))
    cx = c.real - window.half_width + (ii.ravel() + 0.5) * h
    cy = c.imag - window.half_height + (jj.ravel() + 0.5) * h
    s = np.full(cx.size, h)
    lam = cells.nodes(cx, cy, s)
    tab = cells.tables(lam)
    blk = dict(zip(_FIELDS, (cx, cy, s, lam, tab) + _replay(cells, lam, tab, 1, r)))
    total_w = float(np.sum(cells.gw[None, :] * (s[:, None] / 2) ** 2)) * blk["z"].shape[-1]
    stack = [(1, blk)]
    log_terms = [[] for _ in range(n_max)]
    alive_w = np.zeros(n_max)
    flags = set()
    while stack:
        n, blk = stack.pop()
        while True:
            while adaptive:
                spread = blk["s"] * np.max(np.abs(blk["dz"]), axis=(1, 2))
                gone = np.all(blk["out"], axis=(1, 2))
                near = np.min(np.abs(blk["z"]), axis=(1, 2)) < r + 2 * spread
                coarse = (spread > tau * r) & (near | ~gone)
                split = coarse & (blk["s"] > min_cell)
                if np.any(coarse & ~split):
                    flags.add("min_cell_reached")
                keep = ~gone | split
                if not split.any():
                    blk = _take(blk, keep)
                    break
                ncells, nodes = blk["lam"].shape
                if ncells > 1 and (ncells + 3 * int(split.sum())) * nodes > MAX_NODES_PER_BATCH:
                    blk = _take(blk, keep)
                    half = blk["s"].size // 2
                    stack.append((n, _take(blk, slice(half, None))))
                    blk = _take(blk, slice(0, half))
                    continue
                q = blk["s"][split] / 4
                pcx, pcy = blk["cx"][split], blk["cy"][split]
                ncx = np.concatenate([pcx - q, pcx + q, pcx - q, pcx + q])
                ncy = np.concatenate([pcy - q, pcy - q, pcy + q, pcy + q])
                ns = np.tile(blk["s"][split] / 2, 4)
                nl = cells.nodes(ncx, ncy, ns)
                ntab = cells.tables(nl)
                child = dict(zip(_FIELDS, (ncx, ncy, ns, nl, ntab) + _replay(cells, nl, ntab, n, r)))
                blk = _concat(_take(blk, keep & ~split), child)
            alive = ~blk["out"]
            if alive.any():
                W = np.broadcast_to((cells.gw[None, :] * (blk["s"][:, None] / 2) ** 2)[..., None],
                                    blk["z"].shape)[alive]
                with np.errstate(divide="ignore"):
                    ld = 2.0 * np.log(np.abs(blk["dz"][alive]))
                log_terms[n - 1].append(float(logsumexp(np.log(W) + np.logaddexp(0.0, ld))))
                alive_w[n - 1] += float(np.sum(W))
            if n == n_max or not alive.any():
                break
            n += 1
            blk["z"], blk["dz"], blk["out"] = cells.advance(blk["tab"], blk["z"], blk["dz"], blk["out"], r)
    log_mass = np.array([logsumexp(t) if t else -np.inf for t in log_terms])
    escaped = 1.0 - alive_w / total_w if total_w > 0 else np.ones(n_max)
    return log_mass, escaped, sorted(flags)


def _crit_curve_points(spec, lam, s):
    """Critical-curve points for a skew product at (lam, s); returns list of (z, w) arrays."""
    pts = []
    cz = critical_points_batch(spec, lam)                     # (B, dz-1)
    for i in range(cz.shape[-1]):
        pts.append((cz[..., i], s))
    b = spec.q_coefficients(lam, s)                            # (dw+1, B)
    db = np.polynomial.polynomial.polyder(b, axis=0)
    if db.shape[0] > 1:
        ws = polyroots.solve_batch(db[::-1].T)
        for i in range(ws.shape[-1]):
            pts.append((s, ws[..., i]))
    return pts


def _skew_image_det(spec, lam, s, n, r, h=1e-6):
    """``|det d(f^n o curve)/d(lam, s)|^2`` by centred differences, per critical branch."""
    results = []
    base = _crit_curve_points(spec, lam, s)

    def image(l, t, branch, ref):
        pts = _crit_curve_points(spec, l, t)
        # pick the branch nearest to the reference point for consistent labelling
        cand = np.stack([np.stack(p, axis=-1) for p in pts], axis=0)  # (nb, B, 2)
        dist = np.max(np.abs(cand - ref[None]), axis=-1)
        k = np.argmin(dist, axis=0)
        chosen = cand[k, np.arange(cand.shape[1])]
        z, w = chosen[:, 0], chosen[:, 1]
        alive = np.ones(z.shape, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(n):
                z, w = spec.p(l, z), spec.q(l, z, w)
                alive &= (np.abs(z) < r) & (np.abs(w) < r)
                z = np.where(alive, z, 0.0)
                w = np.where(alive, w, 0.0)
        return np.stack([z, w], axis=-1), alive

    for bi, p in enumerate(base):
        ref = np.stack(p, axis=-1)
        f0, alive = image(lam, s, bi, ref)
        fl = (image(lam + h, s, bi, ref)[0] - image(lam - h, s, bi, ref)[0]) / (2 * h)
        fs = (image(lam, s + h, bi, ref)[0] - image(lam, s - h, bi, ref)[0]) / (2 * h)
        det = fl[:, 0] * fs[:, 1] - fl[:, 1] * fs[:, 0]
        results.append((np.abs(det) ** 2, alive))
    return results


def _volume_skew(spec, window, n_range, r, strata, seed):
    """Stratified Monte Carlo over (lam, curve parameter) pairs."""
    side = int(round(math.sqrt(max(strata, 1))))
    ls = max(1, int(round(math.sqrt(side))))
    rng = np.random.default_rng(derive_seed(seed, 7))
    c = complex(window.center)
    # lam strata: ls x ls rectangle cells; s strata: polar cells of the disk |s| < r
    ia, ib = np.meshgrid(np.arange(ls), np.arange(ls))
    lam_cells = (ia.ravel(), ib.ravel())
    sa, sb = np.meshgrid(np.arange(ls), np.arange(ls))
    s_cells = (sa.ravel(), sb.ravel())
    L1 = np.repeat(np.arange(ls * ls), ls * ls)
    S1 = np.tile(np.arange(ls * ls), ls * ls)
    m = L1.size
    u = rng.random((4, m))
    lam = (c.real - window.half_width + (lam_cells[0][L1] + u[0]) * 2 * window.half_width / ls) + \
        1j * (c.imag - window.half_height + (lam_cells[1][L1] + u[1]) * 2 * window.half_height / ls)
    rad = r * np.sqrt((s_cells[0][S1] + u[2]) / ls)
    ang = 2 * np.pi * (s_cells[1][S1] + u[3]) / ls
    s = rad * np.exp(1j * ang)
    volume = window.area * math.pi * r * r
    log_mass, escaped = [], []
    for n in n_range:
        terms = []
        alive_frac = []
        for det2, alive in _skew_image_det(spec, lam, s, int(n), r):
            with np.errstate(divide="ignore"):
                terms.append(logsumexp(np.where(alive, np.log(det2), -np.inf)))
            alive_frac.append(alive.mean())
        log_mass.append(float(logsumexp(terms)) + math.log(volume / m))
        escaped.append(1.0 - float(np.mean(alive_frac)))
    return np.array(log_mass), np.array(escaped)


def volume_series(spec, window, n_range, order=GAUSS_ORDER, base=BASE_CELLS, tau=REFINE_TAU,
                  adaptive=True, strata=MC_STRATA, seed=0, min_cell=MIN_CELL):
    """Per-iterate log-masses of the postcritical graphs over ``window``.

    Maps of C use a composite tensor-product Gauss rule whose cells are
    split until each cell's image under ``lam -> f_lam^n(c)`` is small
    compared to U; skew products use stratified Monte Carlo.
    """
    n_range = np.asarray(sorted(int(n) for n in n_range))
    if n_range.size == 0 or n_range[0] < 1:
        raise ValueError("iterates must be >= 1")
    r = certified_radius(spec, window)
    if spec.k == 1:
        lm, esc, flags = _volume_univariate(spec, window, int(n_range[-1]), r, order, base, tau,
                                            min_cell, adaptive)
        lm, esc = lm[n_range - 1], esc[n_range - 1]
        method = f"gauss{order}" + ("-adaptive" if adaptive else "")
    else:
        lm, esc = _volume_skew(spec, window, n_range, r, strata, seed)
        flags = []
        method = f"stratified-mc{strata}"
    flags = list(flags)
    if np.any(~np.isfinite(lm)):
        flags.append("all_samples_escaped")
    return VolumeSeries(window, n_range, lm, esc, method, flags)


def pushforward_mass(spec, window, n, **kw):
    """``log ||(f^n)_* C_f||`` over ``window`` restricted to U.

    Raises :class:`AllSamplesEscaped` when no critical orbit is left in U;
    the exception carries the (empty) series.
    """
    series = volume_series(spec, window, [n], **kw)
    if not np.isfinite(series.log_mass[0]):
        exc = AllSamplesEscaped(f"every critical orbit left U before step {n}")
        exc.series = series
        raise exc
    return float(series.log_mass[0])


# -- growth rate and classification ---------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    rate: float
    ci: float
    n_used: tuple
    intercept: float


def growth_rate(series, tail_fraction=0.5, confidence=0.95, min_points=5):
    """Least-squares slope of ``log_mass`` against ``n`` over the tail of the range."""
    n = np.asarray(series.n_range if hasattr(series, "n_range") else series[0], dtype=float)
    y = np.asarray(series.log_mass if hasattr(series, "log_mass") else series[1], dtype=float)
    m = len(n)
    start = m - max(int(math.ceil(m * tail_fraction)), 0)
    n, y = n[start:], y[start:]
    ok = np.isfinite(y)
    n, y = n[ok], y[ok]
    if len(n) < min_points:
        raise InsufficientPoints(f"need at least {min_points} finite tail points, have {len(n)}")
    fit = stats.linregress(n, y)
    tq = stats.t.ppf(0.5 + confidence / 2, len(n) - 2)
    ci = float(tq * fit.stderr) if np.isfinite(fit.stderr) else 0.0
    g = GrowthFit(float(fit.slope), ci, tuple(int(v) for v in n), float(fit.intercept))
    if hasattr(series, "fitted_rate"):
        series.fitted_rate, series.rate_ci = g.rate, g.ci
    return g


class Stability(str, enum.Enum):
    STABLE = "Stable"
    BIFURCATING = "Bifurcating"
    INCONCLUSIVE = "Inconclusive"


def classify_stability(series, d_star_upper, d_t=None):
    """Growth-rate dichotomy: compare the fitted rate with ``log d_star_upper``.

    ``series`` may be a :class:`VolumeSeries`, a :class:`GrowthFit` or a
    ``(rate, ci)`` pair.
    """
    if isinstance(series, GrowthFit):
        rate, ci = series.rate, series.ci
    elif isinstance(series, tuple):
        rate, ci = series
    else:
        g = growth_rate(series)
        rate, ci = g.rate, g.ci
    if d_t is not None and not d_star_upper < d_t:
        raise ValueError("d_star_upper must be below d_t for the dichotomy to apply")
    thr = math.log(d_star_upper)
    if rate - ci > thr:
        return Stability.BIFURCATING
    if rate + ci < thr:
        return Stability.STABLE
    return Stability.INCONCLUSIVE


# -- inverse-branch census -------------------------------------------------

@dataclass(frozen=True)
class InverseBranchCensus:
    center: complex
    radius: float
    rho: float
    n: int
    count: int
    total: int
    lipschitz: np.ndarray = field(repr=False)
    inside: np.ndarray = field(repr=False)

    @property
    def ratio(self):
        return self.count / self.total


def _ball_samples(center, radius, m):
    ang = 2 * np.pi * np.arange(m) / m
    return np.concatenate([[0.0], radius * np.exp(1j * ang)]) + center


def inverse_branch_census(spec, lam, a0, radius, rho, n, boundary=CENSUS_BOUNDARY, sample=None,
                          seed=0):
    """Count inverse branches ``h`` of ``f^n`` with ``h(closure A) ⊂ A`` and sampled Lip ``<= rho``.

    ``A`` is the ball of ``radius`` about ``a0`` (a polydisk for skew
    products).  Every branch is followed from the centre; boundary samples
    take, at each step, the preimage closest to the centre's choice.
    """
    lam = complex(lam)
    total = spec.d_t ** n
    cap = UNIVARIATE_BRANCH_CAP if spec.k == 1 else SKEW_BRANCH_CAP
    if total > cap:
        raise BranchCapExceeded(f"{spec.d_t}**{n} branches exceed the cap {cap}")
    if sample is None:
        sample = sample_equilibrium(spec, lam, depth=30, count=4000, seed=seed)
    pts = sample.points
    if spec.k == 1:
        dist = np.abs(pts - a0)
    else:
        dist = np.max(np.abs(pts - np.asarray(a0, dtype=complex)[None, :]), axis=1)
    if not np.any(dist < radius):
        raise PreconditionError("the ball does not meet the sampled Julia set")

    if spec.k == 1:
        ring = _ball_samples(complex(a0), radius, boundary)[None, :]   # (branches, m+1)
        cur = ring
        for _ in range(n):
            roots = polyroots.batch_preimages_z(spec, lam, cur)        # (B, m+1, d)
            centre = roots[:, 0, :]                                    # (B, d)
            d = roots.shape[-1]
            # for each choice k of the centre preimage, follow nearest preimages
            dist = np.abs(roots[:, None, :, :] - centre[:, :, None, None])  # (B, d, m+1, d)
            pick = np.argmin(dist, axis=-1)                                  # (B, d, m+1)
            nxt = np.take_along_axis(np.broadcast_to(roots[:, None], (roots.shape[0], d) + roots.shape[1:]),
                                     pick[..., None], axis=-1)[..., 0]
            cur = nxt.reshape(-1, ring.shape[1])
        inside = np.all(np.abs(cur - a0) < radius, axis=1)
        diffs = np.abs(cur[:, :, None] - cur[:, None, :])
        src = np.abs(ring[0][:, None] - ring[0][None, :])
    else:
        a0 = np.asarray(a0, dtype=complex)
        ring_z = _ball_samples(a0[0], radius, boundary)
        ring_w = _ball_samples(a0[1], radius, boundary)
        # sample the polydisk boundary on the distinguished-boundary-like set
        ring = np.stack([ring_z, np.roll(ring_w, boundary // 4)], axis=-1)[None]   # (1, m+1, 2)
        cur = ring
        for _ in range(n):
            B, M = cur.shape[:2]
            zr = polyroots.batch_preimages_z(spec, lam, cur[..., 0])             # (B, M, dz)
            tw = np.broadcast_to(cur[..., 1][..., None], zr.shape)
            wr = polyroots.batch_preimages_w(spec, lam, zr, tw)                  # (B, M, dz, dw)
            cand = np.stack([np.broadcast_to(zr[..., None], wr.shape), wr], axis=-1)
            cand = cand.reshape(B, M, -1, 2)                                     # (B, M, dt, 2)
            centre = cand[:, 0]                                                  # (B, dt, 2)
            dt = cand.shape[2]
            dist = np.max(np.abs(cand[:, None, :, :, :] - centre[:, :, None, None, :]), axis=-1)
            pick = np.argmin(dist, axis=-1)                                      # (B, dt, M)
            full = np.broadcast_to(cand[:, None], (B, dt) + cand.shape[1:])
            nxt = np.take_along_axis(full, pick[..., None, None], axis=3)[:, :, :, 0]
            cur = nxt.reshape(-1, M, 2)
        inside = np.all(np.max(np.abs(cur - a0[None, None, :]), axis=-1) < radius, axis=1)
        diffs = np.max(np.abs(cur[:, :, None, :] - cur[:, None, :, :]), axis=-1)
        src = np.max(np.abs(ring[0][:, None, :] - ring[0][None, :, :]), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(src[None] > 0, diffs / src[None], 0.0)
    lip = np.max(ratio, axis=(1, 2))
    ok = inside & (lip <= rho)
    return InverseBranchCensus(complex(a0) if spec.k == 1 else tuple(a0), float(radius), float(rho),
                               int(n), int(ok.sum()), int(total), lip, inside)
