"""Equilibrium-measure sampling, periodic points and moment discrepancies.

Sampling runs backward orbits: start somewhere in V, repeatedly pick one of
the ``d_t`` preimages (uniformly, with multiplicity) and keep the endpoint.
The ``tree`` mode instead keeps *every* preimage of a single start point,
i.e. the exact normalized pullback ``d_t^-n (f^n)^* delta_a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import polyroots
from .errors import DegreeCapExceeded, PreconditionError, StartOnExceptionalOrbit
from .family import Kind

PERIOD_DEGREE_CAP = 4096
TREE_CAP = 1 << 16
REPELLING_TOL = 1e-9
DEDUP_RADIUS = 1e-8
COLLAPSE_STREAK = 3
MAX_RETRIES = 5
MOMENT_ORDER = 3


def derive_seed(seed, *keys):
    """Deterministic 64-bit child seed of ``seed`` for the integer path ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MeasureSample:
    """Uniformly weighted point cloud approximating ``mu_lam``.

    ``points`` has shape ``(N,)`` for maps of C and ``(N, 2)`` for skew
    products.
    """

    lam: complex
    points: np.ndarray
    depth: int
    seed: int
    discarded_transient: int
    mode: str = "random"
    retries: int = 0

    @property
    def count(self):
        return int(self.points.shape[0])

    @property
    def weights(self):
        n = self.count
        return np.full(n, 1.0 / n) if n else np.zeros(0)


def _uniform_disk(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    return r * np.exp(1j * t)


def _random_starts(spec, rng, n):
    R = spec.escape_radius
    if spec.k == 1:
        return _uniform_disk(rng, n, R)
    return np.stack([_uniform_disk(rng, n, R), _uniform_disk(rng, n, R)], axis=1)


def _collapsed(roots):
    spread = np.max(np.abs(roots - roots[..., :1]), axis=-1)
    scale = np.maximum(1.0, np.abs(roots[..., 0]))
    return spread <= polyroots.CLUSTER_EPS * scale


def _backward_orbits(spec, lam, starts, choices_z, choices_w):
    """Run backward orbits; returns endpoints and a per-orbit exceptional flag."""
    n = starts.shape[0]
    idx = np.arange(n)
    streak = np.zeros(n, dtype=int)
    worst = np.zeros(n, dtype=int)
    pts = starts.copy()
    for step in range(choices_z.shape[0]):
        if spec.k == 1:
            roots = polyroots.batch_preimages_z(spec, lam, pts)
            collapse = _collapsed(roots)
            pts = roots[idx, choices_z[step]]
        else:
            zr = polyroots.batch_preimages_z(spec, lam, pts[:, 0])
            z = zr[idx, choices_z[step]]
            wr = polyroots.batch_preimages_w(spec, lam, z, pts[:, 1])
            w = wr[idx, choices_w[step]]
            collapse = _collapsed(zr) & _collapsed(wr)
            pts = np.stack([z, w], axis=1)
        streak = np.where(collapse, streak + 1, 0)
        worst = np.maximum(worst, streak)
    return pts, worst >= COLLAPSE_STREAK


def sample_equilibrium(spec, lam, depth, count, seed, transient=None, mode="random",
                       max_retries=MAX_RETRIES):
    """Approximate ``mu_lam`` by backward orbits.

    Parameters
    ----------
    depth : int
        Backward-orbit length.
    count : int
        Number of independent orbits (ignored in ``tree`` mode, where the
        sample holds all ``d_t**depth`` preimages of one random start).
    seed : int
        Orbit ``i`` only ever reads row ``i`` of the random draws, so results
        do not depend on how work is split.
    transient : int, optional
        Steps treated as burn-in; defaults to ``depth // 3``.
    mode : {"random", "tree"}
    """
    lam = complex(lam)
    transient = depth // 3 if transient is None else int(transient)
    if depth < transient + 1:
        raise PreconditionError("depth must exceed the discarded transient")
    rng = np.random.default_rng(derive_seed(seed, 0))
    if mode == "tree":
        return _sample_tree(spec, lam, depth, seed, rng)
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    shape = (0,) if spec.k == 1 else (0, 2)
    if count == 0:
        return MeasureSample(lam, np.zeros(shape, dtype=complex), depth, seed, transient, mode)
    starts = _random_starts(spec, rng, count)
    cz = rng.integers(0, spec.deg_z, size=(depth, count))
    cw = rng.integers(0, spec.deg_w, size=(depth, count)) if spec.k == 2 else None
    pts, bad = _backward_orbits(spec, lam, starts, cz, cw)
    retries = 0
    while bad.any():
        if retries >= max_retries:
            raise StartOnExceptionalOrbit(
                f"{int(bad.sum())} backward orbits keep collapsing onto a totally invariant point"
            )
        retries += 1
        retry = np.random.default_rng(derive_seed(seed, 1, retries))
        which = np.flatnonzero(bad)
        new_starts = _random_starts(spec, retry, which.size)
        sub_w = cw[:, which] if cw is not None else None
        new_pts, new_bad = _backward_orbits(spec, lam, new_starts, cz[:, which], sub_w)
        pts[which] = new_pts
        bad[which] = new_bad
    return MeasureSample(lam, pts, depth, seed, transient, mode, retries)


def _sample_tree(spec, lam, depth, seed, rng):
    if spec.d_t ** depth > TREE_CAP:
        raise DegreeCapExceeded(f"tree sample needs {spec.d_t}**{depth} points (cap {TREE_CAP})")
    pts = _random_starts(spec, rng, 1)
    for _ in range(depth):
        if spec.k == 1:
            pts = polyroots.batch_preimages_z(spec, lam, pts).ravel()
        else:
            zr = polyroots.batch_preimages_z(spec, lam, pts[:, 0])          # (M, dz)
            tw = np.broadcast_to(pts[:, 1:2], zr.shape)
            wr = polyroots.batch_preimages_w(spec, lam, zr, tw)             # (M, dz, dw)
            z = np.broadcast_to(zr[..., None], wr.shape)
            pts = np.stack([z.ravel(), wr.ravel()], axis=1)
    return MeasureSample(lam, pts, depth, seed, 0, "tree")


# -- moments ---------------------------------------------------------------

def _moment_indices(order=MOMENT_ORDER):
    return [(a, b) for a in range(order + 1) for b in range(order + 1 - a)]


def moments(points, order=MOMENT_ORDER):
    """Vector of ``mean(z^a conj(z)^b)`` for ``a + b <= order`` (per coordinate for C^2)."""
    pts = np.asarray(points, dtype=complex)
    cols = [pts] if pts.ndim == 1 else [pts[:, i] for i in range(pts.shape[1])]
    out = []
    for z in cols:
        zc = np.conj(z)
        for a, b in _moment_indices(order):
            out.append(np.mean(z ** a * zc ** b) if z.size else 0.0)
    return np.array(out, dtype=complex)


def circle_moments(order=MOMENT_ORDER):
    """Closed-form moments of normalized arclength on the unit circle."""
    return np.array([1.0 if a == b else 0.0 for a, b in _moment_indices(order)], dtype=complex)


@dataclass(frozen=True)
class PushforwardReport:
    lam: complex
    gap: float
    before: np.ndarray
    after: np.ndarray


def pushforward_check(sample, spec):
    """Moment gap between a sample and its forward image (``f_* mu = mu``)."""
    if sample.count == 0:
        raise PreconditionError("pushforward_check needs a nonempty sample")
    pts = sample.points
    if spec.k == 1:
        img = spec.p(sample.lam, pts)
    else:
        img = np.stack(spec.step(sample.lam, pts[:, 0], pts[:, 1]), axis=1)
    before, after = moments(pts), moments(img)
    return PushforwardReport(sample.lam, float(np.max(np.abs(before - after))), before, after)


def discrepancy(sample_a, sample_b):
    """Largest moment gap between two samples of the same parameter."""
    pa = getattr(sample_a, "points", sample_a)
    pb = getattr(sample_b, "points", sample_b)
    la, lb = getattr(sample_a, "lam", None), getattr(sample_b, "lam", None)
    if la is not None and lb is not None and not np.isclose(la, lb):
        raise ValueError("samples belong to different parameters")
    return float(np.max(np.abs(moments(pa) - moments(pb))))


# -- periodic points -------------------------------------------------------

@dataclass(frozen=True)
class CycleSet:
    """Solutions of ``f^n(z) = z`` with multipliers.

    ``multipliers`` holds ``(f^n)'`` for maps of C and the two diagonal
    eigenvalues of ``D(f^n)`` (shape ``(M, 2)``) for skew products.
    """

    lam: complex
    period: int
    points: np.ndarray
    multiplicities: np.ndarray
    multipliers: np.ndarray
    residuals: np.ndarray
    method: str = "direct"
    newton_miss_rate: float | None = None
    repelling_tol: float = REPELLING_TOL
    repelling: np.ndarray = field(init=False)

    def __post_init__(self):
        mods = np.abs(self.multipliers)
        if mods.ndim > 1:
            mods = mods.min(axis=1)
        object.__setattr__(self, "repelling", mods > 1.0 + self.repelling_tol)

    @property
    def count_with_multiplicity(self):
        return int(np.sum(self.multiplicities))

    def repelling_points(self):
        return self.points[self.repelling]

    def repelling_fraction(self):
        m = self.multiplicities
        return float(np.sum(m[self.repelling]) / np.sum(m))


def _iterate_univariate(spec, lam, z, n, big=1e100):
    """``(f^n(z) - z) / ((f^n)'(z) - 1)`` and a rounding-floor mask, overflow safe."""
    d = spec.deg_z
    z0 = z
    cur = z.copy()
    der = np.ones_like(z)
    N = np.zeros_like(z)
    escaped = np.zeros(z.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(n):
            der = np.where(escaped, der, der * spec.p_z(lam, cur))
            cur = np.where(escaped, cur, spec.p(lam, cur))
            newly = ~escaped & ~(np.abs(cur) < big)
            if newly.any():
                # remaining iterates behave like z -> a z^d: g/g' ~ z_j / d^(n-j-1)
                N = np.where(newly, cur / (float(d) ** (n - j - 1) * der), N)
                escaped |= newly
                cur = np.where(escaped, 0.0, cur)
        F = cur - z0
        dF = der - 1.0
        N = np.where(escaped, N, F / dF)
        floor = 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(z0)) * np.maximum(1.0, np.abs(der))
        done = ~escaped & (np.abs(F) <= floor)
    return N, done


def orbit_multiplier(spec, lam, point, n):
    """``(f^n)'`` at a point of C, or the two diagonal eigenvalues for C^2."""
    if spec.k == 1:
        z = np.asarray(point, dtype=complex)
        m = np.ones_like(z)
        for _ in range(n):
            m = m * spec.p_z(lam, z)
            z = spec.p(lam, z)
        return m
    pts = np.asarray(point, dtype=complex)
    z, w = pts[..., 0], pts[..., 1]
    mz = np.ones_like(z)
    mw = np.ones_like(z)
    for _ in range(n):
        mz = mz * spec.p_z(lam, z)
        mw = mw * spec.q_w(lam, z, w)
        z, w = spec.p(lam, z), spec.q(lam, z, w)
    return np.stack([mz, mw], axis=-1)


def iterate(spec, lam, point, n):
    """``f_lam^n`` applied elementwise (``point`` of shape ``(..., 2)`` for C^2)."""
    if spec.k == 1:
        z = np.asarray(point, dtype=complex)
        for _ in range(n):
            z = spec.p(lam, z)
        return z
    pts = np.asarray(point, dtype=complex)
    z, w = pts[..., 0], pts[..., 1]
    for _ in range(n):
        z, w = spec.p(lam, z), spec.q(lam, z, w)
    return np.stack([z, w], axis=-1)


def _polish_periodic_univariate(spec, lam, z, n, max_iter=polyroots.POLISH_MAX_ITER):
    z = z.copy()
    active = np.ones(z.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        N, done = _iterate_univariate(spec, lam, z, n)
        ok = np.isfinite(N) & active & ~done
        z = np.where(ok, z - N, z)
        active &= ok & ~(np.abs(N) <= 1e-15 * np.maximum(1.0, np.abs(z)))
    return z


def _periodic_direct(spec, lam, n, cluster_eps, seed=0):
    # the d^n preimages of a generic point are distributed like the
    # period-n points, which makes them a good Aberth start
    z0 = _sample_tree(spec, lam, n, seed, np.random.default_rng(derive_seed(seed, 2))).points
    z0 = z0 + 1e-3 * np.exp(2j * np.pi * np.arange(z0.size) / max(z0.size, 1))
    z, conv = polyroots.aberth(lambda rows, zr: _iterate_univariate(spec, lam, zr, n), z0[None, :])
    z = _polish_periodic_univariate(spec, lam, z[0], n)
    pts, mult = polyroots.cluster(z, cluster_eps)
    return pts, mult, "direct", None


def _newton_periodic(spec, lam, n, seeds, max_iter=100, tol=1e-10):
    """Newton on ``f^n(x) - x`` from each seed; returns converged points and miss rate."""
    if spec.k == 1:
        z = np.asarray(seeds, dtype=complex).copy()
        for _ in range(max_iter):
            N, _ = _iterate_univariate(spec, lam, z, n)
            N = np.where(np.isfinite(N), N, 0.0)
            z = z - N
        res = np.abs(iterate(spec, lam, z, n) - z)
        ok = np.isfinite(res) & (res < tol)
        return z[ok], 1.0 - ok.mean() if z.size else 1.0
    pts = np.asarray(seeds, dtype=complex).copy()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_iter):
            z, w = pts[:, 0], pts[:, 1]
            a = np.ones_like(z)           # d(z_n)/dz
            b = np.zeros_like(z)          # d(w_n)/dz
            c = np.ones_like(z)           # d(w_n)/dw
            zi, wi = z.copy(), w.copy()
            for _ in range(n):
                pz, qz, qw = spec.p_z(lam, zi), spec.q_z(lam, zi, wi), spec.q_w(lam, zi, wi)
                a, b, c = pz * a, qz * a + qw * b, qw * c
                zi, wi = spec.p(lam, zi), spec.q(lam, zi, wi)
            Fz, Fw = zi - z, wi - w
            # solve [[a-1, 0], [b, c-1]] d = F
            dz = Fz / (a - 1.0)
            dw = (Fw - b * dz) / (c - 1.0)
            step = np.stack([dz, dw], axis=1)
            step[~np.isfinite(step)] = 0.0
            pts = pts - step
        img = iterate(spec, lam, pts, n)
    res = np.max(np.abs(img - pts), axis=1)
    ok = np.isfinite(res) & (res < tol)
    return pts[ok], 1.0 - ok.mean() if len(pts) else 1.0


def _dedupe(points, radius=DEDUP_RADIUS):
    """Greedy de-duplication in the max-norm."""
    pts = np.asarray(points, dtype=complex)
    if pts.shape[0] == 0:
        return pts
    flat = pts.reshape(pts.shape[0], -1)
    kept = []
    for i in range(flat.shape[0]):
        if not kept or np.min(np.max(np.abs(flat[kept] - flat[i]), axis=1)) > radius:
            kept.append(i)
    return pts[kept]


def find_periodic(spec, lam, period, cap=PERIOD_DEGREE_CAP, method="auto", seeds=None,
                  seed=0, seed_count=4096, cluster_eps=polyroots.CLUSTER_EPS):
    """All solutions of ``f_lam^n(x) = x`` with multipliers and repelling flags.

    Maps of C with ``d**n <= cap`` are solved directly: Aberth iteration on
    the degree-``d**n`` polynomial ``f^n(z) - z``, evaluated by iterating
    the map rather than by expanding it.  Larger degrees (``method="auto"``)
    and all skew products fall back to Newton's method from
    equilibrium-distributed seeds, which cannot certify full coverage.
    """
    lam = complex(lam)
    n = int(period)
    if n < 1:
        raise ValueError("period must be positive")
    if spec.k == 1 and spec.deg_z ** n <= cap and method in ("auto", "direct"):
        pts, mult, how, miss = _periodic_direct(spec, lam, n, cluster_eps, seed)
    elif spec.k == 1 and method == "direct":
        raise DegreeCapExceeded(f"degree {spec.deg_z}**{n} exceeds the direct-solve cap {cap}")
    else:
        if seeds is None:
            seeds = sample_equilibrium(spec, lam, depth=30, count=seed_count, seed=seed).points
        found, miss = _newton_periodic(spec, lam, n, seeds)
        pts = _dedupe(found)
        mult = np.ones(len(pts), dtype=int)
        how = "newton"
    mults = orbit_multiplier(spec, lam, pts, n)
    img = iterate(spec, lam, pts, n)
    res = np.abs(img - pts) if spec.k == 1 else np.max(np.abs(img - pts), axis=-1)
    return CycleSet(lam, n, pts, mult, mults, res, how, miss)
