"""Exact-degree polynomial root finding.

Coefficient lists follow the numpy convention, highest degree first.  The
workhorse is a vectorized Aberth-Ehrlich iteration: every polynomial in a
batch is iterated independently and frozen once converged, so the result
for one row never depends on what else is in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLeadingCoefficient, NonConvergence

CLUSTER_EPS = 1e-9
POLISH_TOL = 1e-12
POLISH_MAX_ITER = 50
ABERTH_MAX_ITER = 500
DEGENERACY = 1e-14


@dataclass(frozen=True)
class RootSet:
    """Distinct roots with multiplicity tags.

    ``roots[i]`` occurs ``multiplicities[i]`` times; ``residual_max`` is the
    largest ``|poly(root)|`` after polishing.
    """

    roots: np.ndarray
    multiplicities: np.ndarray
    residual_max: float
    converged: bool = True

    @property
    def degree(self):
        return int(np.sum(self.multiplicities))

    def expanded(self):
        """Roots repeated according to multiplicity."""
        return np.repeat(self.roots, self.multiplicities)

    def __len__(self):
        return len(self.roots)


def _horner_with_derivative(coeffs, z):
    """Value and derivative of highest-first ``coeffs`` (shape ``(B, d+1)``) at ``z`` (``(B, d)``)."""
    p = np.broadcast_to(coeffs[:, :1], z.shape).astype(complex)
    dp = np.zeros_like(p)
    for k in range(1, coeffs.shape[1]):
        dp = dp * z + p
        p = p * z + coeffs[:, k:k + 1]
    return p, dp


def _initial_guesses(coeffs):
    """Points on a circle sized by the Fujiwara bound, rotated off the axes."""
    B, n = coeffs.shape
    d = n - 1
    lead = coeffs[:, 0]
    ratios = np.abs(coeffs[:, 1:] / lead[:, None])
    ratios[:, -1] /= 2.0
    powers = 1.0 / np.arange(1, d + 1)
    fujiwara = 2.0 * np.max(ratios ** powers[None, :], axis=1)
    radius = np.where(fujiwara > 0, 0.5 * fujiwara, 1.0)
    center = -coeffs[:, 1] / (d * lead)
    angles = 2 * np.pi * np.arange(d) / d + 0.4
    return center[:, None] + radius[:, None] * np.exp(1j * angles)[None, :]


def _aberth_sums(z, active_rows=None):
    """``sum_{j != i} 1/(z_i - z_j)`` per row, blocked to bound memory."""
    B, d = z.shape
    out = np.zeros_like(z)
    block = max(1, (1 << 22) // max(d * d, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, B, block):
            zz = z[s:s + block]
            if d <= 2048:
                diff = zz[:, :, None] - zz[:, None, :]
                inv = 1.0 / diff
                idx = np.arange(d)
                inv[:, idx, idx] = 0.0
                inv[~np.isfinite(inv)] = 0.0
                out[s:s + block] = inv.sum(axis=2)
            else:
                for r0 in range(0, d, 512):
                    diff = zz[:, r0:r0 + 512, None] - zz[:, None, :]
                    inv = 1.0 / diff
                    inv[~np.isfinite(inv)] = 0.0
                    out[s:s + block, r0:r0 + 512] = inv.sum(axis=2)
    return out


def aberth(newton_step, z0, tol=1e-14, max_iter=ABERTH_MAX_ITER):
    """Generic Aberth-Ehrlich iteration on a batch of root vectors.

    Parameters
    ----------
    newton_step : callable
        ``newton_step(rows, z)`` returns ``(N, done)``: the Newton corrections
        ``F/F'`` for the polynomials in ``rows`` evaluated at ``z`` (shape
        ``(len(rows), d)``) and a mask of points whose residual is already
        at the rounding floor.  The polynomial only has to be evaluable,
        not expanded.
    z0 : ndarray, shape (B, d)
        Initial approximations, pairwise distinct within each row.

    Returns
    -------
    z : ndarray
    converged : ndarray of bool, shape (B, d)
    """
    z = np.array(z0, dtype=complex, copy=True)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        rows = np.flatnonzero(active.any(axis=1))
        zr = z[rows]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            N, done = newton_step(rows, zr)
            S = _aberth_sums(zr)
            w = N / (1.0 - N * S)
        w[~np.isfinite(w)] = 0.0
        act = active[rows] & ~done
        zr = np.where(act, zr - w, zr)
        act &= ~(np.abs(w) <= tol * np.maximum(1.0, np.abs(zr)))
        z[rows] = zr
        active[rows] = act
    return z, ~active


def _quadratic_roots(coeffs):
    """Closed-form roots of a batch of quadratics (numerically stable variant)."""
    a, b, c = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]
    disc = np.sqrt(b * b - 4 * a * c)
    sign = np.where((np.conj(b) * disc).real >= 0, 1.0, -1.0)
    q = -0.5 * (b + sign * disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / a
        r2 = np.where(q != 0, c / q, 0.0)
    return np.stack([r1, r2], axis=1)


def polish(coeffs, z, tol=POLISH_TOL, max_iter=POLISH_MAX_ITER):
    """Newton-polish each root against its own row of ``coeffs``."""
    z = np.array(z, dtype=complex, copy=True)
    active = np.ones(z.shape, dtype=bool)
    scale = np.sum(np.abs(coeffs), axis=1)[:, None]
    for _ in range(max_iter):
        if not active.any():
            break
        p, dp = _horner_with_derivative(coeffs, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = p / dp
        ok = np.isfinite(step) & active
        done = np.abs(p) <= tol * scale * np.maximum(1.0, np.abs(z)) ** (coeffs.shape[1] - 1)
        z = np.where(ok & ~done, z - step, z)
        active &= ~done & ok
    p, _ = _horner_with_derivative(coeffs, z)
    return z, np.abs(p)


def solve_batch(coeffs, polish_roots=True):
    """All roots of each row of ``coeffs`` (shape ``(B, d+1)``, highest first).

    Returns an array of shape ``(B, d)`` listing roots with multiplicity.
    Rows are independent: results are identical whatever the batch layout.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    B, n = coeffs.shape
    d = n - 1
    if d < 1:
        return np.zeros((B, 0), dtype=complex)
    lead = np.abs(coeffs[:, 0])
    if np.any(lead <= DEGENERACY * np.max(np.abs(coeffs), axis=1)):
        raise DegenerateLeadingCoefficient("leading coefficient vanishes to working precision")
    if d == 1:
        return (-coeffs[:, 1] / coeffs[:, 0])[:, None]
    if d == 2:
        return _quadratic_roots(coeffs)

    z0 = _initial_guesses(coeffs)
    z, conv = aberth(lambda rows, zr: _newton_rows(coeffs[rows], zr), z0)
    if not conv.all():
        raise NonConvergence("Aberth iteration did not converge", partial=z)
    if polish_roots:
        z, _ = polish(coeffs, z)
    return z


def _newton_rows(coeffs, z):
    p, dp = _horner_with_derivative(coeffs, z)
    abs_c = np.abs(coeffs)
    bound = np.broadcast_to(abs_c[:, :1], z.shape).astype(float)
    az = np.abs(z)
    for k in range(1, coeffs.shape[1]):
        bound = bound * az + abs_c[:, k:k + 1]
    done = np.abs(p) <= 8 * np.finfo(float).eps * bound
    return p / dp, done


def cluster(values, cluster_eps=CLUSTER_EPS):
    """Merge values closer than ``cluster_eps * max(1, |z|)`` into tagged groups."""
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((values.imag, values.real))
    reps, counts, members = [], [], []
    for z in values[order]:
        for k, r in enumerate(reps):
            if abs(z - r) <= cluster_eps * max(1.0, abs(r)):
                members[k].append(z)
                counts[k] += 1
                reps[k] = np.mean(members[k])
                break
        else:
            reps.append(z)
            counts.append(1)
            members.append([z])
    return np.array(reps, dtype=complex), np.array(counts, dtype=int)


def solve(coeffs, cluster_eps=CLUSTER_EPS):
    """All complex roots of one polynomial (highest-degree coefficient first).

    Raises
    ------
    DegenerateLeadingCoefficient
        If the leading coefficient is negligible relative to the others.
    NonConvergence
        If Aberth iteration hits its cap; ``exc.partial`` holds a RootSet
        flagged ``converged=False``.
    """
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=complex))
    if coeffs.size < 2:
        return RootSet(np.zeros(0, dtype=complex), np.zeros(0, dtype=int), 0.0)
    row = coeffs[None, :]
    try:
        z = solve_batch(row)[0]
        converged = True
    except NonConvergence as exc:
        z, _ = polish(row, exc.partial)
        z = z[0]
        converged = False
    p, _ = _horner_with_derivative(row, z[None, :])
    residual = float(np.max(np.abs(p))) if z.size else 0.0
    roots, mult = cluster(z, cluster_eps)
    rs = RootSet(roots, mult, residual, converged)
    if not converged:
        raise NonConvergence("Aberth iteration did not converge", partial=rs)
    return rs


# -- preimages under a family ---------------------------------------------

@dataclass(frozen=True)
class PreimageCascade:
    """Fiberwise preimages of a skew product: z-roots, then w-roots per z-branch."""

    z_roots: RootSet
    w_roots: tuple

    def points(self):
        """All ``d_t`` preimages as ``(z, w)`` pairs, repeated by multiplicity."""
        out = []
        for z, mz, ws in zip(self.z_roots.roots, self.z_roots.multiplicities, self.w_roots):
            for _ in range(mz):
                for w in ws.expanded():
                    out.append((complex(z), complex(w)))
        return out

    @property
    def degree(self):
        return len(self.points())


def _shifted_coeffs(ascending, target):
    c = np.array(ascending, dtype=complex)
    c[0] -= target
    return c[::-1]


def solve_shifted(spec, lam, target):
    """Preimages of ``target`` under ``f_lam`` with multiplicity.

    Univariate families give a :class:`RootSet`; skew products give a
    :class:`PreimageCascade` solving ``p = target_z`` first and then
    ``q(lam, z_i, .) = target_w`` on each branch.
    """
    if spec.k == 1:
        return solve(_shifted_coeffs(spec.p_coefficients(lam), target))
    tz, tw = target
    zs = solve(_shifted_coeffs(spec.p_coefficients(lam), tz))
    ws = tuple(solve(_shifted_coeffs(spec.q_coefficients(lam, z), tw)) for z in zs.roots)
    return PreimageCascade(zs, ws)


def batch_preimages_z(spec, lam, targets):
    """All ``deg_z`` roots of ``p(lam, z) = t`` for each target; shape ``targets.shape + (deg_z,)``."""
    targets = np.asarray(targets, dtype=complex)
    lam = np.broadcast_to(np.asarray(lam, dtype=complex), targets.shape)
    a = spec.p_coefficients(lam.ravel())          # (d+1, B)
    a = np.array(a, dtype=complex)
    a[0] = a[0] - targets.ravel()
    roots = solve_batch(a[::-1].T)
    return roots.reshape(targets.shape + (roots.shape[-1],))


def batch_preimages_w(spec, lam, z, targets):
    """All ``deg_w`` roots of ``q(lam, z, w) = t``; shape ``targets.shape + (deg_w,)``."""
    targets = np.asarray(targets, dtype=complex)
    lam = np.broadcast_to(np.asarray(lam, dtype=complex), targets.shape)
    z = np.broadcast_to(np.asarray(z, dtype=complex), targets.shape)
    b = np.array(spec.q_coefficients(lam.ravel(), z.ravel()), dtype=complex)
    b[0] = b[0] - targets.ravel()
    roots = solve_batch(b[::-1].T)
    return roots.reshape(targets.shape + (roots.shape[-1],))
