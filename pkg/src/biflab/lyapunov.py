"""Lyapunov function estimates, parameter sweeps and the discrete dd^c L field."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ClippedFractionExcessive, PreconditionError
from .family import ParameterDomain, validate_polynomial_like
from .measure import derive_seed, sample_equilibrium

JAC_FLOOR = math.exp(-50.0)
CLIP_LIMIT = 0.01


@dataclass(frozen=True)
class LyapunovEstimate:
    lam: complex
    L_value: float
    std_error: float
    sample_count: int
    depth: int
    clipped_fraction: float = 0.0

    def satisfies_lower_bound(self, d_t):
        """``L >= 1/2 log d_t - 3 std_error``."""
        return self.L_value >= 0.5 * math.log(d_t) - 3.0 * self.std_error


def log_abs_jacobian(spec, lam, points, jac_floor=JAC_FLOOR):
    """``log max(|Jac f_lam|, jac_floor)`` and the clipped mask."""
    pts = np.asarray(points, dtype=complex)
    if spec.k == 1:
        jac = spec.jac(lam, pts)
    else:
        jac = spec.jac(lam, pts[:, 0], pts[:, 1])
    a = np.abs(jac)
    clipped = ~(a >= jac_floor)
    return np.log(np.where(clipped, jac_floor, a)), clipped


def estimate_L(spec, lam, depth, count, seed, mode="random", jac_floor=JAC_FLOOR,
               clip_limit=CLIP_LIMIT, strict=True, sample=None):
    """Monte Carlo estimate of ``L(lam) = <mu_lam, log|Jac f_lam|>``.

    Points whose Jacobian falls below ``jac_floor`` contribute
    ``log(jac_floor)``.  With ``strict`` a clipped fraction above
    ``clip_limit`` raises :class:`ClippedFractionExcessive`.
    """
    if sample is None:
        sample = sample_equilibrium(spec, lam, depth, count, seed, mode=mode)
    n = sample.count
    if n == 0:
        return LyapunovEstimate(complex(lam), float("nan"), float("nan"), 0, depth)
    vals, clipped = log_abs_jacobian(spec, lam, sample.points, jac_floor)
    frac = float(clipped.mean())
    if strict and frac > clip_limit:
        raise ClippedFractionExcessive(frac, clip_limit)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return LyapunovEstimate(complex(lam), mean, se, n, depth, frac)


@dataclass
class LyapunovGrid:
    """``L`` sampled on the nodes of a parameter grid (rows = increasing Im)."""

    dom: ParameterDomain
    values: np.ndarray
    std_errors: np.ndarray
    clipped: np.ndarray = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.dom.shape:
            raise ValueError(f"grid shape {self.values.shape} does not match domain {self.dom.shape}")
        if self.clipped is None:
            self.clipped = np.zeros(self.dom.shape)

    @classmethod
    def from_values(cls, dom, values, std_errors=None):
        values = np.asarray(values, dtype=float)
        se = np.zeros_like(values) if std_errors is None else np.asarray(std_errors, dtype=float)
        return cls(dom, values, se, manifest={"source": "synthetic"})

    def lower_bound_violations(self, d_t):
        bound = 0.5 * math.log(d_t) - 3.0 * self.std_errors
        return np.argwhere(~(self.values >= bound))


def sweep_grid(spec, dom, depth, count, seed, mode="random", threads=1, jac_floor=JAC_FLOOR,
               clip_limit=CLIP_LIMIT):
    """Estimate ``L`` at every node of ``dom``.

    Cell ``(j, i)`` uses seed ``derive_seed(seed, j, i)``, so the grid is
    identical for any ``threads``.  Per-cell failures are recorded in the
    manifest and never abort the sweep.
    """
    validate_polynomial_like(spec, dom)
    ny, nx = dom.shape
    values = np.empty((ny, nx))
    ses = np.empty((ny, nx))
    clipped = np.empty((ny, nx))
    errors = []

    def row(j):
        out = []
        for i in range(nx):
            lam = dom.node(j, i)
            est = estimate_L(spec, lam, depth, count, derive_seed(seed, j, i), mode=mode,
                             jac_floor=jac_floor, strict=False)
            msg = None
            if est.clipped_fraction > clip_limit:
                msg = str(ClippedFractionExcessive(est.clipped_fraction, clip_limit))
            out.append((est, msg))
        return j, out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(ny)))
    else:
        rows = [row(j) for j in range(ny)]
    for j, out in rows:
        for i, (est, msg) in enumerate(out):
            values[j, i] = est.L_value
            ses[j, i] = est.std_error
            clipped[j, i] = est.clipped_fraction
            if msg:
                errors.append({"cell": [j, i], "lam": [est.lam.real, est.lam.imag], "error": msg})
    manifest = {
        "seed": int(seed),
        "seed_scheme": "derive_seed(seed, row, col)",
        "depth": int(depth),
        "count": int(count),
        "mode": mode,
        "jac_floor": jac_floor,
        "d_star_upper": spec.d_star_upper,
        "cell_errors": errors,
    }
    return LyapunovGrid(dom, values, ses, clipped, manifest)


@dataclass
class BifField:
    """Discrete ``dd^c L = (1/2pi) Laplacian L`` on interior nodes.

    ``laplacian[j-1, i-1]`` belongs to grid node ``(j, i)``.  Negative cells
    are kept: only masses over regions carry meaning.
    """

    source: LyapunovGrid
    laplacian: np.ndarray

    @property
    def h(self):
        return self.source.dom.h

    @property
    def cell_area(self):
        return self.h ** 2

    def density(self):
        """Per-node mass ``(1/2pi) Laplacian L * h^2``."""
        return self.laplacian * self.cell_area / (2 * math.pi)

    def interior_nodes(self):
        return self.source.dom.nodes()[1:-1, 1:-1]

    def mass_over(self, region=None):
        """Mass of the field over interior nodes in ``region``.

        ``region`` may be ``None`` (whole interior), a boolean mask shaped like
        :attr:`laplacian`, or a :class:`ParameterDomain`-like rectangle.
        """
        dens = self.density()
        if region is None:
            mask = np.ones(dens.shape, dtype=bool)
        elif isinstance(region, np.ndarray):
            mask = region
        else:
            nodes = self.interior_nodes()
            c = complex(region.center)
            mask = (np.abs(nodes.real - c.real) <= region.half_width) & \
                   (np.abs(nodes.imag - c.imag) <= region.half_height)
        return math.fsum(dens[mask].ravel())

    def neighborhood_mass(self, lam, radius_cells=2):
        """Mass of the ``(2r+1) x (2r+1)`` interior block around the node nearest ``lam``."""
        j, i = self.source.dom.index_of(lam)
        jj, ii = j - 1, i - 1
        ny, nx = self.laplacian.shape
        mask = np.zeros((ny, nx), dtype=bool)
        mask[max(jj - radius_cells, 0):min(jj + radius_cells + 1, ny),
             max(ii - radius_cells, 0):min(ii + radius_cells + 1, nx)] = True
        return self.mass_over(mask)

    def boundary_flux(self):
        """``(1/2pi) sum (L_outer - L_inner)`` over edges leaving the interior."""
        L = self.source.values
        terms = []
        terms.extend((L[0, 1:-1] - L[1, 1:-1]).tolist())
        terms.extend((L[-1, 1:-1] - L[-2, 1:-1]).tolist())
        terms.extend((L[1:-1, 0] - L[1:-1, 1]).tolist())
        terms.extend((L[1:-1, -1] - L[1:-1, -2]).tolist())
        return math.fsum(terms) / (2 * math.pi)


def laplacian_5pt(values, h):
    L = np.asarray(values, dtype=float)
    return (L[1:-1, 2:] + L[1:-1, :-2] + L[2:, 1:-1] + L[:-2, 1:-1] - 4.0 * L[1:-1, 1:-1]) / (h * h)


def ddc_field(grid):
    """Five-point-stencil ``dd^c`` of a Lyapunov grid (needs at least 3x3 nodes)."""
    ny, nx = grid.values.shape
    if ny < 3 or nx < 3:
        raise PreconditionError("ddc_field needs a grid of at least 3x3 nodes")
    return BifField(grid, laplacian_5pt(grid.values, grid.dom.h))


def noise_floor(baseline, factor=3.0):
    """``factor`` times the absolute mass measured on a reference stable window."""
    mass = baseline.mass_over() if isinstance(baseline, BifField) else float(baseline)
    return factor * abs(mass)
