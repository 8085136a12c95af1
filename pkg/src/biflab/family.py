"""Holomorphic families of polynomial maps on C or skew products on C^2.

A univariate family is ``p(lam, z) = sum_j a_j(lam) z^j`` and is stored as a
2-D table ``P[j, m]`` holding the coefficient of ``z^j lam^m``.  A skew
product ``(z, w) -> (p(lam, z), q(lam, z, w))`` additionally carries a 3-D
table ``Q[j, l, m]`` for the coefficient of ``w^j z^l lam^m``.  All tables
are in ascending powers.

Every map is viewed as polynomial-like on the polydisk of radius
``escape_radius``; :func:`validate_polynomial_like` produces the
certificate that preimages of that polydisk sit in a strictly smaller one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npp

from .errors import NoEscapeCertificate, OrbitEscaped


class Kind(str, enum.Enum):
    UNIVARIATE = "univariate"
    SKEW = "skew"


class _Escaped:
    """Sentinel returned by :func:`evaluate` when the image overflows."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ESCAPED"

    def __bool__(self):
        return False


ESCAPED = _Escaped()


def _as_table(coeffs, ndim):
    """Pad a ragged nested sequence into a dense complex array."""
    if isinstance(coeffs, np.ndarray):
        arr = np.asarray(coeffs, dtype=complex)
        if arr.ndim != ndim:
            raise ValueError(f"expected a {ndim}-d coefficient table, got {arr.ndim}-d")
        return arr

    def shape_of(obj, depth):
        if depth == 1:
            return [len(obj)]
        inner = [shape_of(o, depth - 1) for o in obj]
        return [len(obj)] + [max((s[i] for s in inner), default=1) for i in range(depth - 1)]

    shape = [max(s, 1) for s in shape_of(coeffs, ndim)]
    arr = np.zeros(shape, dtype=complex)

    def fill(obj, idx):
        if len(idx) == ndim - 1:
            for m, c in enumerate(obj):
                arr[tuple(idx) + (m,)] = complex(c)
            return
        for i, o in enumerate(obj):
            fill(o, idx + [i])

    fill(coeffs, [])
    return arr


def _trim_leading(arr):
    """Drop trailing all-zero slices along axis 0 (highest powers)."""
    k = arr.shape[0]
    while k > 1 and not np.any(arr[k - 1]):
        k -= 1
    return arr[:k]


@dataclass(frozen=True)
class ParameterDomain:
    """Rectangle in the parameter plane sampled on a cell-centred grid.

    Node ``(j, i)`` sits at ``x0 + i*h + 1j*(y0 + j*h)``; rows run in
    increasing imaginary part.
    """

    center: complex
    half_width: float
    half_height: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("domain half-width and half-height must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid dimensions must be positive")
        hy = 2.0 * self.half_height / self.ny
        if not math.isclose(self.h, hy, rel_tol=1e-9):
            raise ValueError(f"grid cells must be square (h_x={self.h!r}, h_y={hy!r})")

    @classmethod
    def square(cls, center, side, n):
        return cls(complex(center), side / 2.0, side / 2.0, n, n)

    @property
    def h(self):
        return 2.0 * self.half_width / self.nx

    @property
    def x0(self):
        return complex(self.center).real - self.half_width + 0.5 * self.h

    @property
    def y0(self):
        return complex(self.center).imag - self.half_height + 0.5 * self.h

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def area(self):
        return 4.0 * self.half_width * self.half_height

    def xs(self):
        return self.x0 + self.h * np.arange(self.nx)

    def ys(self):
        return self.y0 + self.h * np.arange(self.ny)

    def nodes(self):
        return self.xs()[None, :] + 1j * self.ys()[:, None]

    def node(self, j, i):
        return complex(self.x0 + i * self.h, self.y0 + j * self.h)

    def index_of(self, lam):
        """Nearest node ``(j, i)`` to ``lam``, clamped to the grid."""
        lam = complex(lam)
        i = int(round((lam.real - self.x0) / self.h))
        j = int(round((lam.imag - self.y0) / self.h))
        return min(max(j, 0), self.ny - 1), min(max(i, 0), self.nx - 1)

    def contains(self, lam):
        lam = complex(lam)
        c = complex(self.center)
        return abs(lam.real - c.real) <= self.half_width and abs(lam.imag - c.imag) <= self.half_height

    def corners(self):
        c = complex(self.center)
        return [c + complex(sx * self.half_width, sy * self.half_height)
                for sy in (-1, 1) for sx in (-1, 1)]

    @property
    def radius(self):
        """Half-diagonal: every parameter lies within this distance of the centre."""
        return math.hypot(self.half_width, self.half_height)


@dataclass(frozen=True)
class FamilyGeometry:
    lam: complex
    V_radius: float
    U_escape_bound: float

    def __post_init__(self):
        if not self.U_escape_bound < self.V_radius:
            raise ValueError("U_escape_bound must be strictly below V_radius")


@dataclass(frozen=True)
class FamilySpec:
    """A parameterized polynomial family together with its polydisk geometry.

    Parameters
    ----------
    kind : Kind
        ``UNIVARIATE`` for maps of C, ``SKEW`` for skew products of C^2.
    p_coeffs : nested sequence
        ``p_coeffs[j][m]`` is the coefficient of ``z^j lam^m``.
    q_coeffs : nested sequence, optional
        ``q_coeffs[j][l][m]`` is the coefficient of ``w^j z^l lam^m``.
    escape_radius : float
        Radius ``R`` of the polydisk ``V``.
    d_star_upper : float, optional
        Assumed upper bound for the (k-1)-th *-dynamical degree.  Defaults to
        1 for k=1 and ``deg_z p`` for k=2.
    """

    kind: Kind
    p_coeffs: tuple
    q_coeffs: tuple | None = None
    escape_radius: float = 3.0
    d_star_upper: float | None = None
    name: str = ""
    _P: np.ndarray = field(init=False, repr=False, compare=False)
    _Q: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        P = _trim_leading(_as_table(self.p_coeffs, 2))
        object.__setattr__(self, "_P", P)
        if kind is Kind.SKEW:
            if self.q_coeffs is None:
                raise ValueError("skew products need q_coeffs")
            Q = _trim_leading(_as_table(self.q_coeffs, 3))
            object.__setattr__(self, "_Q", Q)
        else:
            object.__setattr__(self, "_Q", None)
        if self.escape_radius <= 0:
            raise ValueError("escape_radius must be positive")
        if self.d_t < 2:
            raise ValueError(f"topological degree must be at least 2, got {self.d_t}")
        if self.d_star_upper is None:
            object.__setattr__(self, "d_star_upper", 1.0 if kind is Kind.UNIVARIATE else float(self.deg_z))
        if self.d_star_upper <= 0:
            raise ValueError("d_star_upper must be positive")

    # -- degrees -----------------------------------------------------------
    @property
    def k(self):
        return 1 if self.kind is Kind.UNIVARIATE else 2

    @property
    def deg_z(self):
        return self._P.shape[0] - 1

    @property
    def deg_w(self):
        return 0 if self._Q is None else self._Q.shape[0] - 1

    @property
    def d_t(self):
        return self.deg_z if self.kind is Kind.UNIVARIATE else self.deg_z * self.deg_w

    @property
    def large_topological_degree(self):
        return self.d_star_upper < self.d_t

    @property
    def P(self):
        return self._P

    @property
    def Q(self):
        return self._Q

    # -- coefficient polynomials ------------------------------------------
    def p_coefficients(self, lam):
        """Coefficients of ``p(lam, .)``, shape ``(deg_z+1,) + lam.shape``, ascending."""
        return npp.polyval(np.asarray(lam, dtype=complex), self._P.T)

    def q_coefficients(self, lam, z):
        """Coefficients of ``q(lam, z, .)``, shape ``(deg_w+1,) + broadcast shape``, ascending."""
        lam, z = np.broadcast_arrays(np.asarray(lam, dtype=complex), np.asarray(z, dtype=complex))
        return np.stack([npp.polyval2d(z, lam, self._Q[j]) for j in range(self._Q.shape[0])])

    # -- vectorized evaluation --------------------------------------------
    def p(self, lam, z):
        return _horner(self.p_coefficients(lam), z)

    def p_z(self, lam, z):
        return _horner(npp.polyder(self.p_coefficients(lam), axis=0), z)

    def p_zz(self, lam, z):
        return _horner(npp.polyder(self.p_coefficients(lam), 2, axis=0), z)

    def p_lam_coefficients(self, lam):
        """Coefficients of ``d/dlam p(lam, .)``, same layout as :meth:`p_coefficients`."""
        dP = npp.polyder(self._P, axis=1) if self._P.shape[1] > 1 else np.zeros((self._P.shape[0], 1))
        return npp.polyval(np.asarray(lam, dtype=complex), dP.T)

    def p_lam(self, lam, z):
        return _horner(self.p_lam_coefficients(lam), z)

    def q(self, lam, z, w):
        return _horner(self.q_coefficients(lam, z), w)

    def q_w(self, lam, z, w):
        return _horner(npp.polyder(self.q_coefficients(lam, z), axis=0), w)

    def q_z(self, lam, z, w):
        dQ = npp.polyder(self._Q, axis=1)
        lam, z = np.broadcast_arrays(np.asarray(lam, dtype=complex), np.asarray(z, dtype=complex))
        coeffs = np.stack([npp.polyval2d(z, lam, dQ[j]) for j in range(dQ.shape[0])])
        return _horner(coeffs, w)

    def q_lam(self, lam, z, w):
        dQ = npp.polyder(self._Q, axis=2)
        lam, z = np.broadcast_arrays(np.asarray(lam, dtype=complex), np.asarray(z, dtype=complex))
        coeffs = np.stack([npp.polyval2d(z, lam, dQ[j]) for j in range(dQ.shape[0])])
        return _horner(coeffs, w)

    def step(self, lam, z, w=None):
        """One application of ``f_lam``; returns ``z'`` or ``(z', w')``."""
        if self.kind is Kind.UNIVARIATE:
            return self.p(lam, z)
        return self.p(lam, z), self.q(lam, z, w)

    def jac(self, lam, z, w=None):
        if self.kind is Kind.UNIVARIATE:
            return self.p_z(lam, z)
        return self.p_z(lam, z) * self.q_w(lam, z, w)


def _horner(coeffs, x):
    """Evaluate ascending coefficients (leading axis) at ``x`` by Horner's rule."""
    x = np.asarray(x, dtype=complex)
    acc = np.zeros(np.broadcast_shapes(coeffs.shape[1:], x.shape), dtype=complex) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * x + c
    return acc


# -- presets ---------------------------------------------------------------

def quadratic(escape_radius=3.0):
    """``z^2 + lam``."""
    return FamilySpec(Kind.UNIVARIATE, ((0, 1), (0,), (1,)), escape_radius=escape_radius,
                      name="quadratic")


def cubic(escape_radius=3.0):
    """``z^3 + lam z``."""
    return FamilySpec(Kind.UNIVARIATE, ((0,), (0, 1), (0,), (1,)), escape_radius=escape_radius,
                      name="cubic")


def power(d=2, escape_radius=3.0):
    """``z^d`` as a constant family."""
    return FamilySpec(Kind.UNIVARIATE, tuple((0,) for _ in range(d)) + ((1,),),
                      escape_radius=escape_radius, name=f"power{d}")


def skew_quadratic(escape_radius=3.0):
    """``(z, w) -> (z^2 + lam, w^2 + z)``."""
    return FamilySpec(Kind.SKEW, ((0, 1), (0,), (1,)),
                      q_coeffs=(((0,), (1,)), ((0,),), ((1,),)),
                      escape_radius=escape_radius, name="skew_quadratic")


def product_power(d=2, escape_radius=3.0):
    """``(z, w) -> (z^d, w^d)``."""
    p = tuple((0,) for _ in range(d)) + ((1,),)
    q = tuple(((0,),) for _ in range(d)) + (((1,),),)
    return FamilySpec(Kind.SKEW, p, q_coeffs=q, escape_radius=escape_radius,
                      name=f"product_power{d}")


PRESETS = {
    "quadratic": quadratic,
    "cubic": cubic,
    "power": power,
    "skew_quadratic": skew_quadratic,
    "product_power": product_power,
}


# -- scalar operations -----------------------------------------------------

def _split(spec, point):
    if spec.kind is Kind.UNIVARIATE:
        return complex(point), None
    z, w = point
    return complex(z), complex(w)


def evaluate(spec, lam, point):
    """``f_lam(point)``; returns :data:`ESCAPED` instead of an overflowed value."""
    z, w = _split(spec, point)
    with np.errstate(over="ignore", invalid="ignore"):
        out = spec.step(lam, z, w)
    if spec.kind is Kind.UNIVARIATE:
        out = complex(out)
        return out if np.isfinite(out) else ESCAPED
    out = (complex(out[0]), complex(out[1]))
    return out if all(np.isfinite(v) for v in out) else ESCAPED


def jacobian(spec, lam, point):
    """Determinant of the complex Jacobian of ``f_lam`` at ``point``."""
    z, w = _split(spec, point)
    return complex(spec.jac(lam, z, w))


def param_derivative(spec, lam, point, n, dpoint=None):
    """Derivative in ``lam`` of ``f_lam^n(point(lam))`` by forward chain rule.

    ``dpoint`` is ``d point / d lam`` (zero by default, which is exact for a
    critical point since the first step kills it anyway).

    Raises :class:`OrbitEscaped` if an orbit point before the last step leaves V.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    R = spec.escape_radius
    z, w = _split(spec, point)
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.kind is Kind.UNIVARIATE:
            dz = 0j if dpoint is None else complex(dpoint)
            for j in range(n):
                if not abs(z) <= R:
                    raise OrbitEscaped(j)
                dz = complex(spec.p_z(lam, z)) * dz + complex(spec.p_lam(lam, z))
                z = complex(spec.p(lam, z))
            return dz
        dz, dw = (0j, 0j) if dpoint is None else (complex(dpoint[0]), complex(dpoint[1]))
        for j in range(n):
            if not (abs(z) <= R and abs(w) <= R):
                raise OrbitEscaped(j)
            dz, dw = (
                complex(spec.p_z(lam, z)) * dz + complex(spec.p_lam(lam, z)),
                complex(spec.q_z(lam, z, w)) * dz + complex(spec.q_w(lam, z, w)) * dw
                + complex(spec.q_lam(lam, z, w)),
            )
            z, w = complex(spec.p(lam, z)), complex(spec.q(lam, z, w))
        return np.array([dz, dw])


# -- polynomial-like certificate -------------------------------------------

def _shift(coeffs, c):
    """Re-expand ascending ``coeffs`` in powers of ``(lam - c)``."""
    coeffs = np.trim_zeros(np.asarray(coeffs, dtype=complex), "b")
    if coeffs.size == 0:
        return np.zeros(1, dtype=complex)
    return np.polynomial.Polynomial(coeffs)(np.polynomial.Polynomial([c, 1])).coef


def _abs_bound(coeffs, c, rho):
    """Upper bound of ``|sum coeffs[m] lam^m|`` over ``|lam - c| <= rho``."""
    b = np.abs(_shift(coeffs, c))
    return float(np.sum(b * rho ** np.arange(b.size)))


def _lower_bound(coeffs, c, rho):
    b = np.abs(_shift(coeffs, c))
    return float(b[0] - np.sum(b[1:] * rho ** np.arange(1, b.size)))


def _escape_threshold(lead, others, R):
    """Least ``s`` with ``lead*s^d - sum others[j] s^j > R`` for all larger ``s``.

    ``lead*s^d - sum ...`` divided by ``s^d`` is increasing, so the
    super-level set is a half-line and bisection finds its endpoint.
    """
    d = len(others)

    def phi(s):
        return lead * s ** d - sum(b * s ** j for j, b in enumerate(others)) - R

    hi = 1.0
    while phi(hi) <= 0:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def escape_bound(spec, center, rho=0.0):
    """Radius ``r`` with ``f_lam^{-1}(D_R^k) ⊂ D_r^k`` for every ``|lam - center| <= rho``."""
    R = spec.escape_radius
    P = spec.P
    lead = _lower_bound(P[-1], center, rho)
    if lead <= 0:
        raise NoEscapeCertificate("leading coefficient of p may vanish on the parameter domain")
    r_z = _escape_threshold(lead, [_abs_bound(P[j], center, rho) for j in range(P.shape[0] - 1)], R)
    if spec.kind is Kind.UNIVARIATE:
        return r_z
    Q = spec.Q

    def bound_b(j, lower=False):
        # coefficient of w^j is sum_l (poly in lam) z^l with |z| <= r_z
        terms = [_abs_bound(Q[j, l], center, rho) * r_z ** l for l in range(Q.shape[1])]
        if not lower:
            return sum(terms)
        return _lower_bound(Q[j, 0], center, rho) - sum(terms[1:])

    lead_w = bound_b(Q.shape[0] - 1, lower=True)
    if lead_w <= 0:
        raise NoEscapeCertificate("leading coefficient of q may vanish on the parameter domain")
    r_w = _escape_threshold(lead_w, [bound_b(j) for j in range(Q.shape[0] - 1)], R)
    return max(r_z, r_w)


def validate_polynomial_like(spec, dom):
    """Certify ``U ⋐ V`` over the whole parameter rectangle.

    Returns one :class:`FamilyGeometry` per domain corner, each carrying the
    domain-wide bound.  Raises :class:`NoEscapeCertificate` when the bound
    reaches the escape radius.
    """
    r = escape_bound(spec, complex(dom.center), dom.radius)
    if not r < spec.escape_radius:
        raise NoEscapeCertificate(
            f"coefficient bounds give r = {r:.6g} >= R = {spec.escape_radius:.6g}; raise escape_radius"
        )
    return [FamilyGeometry(lam, spec.escape_radius, r) for lam in dom.corners()]


def certified_radius(spec, dom):
    return validate_polynomial_like(spec, dom)[0].U_escape_bound
