"""Run configuration: a flat ``key = value`` text file with dotted keys.

Example::

    seed = 42
    tasks = sweep, ddc
    family.preset = quadratic
    domain.center = -1
    domain.half_width = 1.5
    domain.half_height = 1.5
    domain.nx = 64
    domain.ny = 64
    sweep.depth = 30
    sweep.count = 500

Families are given by ``family.preset`` or by ``family.kind`` plus
coefficient rows: ``family.p.<j> = a0, a1, ...`` is the coefficient of
``z^j`` as a polynomial in ``lam`` (ascending), and
``family.q.<j>.<l>`` the coefficient of ``w^j z^l``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from . import family as fam
from .errors import ConfigError
from .family import FamilySpec, Kind, ParameterDomain

TASK_ORDER = ("sweep", "ddc", "volume", "cycles", "misiurewicz", "census")
TASK_DEPENDS = {"ddc": ("sweep",), "misiurewicz": ("cycles",)}

# per task: knob -> (parser, default); default None marks a required knob
_INT, _FLOAT, _COMPLEX, _STR = int, float, complex, str


def _ints(text):
    return tuple(int(t) for t in _split_list(text))


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


TASK_KNOBS = {
    "sweep": {"depth": (_INT, None), "count": (_INT, None), "mode": (_STR, "random"),
              "jac_floor_log": (_FLOAT, -50.0)},
    "ddc": {"baseline.center": (_COMPLEX, ""), "baseline.side": (_FLOAT, ""),
            "baseline.n": (_INT, ""), "noise_factor": (_FLOAT, 3.0), "scale": (_STR, "signed")},
    "volume": {"n_min": (_INT, None), "n_max": (_INT, None), "center": (_COMPLEX, ""),
               "side": (_FLOAT, ""), "tau": (_FLOAT, 1.0), "strata": (_INT, 10000),
               "tail_fraction": (_FLOAT, 0.5)},
    "cycles": {"periods": (_ints, None), "base_lam": (_COMPLEX, ""), "order": (_STR, "forward")},
    "misiurewicz": {"n0_max": (_INT, None), "transversality_floor": (_FLOAT, 1e-6),
                    "residual_tol": (_FLOAT, 1e-8), "julia_check": (_STR, "true"),
                    "verify": (_STR, "true")},
    "census": {"lam": (_COMPLEX, 0j), "center": (_STR, None), "radius": (_FLOAT, None),
               "rho": (_FLOAT, None), "n": (_ints, None), "boundary": (_INT, 32)},
}

_TOP_KEYS = {"seed", "output", "tasks"}
_DOMAIN_KEYS = {"center", "half_width", "half_height", "nx", "ny"}
_FAMILY_KEYS = {"preset", "kind", "escape_radius", "d_star_upper", "degree", "name"}


@dataclass(frozen=True)
class RunConfig:
    family: FamilySpec
    domain: ParameterDomain
    seed: int
    output: str
    tasks: tuple
    blocks: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self):
        """SHA-256 of the normalized key/value pairs (order and spacing insensitive)."""
        canon = "\n".join(f"{k}={v}" for k, v in sorted(self.raw.items()))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_pairs(text, source="<config>"):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z0-9_]+)*", key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _convert(key, parser, text):
    try:
        return parser(text.replace(" ", "")) if parser is _COMPLEX else parser(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def _family(pairs):
    fam_pairs = {k[len("family."):]: v for k, v in pairs.items() if k.startswith("family.")}
    extra = {}
    if "escape_radius" in fam_pairs:
        extra["escape_radius"] = _convert("family.escape_radius", _FLOAT, fam_pairs["escape_radius"])
    coeff_keys = [k for k in fam_pairs if k.startswith(("p.", "q."))]
    for k in fam_pairs:
        if k not in _FAMILY_KEYS and k not in coeff_keys:
            raise ConfigError(f"unknown key family.{k}")
    if "preset" in fam_pairs:
        name = fam_pairs["preset"]
        if name not in fam.PRESETS:
            raise ConfigError(f"family.preset: unknown preset {name!r} (known: {', '.join(fam.PRESETS)})")
        if coeff_keys:
            raise ConfigError("family.preset cannot be combined with coefficient keys")
        if "degree" in fam_pairs:
            extra["d"] = _convert("family.degree", _INT, fam_pairs["degree"])
        try:
            spec = fam.PRESETS[name](**extra)
        except TypeError:
            raise ConfigError(f"family.degree does not apply to preset {name!r}") from None
    else:
        if "kind" not in fam_pairs:
            raise ConfigError("family: give either family.preset or family.kind with coefficients")
        try:
            kind = Kind(fam_pairs["kind"])
        except ValueError:
            raise ConfigError(f"family.kind must be 'univariate' or 'skew', got {fam_pairs['kind']!r}") from None
        p, q = {}, {}
        for k in coeff_keys:
            idx = k.split(".")[1:]
            vals = [_convert(f"family.{k}", _COMPLEX, t) for t in _split_list(fam_pairs[k])]
            try:
                idx = tuple(int(i) for i in idx)
            except ValueError:
                raise ConfigError(f"family.{k}: indices must be integers") from None
            if k.startswith("p.") and len(idx) == 1:
                p[idx[0]] = vals
            elif k.startswith("q.") and len(idx) == 2:
                q[idx] = vals
            else:
                raise ConfigError(f"family.{k}: expected family.p.<j> or family.q.<j>.<l>")
        if not p:
            raise ConfigError("family: no family.p.<j> coefficients given")
        p_rows = tuple(tuple(p.get(j, [0])) for j in range(max(p) + 1))
        q_rows = None
        if kind is Kind.SKEW:
            if not q:
                raise ConfigError("family: skew products need family.q.<j>.<l> coefficients")
            dj = max(j for j, _ in q) + 1
            dl = max(l for _, l in q) + 1
            q_rows = tuple(tuple(tuple(q.get((j, l), [0])) for l in range(dl)) for j in range(dj))
        elif q:
            raise ConfigError("family.q.* given for a univariate family")
        try:
            spec = FamilySpec(kind, p_rows, q_rows, name=fam_pairs.get("name", "custom"), **extra)
        except ValueError as exc:
            raise ConfigError(f"family: {exc}") from None
    if "d_star_upper" in fam_pairs:
        d_star = _convert("family.d_star_upper", _FLOAT, fam_pairs["d_star_upper"])
        spec = FamilySpec(spec.kind, spec.p_coeffs, spec.q_coeffs, spec.escape_radius, d_star, spec.name)
    return spec


def _domain(pairs):
    dom = {k[len("domain."):]: v for k, v in pairs.items() if k.startswith("domain.")}
    for k in dom:
        if k not in _DOMAIN_KEYS:
            raise ConfigError(f"unknown key domain.{k}")
    for k in ("center", "half_width", "nx"):
        if k not in dom:
            raise ConfigError(f"missing required key domain.{k}")
    center = _convert("domain.center", _COMPLEX, dom["center"])
    hw = _convert("domain.half_width", _FLOAT, dom["half_width"])
    hh = _convert("domain.half_height", _FLOAT, dom.get("half_height", dom["half_width"]))
    nx = _convert("domain.nx", _INT, dom["nx"])
    ny = _convert("domain.ny", _INT, dom.get("ny", dom["nx"]))
    try:
        return ParameterDomain(center, hw, hh, nx, ny)
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from None


def from_pairs(pairs, seed_override=None):
    for k in pairs:
        head = k.split(".", 1)[0]
        if "." not in k and k not in _TOP_KEYS:
            raise ConfigError(f"unknown key {k!r}")
        if "." in k and head not in ("family", "domain") and head not in TASK_KNOBS:
            raise ConfigError(f"unknown section {head!r} in key {k!r}")
    if seed_override is not None:
        seed = int(seed_override)
    elif "seed" in pairs:
        seed = _convert("seed", _INT, pairs["seed"])
    else:
        raise ConfigError("missing required key 'seed' (runs are never seeded from the clock)")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    tasks = _split_list(pairs.get("tasks", ""))
    if not tasks:
        raise ConfigError("missing required key 'tasks'")
    for t in tasks:
        if t not in TASK_KNOBS:
            raise ConfigError(f"tasks: unknown task {t!r} (known: {', '.join(TASK_ORDER)})")
    for t in tasks:
        for dep in TASK_DEPENDS.get(t, ()):
            if dep not in tasks:
                raise ConfigError(f"task {t!r} needs task {dep!r}")
    spec = _family(pairs)
    dom = _domain(pairs)
    blocks = {}
    for t in TASK_KNOBS:
        given = {k[len(t) + 1:]: v for k, v in pairs.items() if k.startswith(t + ".")}
        for k in given:
            if k not in TASK_KNOBS[t]:
                raise ConfigError(f"unknown key {t}.{k}")
        if t not in tasks:
            continue
        block = {}
        for knob, (parser, default) in TASK_KNOBS[t].items():
            if knob in given:
                block[knob] = _convert(f"{t}.{knob}", parser, given[knob])
            elif default is None:
                raise ConfigError(f"task {t!r} needs key {t}.{knob}")
            else:
                block[knob] = None if default == "" else default
        blocks[t] = block
    ordered = tuple(t for t in TASK_ORDER if t in tasks)
    raw = dict(pairs)
    raw["seed"] = str(seed)
    return RunConfig(spec, dom, seed, pairs.get("output", "biflab-out"), ordered, blocks, raw)


def load(path, seed_override=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return from_pairs(parse_pairs(text, str(path)), seed_override)
