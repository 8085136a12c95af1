"""Grid CSV files and 8-bit PGM rasters.

A grid file starts with ``# nx ny x0 y0 h``; then come ``ny`` rows of
``nx`` comma-separated values printed with 17 significant digits, so
doubles survive a write/read cycle bit for bit.  Row ``j`` holds the nodes
with ``Im lam = y0 + j h`` (increasing), and rasters keep that row order.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import MalformedGrid
from .family import ParameterDomain

SCALES = ("linear", "log", "signed")
LOG_DECADES = 6


def _fmt(x):
    return "%.17g" % x


def format_grid(values, x0, y0, h):
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("grids are two-dimensional")
    ny, nx = values.shape
    lines = [f"# {nx} {ny} {_fmt(x0)} {_fmt(y0)} {_fmt(h)}"]
    lines.extend(",".join(_fmt(v) for v in row) for row in values)
    return "\n".join(lines) + "\n"


def write_grid(path, values, x0, y0, h):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_grid(values, x0, y0, h))


def write_domain_grid(path, values, dom, offset=0):
    """Write ``values`` laid out on ``dom``'s nodes, skipping ``offset`` border rings."""
    write_grid(path, values, dom.x0 + offset * dom.h, dom.y0 + offset * dom.h, dom.h)


def parse_grid(text, source="<grid>"):
    """Parse grid text; returns ``(values, (x0, y0, h))``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise MalformedGrid(f"{source}: missing '# nx ny x0 y0 h' header")
    head = lines[0][1:].split()
    if len(head) != 5:
        raise MalformedGrid(f"{source}: header needs 5 fields, got {len(head)}")
    try:
        nx, ny = int(head[0]), int(head[1])
        x0, y0, h = (float(v) for v in head[2:])
    except ValueError as exc:
        raise MalformedGrid(f"{source}: bad header: {exc}") from None
    if nx < 1 or ny < 1:
        raise MalformedGrid(f"{source}: empty grid {nx}x{ny}")
    rows = lines[1:]
    if len(rows) != ny:
        raise MalformedGrid(f"{source}: expected {ny} rows, found {len(rows)}")
    values = np.empty((ny, nx))
    for j, row in enumerate(rows):
        cells = row.split(",")
        if len(cells) != nx:
            raise MalformedGrid(f"{source}: row {j} has {len(cells)} values, expected {nx}")
        try:
            values[j] = [float(c) for c in cells]
        except ValueError as exc:
            raise MalformedGrid(f"{source}: row {j}: {exc}") from None
    return values, (x0, y0, h)


def read_grid(path):
    try:
        with open(path, encoding="ascii") as fh:
            text = fh.read()
    except UnicodeDecodeError:
        raise MalformedGrid(f"{path}: not an ASCII grid file") from None
    return parse_grid(text, str(path))


def grid_domain(nx, ny, x0, y0, h):
    """The :class:`ParameterDomain` whose nodes a grid header describes."""
    cx = x0 - h / 2 + nx * h / 2
    cy = y0 - h / 2 + ny * h / 2
    return ParameterDomain(complex(cx, cy), nx * h / 2, ny * h / 2, nx, ny)


# -- rasters ----------------------------------------------------------------

def to_gray(values, scale="linear"):
    """Map a grid to 8-bit gray levels.

    ``linear``: min-max to [0, 255].  ``log``: min-max of
    ``log10(1 + (v - min) / s)`` with ``s = (max - min) 10^-6``, i.e. six
    decades above the minimum.  ``signed``: ``128 + 127 v / max|v|`` so 0
    maps to 128.  Constant grids give 0 (linear, log) or 128 (signed).
    Non-finite values render as 0.
    """
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    out = np.zeros(v.shape, dtype=np.uint8)
    if not finite.any():
        return out
    lo, hi = float(v[finite].min()), float(v[finite].max())
    if scale == "signed":
        m = max(abs(lo), abs(hi))
        if hi == lo or m == 0.0:
            out[finite] = 128
            return out
        g = 128.0 + 127.0 * v[finite] / m
    else:
        if hi == lo:
            return out
        x = v[finite] - lo
        if scale == "log":
            s = (hi - lo) * 10.0 ** (-LOG_DECADES)
            x = np.log10(1.0 + x / s)
            g = 255.0 * x / math.log10(1.0 + (hi - lo) / s)
        else:
            g = 255.0 * x / (hi - lo)
    out[finite] = np.clip(np.floor(g + 0.5), 0, 255).astype(np.uint8)
    return out


def pgm_bytes(gray):
    gray = np.asarray(gray, dtype=np.uint8)
    ny, nx = gray.shape
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + gray.tobytes(order="C")


def write_pgm(path, values, scale="linear"):
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(to_gray(values, scale)))


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise MalformedGrid(f"{path}: not a binary PGM")
    nx, ny = (int(t) for t in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != nx * ny:
        raise MalformedGrid(f"{path}: expected {nx * ny} pixels, found {pix.size}")
    return pix.reshape(ny, nx)


def render(grid_path, out_path, scale="linear"):
    values, _ = read_grid(grid_path)
    write_pgm(out_path, values, scale)
    return out_path
