"""Spacetime lattice, lattice functions, regions and causal cones.

Fields are complex arrays of shape (nt, nx, N), optionally with leading batch
axes. Row index = time, column index = space, last axis = vector component.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class GridMismatch(ValueError):
    pass


class MarginError(ValueError):
    """A causal cone launched from the data would reach the spatial boundary."""


@dataclass(frozen=True)
class GridSpec:
    t_min: float
    t_max: float
    x_half_width: float
    h: float
    n_components: int = 1
    tau_minus: float | None = None
    tau_plus: float | None = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step must be positive")
        for name, span in (("time", self.t_max - self.t_min), ("space", 2 * self.x_half_width)):
            steps = span / self.h
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValueError(f"{name} extent is not a multiple of the step")
        if self.nt < 8 or self.nx < 8:
            raise ValueError("grid needs at least 8 nodes in each direction")
        if self.n_components < 1:
            raise ValueError("n_components must be positive")
        tm = self.t_min if self.tau_minus is None else self.tau_minus
        tp = self.t_max if self.tau_plus is None else self.tau_plus
        object.__setattr__(self, "tau_minus", tm)
        object.__setattr__(self, "tau_plus", tp)
        if not (self.t_min <= tm < tp <= self.t_max):
            raise ValueError("need t_min <= tau_minus < tau_plus <= t_max")
        for v in (tm, tp):
            k = (v - self.t_min) / self.h
            if abs(k - round(k)) > 1e-9:
                raise ValueError("slice bounds must lie on grid lines")

    @classmethod
    def from_counts(cls, nt, nx, h=1.0 / 16, n_components=1, tau_rows=None, t_min=None):
        """Grid with nt rows, nx (odd) columns centred on x = 0 and unit CFL."""
        if nx % 2 == 0:
            raise ValueError("nx must be odd so that x = 0 is a node")
        L = (nx - 1) / 2 * h
        t0 = -(nt - 1) / 2 * h if t_min is None else t_min
        t1 = t0 + (nt - 1) * h
        tm = tp = None
        if tau_rows is not None:
            tm, tp = t0 + tau_rows[0] * h, t0 + tau_rows[1] * h
        return cls(t0, t1, L, h, n_components, tm, tp)

    @property
    def dt(self):
        return self.h

    @property
    def dx(self):
        return self.h

    @property
    def nt(self):
        return int(round((self.t_max - self.t_min) / self.h)) + 1

    @property
    def nx(self):
        return int(round(2 * self.x_half_width / self.h)) + 1

    @property
    def shape(self):
        return (self.nt, self.nx, self.n_components)

    @property
    def t(self):
        return self.t_min + self.h * np.arange(self.nt)

    @property
    def x(self):
        return -self.x_half_width + self.h * np.arange(self.nx)

    @property
    def weight(self):
        return self.h * self.h

    def row(self, t):
        k = (t - self.t_min) / self.h
        if abs(k - round(k)) > 1e-9 or not (0 <= round(k) < self.nt):
            raise ValueError(f"time {t} is not a grid row")
        return int(round(k))

    @property
    def tau_rows(self):
        return self.row(self.tau_minus), self.row(self.tau_plus)

    @property
    def slice_rows(self):
        """Rows of the open slice tau_minus < t < tau_plus."""
        a, b = self.tau_rows
        return a + 1, b - 1

    def with_components(self, n):
        return GridSpec(self.t_min, self.t_max, self.x_half_width, self.h, n,
                        self.tau_minus, self.tau_plus)

    def with_slice(self, tau_rows):
        t = self.t
        return GridSpec(self.t_min, self.t_max, self.x_half_width, self.h,
                        self.n_components, t[tau_rows[0]], t[tau_rows[1]])

    def safety_margin(self, data_extent):
        """L - (t_max - t_min) - extent; nonnegative means no cone reaches the edge."""
        return self.x_half_width - (self.t_max - self.t_min) - data_extent

    def zeros(self, batch=()):
        return np.zeros(tuple(batch) + self.shape, dtype=complex)

    def mesh(self):
        return np.meshgrid(self.t, self.x, indexing="ij")


@dataclass
class Field:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise GridMismatch(f"values have shape {self.values.shape}, grid wants {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")


class Region:
    """Set of grid nodes stored as a boolean (nt, nx) mask."""

    def __init__(self, grid: GridSpec, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (grid.nt, grid.nx):
            raise GridMismatch("mask shape does not match grid")
        self.grid = grid
        self.mask = mask

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros((grid.nt, grid.nx), bool))

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones((grid.nt, grid.nx), bool))

    @classmethod
    def box(cls, grid, rows, cols):
        """Inclusive row range and column range."""
        m = np.zeros((grid.nt, grid.nx), bool)
        m[rows[0]:rows[1] + 1, cols[0]:cols[1] + 1] = True
        return cls(grid, m)

    @classmethod
    def time_slice(cls, grid, t_lo, t_hi):
        """Open slab t_lo < t < t_hi."""
        t = grid.t[:, None] + 0 * grid.x[None, :]
        eps = 1e-9 * grid.h
        return cls(grid, (t > t_lo + eps) & (t < t_hi - eps))

    @classmethod
    def half_space(cls, grid, t0, side):
        """Closed half-space t >= t0 (side '+') or t <= t0 (side '-')."""
        t = grid.t[:, None] + 0 * grid.x[None, :]
        eps = 1e-9 * grid.h
        return cls(grid, t >= t0 - eps if side == "+" else t <= t0 + eps)

    @classmethod
    def slice_region(cls, grid):
        return cls.time_slice(grid, grid.tau_minus, grid.tau_plus)

    def _check(self, other):
        if other.grid != self.grid:
            raise GridMismatch("regions live on different grids")

    def __or__(self, other):
        self._check(other)
        return Region(self.grid, self.mask | other.mask)

    def __and__(self, other):
        self._check(other)
        return Region(self.grid, self.mask & other.mask)

    def __invert__(self):
        return Region(self.grid, ~self.mask)

    def __le__(self, other):
        self._check(other)
        return not np.any(self.mask & ~other.mask)

    def __eq__(self, other):
        return isinstance(other, Region) and other.grid == self.grid and np.array_equal(self.mask, other.mask)

    def __len__(self):
        return int(self.mask.sum())

    def is_empty(self):
        return not self.mask.any()

    def nodes(self):
        return np.argwhere(self.mask)

    def bounding_box(self):
        idx = self.nodes()
        if len(idx) == 0:
            return None
        return (idx[:, 0].min(), idx[:, 0].max()), (idx[:, 1].min(), idx[:, 1].max())

    def dilate(self, width=1, periodic=False):
        m = self.mask.copy()
        for _ in range(width):
            m = _dilate_once(m, periodic)
        return Region(self.grid, m)

    def indicator(self):
        return self.mask[..., None].astype(float)


def _spread_x(m):
    out = m.copy()
    out[..., 1:] |= m[..., :-1]
    out[..., :-1] |= m[..., 1:]
    return out


def _dilate_once(m, periodic=False):
    if periodic:
        out = m | np.roll(m, 1, -1) | np.roll(m, -1, -1)
    else:
        out = _spread_x(m)
    out2 = out.copy()
    out2[1:] |= out[:-1]
    out2[:-1] |= out[1:]
    return out2


def causal_cone(region: Region, direction: str) -> Region:
    """J+(B) or J-(B) at unit speed.

    With dt = dx the condition |x - y| <= t - s is exactly "column distance at
    most row distance", so a row-by-row sweep with a one-cell spread is exact.
    """
    if direction not in "+-":
        raise ValueError("direction must be '+' or '-'")
    m = region.mask
    out = np.zeros_like(m)
    rows = range(m.shape[0]) if direction == "+" else range(m.shape[0] - 1, -1, -1)
    prev = None
    for n in rows:
        cur = m[n].copy()
        if prev is not None:
            cur |= _spread_x(prev)
        out[n] = cur
        prev = cur
    return Region(region.grid, out)


def causal_hull(region):
    return causal_cone(region, "+") | causal_cone(region, "-")


def inner_product(grid: GridSpec, f, g, region: Region | None = None):
    """<f, g> = sum over nodes of conj(f) . g, weighted by dt*dx."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape[-3:] != grid.shape or g.shape[-3:] != grid.shape:
        raise GridMismatch("field shape does not match grid")
    prod = (np.conj(f) * g).sum(axis=-1)
    if region is not None:
        if region.grid != grid:
            raise GridMismatch("region lives on another grid")
        prod = prod * region.mask
    return prod.sum(axis=(-2, -1)) * grid.weight


def l2_norm(grid, f, region=None):
    return float(np.sqrt(max(inner_product(grid, f, f, region).real, 0.0)))


def empirical_support(grid: GridSpec, f, eta=1e-10) -> Region:
    """Nodes where |f| exceeds eta times its maximum; empty for f == 0."""
    a = np.abs(np.asarray(f)).max(axis=-1)
    peak = a.max() if a.size else 0.0
    if peak == 0.0:
        return Region.empty(grid)
    return Region(grid, a > eta * peak)


def check_margin(region: Region, rows=None):
    """Raise MarginError if J+ or J- of the region touches the edge columns.

    With rows=(m0, m1) only cones inside that row window are considered.
    """
    if region.is_empty():
        return
    if rows is not None:
        m = np.zeros_like(region.mask)
        m[rows[0]:rows[1] + 1] = region.mask[rows[0]:rows[1] + 1]
        sub = np.zeros_like(m)
        cone = causal_hull(Region(region.grid, m)).mask
        sub[rows[0]:rows[1] + 1] = cone[rows[0]:rows[1] + 1]
        hull = sub
    else:
        hull = causal_hull(region).mask
    if hull[:, 0].any() or hull[:, -1].any():
        raise MarginError("causal cone of the data reaches the spatial boundary")


def restrict(f, region: Region):
    return np.asarray(f) * region.mask[..., None]


def row_profile(grid, profile):
    """Broadcast a length-nt time profile to field shape."""
    return np.asarray(profile, dtype=float)[:, None, None]


def smoothstep(s):
    """C2 ramp: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10 - 15 * s + 6 * s * s)


def time_ramp(grid, row_lo, row_hi):
    """Profile over rows: 0 up to row_lo, 1 from row_hi on, C2 smoothstep between."""
    n = np.arange(grid.nt, dtype=float)
    if row_hi <= row_lo:
        return (n >= row_hi).astype(float)
    return smoothstep((n - row_lo) / (row_hi - row_lo))


@dataclass
class CauchyData:
    """Data on the row t.

    Wave: u0 = values, u1 = forward difference quotient to the next row.
    Dirac: u0 = values; u1 optional values on the next row (the two-level
    scheme needs both to carry a non-physical component). When u1 is None
    the next row is produced by the one-step characteristic update.
    """
    row: int
    u0: np.ndarray
    u1: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def support_columns(self):
        a = np.abs(self.u0).max(axis=-1)
        if self.u1 is not None:
            a = a + np.abs(self.u1).max(axis=-1)
        idx = np.nonzero(a)[0]
        return (idx.min(), idx.max()) if len(idx) else None


def write_field_csv(path, grid: GridSpec, f):
    f = np.asarray(f)
    t, x = grid.t, grid.x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "component", "re", "im"])
        for n, j, c in zip(*np.nonzero(f)):
            v = f[n, j, c]
            w.writerow([repr(float(t[n])), repr(float(x[j])), int(c),
                        repr(float(v.real)), repr(float(v.imag))])


def write_region_csv(path, region: Region):
    t, x = region.grid.t, region.grid.x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for n, j in region.nodes():
            w.writerow([repr(float(t[n])), repr(float(x[j]))])


def read_field_csv(path, grid: GridSpec):
    f = grid.zeros()
    t0, h = grid.t_min, grid.h
    with open(path) as fh:
        for rec in csv.DictReader(fh):
            n = int(round((float(rec["t"]) - t0) / h))
            j = int(round((float(rec["x"]) + grid.x_half_width) / h))
            f[n, j, int(rec["component"])] = complex(float(rec["re"]), float(rec["im"]))
    return f
