"""Unperturbed fundamental solutions, the causal propagator and Cauchy solves."""
from __future__ import annotations

import numpy as np

from .hyperbolic import StencilOperator, WaveOperator
from .lattice import (CauchyData, MarginError, Region, check_margin, empirical_support,
                      l2_norm, time_ramp)


class NotASolution(ValueError):
    pass


def _support_region(op, f):
    f = np.asarray(f)
    if f.ndim > 3:
        f = np.abs(f).reshape((-1,) + f.shape[-3:]).max(axis=0)
    return empirical_support(op.grid, f, 1e-14)


class GreenOperator:
    """Retarded ('+') or advanced ('-') inverse of a stencil operator.

    With window=(m0, m1) the operator is the restriction to the slice rows
    m0..m1: inputs and outputs outside those rows are zeroed.
    """

    def __init__(self, op: StencilOperator, direction: str, window=None, check=True):
        if direction not in ("+", "-"):
            raise ValueError("direction must be '+' or '-'")
        self.op = op
        self.direction = direction
        self.window = window
        self.check = check

    def __call__(self, f):
        return self.apply(f)

    def apply(self, f):
        op = self.op
        f = op._check(f)
        if self.check:
            check_margin(_support_region(op, f), self.window)
        if self.window is None:
            return op.retarded(f) if self.direction == "+" else op.advanced(f)
        m0, m1 = self.window
        if self.direction == "+":
            u = op.retarded(f, m0, m1)
        else:
            u = op.advanced(f, m0, m1)
        u[..., :m0, :, :] = 0
        u[..., m1 + 1:, :, :] = 0
        return u

    def adjoint(self):
        """Inverse of the adjoint stencil in the opposite time direction.

        On fields supported away from the temporal boundary layer this is the
        exact conjugate transpose of self.
        """
        other = "-" if self.direction == "+" else "+"
        window = self.window
        if window is None:
            # rows matching the full-grid inversion: unknowns become equation rows and back
            nt = self.op.grid.nt
            window = (1, nt - 1) if self.direction == "+" else (0, nt - 2)
        return GreenOperator(adjoint_operator(self.op), other, window, self.check)


_ADJ_CACHE = {}


def adjoint_operator(op):
    key = id(op)
    hit = _ADJ_CACHE.get(key)
    if hit is not None and hit[0] is op:
        return hit[1]
    adj = op.adjoint()
    _ADJ_CACHE[key] = (op, adj)
    return adj


def green_apply(op, direction, f, window=None):
    return GreenOperator(op, direction, window).apply(f)


def retarded(op, f, window=None):
    return green_apply(op, "+", f, window)


def advanced(op, f, window=None):
    return green_apply(op, "-", f, window)


def propagator(op, f):
    """R f = R^- f - R^+ f."""
    return advanced(op, f) - retarded(op, f)


def solve_cauchy(op, data: CauchyData, direction=None):
    """The free solution f0[u] with Cauchy data u on row data.row.

    direction '+' (or '-') evolves only forward (or backward) from the data
    rows and leaves the other side zero; None fills the whole grid.
    """
    cols = data.support_columns()
    g = op.grid
    if cols is not None:
        m = np.zeros((g.nt, g.nx), bool)
        m[data.row, cols[0]:cols[1] + 1] = True
        m[data.row + 1, cols[0]:cols[1] + 1] = True
        rows = {None: None, "+": (data.row, g.nt - 1), "-": (0, data.row + 1)}[direction]
        check_margin(Region(g, m), rows)
    v0, v1 = op.cauchy_rows(data)
    if direction is None:
        return op.evolve_rows(data.row, v0, v1)
    u = g.zeros(np.shape(v0)[:-2])
    u[..., data.row, :, :] = v0
    u[..., data.row + 1, :, :] = v1
    f = np.zeros_like(u)
    if direction == "+":
        return op.march_forward(u, f, data.row + 1, g.nt - 1)
    return op.march_backward(u, f, data.row, 0)


def residual(op, f, rows=None):
    """D f with the temporal boundary layer (and optionally rows outside `rows`) removed."""
    r = op.apply(f)
    if rows is not None:
        keep = np.zeros(op.grid.nt, bool)
        keep[rows[0]:rows[1] + 1] = True
        r[..., ~keep, :, :] = 0
    return r


def slice_representation(op, f0, strip, tol=1e-9, profile=None):
    """Generator g supported near the strip rows (a, b) with R g = f0.

    g = -(D(chi f0) - chi D f0) with chi rising from 0 (rows <= a) to 1 (rows >= b).
    When D f0 = 0 this is -D(chi f0); the commutator form also serves fields
    that solve D only near the strip.
    """
    a, b = strip
    g = op.grid
    if not (1 <= a <= b <= g.nt - 2):
        raise ValueError("strip outside the grid interior")
    chi = time_ramp(g, a, b) if profile is None else np.asarray(profile, float)
    chi_f = chi[:, None, None] * f0
    Df = op.apply(f0)
    lo, hi = max(a - 1, 1), min(b + 1, g.nt - 2)
    scale = max(l2_norm(g, f0), 1e-300)
    res = l2_norm(g, _rows_only(Df, lo, hi)) if Df.ndim == 3 else 0.0
    if res > tol * scale / g.h**2:
        raise NotASolution(f"field does not solve D near the strip (residual {res:.3e})")
    out = -(op.apply(chi_f) - chi[:, None, None] * Df)
    keep = np.zeros(g.nt, bool)
    keep[lo:hi + 1] = True
    out[..., ~keep, :, :] = 0
    return out


def _rows_only(f, lo, hi):
    out = np.zeros_like(f)
    out[..., lo:hi + 1, :, :] = f[..., lo:hi + 1, :, :]
    return out


def dalembert_oracle(op, f, direction="+"):
    """Half the integral of f over the backward (or forward) characteristic triangle.

    Nodes strictly inside the triangle get weight 1, nodes on the two
    characteristic edges weight 1/2, the apex row is excluded.
    """
    if not isinstance(op, WaveOperator) or not op.is_free or op.N != 1:
        raise ValueError("the d'Alembert oracle needs the free scalar wave operator")
    g = op.grid
    src = np.asarray(f)[..., 0]
    nt, nx = src.shape
    h2 = g.weight
    out = np.zeros((nt, nx), complex)
    cs = np.concatenate([np.zeros((nt, 1)), np.cumsum(src, axis=1)], axis=1)

    def box(m, lo, hi):
        lo = np.clip(lo, 0, nx)
        hi = np.clip(hi, 0, nx)
        return cs[m, hi] - cs[m, lo]

    j = np.arange(nx)
    for n in range(nt):
        rows = range(0, n) if direction == "+" else range(n + 1, nt)
        acc = np.zeros(nx, complex)
        for m in rows:
            r = abs(n - m)
            inner = box(m, j - r + 1, j + r)
            edge_l = np.where(j - r >= 0, src[m, np.clip(j - r, 0, nx - 1)], 0)
            edge_r = np.where(j + r < nx, src[m, np.clip(j + r, 0, nx - 1)], 0)
            acc += inner + 0.5 * (edge_l + edge_r)
        out[n] = 0.5 * h2 * acc
    return out[..., None]
