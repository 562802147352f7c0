"""Smooth compactly supported kernel operators on the lattice.

A kernel operator W acts by (Wf)(x) = sum_y w(x, y) f(y) dt dx with w vanishing
unless both x and y lie in a box K of nodes. Two storage forms are supported:
a dense block matrix over K x K, or a list of pairs (w1, w2) acting as
f -> sum <w1, f> w2.
"""
from __future__ import annotations

import csv

import numpy as np
import scipy.sparse as sp

from .hyperbolic import GAMMA0
from .lattice import GridMismatch, GridSpec, Region, smoothstep


class KernelOperator:
    """Kernel operator with support box K = rows x cols (inclusive ranges)."""

    def __init__(self, grid: GridSpec, box, matrix=None, pairs=None, name="kernel"):
        if (matrix is None) == (pairs is None):
            raise ValueError("give exactly one of matrix or pairs")
        (r0, r1), (c0, c1) = box
        if not (0 <= r0 <= r1 < grid.nt and 0 <= c0 <= c1 < grid.nx):
            raise ValueError(f"box {box} outside the grid")
        a, b = grid.tau_rows
        if not (a < r0 and r1 < b):
            raise ValueError(f"kernel rows {r0}..{r1} not strictly inside the slice rows {a}..{b}")
        self.grid = grid
        self.box = ((int(r0), int(r1)), (int(c0), int(c1)))
        self.name = name
        self.N = grid.n_components
        self.matrix = None
        self.pairs = None
        if matrix is not None:
            m = np.asarray(matrix, dtype=complex)
            n = self.size
            if m.shape != (n, n):
                raise ValueError(f"kernel matrix must be {n}x{n}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError("non-finite kernel entries")
            self.matrix = m
        else:
            mask = self.region().mask
            checked = []
            for w1, w2 in pairs:
                w1 = np.asarray(w1, dtype=complex)
                w2 = np.asarray(w2, dtype=complex)
                if w1.shape != grid.shape or w2.shape != grid.shape:
                    raise GridMismatch("rank-one factors do not match the grid")
                if np.any(w1[~mask]) or np.any(w2[~mask]):
                    raise ValueError("rank-one factor not supported in the box")
                if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
                    raise ValueError("non-finite kernel entries")
                checked.append((w1, w2))
            self.pairs = checked

    # -- geometry ----------------------------------------------------------
    @property
    def box_shape(self):
        (r0, r1), (c0, c1) = self.box
        return (r1 - r0 + 1, c1 - c0 + 1, self.N)

    @property
    def size(self):
        s = self.box_shape
        return s[0] * s[1] * s[2]

    def region(self) -> Region:
        return Region.box(self.grid, *self.box)

    def _slices(self):
        (r0, r1), (c0, c1) = self.box
        return slice(r0, r1 + 1), slice(c0, c1 + 1)

    def gather(self, f):
        """Values of f on K flattened to (..., size)."""
        rs, cs = self._slices()
        f = np.asarray(f)
        return f[..., rs, cs, :].reshape(f.shape[:-3] + (self.size,))

    def scatter(self, v):
        """Inverse of gather: embed (..., size) into zero fields."""
        v = np.asarray(v)
        out = self.grid.zeros(v.shape[:-1])
        rs, cs = self._slices()
        out[..., rs, cs, :] = v.reshape(v.shape[:-1] + self.box_shape)
        return out

    def selector(self):
        """Sparse 0/1 matrix picking the box entries out of a flattened field."""
        flat = np.arange(int(np.prod(self.grid.shape))).reshape(self.grid.shape)
        rs, cs = self._slices()
        idx = flat[rs, cs, :].ravel()
        return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)),
                             shape=(len(idx), flat.size))

    # -- action ------------------------------------------------------------
    def apply(self, f):
        f = np.asarray(f)
        if f.shape[-3:] != self.grid.shape:
            raise GridMismatch(f"field shape {f.shape[-3:]} does not match {self.grid.shape}")
        w = self.grid.weight
        if self.matrix is not None:
            v = self.gather(f)
            return self.scatter(w * np.einsum("ab,...b->...a", self.matrix, v))
        out = self.grid.zeros(f.shape[:-3])
        for w1, w2 in self.pairs:
            c = w * (np.conj(w1) * f).sum(axis=(-3, -2, -1))
            out = out + np.asarray(c)[..., None, None, None] * w2
        return out

    __call__ = apply

    def adjoint(self):
        if self.matrix is not None:
            return KernelOperator(self.grid, self.box, matrix=self.matrix.conj().T, name=self.name + "*")
        return KernelOperator(self.grid, self.box, pairs=[(w2, w1) for w1, w2 in self.pairs],
                              name=self.name + "*")

    def to_dense(self):
        """Dense kernel matrix over K x K (kernel values, without the dt dx weight)."""
        if self.matrix is not None:
            return self.matrix
        m = np.zeros((self.size, self.size), complex)
        for w1, w2 in self.pairs:
            m += np.outer(self.gather(w2), np.conj(self.gather(w1)))
        return m

    def as_dense(self):
        return KernelOperator(self.grid, self.box, matrix=self.to_dense(), name=self.name)

    def operator_norm(self):
        """Exact norm in the weighted l2 space: dt dx times the top singular value."""
        return self.grid.weight * float(np.linalg.norm(self.to_dense(), 2))

    def is_hermitian(self, tol=1e-12):
        m = self.to_dense()
        return np.abs(m - m.conj().T).max() <= tol * max(np.abs(m).max(), 1e-300)

    def is_gamma0_hermitian(self, tol=1e-12):
        """gamma^0 W is a Hermitian operator (the Dirac charge condition)."""
        m = self.to_dense()
        G = np.kron(np.eye(self.size // 2), GAMMA0) if self.N == 2 else np.eye(self.size)
        gm = G @ m
        return np.abs(gm - gm.conj().T).max() <= tol * max(np.abs(m).max(), 1e-300)

    def is_real(self, tol=0.0):
        return np.abs(self.to_dense().imag).max() <= tol

    def scaled(self, c):
        if self.matrix is not None:
            return KernelOperator(self.grid, self.box, matrix=c * self.matrix, name=self.name)
        return KernelOperator(self.grid, self.box, pairs=[(w1, c * w2) for w1, w2 in self.pairs],
                              name=self.name)

    def with_grid(self, grid):
        """Same kernel on a grid with the same nodes but another slice."""
        if grid.shape != self.grid.shape or grid.h != self.grid.h:
            raise GridMismatch("grids have different nodes")
        if self.matrix is not None:
            return KernelOperator(grid, self.box, matrix=self.matrix, name=self.name)
        return KernelOperator(grid, self.box, pairs=self.pairs, name=self.name)


class ZeroKernel(KernelOperator):
    def __init__(self, grid, box=None):
        if box is None:
            a, b = grid.tau_rows
            box = ((a + 1, a + 1), (0, 0))
        super().__init__(grid, box, pairs=[], name="zero")


def dilate_box(box, grid, width=1):
    (r0, r1), (c0, c1) = box
    return ((max(r0 - width, 0), min(r1 + width, grid.nt - 1)),
            (max(c0 - width, 0), min(c1 + width, grid.nx - 1)))


def compose_with_differential(Q, W: KernelOperator, side="left"):
    """Kernel of QW (side='left') or WQ (side='right') for a stencil Q.

    Left: the stencil acts on the x argument of w. Right: the adjoint stencil
    acts on the y argument, i.e. WQ = (Q* W*)*. The box grows by the stencil
    width.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    grid = W.grid
    if Q.grid.shape != grid.shape:
        raise GridMismatch("stencil and kernel live on different grids")
    big = dilate_box(W.box, grid, 1)
    if W.pairs is not None:
        if side == "left":
            pairs = [(w1, Q.apply(w2)) for w1, w2 in W.pairs]
        else:
            Qs = Q.adjoint()
            pairs = [(Qs.apply(w1), w2) for w1, w2 in W.pairs]
        return KernelOperator(grid, big, pairs=pairs, name=f"{W.name}.{side}")
    out = KernelOperator(grid, big, pairs=[], name=f"{W.name}.{side}")
    S = Q.sparse()
    P_small, P_big = W.selector(), out.selector()
    embed = (P_big @ P_small.T).toarray()        # small box -> big box
    if side == "left":
        m = (P_big @ S @ P_small.T) @ W.matrix @ embed.T
    else:
        m = embed @ W.matrix @ (P_small @ S @ P_big.T)
    return KernelOperator(grid, big, matrix=np.asarray(m), name=f"{W.name}.{side}")


# -- builders -----------------------------------------------------------------

def box_window(grid, box):
    """Smooth bump on the box: product of smoothstep ramps, zero on the box edge."""
    (r0, r1), (c0, c1) = box
    n = np.arange(grid.nt, dtype=float)
    j = np.arange(grid.nx, dtype=float)

    def ramp(idx, lo, hi):
        width = max((hi - lo) / 2.0, 1.0)
        s = np.minimum(idx - lo, hi - idx) / width
        return np.where((idx >= lo) & (idx <= hi), smoothstep(s), 0.0)

    return ramp(n, r0, r1)[:, None] * ramp(j, c0, c1)[None, :]


def gaussian_bump(grid, box, center=None, width=None):
    """Smoothstep-windowed Gaussian on the box, as a scalar (nt, nx) array."""
    (r0, r1), (c0, c1) = box
    if center is None:
        center = ((r0 + r1) / 2.0, (c0 + c1) / 2.0)
    if width is None:
        width = (max((r1 - r0) / 4.0, 1.0), max((c1 - c0) / 4.0, 1.0))
    n = np.arange(grid.nt, dtype=float)[:, None]
    j = np.arange(grid.nx, dtype=float)[None, :]
    g = np.exp(-0.5 * ((n - center[0]) / width[0]) ** 2 - 0.5 * ((j - center[1]) / width[1]) ** 2)
    return g * box_window(grid, box)


def bump_kernel(grid, box, rng=None, rank=4, symmetry="none", real=False, norm=1.0, name="bump"):
    """Random smooth kernel: a sum of products of windowed Gaussians.

    symmetry: 'none', 'hermitian' (W = W*), or 'gamma0' (gamma^0 W Hermitian).
    The result is rescaled to operator norm `norm`.
    """
    rng = np.random.default_rng(rng)
    (r0, r1), (c0, c1) = box
    N = grid.n_components
    # a real gamma0-symmetric kernel is the real part of a complex one
    draw_real = real and symmetry != "gamma0"
    tmp = KernelOperator(grid, box, pairs=[])
    left, right = [], []
    for _ in range(rank):
        for store in (left, right):
            c = (rng.uniform(r0, r1), rng.uniform(c0, c1))
            w = (rng.uniform(1.0, max((r1 - r0) / 3.0, 1.5)), rng.uniform(1.0, max((c1 - c0) / 3.0, 1.5)))
            s = gaussian_bump(grid, box, c, w)
            vec = rng.normal(size=N) + (0 if draw_real else 1j * rng.normal(size=N))
            store.append(tmp.gather(s[:, :, None] * vec[None, None, :]))
    coef = rng.normal(size=rank) + (0 if draw_real else 1j * rng.normal(size=rank))
    m = sum(c * np.outer(a, np.conj(b)) for c, a, b in zip(coef, left, right))
    if symmetry == "hermitian":
        m = 0.5 * (m + m.conj().T)
    elif symmetry == "gamma0":
        if N != 2:
            raise ValueError("gamma0 symmetry needs N = 2")
        G = np.kron(np.eye(tmp.size // 2), GAMMA0)
        H = 0.5 * (m + m.conj().T)
        m = G @ H
    elif symmetry != "none":
        raise ValueError(f"unknown symmetry {symmetry!r}")
    if real:
        m = m.real.astype(complex)
    k = KernelOperator(grid, box, matrix=m, name=name)
    nrm = k.operator_norm()
    if nrm == 0:
        raise ValueError("degenerate random kernel")
    return k.scaled(norm / nrm)


def rank_one_kernel(grid, box, w1, w2, name="rank1"):
    return KernelOperator(grid, box, pairs=[(w1, w2)], name=name)


def build_kernel(grid, spec: dict, rng=None):
    """Kernel from a config dict {type: bump|rank1|moyal|local-nc, ...}."""
    kind = spec.get("type", "bump")
    box = tuple(tuple(int(v) for v in r) for r in spec["box"])
    if kind == "bump":
        return bump_kernel(grid, box, rng=rng, rank=int(spec.get("rank", 4)),
                           symmetry=spec.get("symmetry", "none"), real=bool(spec.get("real", False)),
                           norm=float(spec.get("norm", 1.0)))
    if kind == "rank1":
        N = grid.n_components
        vec = np.ones(N)
        tmp = KernelOperator(grid, box, pairs=[])
        b1 = spec.get("box1", box)
        b2 = spec.get("box2", box)
        w1 = gaussian_bump(grid, tuple(map(tuple, b1)))[:, :, None] * vec * tmp.region().mask[:, :, None]
        w2 = gaussian_bump(grid, tuple(map(tuple, b2)))[:, :, None] * vec * tmp.region().mask[:, :, None]
        return rank_one_kernel(grid, box, w1, w2).scaled(float(spec.get("scale", 1.0)))
    if kind in ("moyal", "local-nc"):
        from . import star
        return star.lattice_kernel(grid, box, spec)
    raise ValueError(f"unknown kernel type {kind!r}")


def write_kernel_csv(path, W: KernelOperator, tol=0.0):
    """Nonzero kernel values as rows tx,xx,ty,xy,re,im (plus component indices when N > 1)."""
    grid = W.grid
    m = W.to_dense()
    (r0, _), (c0, _) = W.box
    nr, nc, N = W.box_shape
    idx = np.indices((nr, nc, N)).reshape(3, -1).T
    t, x = grid.t, grid.x
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        head = ["tx", "xx", "ty", "xy", "re", "im"]
        out.writerow(head + (["cx", "cy"] if N > 1 else []))
        for p, q in zip(*np.nonzero(np.abs(m) > tol)):
            (a, b, ca), (c, d, cb) = idx[p], idx[q]
            v = m[p, q]
            row = [repr(float(t[r0 + a])), repr(float(x[c0 + b])), repr(float(t[r0 + c])),
                   repr(float(x[c0 + d])), repr(float(v.real)), repr(float(v.imag))]
            out.writerow(row + ([int(ca), int(cb)] if N > 1 else []))
