"""Symbols on the truncated lattice and their Bony-Weyl quantization.

A symbol a(x, xi) is stored through its x-Fourier rows ahat(k, xi) (plain
series convention, a = sum_k ahat(k, xi) e^(i k.x)) tabulated on the mode
box, optionally backed by a closed form in xi.  The quantization maps a
symbol to a dense operator on the truncated basis with matrix elements

    Op(a)[j, k] = eta(|j-k| / (eps_q <j+k>)) * ahat(j-k, (j+k)/2),

so Fourier multipliers quantize to exact diagonal multipliers.  Half-integer
fiber points (j+k)/2 are evaluated exactly when the symbol carries a closed
form (multiplier or polynomial-in-xi), by multilinear interpolation
otherwise.

The module also provides the composition expansion with remainder
measurement, adjoint/reality/Hamiltonian structure residuals, operator flows
(diagonal, off-diagonal, smoothing) and the symplecticity test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .grid import Field, GridSpec, PairField

# ------------------------------------------------------------------ cutoffs
_ETA_HI = 8.0 / 5.0
_ETA_LO = 5.0 / 4.0


def _bump_step(t: np.ndarray) -> np.ndarray:
    """Smoothstep from the standard e^(-1/t) bump: 0 for t<=0, 1 for t>=1."""
    t = np.asarray(t, dtype=float)
    num = np.zeros_like(t)
    den = np.zeros_like(t)
    pos = t > 0.0
    num[pos] = np.exp(-1.0 / t[pos])
    neg = (1.0 - t) > 0.0
    den[neg] = np.exp(-1.0 / (1.0 - t[neg]))
    return num / (num + den)


def eta(y) -> np.ndarray | float:
    """Even C^inf cutoff: exactly 1 on [0, 5/4], exactly 0 on [8/5, inf),
    nonincreasing in |y|."""
    y = np.abs(np.asarray(y, dtype=float))
    out = _bump_step((_ETA_HI - y) / (_ETA_HI - _ETA_LO))
    return float(out) if out.ndim == 0 else out


def chi(y) -> np.ndarray | float:
    """Even C^inf cutoff with thresholds 1/2 and 1 (same bump construction)."""
    y = np.abs(np.asarray(y, dtype=float))
    out = _bump_step((1.0 - y) / 0.5)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ symbols
@dataclass
class Symbol:
    """x-Fourier-resolved symbol table over the lattice.

    values[k_flat, xi_flat] = ahat(k, xi).  ``kind`` records an optional
    closed form used for exact half-integer fiber evaluation:

    - "multiplier": only the k = 0 row, backed by callable ``phi``;
    - "poly":       ahat(k, xi) = sum_deg poly[deg][k] xi^deg (multi-degree
                    monomials; covers the affine symbols of the
                    paralinearization and everything their calculus
                    generates);
    - "table":      generic, multilinear interpolation off the lattice.
    """

    grid: GridSpec
    order: float
    values: np.ndarray
    kind: str = "table"
    phi: Callable | None = None
    poly: dict | None = None

    def __post_init__(self):
        n = self.grid.nmodes
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (n, n):
            raise ValueError(f"symbol table must be ({n},{n}), got {self.values.shape}")

    # ------------------------------------------------------------ constructors
    @staticmethod
    def zero(grid: GridSpec, order: float = 0.0) -> "Symbol":
        n = grid.nmodes
        return Symbol(grid, order, np.zeros((n, n), dtype=complex))

    @staticmethod
    def from_multiplier(grid: GridSpec, phi: Callable, order: float = 0.0) -> "Symbol":
        n = grid.nmodes
        vals = np.zeros((n, n), dtype=complex)
        vals[_zero_row(grid), :] = np.asarray(phi(grid.modes.astype(float)), dtype=complex)
        return Symbol(grid, order, vals, kind="multiplier", phi=phi)

    @staticmethod
    def lambda_symbol(grid: GridSpec) -> "Symbol":
        return Symbol.from_multiplier(grid, grid.lambda_of, order=2.0)

    @staticmethod
    def constant(grid: GridSpec, c: complex) -> "Symbol":
        return Symbol.from_multiplier(grid, lambda pts: np.full(len(pts), c, dtype=complex),
                                      order=0.0)

    @staticmethod
    def from_poly(grid: GridSpec, poly: dict, order: float = 1.0) -> "Symbol":
        """ahat(k, xi) = sum over multi-degrees of poly[deg][k] * xi^deg;
        poly maps degree tuples of length d to flat row arrays."""
        n = grid.nmodes
        clean = {}
        for deg, rows in poly.items():
            deg = tuple(int(v) for v in deg)
            if len(deg) != grid.d or any(v < 0 for v in deg):
                raise ValueError(f"bad degree tuple {deg}")
            rows = np.asarray(rows, dtype=complex).reshape(n)
            if np.any(rows):
                clean[deg] = clean.get(deg, 0) + rows
        xi = grid.modes.astype(float)
        vals = np.zeros((n, n), dtype=complex)
        for deg, rows in clean.items():
            mono = np.ones(n)
            for ax, e in enumerate(deg):
                if e:
                    mono = mono * xi[:, ax] ** e
            vals += rows[:, None] * mono[None, :]
        return Symbol(grid, order, vals, kind="poly", poly=clean)

    @staticmethod
    def from_affine(grid: GridSpec, c0: np.ndarray, c1: np.ndarray | None = None,
                    order: float = 1.0) -> "Symbol":
        """ahat(k, xi) = c0[k] + sum_j c1[j, k] xi_j with c0 flat over the
        k-box and c1 of shape (d, nmodes)."""
        n = grid.nmodes
        c0 = np.asarray(c0, dtype=complex).reshape(n)
        poly = {(0,) * grid.d: c0}
        if c1 is not None:
            c1 = np.asarray(c1, dtype=complex).reshape(grid.d, n)
            for ax in range(grid.d):
                deg = tuple(1 if j == ax else 0 for j in range(grid.d))
                poly[deg] = c1[ax]
        return Symbol.from_poly(grid, poly, order=order)

    @property
    def c0(self) -> np.ndarray:
        """Degree-0 rows of a poly symbol (zeros when absent)."""
        if self.kind != "poly":
            raise AttributeError("c0 is defined for poly symbols")
        z = (0,) * self.grid.d
        return self.poly.get(z, np.zeros(self.grid.nmodes, dtype=complex))

    @property
    def c1(self) -> np.ndarray:
        if self.kind != "poly":
            raise AttributeError("c1 is defined for poly symbols")
        out = np.zeros((self.grid.d, self.grid.nmodes), dtype=complex)
        for ax in range(self.grid.d):
            deg = tuple(1 if j == ax else 0 for j in range(self.grid.d))
            if deg in self.poly:
                out[ax] = self.poly[deg]
        return out

    @staticmethod
    def from_x_function(grid: GridSpec, w: np.ndarray, order: float = 0.0) -> "Symbol":
        """xi-independent symbol from point samples w(x) on the (2K+1)^d grid
        (plain series coefficients; projection onto the box)."""
        spec = np.fft.fftn(np.asarray(w, dtype=complex)) / w.size
        rolled = np.roll(spec, shift=[grid.K] * grid.d, axis=tuple(range(grid.d)))
        ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
        c0 = rolled[ctr].ravel()
        return Symbol.from_affine(grid, c0, None, order=order)

    @staticmethod
    def from_function(grid: GridSpec, f: Callable, order: float = 0.0) -> "Symbol":
        """Tabulate a(x, xi) by sampling x on the grid and transforming; f is
        called as f(x_points, xi) for each lattice xi."""
        n = grid.nmodes
        vals = np.zeros((n, n), dtype=complex)
        mesh = np.meshgrid(*grid.x_samples(), indexing="ij") if grid.d > 1 \
            else [grid.x_samples()[0]]
        for i, xi in enumerate(grid.modes):
            samples = np.asarray(f(mesh, xi.astype(float)), dtype=complex)
            samples = np.broadcast_to(samples, grid.shape).astype(complex)
            spec = np.fft.fftn(samples) / samples.size
            rolled = np.roll(spec, shift=[grid.K] * grid.d, axis=tuple(range(grid.d)))
            ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
            vals[:, i] = rolled[ctr].ravel()
        return Symbol(grid, order, vals)

    # ------------------------------------------------------------------ algebra
    def copy(self) -> "Symbol":
        return Symbol(self.grid, self.order, self.values.copy())

    def __add__(self, other: "Symbol") -> "Symbol":
        out = Symbol(self.grid, max(self.order, other.order),
                     self.values + other.values)
        if self.kind == "poly" and other.kind == "poly":
            merged = {deg: rows.copy() for deg, rows in self.poly.items()}
            for deg, rows in other.poly.items():
                merged[deg] = merged.get(deg, 0) + rows
            out.kind = "poly"
            out.poly = merged
        return out

    def __sub__(self, other: "Symbol") -> "Symbol":
        return self + (-1.0) * other

    def __mul__(self, scalar) -> "Symbol":
        out = Symbol(self.grid, self.order, self.values * scalar, kind=self.kind)
        if self.kind == "poly":
            out.poly = {deg: rows * scalar for deg, rows in self.poly.items()}
        elif self.kind == "multiplier":
            phi = self.phi
            out.phi = lambda pts, _p=phi, _s=scalar: np.asarray(_p(pts)) * _s
        return out

    __rmul__ = __mul__

    def conj_x(self) -> "Symbol":
        """Symbol of conj(a(x, xi)) (conjugate in x-space, xi untouched):
        chat(k, xi) = conj(ahat(-k, xi))."""
        out = Symbol(self.grid, self.order, np.conj(self.values[::-1, :]), kind=self.kind)
        if self.kind == "poly":
            out.poly = {deg: np.conj(rows[::-1]) for deg, rows in self.poly.items()}
        elif self.kind == "multiplier":
            phi = self.phi
            out.phi = lambda pts, _p=phi: np.conj(np.asarray(_p(pts)))
        return out

    def reflect_xi(self) -> "Symbol":
        """a(x, -xi) as a symbol table."""
        out = Symbol(self.grid, self.order, self.values[:, ::-1], kind=self.kind)
        if self.kind == "poly":
            out.poly = {deg: rows * (-1.0) ** sum(deg)
                        for deg, rows in self.poly.items()}
        elif self.kind == "multiplier":
            phi = self.phi
            out.phi = lambda pts, _p=phi: np.asarray(_p(-np.asarray(pts)))
        return out

    def bar_symbol(self) -> "Symbol":
        """conj(a(x, -xi)), the symbol of the conjugated operator."""
        return self.conj_x().reflect_xi()

    def reality_defect(self) -> float:
        """Zero iff the symbol is real-valued in x-space."""
        return float(np.abs(self.values - np.conj(self.values[::-1, :])).max())

    def is_real(self, tol: float = 1e-9) -> bool:
        scale = max(float(np.abs(self.values).max()), 1e-300)
        return self.reality_defect() <= tol * scale

    # ------------------------------------------------------- fiber evaluation
    def eval_rows_at(self, rows: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """ahat(k_rows[i], pts[i]) for flat row indices and fiber points
        (npts, d), which may be half-integers inside the box."""
        g = self.grid
        pts = np.asarray(pts, dtype=float)
        if self.kind == "multiplier":
            out = np.zeros(len(rows), dtype=complex)
            sel = rows == _zero_row(g)
            if np.any(sel):
                out[sel] = np.asarray(self.phi(pts[sel]), dtype=complex)
            return out
        if self.kind == "poly":
            out = np.zeros(len(rows), dtype=complex)
            for deg, coef in self.poly.items():
                mono = np.ones(len(rows))
                for ax, e in enumerate(deg):
                    if e:
                        mono = mono * pts[:, ax] ** e
                out += coef[rows] * mono
            return out
        # generic table: multilinear interpolation per axis
        vals = self.values.reshape((g.nmodes,) + g.shape)
        idx = pts + g.K                      # grid coordinates in [0, 2K]
        lo = np.floor(idx).astype(int)
        lo = np.clip(lo, 0, g.side - 2)
        w = idx - lo
        out = np.zeros(len(rows), dtype=complex)
        for corner in itertools.product((0, 1), repeat=g.d):
            weight = np.ones(len(rows))
            coords = []
            for ax, c in enumerate(corner):
                weight = weight * (w[:, ax] if c else (1.0 - w[:, ax]))
                coords.append(lo[:, ax] + c)
            out += weight * vals[(rows,) + tuple(coords)]
        return out


def _zero_row(grid: GridSpec) -> int:
    return (grid.nmodes - 1) // 2


def matching_orders(a: Symbol, b: Symbol) -> float:
    return a.order + b.order


@dataclass
class MatrixSymbol:
    """Real-to-real 2x2 symbol [[a, b], [conj b(x,-xi), conj a(x,-xi)]];
    the lower row is generated, never stored."""

    a: Symbol
    b: Symbol

    @property
    def grid(self) -> GridSpec:
        return self.a.grid

    def selfadjoint_defect(self) -> float:
        """Zero iff the quantization is self-adjoint: a real in x-space and
        b even in xi."""
        da = self.a.reality_defect()
        db = float(np.abs(self.b.values - self.b.values[:, ::-1]).max())
        return max(da, db)


# ---------------------------------------------------------------- operators
@dataclass
class LinOp:
    """Dense operator on the truncated Fourier basis (flat centered order)."""

    grid: GridSpec
    matrix: np.ndarray

    def __post_init__(self):
        n = self.grid.nmodes
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (n, n):
            raise ValueError(f"operator must be ({n},{n}), got {self.matrix.shape}")

    @staticmethod
    def identity(grid: GridSpec) -> "LinOp":
        return LinOp(grid, np.eye(grid.nmodes, dtype=complex))

    @staticmethod
    def multiplier(grid: GridSpec, table: np.ndarray) -> "LinOp":
        return LinOp(grid, np.diag(np.asarray(table, dtype=complex)))

    def apply(self, f: Field) -> Field:
        return Field.from_flat(self.grid, self.matrix @ f.flat)

    def compose(self, other: "LinOp") -> "LinOp":
        return LinOp(self.grid, self.matrix @ other.matrix)

    def __add__(self, other: "LinOp") -> "LinOp":
        return LinOp(self.grid, self.matrix + other.matrix)

    def __sub__(self, other: "LinOp") -> "LinOp":
        return LinOp(self.grid, self.matrix - other.matrix)

    def __mul__(self, scalar) -> "LinOp":
        return LinOp(self.grid, self.matrix * scalar)

    __rmul__ = __mul__

    def conj_op(self) -> "LinOp":
        """The operator h -> conj(A conj(h)); matrix conj(A[-j,-k])."""
        return LinOp(self.grid, np.conj(self.matrix[::-1, ::-1]))


def adjoint(A: LinOp) -> LinOp:
    return LinOp(A.grid, A.matrix.conj().T)


@dataclass
class PairLinOp:
    """Real-to-real operator on pairs (h, hbar): blocks (1,1) and (1,2) are
    stored, the lower row is generated by the conjugation rule."""

    a11: LinOp
    a12: LinOp

    @property
    def grid(self) -> GridSpec:
        return self.a11.grid

    @staticmethod
    def zero(grid: GridSpec) -> "PairLinOp":
        z = LinOp(grid, np.zeros((grid.nmodes, grid.nmodes), dtype=complex))
        return PairLinOp(z, LinOp(grid, z.matrix.copy()))

    @staticmethod
    def identity(grid: GridSpec) -> "PairLinOp":
        z = np.zeros((grid.nmodes, grid.nmodes), dtype=complex)
        return PairLinOp(LinOp(grid, np.eye(grid.nmodes, dtype=complex)), LinOp(grid, z))

    @property
    def a21(self) -> LinOp:
        return self.a12.conj_op()

    @property
    def a22(self) -> LinOp:
        return self.a11.conj_op()

    def full(self) -> np.ndarray:
        n = self.grid.nmodes
        out = np.empty((2 * n, 2 * n), dtype=complex)
        out[:n, :n] = self.a11.matrix
        out[:n, n:] = self.a12.matrix
        out[n:, :n] = self.a21.matrix
        out[n:, n:] = self.a22.matrix
        return out

    @staticmethod
    def from_full(grid: GridSpec, F: np.ndarray) -> "PairLinOp":
        """Project a 2n x 2n matrix onto the real-to-real structure (keeps
        the top row; the defect against the bottom row is discarded)."""
        n = grid.nmodes
        return PairLinOp(LinOp(grid, F[:n, :n]), LinOp(grid, F[:n, n:]))

    @staticmethod
    def structure_defect(grid: GridSpec, F: np.ndarray) -> float:
        n = grid.nmodes
        d1 = np.abs(F[n:, :n] - np.conj(F[:n, n:][::-1, ::-1])).max()
        d2 = np.abs(F[n:, n:] - np.conj(F[:n, :n][::-1, ::-1])).max()
        return float(max(d1, d2))

    def apply(self, U: PairField) -> PairField:
        w1 = self.a11.matrix @ U.u.flat + self.a12.matrix @ U.ubar.flat
        w2 = self.a21.matrix @ U.u.flat + self.a22.matrix @ U.ubar.flat
        return PairField(Field.from_flat(self.grid, w1), Field.from_flat(self.grid, w2))

    def compose(self, other: "PairLinOp") -> "PairLinOp":
        return PairLinOp.from_full(self.grid, self.full() @ other.full())

    def __add__(self, other: "PairLinOp") -> "PairLinOp":
        return PairLinOp(self.a11 + other.a11, self.a12 + other.a12)

    def __sub__(self, other: "PairLinOp") -> "PairLinOp":
        return PairLinOp(self.a11 - other.a11, self.a12 - other.a12)


def E_matrix(grid: GridSpec) -> np.ndarray:
    n = grid.nmodes
    return np.diag(np.concatenate([np.ones(n), -np.ones(n)]).astype(complex))


def iE_lambda(grid: GridSpec) -> PairLinOp:
    """iE Op(Lambda): the linear part of the paralinearized system."""
    lam = grid.lambda_table().astype(complex)
    return PairLinOp(LinOp.multiplier(grid, 1j * lam),
                     LinOp(grid, np.zeros((grid.nmodes, grid.nmodes), dtype=complex)))


# ------------------------------------------------------------- quantization
def quantize_bw(sym: Symbol, eta_override: Callable | None = None) -> LinOp:
    """Dense Bony-Weyl quantization of a scalar symbol.

    ``eta_override`` replaces the cutoff profile (test hook for fault
    injection); production callers leave it None.
    """
    g = sym.grid
    n = g.nmodes
    modes = g.modes.astype(float)
    J = modes[:, None, :]
    Km = modes[None, :, :]
    diff = J - Km                                   # (n, n, d)
    mid = 0.5 * (J + Km)
    inbox = np.all(np.abs(diff) <= g.K, axis=-1)
    japsum = np.sqrt(1.0 + np.sum((J + Km) ** 2, axis=-1))
    arg = np.sqrt(np.sum(diff ** 2, axis=-1)) / (g.eps_q * japsum)
    cut = (eta_override or eta)(arg)

    rows = np.zeros((n, n), dtype=int)
    strides = np.cumprod([1] + [g.side] * (g.d - 1))[::-1]
    for ax in range(g.d):
        rows += ((diff[:, :, ax].astype(int) + g.K) * strides[ax]) * inbox

    flat_rows = rows.ravel()[inbox.ravel()]
    flat_pts = mid.reshape(-1, g.d)[inbox.ravel()]
    vals = np.zeros(n * n, dtype=complex)
    vals[inbox.ravel()] = sym.eval_rows_at(flat_rows, flat_pts)
    M = (cut * vals.reshape(n, n)) * inbox
    return LinOp(g, M)


def quantize_bw_matrix(ms: MatrixSymbol, eta_override: Callable | None = None) -> PairLinOp:
    return PairLinOp(quantize_bw(ms.a, eta_override), quantize_bw(ms.b, eta_override))


def quantize_bw_reference(sym: Symbol, h: Field) -> Field:
    """Literal triple-loop summation of the quantization formula; oracle for
    the vectorized assembly."""
    g = sym.grid
    out = Field.zero(g)
    modes = [tuple(m) for m in g.modes]
    for j in modes:
        acc = 0.0 + 0.0j
        ja = np.array(j, dtype=float)
        for k in modes:
            ka = np.array(k, dtype=float)
            dv = ja - ka
            if np.any(np.abs(dv) > g.K):
                continue
            japk = math.sqrt(1.0 + float(np.sum((ja + ka) ** 2)))
            cut = eta(np.linalg.norm(dv) / (g.eps_q * japk))
            if cut == 0.0:
                continue
            row = 0
            stride = 1
            for ax in range(g.d - 1, -1, -1):
                row += (int(dv[ax]) + g.K) * stride
                stride *= g.side
            val = sym.eval_rows_at(np.array([row]), ((ja + ka) / 2.0).reshape(1, g.d))[0]
            acc += cut * val * h[k]
        out[j] = acc
    return out


# ----------------------------------------------------- symbol differentiation
def dsym_dx(sym: Symbol, axis: int) -> Symbol:
    """Exact spectral d/dx_axis: row k multiplied by i k_axis."""
    g = sym.grid
    fac = 1j * g.modes[:, axis].astype(float)
    out = Symbol(g, sym.order, sym.values * fac[:, None])
    if sym.kind == "poly":
        out.kind = "poly"
        out.poly = {deg: rows * fac for deg, rows in sym.poly.items()}
    return out


def dsym_dxi(sym: Symbol, axis: int) -> Symbol:
    """d/dxi_axis: formal (exact) on polynomial symbols; central differences
    on tabulated symbols with second-order one-sided stencils at the box
    boundary (exact on quadratics)."""
    g = sym.grid
    if sym.kind == "poly":
        poly = {}
        for deg, rows in sym.poly.items():
            e = deg[axis]
            if e == 0:
                continue
            newdeg = tuple(v - 1 if ax == axis else v for ax, v in enumerate(deg))
            poly[newdeg] = poly.get(newdeg, 0) + e * rows
        return Symbol.from_poly(g, poly, order=sym.order - 1.0)
    vals = sym.values.reshape((g.nmodes,) + g.shape)
    out = np.empty_like(vals)
    ax = 1 + axis
    sl = [slice(None)] * (1 + g.d)

    def at(i):
        s = sl.copy()
        s[ax] = i
        return tuple(s)

    out[at(slice(1, -1))] = 0.5 * (vals[at(slice(2, None))] - vals[at(slice(0, -2))])
    if g.side >= 3:
        out[at(0)] = -1.5 * vals[at(0)] + 2.0 * vals[at(1)] - 0.5 * vals[at(2)]
        out[at(-1)] = 1.5 * vals[at(-1)] - 2.0 * vals[at(-2)] + 0.5 * vals[at(-3)]
    else:
        out[at(0)] = vals[at(1)] - vals[at(0)]
        out[at(-1)] = vals[at(-1)] - vals[at(0)]
    return Symbol(g, sym.order - 1.0, out.reshape(g.nmodes, g.nmodes))


def _sym_to_x(values: np.ndarray, grid: GridSpec, pad: int = 2) -> np.ndarray:
    """Rows -> x-samples on a pad*(2K+1) grid; shape (pad*side,)*d + (nxi,)."""
    P = pad * grid.side
    vals = values.reshape(grid.shape + (grid.nmodes,))
    buf = np.zeros((P,) * grid.d + (grid.nmodes,), dtype=complex)
    ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
    buf[ctr] = vals
    buf = np.roll(buf, shift=[-grid.K] * grid.d, axis=tuple(range(grid.d)))
    return np.fft.ifftn(buf, axes=tuple(range(grid.d))) * (P ** grid.d)


def _sym_from_x(xvals: np.ndarray, grid: GridSpec) -> np.ndarray:
    P = xvals.shape[0]
    spec = np.fft.fftn(xvals, axes=tuple(range(grid.d))) / (P ** grid.d)
    rolled = np.roll(spec, shift=[grid.K] * grid.d, axis=tuple(range(grid.d)))
    ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
    return rolled[ctr].reshape(grid.nmodes, grid.nmodes)


def _row_conv(r1: np.ndarray, r2: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Convolution of two k-row tables over the box (dealiased, projected)."""
    P = 2 * grid.side
    out_axes = tuple(range(grid.d))

    def lift(r):
        buf = np.zeros((P,) * grid.d, dtype=complex)
        ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
        buf[ctr] = r.reshape(grid.shape)
        buf = np.roll(buf, shift=[-grid.K] * grid.d, axis=out_axes)
        return np.fft.ifftn(buf) * (P ** grid.d)

    prod = lift(r1) * lift(r2)
    spec = np.fft.fftn(prod) / (P ** grid.d)
    rolled = np.roll(spec, shift=[grid.K] * grid.d, axis=out_axes)
    ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
    return rolled[ctr].ravel()


def symbol_product(a: Symbol, b: Symbol) -> Symbol:
    """Pointwise product a(x,xi) b(x,xi); the x-convolution is dealiased by a
    padded transform, out-of-box rows are projected away.  Products of
    polynomial symbols stay polynomial (degrees add), keeping half-integer
    evaluation exact."""
    g = a.grid
    if a.kind == "poly" and b.kind == "poly":
        poly: dict = {}
        for d1, r1 in a.poly.items():
            for d2, r2 in b.poly.items():
                deg = tuple(x + y for x, y in zip(d1, d2))
                poly[deg] = poly.get(deg, 0) + _row_conv(r1, r2, g)
        return Symbol.from_poly(g, poly, order=a.order + b.order)
    xa = _sym_to_x(a.values, g)
    xb = _sym_to_x(b.values, g)
    return Symbol(g, a.order + b.order, _sym_from_x(xa * xb, g))


def x_sup(sym: Symbol) -> np.ndarray:
    """sup over the (oversampled) x-grid of |a(x, xi)| for each lattice xi."""
    xv = _sym_to_x(sym.values, sym.grid)
    return np.abs(xv).max(axis=tuple(range(sym.grid.d)))


# ------------------------------------------------------------------ calculus
def _multi_indices(d: int, total: int):
    if d == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _multi_indices(d - 1, total - head):
            yield (head,) + rest


def _apply_derivs(sym: Symbol, alpha_xi: tuple, beta_x: tuple, cache: dict) -> Symbol:
    key = (id(sym), alpha_xi, beta_x)
    if key in cache:
        return cache[key]
    out = sym
    for ax, cnt in enumerate(alpha_xi):
        for _ in range(cnt):
            out = dsym_dxi(out, ax)
    for ax, cnt in enumerate(beta_x):
        for _ in range(cnt):
            out = dsym_dx(out, ax)
    cache[key] = out
    return out


def compose_expansion(a: Symbol, b: Symbol, rho: int) -> Symbol:
    """Truncated composition symbol: term p = 0 is the pointwise product,
    term p = 1 is (1/2i){a, b}; p runs to rho - 1."""
    if rho < 1:
        raise ValueError("rho must be >= 1")
    g = a.grid
    cache: dict = {}
    total = symbol_product(a, b)
    for p in range(1, rho):
        coef_p = (0.5 / 1j) ** p
        for alpha, beta in _all_pairs(g.d, p):
            fa = math.prod(math.factorial(x) for x in alpha)
            fb = math.prod(math.factorial(x) for x in beta)
            sign = (-1.0) ** sum(beta)
            da = _apply_derivs(a, alpha, beta, cache)
            db = _apply_derivs(b, beta, alpha, cache)
            total = total + (coef_p * sign / (fa * fb)) * symbol_product(da, db)
    total.order = a.order + b.order
    return total


def _all_pairs(d: int, p: int):
    """All (alpha, beta) in N^d x N^d with |alpha| + |beta| = p."""
    for ka in range(p + 1):
        for alpha in _multi_indices(d, ka):
            for beta in _multi_indices(d, p - ka):
                yield alpha, beta


def poisson_bracket(a: Symbol, b: Symbol) -> Symbol:
    """{a, b} = sum_j (d_xi_j a)(d_x_j b) - (d_x_j a)(d_xi_j b)."""
    g = a.grid
    out = Symbol.zero(g, a.order + b.order - 1.0)
    for ax in range(g.d):
        out = out + symbol_product(dsym_dxi(a, ax), dsym_dx(b, ax))
        out = out - symbol_product(dsym_dx(a, ax), dsym_dxi(b, ax))
    return out


# --------------------------------------------------------------- seminorms
MAX_SEMINORM_ORDER = 4


def seminorm(a: Symbol, m: float, s: int, delta: float) -> float:
    """Discrete symbol seminorm: max over |alpha1|+|alpha2| <= s of
    sup_(x,xi) |d_x^a1 d_xi^a2 a| <xi>^(-m + delta |alpha2|).

    s is capped at MAX_SEMINORM_ORDER (repeated lattice differences beyond
    that are meaningless diagnostics)."""
    if s > MAX_SEMINORM_ORDER:
        raise ValueError(f"seminorm differentiation order capped at {MAX_SEMINORM_ORDER}")
    g = a.grid
    jap = g.jap_table(1.0)
    best = 0.0
    cache: dict = {}
    for s1 in range(s + 1):
        for s2 in range(s + 1 - s1):
            for beta in _multi_indices(g.d, s1):
                for alpha in _multi_indices(g.d, s2):
                    tab = _apply_derivs(a, alpha, beta, cache)
                    w = jap ** (-m + delta * s2)
                    best = max(best, float((x_sup(tab) * w).max()))
    return best


# ------------------------------------------------------------ operator norms
def weighted_opnorm(M: np.ndarray, w_out: np.ndarray, w_in: np.ndarray,
                    iters: int = 200, rtol: float = 1e-10,
                    seed: int = 1234) -> float:
    """Spectral norm of diag(w_out) M diag(1/w_in) by power iteration on the
    normal matrix; fixed start vector for reproducibility."""
    B = (w_out[:, None] * M) / w_in[None, :]
    n = B.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = B @ v
        v_new = B.conj().T @ u
        norm = np.linalg.norm(v_new)
        if norm == 0.0:
            return 0.0
        sig_new = math.sqrt(norm)
        v = v_new / norm
        if abs(sig_new - sigma) <= rtol * max(sig_new, 1e-300):
            return sig_new
        sigma = sig_new
    return sigma


def opnorm_sobolev(A: LinOp, s_in: float, s_out: float) -> float:
    """Operator norm H^{s_in} -> H^{s_out}."""
    g = A.grid
    return weighted_opnorm(A.matrix, g.jap_table(s_out), g.jap_table(s_in))


def opnorm_sobolev_pair(P: PairLinOp, s_in: float, s_out: float) -> float:
    g = P.grid
    w_in = np.concatenate([g.jap_table(s_in)] * 2)
    w_out = np.concatenate([g.jap_table(s_out)] * 2)
    return weighted_opnorm(P.full(), w_out, w_in)


def composition_residual(a: Symbol, b: Symbol, rho: int, s: float = 2.0,
                         s_out: float | None = None,
                         ring: tuple[int, int] | None = None) -> float:
    """Weighted operator norm of Op(a) Op(b) - Op(a #_rho b), measured
    H^s -> H^{s_out} with s_out defaulting to s - m1 - m2 + rho.

    ``ring = (lo, hi)`` compresses input and output to lo <= |xi|_inf <= hi
    before measuring; this excludes the Galerkin truncation ring at the box
    edge and the low-frequency region where the quantization cutoffs are
    only partially open, i.e. it measures the remainder where the symbolic
    expansion is meant to operate."""
    g = a.grid
    prod = quantize_bw(a).compose(quantize_bw(b))
    expans = quantize_bw(compose_expansion(a, b, rho))
    R = prod.matrix - expans.matrix
    if ring is not None:
        ax = np.abs(g.modes).max(axis=1)
        mask = (ax >= ring[0]) & (ax <= ring[1])
        R = R * mask[:, None] * mask[None, :]
    if s_out is None:
        s_out = s - a.order - b.order + rho
    return weighted_opnorm(R, g.jap_table(s_out), g.jap_table(s))


# ------------------------------------------------------- structure residuals
def is_selfadjoint(A: LinOp) -> float:
    return weighted_opnorm(A.matrix - A.matrix.conj().T,
                           A.grid.jap_table(0.0), A.grid.jap_table(0.0))


def is_hamiltonian(M: PairLinOp) -> float:
    """Operator-norm defect of self-adjointness of -iE M."""
    g = M.grid
    S = -1j * E_matrix(g) @ M.full()
    w = np.concatenate([g.jap_table(0.0)] * 2)
    return weighted_opnorm(S - S.conj().T, w, w)


def symplectic_residual(Q: PairLinOp) -> float:
    """Operator norm of Q* (-iE) Q + iE."""
    g = Q.grid
    E = E_matrix(g)
    F = Q.full()
    R = F.conj().T @ (-1j * E) @ F + 1j * E
    w = np.concatenate([g.jap_table(0.0)] * 2)
    return weighted_opnorm(R, w, w)


# -------------------------------------------------------------------- flows
def flow(g_sym: Symbol, substeps: int = 1, reality_tol: float = 1e-9) -> LinOp:
    """Time-one flow exp(i Op(g)) of a real symbol; unitary since Op(g) of a
    real symbol is exactly self-adjoint.  Non-real generators are rejected."""
    if not g_sym.is_real(reality_tol):
        raise ValueError(
            f"flow generator must be a real symbol (reality defect {g_sym.reality_defect():g})"
        )
    G = quantize_bw(g_sym)
    step = expm(1j * G.matrix / substeps)
    return LinOp(g_sym.grid, np.linalg.matrix_power(step, substeps))


def flow_pair(g_sym: Symbol, substeps: int = 1) -> PairLinOp:
    """Diagonal pair flow diag(Phi, conj Phi) of a real scalar generator."""
    Phi = flow(g_sym, substeps)
    z = np.zeros_like(Phi.matrix)
    return PairLinOp(Phi, LinOp(Phi.grid, z))


def offdiag_generator(psi: Symbol) -> PairLinOp:
    """Generator iE Op([[0, psi], [conj psi(x,-xi), 0]]) of the off-diagonal
    flow; symplectic flow iff psi is even in xi."""
    g = psi.grid
    P = quantize_bw(psi)
    return PairLinOp(LinOp(g, np.zeros_like(P.matrix)), 1j * P)


def flow_offdiag(psi: Symbol) -> PairLinOp:
    Y = offdiag_generator(psi)
    return PairLinOp.from_full(psi.grid, expm(Y.full()))


def flow_smoothing(F: PairLinOp) -> PairLinOp:
    return PairLinOp.from_full(F.grid, expm(F.full()))


# ------------------------------------------------------------------- dumps
def symbol_to_csv(sym: Symbol, path) -> None:
    g = sym.grid
    cols = [f"k_{i + 1}" for i in range(g.d)] + [f"xi_{i + 1}" for i in range(g.d)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + ",re,im\n")
        for ik, kv in enumerate(g.modes):
            for ix, xv in enumerate(g.modes):
                c = sym.values[ik, ix]
                if c == 0.0:
                    continue
                kk = ",".join(str(int(v)) for v in kv)
                xx = ",".join(str(int(v)) for v in xv)
                fh.write(f"{kk},{xx},{float(c.real)!r},{float(c.imag)!r}\n")


def linop_to_csv(A: LinOp, path) -> None:
    g = A.grid
    cols = [f"j_{i + 1}" for i in range(g.d)] + [f"k_{i + 1}" for i in range(g.d)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + ",re,im\n")
        for ij, jv in enumerate(g.modes):
            for ik, kv in enumerate(g.modes):
                c = A.matrix[ij, ik]
                if c == 0.0:
                    continue
                jj = ",".join(str(int(v)) for v in jv)
                kk = ",".join(str(int(v)) for v in kv)
                fh.write(f"{jj},{kk},{float(c.real)!r},{float(c.imag)!r}\n")
