"""Cubic Hamiltonian densities and the derivative nonlinearity.

A density f is a degree-3 polynomial in the slots (y_0, .., y_d) and their
conjugates, with y_0 standing for u and y_j (j >= 1) for the derivative
u_{x_j}.  The structural hypotheses are enforced symbolically on the
monomial list:

- homogeneity of degree 3,
- reality (the conjugate-reflected monomial is present with the conjugate
  coefficient),
- the gradient constraint: second derivatives with respect to any two
  gradient slots vanish identically, so the nonlinearity carries at most
  one derivative of the unknown.

All field products are evaluated pseudo-spectrally on a grid oversampled by
a factor 2, which dealiases cubic terms exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .grid import (Field, GridSpec, PairField, TWO_PI, apply_multiplier,
                   derivative, field_from_samples, samples_from_field)
from .paradiff import MatrixSymbol, Symbol

Monomial = tuple[tuple[int, ...], complex]


def _merge(monomials: Iterable[Monomial]) -> dict[tuple[int, ...], complex]:
    acc: dict[tuple[int, ...], complex] = {}
    for exps, c in monomials:
        exps = tuple(int(e) for e in exps)
        acc[exps] = acc.get(exps, 0.0 + 0.0j) + complex(c)
    return {e: c for e, c in acc.items() if c != 0.0}


@dataclass
class CubicDensity:
    """Hamiltonian density as a validated list of degree-3 monomials.

    Exponent tuples have length 2(d+1), ordered (y_0..y_d, ybar_0..ybar_d).
    """

    d: int
    monomials: list[Monomial]

    def __post_init__(self):
        width = 2 * (self.d + 1)
        cleaned = []
        for exps, c in self.monomials:
            exps = tuple(int(e) for e in exps)
            if len(exps) != width:
                raise ValueError(f"exponent tuple must have length {width}, got {len(exps)}")
            if any(e < 0 for e in exps):
                raise ValueError("exponents must be nonnegative")
            cleaned.append((exps, complex(c)))
        self.monomials = [(e, c) for e, c in _merge(cleaned).items()]

    # ------------------------------------------------------------ inspection
    @property
    def width(self) -> int:
        return 2 * (self.d + 1)

    def as_dict(self) -> dict[tuple[int, ...], complex]:
        return dict(self.monomials)

    def conj_reflect(self) -> "CubicDensity":
        """Swap y-exponents with ybar-exponents and conjugate coefficients."""
        w = self.d + 1
        out = [(tuple(e[w:]) + tuple(e[:w]), np.conj(c)) for e, c in self.monomials]
        return CubicDensity(self.d, out)

    # ------------------------------------------------------------ validation
    def violations(self) -> list[str]:
        out = []
        for exps, c in self.monomials:
            if sum(exps) != 3:
                out.append(f"monomial {exps} has degree {sum(exps)}, expected 3")
        mine = self.as_dict()
        theirs = self.conj_reflect().as_dict()
        if set(mine) != set(theirs) or any(
                abs(mine[e] - theirs[e]) > 1e-14 * max(abs(mine[e]), 1.0) for e in mine):
            out.append("reality violated: conjugate-reflected monomials do not match")
        w = self.d + 1
        for i in range(1, self.d + 1):
            for j in range(1, self.d + 1):
                if self.second_derivative((i, False), (j, True)).monomials:
                    out.append(f"gradient constraint violated: d_y{i} d_ybar{j} f != 0")
                if self.second_derivative((i, True), (j, True)).monomials:
                    out.append(f"gradient constraint violated: d_ybar{i} d_ybar{j} f != 0")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ValueError("invalid cubic density: " + "; ".join(bad))

    # --------------------------------------------------------- differentiation
    def wirtinger(self, slot: int, conjugated: bool) -> "CubicDensity":
        """Formal derivative with respect to y_slot (or ybar_slot)."""
        idx = slot + (self.d + 1 if conjugated else 0)
        out = []
        for exps, c in self.monomials:
            e = exps[idx]
            if e == 0:
                continue
            newe = list(exps)
            newe[idx] -= 1
            out.append((tuple(newe), c * e))
        return CubicDensity.__new__(CubicDensity)._init_raw(self.d, out)

    def _init_raw(self, d: int, monomials: list[Monomial]) -> "CubicDensity":
        # bypass the degree check: derivatives drop below degree 3
        self.d = d
        self.monomials = [(e, c) for e, c in _merge(monomials).items()]
        return self

    def second_derivative(self, s1: tuple[int, bool], s2: tuple[int, bool]) -> "CubicDensity":
        return self.wirtinger(*s1).wirtinger(*s2)

    # ---------------------------------------------------------------- eval
    def eval_on(self, slots: list[np.ndarray], slots_bar: list[np.ndarray]) -> np.ndarray:
        """Pointwise evaluation given per-slot sample arrays."""
        shape = slots[0].shape
        out = np.zeros(shape, dtype=complex)
        for exps, c in self.monomials:
            term = np.full(shape, c, dtype=complex)
            for i in range(self.d + 1):
                if exps[i]:
                    term = term * slots[i] ** exps[i]
                if exps[self.d + 1 + i]:
                    term = term * slots_bar[i] ** exps[self.d + 1 + i]
            out += term
        return out

    # ------------------------------------------------------------------ I/O
    def to_text(self) -> str:
        lines = []
        for exps, c in sorted(self.monomials):
            cols = [repr(c.real), repr(c.imag)] + [str(e) for e in exps]
            lines.append(" ".join(cols))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(d: int, text: str) -> "CubicDensity":
        monos = []
        for line in text.strip().splitlines():
            parts = line.split()
            if not parts:
                continue
            cre, cim = float(parts[0]), float(parts[1])
            exps = tuple(int(v) for v in parts[2:])
            monos.append((exps, complex(cre, cim)))
        return CubicDensity(d, monos)


def canonical_density(d: int) -> CubicDensity:
    """f0 = (y_0^2 ybar_1 + ybar_0^2 y_1) / 2: the minimal density with a
    genuine derivative nonlinearity satisfying all structural hypotheses."""
    if d < 1:
        raise ValueError("canonical density needs d >= 1")
    w = d + 1
    e1 = [0] * (2 * w)
    e1[0] = 2            # y_0^2
    e1[w + 1] = 1        # ybar_1
    e2 = [0] * (2 * w)
    e2[w] = 2            # ybar_0^2
    e2[1] = 1            # y_1
    return CubicDensity(d, [(tuple(e1), 0.5), (tuple(e2), 0.5)])


def validate(f: CubicDensity) -> list[str]:
    """Empty list if the density satisfies all invariants."""
    return f.violations()


def wirtinger(f: CubicDensity, slot: int, conjugated: bool) -> CubicDensity:
    return f.wirtinger(slot, conjugated)


# ----------------------------------------------------------- field plumbing
def _slot_samples(u: Field, oversample: int = 2) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Sample (u, grad u) and conjugates on the oversampled grid."""
    g = u.grid
    ys = [samples_from_field(u, oversample)]
    for j in range(g.d):
        ys.append(samples_from_field(derivative(u, j), oversample))
    ybars = [np.conj(v) for v in ys]
    return ys, ybars


def eval_Q(f: CubicDensity, u: Field) -> Field:
    """Q(u, ubar) = (d_ybar0 f)(u, grad u) - sum_j d/dx_j (d_ybarj f)(u, grad u),
    evaluated pseudo-spectrally and projected onto the box."""
    g = u.grid
    ys, ybars = _slot_samples(u)
    W0 = f.wirtinger(0, True)
    out = field_from_samples(g, W0.eval_on(ys, ybars))
    for j in range(1, g.d + 1):
        Wj = f.wirtinger(j, True)
        if not Wj.monomials:
            continue
        out = out - derivative(field_from_samples(g, Wj.eval_on(ys, ybars)), j - 1)
    return out


def hamiltonian(f: CubicDensity, u: Field) -> float:
    """H = sum_xi Lambda(xi) |uhat(xi)|^2 + int f(u, grad u) dx; the cubic
    integral uses dealiased grid quadrature (exact for band-limited u)."""
    g = u.grid
    quad = float(np.sum(g.lambda_table() * np.abs(u.flat) ** 2))
    ys, ybars = _slot_samples(u)
    vals = f.eval_on(ys, ybars)
    cubic = complex(vals.mean()) * (TWO_PI ** g.d)
    scale = max(abs(quad) + abs(cubic), 1e-300)
    if abs(cubic.imag) > 1e-12 * scale:
        raise ValueError(
            f"Hamiltonian has imaginary part {cubic.imag:g}; reality constraint broken upstream"
        )
    return quad + cubic.real


def vector_field(f: CubicDensity, u: Field) -> Field:
    """Right-hand side i(Delta_g u - m u - Q(u, ubar)) = -i(Lambda(D)u + Q)."""
    lin = apply_multiplier(u, u.grid.lambda_table().astype(complex))
    return -1j * (lin + eval_Q(f, u))


# ------------------------------------------------------- paralinearization
def _linear_poly_tables(poly: CubicDensity, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Plain-series coefficient tables (mu_plus, mu_minus) over the k-box for
    a degree-1 polynomial in the slots: the coefficient function evaluated at
    U has plain series coefficients mu_plus(k) uhat(k) + mu_minus(k) uhat^-(k)
    with uhat^-(k) = conj(uhat(-k))."""
    n = grid.nmodes
    mu_p = np.zeros(n, dtype=complex)
    mu_m = np.zeros(n, dtype=complex)
    kfac = grid.modes.astype(float)
    norm = TWO_PI ** (-grid.d / 2.0)
    for exps, c in poly.monomials:
        if sum(exps) != 1:
            raise ValueError("not a linear polynomial")
        idx = exps.index(1)
        conj = idx > grid.d
        slot = idx - (grid.d + 1) if conj else idx
        gk = np.ones(n, dtype=complex) if slot == 0 else 1j * kfac[:, slot - 1]
        if conj:
            mu_m += norm * c * gk
        else:
            mu_p += norm * c * gk
    return mu_p, mu_m


def _u_signed(U: PairField) -> tuple[np.ndarray, np.ndarray]:
    """(uhat^+, uhat^-) flat tables: uhat(k) and conj(uhat(-k))."""
    return U.u.flat, U.ubar.flat


@dataclass
class ParalinearizationCoeffs:
    """Linear-in-U structure of the paralinearized symbols.

    For block (1,1): a(U; x, xi) has plain-series rows
        ahat(k, xi) = sum_s [ beta^s(k) + sum_j alpha_j^s(k) xi_j ] uhat^s(k);
    for block (1,2): bhat(k) = sum_s betab^s(k) uhat^s(k)  (xi-independent).
    """

    grid: GridSpec
    alpha_p: np.ndarray   # (d, n)
    alpha_m: np.ndarray
    beta_p: np.ndarray    # (n,)
    beta_m: np.ndarray
    betab_p: np.ndarray
    betab_m: np.ndarray

    def symbols_at(self, U: PairField) -> tuple[Symbol, Symbol]:
        up, um = _u_signed(U)
        c1 = self.alpha_p * up[None, :] + self.alpha_m * um[None, :]
        c0 = self.beta_p * up + self.beta_m * um
        b0 = self.betab_p * up + self.betab_m * um
        a = Symbol.from_affine(self.grid, c0, c1, order=1.0)
        b = Symbol.from_affine(self.grid, b0, None, order=0.0)
        return a, b


def paralinearization_coeffs(f: CubicDensity, grid: GridSpec) -> ParalinearizationCoeffs:
    f.validate()
    n = grid.nmodes
    kfac = grid.modes.astype(float)
    alpha_p = np.zeros((grid.d, n), dtype=complex)
    alpha_m = np.zeros((grid.d, n), dtype=complex)
    beta_p = np.zeros(n, dtype=complex)
    beta_m = np.zeros(n, dtype=complex)

    c00 = f.second_derivative((0, False), (0, True))     # d_u d_ubar f
    p, mn = _linear_poly_tables(c00, grid)
    beta_p += p
    beta_m += mn

    for j in range(1, grid.d + 1):
        c1 = f.second_derivative((0, True), (j, False))  # d_ubar d_(u_xj) f
        c2 = f.second_derivative((0, False), (j, True))  # d_u d_(ubar_xj) f
        p1, m1 = _linear_poly_tables(c1, grid)
        p2, m2 = _linear_poly_tables(c2, grid)
        alpha_p[j - 1] = 1j * (p1 - p2)
        alpha_m[j - 1] = 1j * (m1 - m2)
        dx = 1j * kfac[:, j - 1]
        beta_p += -0.5 * dx * (p1 + p2)
        beta_m += -0.5 * dx * (m1 + m2)

    betab_p = np.zeros(n, dtype=complex)
    betab_m = np.zeros(n, dtype=complex)
    cb0 = f.second_derivative((0, True), (0, True))      # d_ubar^2 f
    p, mn = _linear_poly_tables(cb0, grid)
    betab_p += p
    betab_m += mn
    for j in range(1, grid.d + 1):
        cbj = f.second_derivative((0, True), (j, True))  # d_ubar d_(ubar_xj) f
        p, mn = _linear_poly_tables(cbj, grid)
        dx = 1j * kfac[:, j - 1]
        betab_p += -dx * p
        betab_m += -dx * mn
    return ParalinearizationCoeffs(grid, alpha_p, alpha_m, beta_p, beta_m,
                                   betab_p, betab_m)


def paralinearize(f: CubicDensity, U: PairField) -> tuple[Symbol, Symbol]:
    """Symbols (a, b) of the paradifferential part: a is affine in xi with
    real values in x-space, b is xi-independent.  The full operator is
    iE Op^bw([[a, b], [conj b(x,-xi), conj a(x,-xi)]])."""
    coeffs = paralinearization_coeffs(f, U.grid)
    return coeffs.symbols_at(U)


def paralinearized_matrix(f: CubicDensity, U: PairField) -> MatrixSymbol:
    a, b = paralinearize(f, U)
    return MatrixSymbol(a, b)


# -------------------------------------------------- bilinear kernel tables
def quadratic_kernel(f: CubicDensity, grid: GridSpec) -> dict[tuple[int, int], np.ndarray]:
    """Symmetrized bilinear Fourier kernel of Q: tables q[(s1, s2)][i1, i2]
    over box x box with Qhat(k1 + k2) = sum q^{s1 s2}(k1, k2)
    uhat^{s1}(k1) uhat^{s2}(k2) (projection implicit; signs +1/-1)."""
    n = grid.nmodes
    kfac = grid.modes.astype(float)
    out = {(s1, s2): np.zeros((n, n), dtype=complex)
           for s1 in (1, -1) for s2 in (1, -1)}
    norm = TWO_PI ** (-grid.d / 2.0)

    def add_quadratic(poly: CubicDensity, outfac: np.ndarray | None):
        # outfac multiplies by a function of k1 + k2 (flattened via broadcast)
        for exps, c in poly.monomials:
            if sum(exps) != 2:
                raise ValueError("not quadratic")
            slots = []
            for idx, e in enumerate(exps):
                slots.extend([idx] * e)
            (i1, i2) = slots
            factors = []
            signs = []
            for idx in (i1, i2):
                conj = idx > grid.d
                slot = idx - (grid.d + 1) if conj else idx
                g = np.ones(n, dtype=complex) if slot == 0 else 1j * kfac[:, slot - 1]
                factors.append(g)
                signs.append(-1 if conj else 1)
            tab = norm * c * factors[0][:, None] * factors[1][None, :]
            if outfac is not None:
                tab = tab * outfac
            out[(signs[0], signs[1])] += tab

    add_quadratic(f.wirtinger(0, True), None)
    for j in range(1, grid.d + 1):
        Wj = f.wirtinger(j, True)
        if not Wj.monomials:
            continue
        ksum = kfac[:, None, j - 1] + kfac[None, :, j - 1]
        add_quadratic(Wj, -1j * ksum)

    # symmetrize over the two slots
    sym = {}
    for s1 in (1, -1):
        for s2 in (1, -1):
            sym[(s1, s2)] = 0.5 * (out[(s1, s2)] + out[(s2, s1)].T)
    return sym


def apply_quadratic_kernel(kern: dict, grid: GridSpec, U: PairField,
                           W: PairField) -> np.ndarray:
    """Evaluate sum over splits of q^{s1 s2}(k1, k2) uhat^{s1}(k1) what^{s2}(k2)
    at output modes in the box (row-1 component only)."""
    n = grid.nmodes
    modes = grid.modes
    out = np.zeros(n, dtype=complex)
    up, um = _u_signed(U)
    wp, wm = _u_signed(W)
    uu = {1: up, -1: um}
    ww = {1: wp, -1: wm}
    # k_out = k1 + k2; loop over k1 rows, gather k2 = k_out - k1
    idx_of = {tuple(m): i for i, m in enumerate(modes)}
    for s1 in (1, -1):
        for s2 in (1, -1):
            q = kern[(s1, s2)]
            for i1, k1 in enumerate(modes):
                u1 = uu[s1][i1]
                if u1 == 0.0:
                    continue
                for iout, kout in enumerate(modes):
                    k2 = tuple(kout - k1)
                    i2 = idx_of.get(k2)
                    if i2 is None:
                        continue
                    out[iout] += q[i1, i2] * u1 * ww[s2][i2]
    return out
