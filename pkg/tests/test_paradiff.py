import numpy as np
import pytest

from torusnls.grid import Field, GridSpec, PairField, random_band_field
from torusnls.paradiff import (E_matrix, LinOp, MatrixSymbol, PairLinOp,
                               Symbol, adjoint, chi, compose_expansion,
                               composition_residual, eta, flow, flow_offdiag,
                               flow_pair, flow_smoothing, is_hamiltonian,
                               is_selfadjoint, linop_to_csv, offdiag_generator,
                               opnorm_sobolev, opnorm_sobolev_pair,
                               poisson_bracket, quantize_bw,
                               quantize_bw_matrix, quantize_bw_reference,
                               seminorm, symbol_product, symbol_to_csv,
                               symplectic_residual, weighted_opnorm)


@pytest.fixture
def grid():
    return GridSpec(d=1, K=8, G=np.eye(1), m=1.0)


def random_symbol(grid, rng, scale=1.0):
    n = grid.nmodes
    raw = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return Symbol(grid, 0.0, scale * raw)


def random_real_symbol(grid, rng, scale=1.0):
    s = random_symbol(grid, rng, scale)
    return Symbol(grid, 0.0, s.values + np.conj(s.values[::-1, :]))


# ------------------------------------------------------------------ cutoffs
def test_eta_contract():
    assert eta(1.0) == 1.0
    assert eta(1.25) == 1.0
    assert eta(2.0) == 0.0
    assert eta(1.6) == 0.0
    assert 0.0 < eta(1.4) < 1.0
    assert eta(1.3) >= eta(1.5)
    assert eta(-1.1) == eta(1.1)
    ys = np.linspace(0, 2.5, 200)
    vals = eta(ys)
    assert np.all(np.diff(vals) <= 1e-12)


def test_chi_contract():
    assert chi(0.0) == 1.0 and chi(0.5) == 1.0
    assert chi(1.0) == 0.0 and chi(2.0) == 0.0
    assert 0.0 < chi(0.75) < 1.0


# ------------------------------------------------------------- quantization
def test_quantize_multiplier_diagonal():
    for d, K in ((1, 8), (1, 16), (2, 8)):
        g = GridSpec(d=d, K=K, G=np.eye(d), m=1.0)
        A = quantize_bw(Symbol.lambda_symbol(g))
        assert np.abs(A.matrix - np.diag(g.lambda_table())).max() <= 1e-13


def test_quantize_constant_identity(grid):
    A = quantize_bw(Symbol.constant(grid, 3.5 + 0.5j))
    assert np.abs(A.matrix - (3.5 + 0.5j) * np.eye(grid.nmodes)).max() == 0.0


def test_quantize_single_band(grid):
    # a(x, xi) = e^{i k0 x} gfun(xi): one off-diagonal band
    k0 = 2
    n = grid.nmodes
    c0 = np.zeros(n, complex)
    c0[k0 + grid.K] = 1.0
    c1 = np.zeros((1, n), complex)
    c1[0, k0 + grid.K] = 0.5
    band = Symbol.from_affine(grid, c0, c1)
    B = quantize_bw(band)
    for (j, k) in ((6, 4), (3, 1), (-2, -4)):
        japk = np.sqrt(1.0 + (j + k) ** 2)
        expect = eta(abs(j - k) / (grid.eps_q * japk)) * (1 + 0.5 * (j + k) / 2)
        assert B.matrix[j + grid.K, k + grid.K] == pytest.approx(expect, abs=1e-14)
    off = np.array([[B.matrix[j, k] for k in range(n)] for j in range(n)])
    mask = np.ones((n, n), bool)
    for j in range(n):
        for k in range(n):
            mask[j, k] = (j - k) == k0
    assert np.abs(off[~mask]).max() == 0.0


def test_quantize_reference_oracle(grid):
    rng = np.random.default_rng(5)
    sym = random_symbol(grid, rng)
    h = random_band_field(grid, rng)
    fast = quantize_bw(sym).apply(h)
    ref = quantize_bw_reference(sym, h)
    assert np.abs(fast.coeffs - ref.coeffs).max() <= 1e-13 * np.abs(ref.coeffs).max()


def test_quantize_linear_in_symbol(grid):
    rng = np.random.default_rng(6)
    a, b = random_symbol(grid, rng), random_symbol(grid, rng)
    lhs = quantize_bw(Symbol(grid, 0.0, 2.0 * a.values - 3.0 * b.values)).matrix
    rhs = 2.0 * quantize_bw(a).matrix - 3.0 * quantize_bw(b).matrix
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(rhs).max()


def test_adjoint_identity(grid):
    rng = np.random.default_rng(7)
    a = random_symbol(grid, rng)
    lhs = adjoint(quantize_bw(a)).matrix
    rhs = quantize_bw(a.conj_x()).matrix
    assert np.abs(lhs - rhs).max() == 0.0


def test_selfadjoint_real_symbols(grid):
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = random_real_symbol(grid, rng)
        assert is_selfadjoint(quantize_bw(a)) <= 1e-12
    diag = LinOp.multiplier(grid, grid.lambda_table())
    assert is_selfadjoint(diag) == 0.0


def test_hamiltonian_diag_lambda(grid):
    lam = Symbol.lambda_symbol(grid)
    M = quantize_bw_matrix(MatrixSymbol(lam, Symbol.zero(grid)))
    iEM = PairLinOp.from_full(grid, 1j * E_matrix(grid) @ M.full())
    assert is_hamiltonian(iEM) <= 1e-13


# ---------------------------------------------------------------- seminorms
def test_seminorm_examples(grid):
    lam = Symbol.lambda_symbol(grid)
    for s in (0, 1, 2):
        val = seminorm(lam, 2.0, s, 0.75)
        assert np.isfinite(val) and val <= 10.0
    assert seminorm(Symbol.zero(grid), 0.0, 2, 0.75) == 0.0
    assert seminorm(Symbol.constant(grid, 2.5), 0.0, 0, 0.75) == pytest.approx(2.5)


def test_seminorm_lambda_d2():
    g = GridSpec(d=2, K=6, G=np.eye(2), m=1.0)
    assert seminorm(Symbol.lambda_symbol(g), 2.0, 2, 0.75) <= 10.0


def test_symbol_row_decay_oracle():
    # smooth symbols have rapidly decaying x-Fourier rows
    g = GridSpec(d=1, K=16, G=np.eye(1), m=1.0)
    sym = Symbol.from_function(
        g, lambda mesh, xi: np.exp(np.cos(mesh[0])) * np.sqrt(1 + float(xi[0]) ** 2),
        order=1.0)
    w = g.jap_table(-1.0)
    rowmax = (np.abs(sym.values) * w[None, :]).max(axis=1)
    ref = rowmax[1 + g.K] * 2.0 ** 1.5
    for k in range(1, g.K + 1):
        assert rowmax[k + g.K] * (1.0 + k * k) ** 1.5 <= 10.0 * ref


# ---------------------------------------------------------------- calculus
def test_compose_multipliers_exact(grid):
    p1 = Symbol.from_multiplier(grid, lambda pts: 1.0 / (1.0 + np.sum(pts ** 2, axis=1)))
    p2 = Symbol.from_multiplier(grid, lambda pts: np.cos(0.2 * pts[:, 0]))
    want = p1.values[grid.K] * p2.values[grid.K]
    for rho in (1, 2, 3):
        comp = compose_expansion(p1, p2, rho)
        assert np.abs(comp.values[grid.K] - want).max() <= 1e-15
        assert composition_residual(p1, p2, rho) <= 1e-13


def test_compose_hand_oracle(grid):
    # a = xi_1, b = e^{i x_1}: a #_2 b = xi e^{ix} + e^{ix}/2
    axi = Symbol.from_affine(grid, np.zeros(grid.nmodes),
                             np.ones((1, grid.nmodes)), order=1.0)
    c0 = np.zeros(grid.nmodes, complex)
    c0[1 + grid.K] = 1.0
    bex = Symbol.from_affine(grid, c0, None, order=0.0)
    comp = compose_expansion(axi, bex, 2)
    want = grid.modes[:, 0].astype(complex) + 0.5
    assert np.abs(comp.values[1 + grid.K] - want).max() <= 1e-13


def test_compose_remark_first_order(grid):
    # a #_2 b = ab + (1/2i){a, b} by definition of the truncation
    rng = np.random.default_rng(9)
    a, b = random_symbol(grid, rng), random_symbol(grid, rng)
    comp = compose_expansion(a, b, 2)
    direct = symbol_product(a, b).values \
        + (0.5 / 1j) * poisson_bracket(a, b).values
    assert np.abs(comp.values - direct).max() <= 1e-12 * np.abs(direct).max()


def test_poisson_antisymmetry(grid):
    rng = np.random.default_rng(10)
    a = random_symbol(grid, rng)
    assert np.abs(poisson_bracket(a, a).values).max() <= 1e-13 * np.abs(a.values).max()


def test_poisson_lambda_oracle(grid):
    # {Lambda, e^{ikx} h(xi)} = 2 i (G xi . k) h e^{ikx}, exact for constant h
    lam = Symbol.lambda_symbol(grid)
    c0 = np.zeros(grid.nmodes, complex)
    c0[1 + grid.K] = 1.0
    bex = Symbol.from_affine(grid, c0, None, order=0.0)
    pb = poisson_bracket(lam, bex)
    want = 2j * grid.modes[:, 0].astype(float)
    assert np.abs(pb.values[1 + grid.K] - want).max() <= 1e-13
    other = np.delete(pb.values, 1 + grid.K, axis=0)
    assert np.abs(other).max() <= 1e-13


def test_poisson_x_independent(grid):
    p1 = Symbol.from_multiplier(grid, lambda pts: np.sum(pts ** 2, axis=1))
    p2 = Symbol.from_multiplier(grid, lambda pts: np.cos(pts[:, 0]))
    assert np.abs(poisson_bracket(p1, p2).values).max() <= 1e-13


def test_composition_residual_monotone():
    from torusnls.verify import band_test_pair
    g = GridSpec(d=1, K=16, G=np.eye(1), m=0.5)
    a, b = band_test_pair(g)
    ring = (g.K // 4, g.K // 2)
    res = [composition_residual(a, b, rho, ring=ring) for rho in (1, 2, 3)]
    assert all(np.isfinite(res))
    assert res[0] >= res[1] >= res[2]
    assert np.abs(composition_residual(Symbol.zero(g), b, 2)) == 0.0


def test_composition_residual_band_shrink():
    # shrinking the x-band never increases the measured residual
    g = GridSpec(d=1, K=16, G=np.eye(1), m=1.0)
    n, z = g.nmodes, g.K

    def band_symbol(B):
        c1 = np.zeros((1, n), complex)
        c1[0, z] = 1.0
        for k in range(1, B + 1):
            c1[0, z + k] = 0.25 / k ** 2
            c1[0, z - k] = 0.25 / k ** 2
        return Symbol.from_affine(g, np.zeros(n), c1, order=1.0)

    res = [composition_residual(band_symbol(B), band_symbol(B), 2, ring=(4, 8))
           for B in (3, 2, 1)]
    assert res[0] >= res[1] >= res[2]


# -------------------------------------------------------------------- flows
def test_flow_zero_identity(grid):
    Phi = flow(Symbol.zero(grid))
    assert np.abs(Phi.matrix - np.eye(grid.nmodes)).max() == 0.0


def test_flow_unitarity(grid):
    rng = np.random.default_rng(11)
    Phi = flow(random_real_symbol(grid, rng, scale=0.3))
    assert np.abs(Phi.matrix.conj().T @ Phi.matrix - np.eye(grid.nmodes)).max() <= 1e-10
    # inverse = flow at tau = -1
    inv = flow((-1.0) * random_real_symbol(grid, np.random.default_rng(11), scale=0.3))
    assert np.abs(Phi.matrix @ inv.matrix - np.eye(grid.nmodes)).max() <= 1e-10


def test_flow_multiplier_phases(grid):
    gsym = Symbol.from_multiplier(grid, lambda pts: np.cos(pts[:, 0]))
    Phi = flow(gsym)
    want = np.diag(np.exp(1j * np.cos(grid.modes[:, 0].astype(float))))
    assert np.abs(Phi.matrix - want).max() <= 1e-12


def test_flow_rejects_nonreal(grid):
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        flow(random_symbol(grid, rng))


def test_flow_offdiag_symplectic(grid):
    rng = np.random.default_rng(13)
    n = grid.nmodes
    raw = 0.1 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    psi = Symbol(grid, 0.0, 0.5 * (raw + raw[:, ::-1]))  # even in xi
    Phi = flow_offdiag(psi)
    assert symplectic_residual(Phi) <= 1e-10
    ident = flow_offdiag(Symbol.zero(grid))
    assert np.abs(ident.full() - np.eye(2 * n)).max() == 0.0


def test_flow_smoothing_symplectic(grid):
    rng = np.random.default_rng(14)
    n = grid.nmodes
    S11 = 0.05 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    S11 = 0.5 * (S11 + S11.conj().T)
    S12 = 0.05 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    S12 = 0.5 * (S12 + S12[::-1, ::-1].T)
    S = PairLinOp(LinOp(grid, S11), LinOp(grid, S12))
    F = PairLinOp.from_full(grid, 1j * E_matrix(grid) @ S.full())
    # rescale to ||F|| <= 0.1 for the first-order bound below
    F = PairLinOp.from_full(grid, F.full() * (0.1 / opnorm_sobolev_pair(F, 0.0, 0.0)))
    Phi = flow_smoothing(F)
    assert symplectic_residual(Phi) <= 1e-10
    # ||Phi_F - Id|| <= 2 ||F|| for small F
    nrmF = opnorm_sobolev_pair(F, 0.0, 0.0)
    diff = opnorm_sobolev_pair(Phi - PairLinOp.identity(grid), 0.0, 0.0)
    assert diff <= 2.0 * nrmF
    ident = flow_smoothing(PairLinOp.zero(grid))
    assert np.abs(ident.full() - np.eye(2 * n)).max() == 0.0


def test_symplectic_residual_examples(grid):
    assert symplectic_residual(PairLinOp.identity(grid)) <= 1e-14
    n = grid.nmodes
    th = 0.37
    Q = PairLinOp(LinOp(grid, np.exp(1j * th) * np.eye(n)),
                  LinOp(grid, np.zeros((n, n), complex)))
    assert symplectic_residual(Q) <= 1e-14
    rng = np.random.default_rng(15)
    Phi = flow_pair(random_real_symbol(grid, rng, scale=0.2))
    assert symplectic_residual(Phi) <= 1e-10


def test_pairlinop_real_to_real(grid):
    rng = np.random.default_rng(16)
    n = grid.nmodes
    P = PairLinOp(LinOp(grid, rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))),
                  LinOp(grid, rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))))
    U = PairField.from_u(random_band_field(grid, rng))
    W = P.apply(U)  # PairField constructor re-checks the reality coupling
    assert np.isfinite(np.abs(W.u.coeffs).max())


def test_weighted_opnorm_against_svd(grid):
    rng = np.random.default_rng(17)
    n = grid.nmodes
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    w_out = grid.jap_table(1.5)
    w_in = grid.jap_table(0.5)
    got = weighted_opnorm(M, w_out, w_in)
    want = np.linalg.norm((w_out[:, None] * M) / w_in[None, :], 2)
    assert got == pytest.approx(want, rel=1e-8)


def test_offdiag_conjugation_structure(grid):
    # conjugating iE Op(Lambda) by the off-diagonal flow: the first-order
    # increment is the commutator, whose (1,2) block is exactly
    # -(Lambda(j) + Lambda(k)) Op(psi)[j,k]; the midpoint-rule defect
    # against -2 Lambda((j+k)/2) is exactly (G kappa . kappa / 2) Op(psi)
    from torusnls.paradiff import iE_lambda
    rng = np.random.default_rng(23)
    n = grid.nmodes
    raw = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    psi0 = Symbol(grid, 0.0, 0.5 * (raw + raw[:, ::-1]))
    X = iE_lambda(grid).full()
    lam = grid.lambda_table()
    P = quantize_bw(psi0).matrix

    Y = offdiag_generator(psi0).full()
    comm = X @ Y - Y @ X
    want12 = -(lam[:, None] + lam[None, :]) * P
    assert np.abs(comm[:n, n:] - want12).max() <= 1e-12 * np.abs(want12).max()
    mid = 0.5 * (grid.modes[:, None, :] + grid.modes[None, :, :]).astype(float)
    lam_mid = grid.lambda_of(mid.reshape(-1, grid.d)).reshape(n, n)
    kap = (grid.modes[:, None, :] - grid.modes[None, :, :]).astype(float)
    kap_g = np.einsum("jki,il,jkl->jk", kap, grid.G, kap)
    defect = want12 - (-2.0 * lam_mid * P)
    assert np.abs(defect - (-0.5 * kap_g * P)).max() <= 1e-11 * max(np.abs(want12).max(), 1.0)

    # the Taylor remainder of the conjugation is second order in the generator
    from scipy.linalg import expm

    def err(t):
        Yt = offdiag_generator(t * psi0).full()
        Phi = expm(Yt)
        D = np.linalg.solve(Phi, X @ Phi) - X
        first = X @ Yt - Yt @ X
        return np.abs(D - first).max()

    r = err(0.02) / err(0.01)
    assert 2.8 <= r <= 5.5


def test_csv_dumps(tmp_path, grid):
    sym = Symbol.lambda_symbol(grid)
    symbol_to_csv(sym, tmp_path / "sym.csv")
    linop_to_csv(quantize_bw(sym), tmp_path / "op.csv")
    lines = (tmp_path / "op.csv").read_text().strip().splitlines()
    assert lines[0] == "j_1,k_1,re,im"
    assert len(lines) == 1 + grid.nmodes  # diagonal operator
