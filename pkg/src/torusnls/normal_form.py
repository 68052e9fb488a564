"""Cutoff machinery, symbol decomposition, homological solutions, and the
one-step conjugation driver.

The decomposition follows the partition of unity built from the even cutoff
chi (1 on [0, 1/2], 0 outside [-1, 1]):

    chi_k(xi)  = chi(2 |k|^tau (xi; k) / <xi>^delta),   (xi; k) := G xi . k,
    chit_k(xi) = chi(|k| / <xi>^eps),

    a = <a> + a_nr + a_res + a_smooth,

with the nonresonant part (1 - chi_k) chit_k, the resonant part
chi_k chit_k, and the smoothing part (1 - chit_k).

Convention note: with the bracket {a, b} = d_xi a . d_x b - d_x a . d_xi b
one has {Lambda, e^(ikx) h(xi)} = 2i (xi; k) h e^(ikx), so the homological
solution carries a compensating factor 1/i relative to the bare row formula:

    ghat(k, xi) = -(1/i) d_k(xi) chit_k(xi) ahat(k, xi),

which makes {Lambda, g} + a_nr = 0 hold exactly (entrywise) and keeps g
real-valued in x whenever a is.  The same factor-of-i bookkeeping appears in
the diagonalization step: the off-diagonal block of the Hamiltonian part is
i Op(b), so the flow generator that cancels it at leading order is the
off-diagonal flow of i psi with psi = b / (2 Lambda(xi)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .density import (CubicDensity, eval_Q, paralinearization_coeffs,
                      quadratic_kernel)
from .grid import GridSpec, PairField
from .paradiff import (E_matrix, MatrixSymbol, PairLinOp, Symbol, chi, eta,
                       iE_lambda, quantize_bw_matrix, weighted_opnorm)
from .small_divisors import KernelFamily, birkhoff_matrix_solve

# ----------------------------------------------------------------- parameters
_DEFAULTS = {1: (0.75, 1.0, 0.3), 2: (0.75, 1.5, 0.25), 3: (0.75, 2.5, 0.2)}


@dataclass(frozen=True)
class NFParams:
    """Exponents of the normal-form layer: 2/3 < delta < 1, tau > d - 1,
    0 < eps_nf < delta / (tau + 1)."""

    delta: float
    tau: float
    eps_nf: float
    d: int = 1

    def __post_init__(self):
        if not (2.0 / 3.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (2/3, 1)")
        if not self.tau > self.d - 1:
            raise ValueError(f"tau must exceed d - 1 = {self.d - 1}")
        if not (0.0 < self.eps_nf < self.delta / (self.tau + 1.0)):
            raise ValueError("eps_nf must lie in (0, delta / (tau + 1))")

    @staticmethod
    def defaults(d: int) -> "NFParams":
        delta, tau, eps_nf = _DEFAULTS[d]
        return NFParams(delta, tau, eps_nf, d=d)


def regularization_gain(delta: float) -> float:
    """min{delta, 3 delta - 2, 2 delta - 1}; positive on (2/3, 1)."""
    if not (2.0 / 3.0 < delta < 1.0):
        raise ValueError("delta must lie in (2/3, 1)")
    return min(delta, 3.0 * delta - 2.0, 2.0 * delta - 1.0)


# ------------------------------------------------------------------- cutoffs
def cutoffs(grid: GridSpec, k, xi, p: NFParams):
    """(chi_k(xi), chit_k(xi), d_k(xi)) for k != 0; xi may be a batch of
    (possibly half-integer) fiber points."""
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValueError("cutoffs are defined for k != 0 only")
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    kn = float(np.linalg.norm(k))
    pair = xi @ (grid.G @ k)
    jap = np.sqrt(1.0 + np.sum(xi ** 2, axis=1))
    chi_k = chi(2.0 * kn ** p.tau * pair / jap ** p.delta)
    chit_k = chi(kn / jap ** p.eps_nf)
    one_minus = 1.0 - chi_k
    dk = np.zeros_like(pair)
    live = one_minus != 0.0
    dk[live] = one_minus[live] / (2.0 * pair[live])
    return chi_k, chit_k, dk


def _cutoff_tables(grid: GridSpec, p: NFParams):
    """chi, chit, d tables over (k_flat, xi_flat) with the k = 0 row zeroed."""
    n = grid.nmodes
    chi_t = np.zeros((n, n))
    chit_t = np.zeros((n, n))
    d_t = np.zeros((n, n))
    for ik, kvec in enumerate(grid.modes):
        if not np.any(kvec):
            continue
        c, ct, dk = cutoffs(grid, kvec, grid.modes, p)
        chi_t[ik] = c
        chit_t[ik] = ct
        d_t[ik] = dk
    return chi_t, chit_t, d_t


def decompose(a: Symbol, p: NFParams) -> tuple[Symbol, Symbol, Symbol, Symbol]:
    """(avg, nr, res, smooth); reconstruction is exact by the partition of
    unity."""
    g = a.grid
    chi_t, chit_t, _ = _cutoff_tables(g, p)
    zrow = (g.nmodes - 1) // 2
    avg = Symbol.zero(g, a.order)
    avg.values[zrow] = a.values[zrow]
    off = a.values.copy()
    off[zrow] = 0.0
    nr = Symbol(g, a.order, (1.0 - chi_t) * chit_t * off)
    res = Symbol(g, a.order, chi_t * chit_t * off)
    smooth = Symbol(g, a.order, (1.0 - chit_t) * off)
    # the k = 0 row of the masks was zeroed, so force it out of the parts
    for part in (nr, res, smooth):
        part.values[zrow] = 0.0
    return avg, nr, res, smooth


def homological_g(a: Symbol, p: NFParams) -> tuple[Symbol, float]:
    """Solution g of {Lambda, g} + a_nr = 0 (with the documented 1/i factor)
    and the measured residual of that identity over the table."""
    g = a.grid
    _, chit_t, d_t = _cutoff_tables(g, p)
    zrow = (g.nmodes - 1) // 2
    vals = -(1.0 / 1j) * d_t * chit_t * a.values
    vals[zrow] = 0.0
    gsym = Symbol(g, a.order - p.delta, vals)
    # residual: {Lambda, g} row k = 2 i (xi; k) ghat(k, xi) exactly
    _, nr, _, _ = decompose(a, p)
    # pair[k_idx, xi_idx] = G xi . k (symmetric in the two mode indices)
    pair = g.modes.astype(float) @ g.G @ g.modes.astype(float).T
    bracket = 2j * pair * vals
    resid = float(np.abs(bracket + nr.values).max())
    return gsym, resid


def is_normal_form(z: Symbol, p: NFParams, threshold: float = 1e-14):
    """Support check of the normal-form predicate; returns (ok, worst) where
    worst = (k, xi, margin) for the largest violation, or None."""
    g = z.grid
    modes = g.modes.astype(float)
    jap = g.jap_table(1.0)
    worst = None
    worst_excess = 0.0
    for ik, kvec in enumerate(g.modes):
        if not np.any(kvec):
            continue
        row = z.values[ik]
        live = np.abs(row) > threshold
        if not np.any(live):
            continue
        kn = float(np.linalg.norm(kvec))
        pair = np.abs(modes @ (g.G @ kvec.astype(float)))
        bound1 = jap ** p.delta * kn ** (-p.tau)
        bound2 = jap ** p.eps_nf
        excess = np.maximum(pair / np.maximum(bound1, 1e-300),
                            kn / np.maximum(bound2, 1e-300))
        excess = np.where(live, excess, 0.0)
        i = int(np.argmax(excess))
        if excess[i] > max(1.0, worst_excess):
            worst_excess = float(excess[i])
            worst = (tuple(int(v) for v in kvec),
                     tuple(int(v) for v in g.modes[i]), worst_excess)
    return worst is None, worst


def diag_step_psi(b: Symbol) -> Symbol:
    """psi = b / (2 Lambda(xi)): the symbol whose off-diagonal flow removes
    the off-diagonal paradifferential block at leading order (the driver
    applies the factor-of-i convention documented in the module header)."""
    g = b.grid
    lam = g.lambda_table()
    out = Symbol(g, b.order - 2.0, b.values / (2.0 * lam[None, :]))
    return out


# ======================================================== conjugation driver
@dataclass
class SystemState:
    """Dense bookkeeping of the conjugated system at a frozen U.

    The full (non-time) operator is iE Op(Lambda) + dense; ``lin_family``
    is the linear-in-U smoothing kernel family whose dense image at U is
    contained in ``dense``.
    """

    grid: GridSpec
    U: PairField
    dense: np.ndarray
    lin_family: KernelFamily
    eta_min: float = 0.1

    def copy(self) -> "SystemState":
        return SystemState(self.grid, self.U, self.dense.copy(),
                           self.lin_family, self.eta_min)


def _eta_table(grid: GridSpec) -> np.ndarray:
    modes = grid.modes.astype(float)
    diff = modes[:, None, :] - modes[None, :, :]
    japsum = np.sqrt(1.0 + np.sum((modes[:, None, :] + modes[None, :, :]) ** 2, axis=-1))
    return eta(np.sqrt(np.sum(diff ** 2, axis=-1)) / (grid.eps_q * japsum))


def _mid_points(grid: GridSpec) -> np.ndarray:
    modes = grid.modes.astype(float)
    return 0.5 * (modes[:, None, :] + modes[None, :, :])


def assemble_system(f: CubicDensity, U: PairField) -> SystemState:
    """Paralinearize at U and split the full quadratic vector field into the
    paradifferential part and the exact linear-in-U smoothing family, so that
    (iE Op(Lambda) + dense) U-stack = -dt U-stack holds on the grid."""
    g = U.grid
    coeffs = paralinearization_coeffs(f, g)
    a, b = coeffs.symbols_at(U)
    A = quantize_bw_matrix(MatrixSymbol(a, b))
    iEA = PairLinOp.from_full(g, 1j * E_matrix(g) @ A.full())

    kern = quadratic_kernel(f, g)
    n = g.nmodes
    modes = g.modes
    diff = modes[:, None, :] - modes[None, :, :]
    inbox = np.all(np.abs(diff) <= g.K, axis=-1)
    strides = np.cumprod([1] + [g.side] * (g.d - 1))[::-1]
    rows = np.zeros((n, n), dtype=int)
    for ax in range(g.d):
        rows += ((diff[:, :, ax] + g.K) * strides[ax]) * inbox
    cols = np.broadcast_to(np.arange(n)[None, :], (n, n))

    def full_kernel(s1, s2):
        q = kern[(s1, s2)]
        return np.where(inbox, 1j * q[rows, cols], 0.0)

    et = _eta_table(g)
    mid = _mid_points(g)

    def para_kernel(beta, alpha):
        tab = beta[rows].astype(complex)
        if alpha is not None:
            for ax in range(g.d):
                tab = tab + alpha[ax][rows] * mid[:, :, ax]
        return np.where(inbox, 1j * et * tab, 0.0)

    rA1p = para_kernel(coeffs.beta_p, coeffs.alpha_p)
    rA1m = para_kernel(coeffs.beta_m, coeffs.alpha_m)
    rA2p = para_kernel(coeffs.betab_p, None)
    rA2m = para_kernel(coeffs.betab_m, None)

    fam = KernelFamily(
        g,
        full_kernel(+1, +1) - rA1p,
        full_kernel(-1, +1) - rA1m,
        full_kernel(+1, -1) - rA2p,
        full_kernel(-1, -1) - rA2m,
    )
    dense = iEA.full() + fam.at(U).full()
    return SystemState(g, U, dense, fam)


def system_identity_defect(state: SystemState, f: CubicDensity) -> float:
    """Relative defect of dense @ U-stack == iE Q-stack (assembly check)."""
    g = state.grid
    Q = eval_Q(f, state.U.u)
    target = np.concatenate([1j * Q.flat, np.conj((1j * Q.flat)[::-1])])
    got = state.dense @ np.concatenate([state.U.u.flat, state.U.ubar.flat])
    return float(np.abs(got - target).max() / max(np.abs(target).max(), 1e-300))


def _blocks(grid: GridSpec, M: np.ndarray):
    n = grid.nmodes
    return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]


def _offdiag_norm(state: SystemState, s: float) -> float:
    g = state.grid
    _, b12, b21, _ = _blocks(g, state.dense)
    w = g.jap_table(s)
    return max(weighted_opnorm(b12, w, w), weighted_opnorm(b21, w, w))


def _band_mask(grid: GridSpec, eta_min: float) -> np.ndarray:
    return _eta_table(grid) >= eta_min


def _nf_violation(state: SystemState, p: NFParams, s: float,
                  threshold: float = 1e-14):
    """Weighted norm of the normal-form-violating band content of the
    diagonal block, plus the worst offending (k, xi)."""
    g = state.grid
    b11, _, _, _ = _blocks(g, state.dense)
    mask = _band_mask(g, state.eta_min)
    modes = g.modes.astype(float)
    mid = _mid_points(g)
    diff = modes[:, None, :] - modes[None, :, :]
    kn = np.sqrt(np.sum(diff ** 2, axis=-1))
    pair = np.abs(np.einsum("jki,il,jkl->jk", mid, g.G, diff))
    japm = np.sqrt(1.0 + np.sum(mid ** 2, axis=-1))
    offband = kn > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ok1 = pair <= japm ** p.delta * np.where(offband, kn, 1.0) ** (-p.tau)
        ok2 = kn <= japm ** p.eps_nf
    violating = mask & offband & ~(ok1 & ok2) & (np.abs(b11) > threshold)
    V = np.where(violating, b11, 0.0)
    w = g.jap_table(s)
    norm = weighted_opnorm(V, w, w)
    worst = None
    if np.any(violating):
        j, k = np.unravel_index(int(np.argmax(np.abs(V))), V.shape)
        worst = (tuple(int(v) for v in (g.modes[j] - g.modes[k])),
                 tuple(float(v) for v in mid[j, k]))
    return norm, worst


def _hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def _evenize_band(M: np.ndarray) -> np.ndarray:
    """Project band samples onto even-in-xi: (kappa, mid) -> (kappa, -mid) is
    the matrix map (j, k) -> (-k, -j)."""
    return 0.5 * (M + M[::-1, ::-1].T)


@dataclass
class StepReport:
    kind: str
    before: dict
    after: dict
    worst_offender: tuple | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            if isinstance(v, (tuple, list)):
                return [clean(x) for x in v]
            if isinstance(v, (np.floating, float)):
                return float(v)
            return v
        return {
            "kind": self.kind,
            "before": clean(self.before),
            "after": clean(self.after),
            "worst_offender": clean(self.worst_offender) if self.worst_offender else None,
            **({"extras": clean(self.extras)} if self.extras else {}),
        }


def _conjugate_dense(state: SystemState, Phi_full: np.ndarray,
                     extra: np.ndarray | None = None) -> np.ndarray:
    g = state.grid
    L = iE_lambda(g).full()
    inv = np.linalg.solve(Phi_full, np.eye(Phi_full.shape[0], dtype=complex))
    out = inv @ (L + state.dense) @ Phi_full - L
    if extra is not None:
        out = out + extra
    return out


def conjugation_step(state: SystemState, kind: str, p: NFParams | None = None,
                     s: float = 1.0) -> tuple[SystemState, StepReport]:
    """One conjugation of the assembled operator by the flow of the
    generator the step kind prescribes; returns the new state and the
    before/after residual report.

    - "diag": off-diagonal flow of i * (b-band) / (2 Lambda(mid)); reports
      the off-diagonal block norm.
    - "nf": diagonal flow of the homological g built from the nonresonant
      band content of the diagonal symbol; reports the normal-form-violating
      content (requires p).
    - "birkhoff": smoothing flow of the family solving the Birkhoff
      homological equation; removes the linear-in-U remainder exactly at
      kernel level and reports its H^s -> H^(s+1) norm.
    """
    g = state.grid
    n = g.nmodes
    if kind == "diag":
        before = {"offdiag_norm": _offdiag_norm(state, s)}
        _, b12, _, _ = _blocks(g, state.dense)
        mask = _band_mask(g, state.eta_min)
        lam_mid = g.lambda_of(_mid_points(g).reshape(-1, g.d)).reshape(n, n)
        # block (1,2) holds i Op(b); the canceling generator block is
        # i Op(i b / (2 Lambda)) = i * b12 / (2 Lambda(mid))
        gen12 = np.where(mask, 1j * b12 / (2.0 * lam_mid), 0.0)
        gen12 = _evenize_band(gen12)
        Y = np.zeros((2 * n, 2 * n), dtype=complex)
        Y[:n, n:] = gen12
        Y[n:, :n] = np.conj(gen12[::-1, ::-1])
        Phi = expm(Y)
        new = state.copy()
        new.dense = _conjugate_dense(state, Phi)
        report = StepReport("diag", before, {"offdiag_norm": _offdiag_norm(new, s)},
                            extras={"generator_norm": float(np.abs(gen12).max())})
        return new, report

    if kind == "nf":
        if p is None:
            raise ValueError("nf step needs NFParams")
        nf_before, worst = _nf_violation(state, p, s)
        b11, _, _, _ = _blocks(g, state.dense)
        mask = _band_mask(g, state.eta_min)
        et = _eta_table(g)
        # band samples of the diagonal symbol: b11 = i * eta * ahat
        samples = np.where(mask, b11 / np.where(mask, 1j * et, 1.0), 0.0)
        samples = _hermitize(samples)
        modes = g.modes.astype(float)
        mid = _mid_points(g)
        diff = modes[:, None, :] - modes[None, :, :]
        kn = np.sqrt(np.sum(diff ** 2, axis=-1))
        pair = np.einsum("jki,il,jkl->jk", mid, g.G, diff)
        japm = np.sqrt(1.0 + np.sum(mid ** 2, axis=-1))
        offband = kn > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            chi_b = chi(np.where(offband, 2.0 * kn ** p.tau * pair / japm ** p.delta, 0.0))
            chit_b = chi(np.where(offband, kn / japm ** p.eps_nf, 0.0))
        one_minus = np.where(offband, 1.0 - chi_b, 0.0)
        dk = np.zeros_like(pair)
        live = one_minus != 0.0
        dk[live] = one_minus[live] / (2.0 * pair[live])
        gsamples = -(1.0 / 1j) * dk * chit_b * samples
        G11 = et * gsamples * mask
        G11 = _hermitize(G11)          # g real <=> band matrix Hermitian
        Phi11 = expm(1j * G11)
        Phi = np.zeros((2 * n, 2 * n), dtype=complex)
        Phi[:n, :n] = Phi11
        Phi[n:, n:] = np.conj(Phi11[::-1, ::-1])
        new = state.copy()
        new.dense = _conjugate_dense(state, Phi)
        nf_after, _ = _nf_violation(new, p, s)
        report = StepReport("nf", {"nf_violation": nf_before},
                            {"nf_violation": nf_after},
                            worst_offender=worst,
                            extras={"generator_norm": float(np.abs(G11).max())})
        return new, report

    if kind == "birkhoff":
        w_in = np.concatenate([g.jap_table(s)] * 2)
        w_out = np.concatenate([g.jap_table(s + 1.0)] * 2)
        R_dense = state.lin_family.at(state.U).full()
        before = {"linear_remainder_norm": weighted_opnorm(R_dense, w_out, w_in)}
        F = birkhoff_matrix_solve(state.lin_family)
        F_dense = F.at(state.U).full()
        Phi = expm(F_dense)
        L = iE_lambda(g)
        dt_term = -F.at(L.apply(state.U)).full()
        new = state.copy()
        new.dense = _conjugate_dense(state, Phi, extra=dt_term)
        # exact kernel-level defect family (machine zero)
        from .small_divisors import SIGN_TABLE, _divisor_table
        defect = {}
        for (block, sgn), r in state.lin_family.tables().items():
            sigma, sigma_p = SIGN_TABLE[(block, sgn)]
            phi = _divisor_table(g, sigma, sigma_p)
            defect[(block, sgn)] = 1j * phi * F.tables()[(block, sgn)] + r
        new.lin_family = KernelFamily(g, defect[(1, +1)], defect[(1, -1)],
                                      defect[(2, +1)], defect[(2, -1)])
        after_dense = new.lin_family.at(state.U).full()
        report = StepReport(
            "birkhoff", before,
            {"linear_remainder_norm": weighted_opnorm(after_dense, w_out, w_in)},
            extras={"flow_norm": float(np.abs(F_dense).max())},
        )
        return new, report

    raise ValueError(f"unknown step kind {kind!r}")
