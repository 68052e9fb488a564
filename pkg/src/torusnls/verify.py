"""Self-test suite for the operator calculus: structure residuals with
explicit thresholds, runnable at any grid size."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .grid import GridSpec, PairField, random_band_field
from .normal_form import NFParams, decompose, homological_g
from .paradiff import (E_matrix, LinOp, PairLinOp, Symbol, eta, flow,
                       flow_offdiag, flow_smoothing, composition_residual,
                       is_selfadjoint, quantize_bw, symplectic_residual,
                       weighted_opnorm)
from .small_divisors import (KernelFamily, birkhoff_matrix_solve,
                             matrix_homological_residual)


def _random_even_symbol(grid: GridSpec, rng, scale: float = 0.1) -> Symbol:
    n = grid.nmodes
    raw = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return Symbol(grid, 0.0, 0.5 * (raw + raw[:, ::-1]))


def _random_real_symbol(grid: GridSpec, rng, scale: float = 0.3) -> Symbol:
    n = grid.nmodes
    raw = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return Symbol(grid, 0.0, raw + np.conj(raw[::-1, :]))


def _random_hamiltonian_family(grid: GridSpec, rng, scale: float = 0.05) -> PairLinOp:
    n = grid.nmodes
    S11 = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    S11 = 0.5 * (S11 + S11.conj().T)
    S12 = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    S12 = 0.5 * (S12 + S12[::-1, ::-1].T)
    S = PairLinOp(LinOp(grid, S11), LinOp(grid, S12))
    return PairLinOp.from_full(grid, 1j * E_matrix(grid) @ S.full())


def band_test_pair(grid: GridSpec) -> tuple[Symbol, Symbol]:
    """The fixed band-limited pair for composition-remainder monotonicity:
    real first-order symbols with x-band 1, affine in xi so the fiber
    evaluation is exact everywhere."""
    n = grid.nmodes
    z = (n - 1) // 2
    c0a = np.zeros(n, dtype=complex)
    c1a = np.zeros((grid.d, n), dtype=complex)
    c1a[0, z] = 1.0
    c1a[0, z + 1] = 0.25
    c1a[0, z - 1] = 0.25
    a = Symbol.from_affine(grid, c0a, c1a, order=1.0)
    c0b = np.zeros(n, dtype=complex)
    c0b[z + 1] = 0.15
    c0b[z - 1] = 0.15
    c1b = np.zeros((grid.d, n), dtype=complex)
    c1b[0, z] = 1.0
    c1b[0, z + 1] = -0.25j
    c1b[0, z - 1] = 0.25j
    b = Symbol.from_affine(grid, c0b, c1b, order=1.0)
    return a, b


def calculus_checks(grid: GridSpec, seed: int = 0,
                    eta_override: Callable | None = None) -> list[dict]:
    """Run the paradifferential property suite; returns one record per check
    with fields name/residual/threshold/passed."""
    rng = np.random.default_rng(seed)
    checks: list[dict] = []

    def add(name: str, residual: float, threshold: float):
        checks.append({
            "name": name,
            "residual": float(residual),
            "threshold": float(threshold),
            "passed": bool(residual <= threshold),
        })

    cut = eta_override or eta
    eta_defect = max(abs(cut(1.0) - 1.0), abs(cut(2.0)),
                     0.0 if cut(1.3) >= cut(1.5) else 1.0)
    add("eta_contract", eta_defect, 0.0)

    lam = Symbol.lambda_symbol(grid)
    A = quantize_bw(lam, eta_override)
    add("multiplier_diagonal",
        np.abs(A.matrix - np.diag(grid.lambda_table())).max(), 1e-13)

    worst = 0.0
    for _ in range(20):
        a = _random_real_symbol(grid, rng)
        worst = max(worst, is_selfadjoint(quantize_bw(a, eta_override)))
    add("selfadjoint_real_symbols", worst, 1e-12)

    p1 = Symbol.from_multiplier(grid, lambda pts: 1.0 / (1.0 + np.sum(pts ** 2, axis=1)))
    p2 = Symbol.from_multiplier(grid, lambda pts: np.cos(0.1 * pts[:, 0]))
    add("composition_multiplier", composition_residual(p1, p2, 2), 1e-13)

    b1, b2 = band_test_pair(grid)
    # the ring starts at |xi| = 4 so every cutoff sits on its plateau there
    ring = (4, max(4, grid.K // 2))
    resids = [composition_residual(b1, b2, rho, ring=ring) for rho in (1, 2, 3)]
    floor = 1e-12 * max(1.0, resids[0])
    mono = max(0.0, resids[1] - resids[0] - floor, resids[2] - resids[1] - floor)
    add("composition_monotone", mono, 0.0)

    gre = _random_real_symbol(grid, rng, scale=0.2)
    Phi = flow(gre)
    add("flow_unitarity",
        np.abs(Phi.matrix.conj().T @ Phi.matrix - np.eye(grid.nmodes)).max(), 1e-10)

    psi = _random_even_symbol(grid, rng)
    add("flow_offdiag_symplectic", symplectic_residual(flow_offdiag(psi)), 1e-10)

    F = _random_hamiltonian_family(grid, rng)
    add("flow_smoothing_symplectic", symplectic_residual(flow_smoothing(F)), 1e-10)

    p = NFParams.defaults(grid.d)
    n = grid.nmodes
    raw = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    sym = Symbol(grid, 0.0, raw)
    avg, nr, res, sm = decompose(sym, p)
    recon = avg.values + nr.values + res.values + sm.values
    add("decompose_reconstruction",
        np.abs(recon - sym.values).max() / np.abs(sym.values).max(), 1e-14)

    _, resid = homological_g(sym, p)
    add("homological_identity", resid / max(np.abs(sym.values).max(), 1e-300), 1e-12)

    fam = KernelFamily(grid, *[
        rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        for _ in range(4)])
    try:
        Ffam = birkhoff_matrix_solve(fam)
        u = random_band_field(grid, rng, band=max(1, grid.K // 2))
        resid = matrix_homological_residual(fam, Ffam, PairField.from_u(u))
        add("birkhoff_identity", resid, 1e-12)
    except ValueError as exc:
        checks.append({"name": "birkhoff_identity", "residual": float("inf"),
                       "threshold": 1e-12, "passed": False, "error": str(exc)})
    return checks
