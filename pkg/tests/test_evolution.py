import numpy as np
import pytest

from torusnls.density import CubicDensity, canonical_density, hamiltonian
from torusnls.evolution import (SimConfig, initial_datum, lifespan_study, run,
                                step)
from torusnls.grid import Field, GridSpec, PairField, sobolev_norm


@pytest.fixture(scope="module")
def grid():
    return GridSpec(d=1, K=32, G=np.eye(1), m=1.0)


def test_simconfig_validation():
    SimConfig(dt=1e-3, t_max=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, t_max=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, t_max=1.0, rho=0.5)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, t_max=1.0, rho=4.0, s_high=(2.0,))
    with pytest.raises(ValueError):
        SimConfig(dt=1e-3, t_max=1.0, blowup_factor=1.0)


def test_linear_step_exact_phase(grid):
    fz = CubicDensity(1, [])
    u = Field.single_mode(grid, 5, 1.0)
    v = step(u, fz, 0.01)
    assert v[(5,)] == pytest.approx(np.exp(-1j * grid.lambda_of(np.array([5])) * 0.01),
                                    rel=1e-14)


def test_linear_norm_preserved(grid):
    fz = CubicDensity(1, [])
    u0 = initial_datum(grid, 4.0, 0.1, seed=1)
    cfg = SimConfig(dt=1e-2, t_max=1.0, rho=4.0, s_high=(8.0,), record_stride=10)
    traj = run(u0, fz, cfg)
    assert traj.exit == "completed"
    for s_norms in [traj.low_norms] + list(traj.high_norms.values()):
        assert max(s_norms) - min(s_norms) <= 1e-12 * max(s_norms)


def test_self_convergence_order(grid):
    from torusnls.evolution import _Stepper
    f0 = canonical_density(1)
    u0 = initial_datum(grid, 4.0, 0.05, seed=7)
    T = 0.5

    def integrate(dt):
        st = _Stepper(f0, grid, dt)
        c = u0.coeffs.copy()
        for i in range(int(round(T / dt))):
            c = st.step(c, i * dt)
        return c

    a, b, c = integrate(2e-3), integrate(1e-3), integrate(5e-4)
    ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
    assert 3.2 <= ratio <= 4.8   # second order: 4 +- 20%


def test_hamiltonian_drift(grid):
    f0 = canonical_density(1)
    u0 = initial_datum(grid, 4.0, 0.05, seed=3)
    cfg = SimConfig(dt=1e-3, t_max=1.0, rho=4.0, s_high=(8.0,), record_stride=100)
    traj = run(u0, f0, cfg)
    H0 = traj.hamiltonian[0]
    drift = max(abs(h - H0) for h in traj.hamiltonian) / abs(H0)
    assert drift <= 1e-6


def test_hamiltonian_drift_scales_dt2(grid):
    f0 = canonical_density(1)
    u0 = initial_datum(grid, 4.0, 0.1, seed=5)

    def drift(dt):
        cfg = SimConfig(dt=dt, t_max=0.25, rho=4.0, s_high=(8.0,),
                        record_stride=max(1, int(round(0.25 / dt))))
        traj = run(u0, f0, cfg)
        H0 = traj.hamiltonian[0]
        return max(abs(h - H0) for h in traj.hamiltonian) / abs(H0)

    d1, d2, d4 = drift(4e-3), drift(2e-3), drift(1e-3)
    assert d1 / d2 == pytest.approx(4.0, rel=0.35)
    assert d2 / d4 == pytest.approx(4.0, rel=0.35)


def test_reality_preserved(grid):
    f0 = canonical_density(1)
    u0 = initial_datum(grid, 4.0, 0.05, seed=9)
    u1 = step(u0, f0, 1e-3)
    PairField.from_u(u1)   # construction enforces the coupling invariant


def test_initial_datum(grid):
    u0 = initial_datum(grid, 4.0, 0.05, seed=11)
    assert sobolev_norm(u0, 4.0) == pytest.approx(0.05, rel=1e-12)
    band = grid.K // 4
    outside = np.abs(grid.modes).max(axis=1) > band
    assert np.abs(u0.flat[outside]).max() == 0.0


def test_run_crossing_interpolation(grid):
    # force an early exit with a blowup factor barely above 1
    f0 = canonical_density(1)
    u0 = initial_datum(grid, 4.0, 0.3, seed=13)
    cfg = SimConfig(dt=1e-3, t_max=5.0, rho=4.0, s_high=(8.0,),
                    blowup_factor=1.0 + 1e-6, record_stride=5)
    traj = run(u0, f0, cfg)
    if traj.exit == "norm_exceeded":
        assert traj.t_star is not None
        assert 0.0 <= traj.t_star <= traj.times[-1] + cfg.dt
    else:
        assert max(traj.low_norms) <= cfg.blowup_factor * traj.eps * (1 + 1e-12)


def test_run_reproducible(grid):
    f0 = canonical_density(1)
    cfg = SimConfig(dt=2e-3, t_max=0.2, rho=4.0, s_high=(8.0,), record_stride=10)
    t1 = run(initial_datum(grid, 4.0, 0.05, seed=21), f0, cfg)
    t2 = run(initial_datum(grid, 4.0, 0.05, seed=21), f0, cfg)
    assert t1.low_norms == t2.low_norms
    assert t1.hamiltonian == t2.hamiltonian


def test_lifespan_study_censoring(grid):
    fz = CubicDensity(1, [])
    cfg = SimConfig(dt=2e-3, t_max=0.0, rho=4.0, s_high=(8.0,), record_stride=20)
    tab = lifespan_study(fz, grid, cfg, [0.2, 0.1], [0], horizon_factor=0.01)
    assert all(r.censored for r in tab.rows)
    assert tab.ratios == []   # censored entries never enter ratios
    with pytest.raises(ValueError):
        lifespan_study(fz, grid, cfg, [0.1, 0.2], [0])


def test_step_d2():
    g2 = GridSpec(d=2, K=6, G=np.array([[1.2, 0.1], [0.1, 0.9]]), m=0.7)
    f0 = canonical_density(2)
    u0 = initial_datum(g2, 4.0, 0.05, seed=4)
    v = step(u0, f0, 1e-3)
    assert np.all(np.isfinite(v.coeffs.view(float)))
    # linear part still exact in d=2
    fz = CubicDensity(2, [])
    um = Field.single_mode(g2, (2, -1), 1.0)
    w = step(um, fz, 0.02)
    assert w[(2, -1)] == pytest.approx(
        np.exp(-1j * g2.lambda_of(np.array([2, -1])) * 0.02), rel=1e-13)


def test_trajectory_csv(tmp_path, grid):
    f0 = canonical_density(1)
    cfg = SimConfig(dt=2e-3, t_max=0.1, rho=4.0, s_high=(6.0, 8.0), record_stride=10)
    traj = run(initial_datum(grid, 4.0, 0.05, seed=2), f0, cfg)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,low_norm,high_norm_s6,high_norm_s8,H"
    assert len(lines) == 1 + len(traj.times)
