"""Split-step time integration and the quadratic-lifespan experiment.

One step is Strang splitting: half-step of the exact linear phase
uhat -> exp(-i Lambda(xi) dt/2) uhat, one classical RK4 substep of the
nonlinear part du/dt = -i Q(u, ubar), then another linear half-step.
The linear dynamics is treated exactly, so the scheme is second order with
no stiffness constraint from the dispersion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import CubicDensity, hamiltonian
from .grid import Field, GridSpec, sobolev_norm


class BlowupError(RuntimeError):
    """Non-finite values appeared during a step."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"numerical blowup at t = {t:g}")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_max: float
    rho: float = 4.0
    s_high: tuple[float, ...] = (8.0,)
    blowup_factor: float = 2.0
    record_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.rho >= 1.0:
            raise ValueError("rho must be >= 1")
        if any(s < self.rho for s in self.s_high):
            raise ValueError("every high index must be >= rho")
        if not self.blowup_factor > 1.0:
            raise ValueError("blowup_factor must exceed 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        object.__setattr__(self, "s_high", tuple(float(s) for s in self.s_high))


@dataclass
class Trajectory:
    times: list[float]
    low_norms: list[float]
    high_norms: dict[float, list[float]]
    hamiltonian: list[float]
    exit: str                      # "completed" | "norm_exceeded"
    t_star: float | None = None   # first-crossing time when norm_exceeded
    eps: float = 0.0

    def to_csv(self, path) -> None:
        cols = ["t", "low_norm"] + [f"high_norm_s{s:g}" for s in self.high_norms] + ["H"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.times):
                row = [repr(t), repr(self.low_norms[i])]
                row += [repr(self.high_norms[s][i]) for s in self.high_norms]
                row.append(repr(self.hamiltonian[i]))
                fh.write(",".join(row) + "\n")


class _Stepper:
    """Precomputed Strang stepper for a fixed density and dt."""

    def __init__(self, f: CubicDensity, grid: GridSpec, dt: float):
        f.validate()
        self.f = f
        self.grid = grid
        self.dt = dt
        self.half_phase = np.exp(-0.5j * dt * grid.lambda_table()).reshape(grid.shape)
        # precompute the Wirtinger derivative polynomials and multiplier tables
        self.W0 = f.wirtinger(0, True)
        self.Wj = [f.wirtinger(j, True) for j in range(1, grid.d + 1)]
        self.ik = [(1j * grid.modes[:, ax].astype(float)).reshape(grid.shape)
                   for ax in range(grid.d)]
        d, side = grid.d, grid.side
        self.M = 2 * side
        self.norm_fwd = (2.0 * np.pi) ** (-d / 2.0) * self.M ** d
        self.axes = tuple(range(d))

    def _to_samples(self, coeffs: np.ndarray) -> np.ndarray:
        g = self.grid
        buf = np.zeros((self.M,) * g.d, dtype=complex)
        ctr = tuple(slice(0, g.side) for _ in range(g.d))
        buf[ctr] = coeffs
        buf = np.roll(buf, shift=[-g.K] * g.d, axis=self.axes)
        return np.fft.ifftn(buf) * self.norm_fwd

    def _from_samples(self, samples: np.ndarray) -> np.ndarray:
        g = self.grid
        spec = np.fft.fftn(samples) / self.norm_fwd
        rolled = np.roll(spec, shift=[g.K] * g.d, axis=self.axes)
        ctr = tuple(slice(0, g.side) for _ in range(g.d))
        return rolled[ctr]

    def _rhs(self, coeffs: np.ndarray) -> np.ndarray:
        """-i Q(u, ubar) in coefficient space (dealiased, projected)."""
        g = self.grid
        ys = [self._to_samples(coeffs)]
        for ax in range(g.d):
            ys.append(self._to_samples(self.ik[ax] * coeffs))
        ybars = [np.conj(v) for v in ys]
        out = self._from_samples(self.W0.eval_on(ys, ybars))
        for j in range(1, g.d + 1):
            if not self.Wj[j - 1].monomials:
                continue
            out = out - self.ik[j - 1] * self._from_samples(
                self.Wj[j - 1].eval_on(ys, ybars))
        return -1j * out

    def step(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        dt = self.dt
        c = self.half_phase * coeffs
        k1 = self._rhs(c)
        k2 = self._rhs(c + 0.5 * dt * k1)
        k3 = self._rhs(c + 0.5 * dt * k2)
        k4 = self._rhs(c + dt * k3)
        c = c + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        c = self.half_phase * c
        if not np.all(np.isfinite(c.view(float))):
            raise BlowupError(t + dt)
        return c


def step(u: Field, f: CubicDensity, dt: float) -> Field:
    """One Strang step; raises :class:`BlowupError` on non-finite output."""
    st = _Stepper(f, u.grid, dt)
    return Field(u.grid, st.step(u.coeffs, 0.0))


def run(u0: Field, f: CubicDensity, cfg: SimConfig) -> Trajectory:
    """Integrate until t_max or until the low norm exceeds
    blowup_factor * eps (eps = the initial low norm); norms are recorded
    every record_stride steps, the first crossing located by linear
    interpolation between recorded samples.  Numerical blowup exits as
    norm_exceeded at the blowup time (a non-finite norm certainly crossed
    the threshold)."""
    g = u0.grid
    stepper = _Stepper(f, g, cfg.dt)
    eps = sobolev_norm(u0, cfg.rho)
    threshold = cfg.blowup_factor * eps

    times: list[float] = []
    lows: list[float] = []
    highs: dict[float, list[float]] = {s: [] for s in cfg.s_high}
    hams: list[float] = []

    def record(t: float, coeffs: np.ndarray) -> float:
        u = Field(g, coeffs)
        times.append(t)
        low = sobolev_norm(u, cfg.rho)
        lows.append(low)
        for s in cfg.s_high:
            highs[s].append(sobolev_norm(u, s))
        hams.append(hamiltonian(f, u))
        return low

    coeffs = u0.coeffs.copy()
    t = 0.0
    prev_t, prev_low = 0.0, record(0.0, coeffs)
    nsteps = int(round(cfg.t_max / cfg.dt))
    for istep in range(1, nsteps + 1):
        try:
            coeffs = stepper.step(coeffs, t)
        except BlowupError as err:
            return Trajectory(times, lows, highs, hams, "norm_exceeded",
                              t_star=err.t, eps=eps)
        t = istep * cfg.dt
        if istep % cfg.record_stride == 0 or istep == nsteps:
            low = record(t, coeffs)
            if low > threshold and eps > 0.0:
                frac = (threshold - prev_low) / max(low - prev_low, 1e-300)
                t_star = prev_t + frac * (t - prev_t)
                return Trajectory(times, lows, highs, hams, "norm_exceeded",
                                  t_star=t_star, eps=eps)
            prev_t, prev_low = t, low
    return Trajectory(times, lows, highs, hams, "completed", eps=eps)


def initial_datum(grid: GridSpec, rho: float, eps: float, seed: int) -> Field:
    """Band-limited random-phase initial data: support |xi_i| <= K/4,
    amplitudes <xi>^(-rho - 1), rescaled to || u0 ||_{H^rho} = eps."""
    rng = np.random.default_rng(seed)
    band = max(1, grid.K // 4)
    mods = grid.modes
    mask = np.all(np.abs(mods) <= band, axis=1)
    amp = grid.jap_table(-(rho + 1.0)) * mask
    phases = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=grid.nmodes))
    u = Field.from_flat(grid, amp * phases)
    nrm = sobolev_norm(u, rho)
    return (eps / nrm) * u


@dataclass
class LifespanRow:
    eps: float
    seed: int
    t_star: float
    censored: bool


@dataclass
class LifespanTable:
    rows: list[LifespanRow]
    ratios: list[tuple[float, int, float]]   # (eps, seed, T*(eps)/T*(2 eps))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("eps,T_star,censored\n")
            for r in self.rows:
                fh.write(f"{r.eps!r},{r.t_star!r},{int(r.censored)}\n")


def lifespan_study(f: CubicDensity, grid: GridSpec, cfg: SimConfig,
                   eps_list: list[float], seeds: list[int],
                   horizon_factor: float = 0.1,
                   threads: int = 1) -> LifespanTable:
    """For each (eps, seed): run from seeded data until min(t_max,
    horizon_factor * eps^-2); censored rows carry T* = horizon.  Ratios
    T*(eps) / T*(2 eps) are formed per seed from adjacent eps pairs and
    never use censored entries."""
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    tasks = [(eps, seed) for eps in eps_list for seed in seeds]

    def one(task):
        eps, seed = task
        horizon = horizon_factor * eps ** (-2.0)
        if cfg.t_max > 0.0:
            horizon = min(horizon, cfg.t_max)
        local = SimConfig(dt=cfg.dt, t_max=horizon, rho=cfg.rho,
                          s_high=cfg.s_high, blowup_factor=cfg.blowup_factor,
                          record_stride=cfg.record_stride)
        u0 = initial_datum(grid, cfg.rho, eps, seed)
        traj = run(u0, f, local)
        censored = traj.exit == "completed"
        t_star = horizon if censored else float(traj.t_star)
        return LifespanRow(eps, seed, t_star, censored)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, tasks))
    else:
        rows = [one(t) for t in tasks]

    by_key = {(r.eps, r.seed): r for r in rows}
    ratios = []
    for hi, lo in zip(eps_list, eps_list[1:]):
        if abs(hi - 2.0 * lo) > 1e-12 * hi:
            continue
        for seed in seeds:
            a, b = by_key[(lo, seed)], by_key[(hi, seed)]
            if a.censored or b.censored:
                continue
            ratios.append((lo, seed, a.t_star / b.t_star))
    return LifespanTable(rows, ratios)
