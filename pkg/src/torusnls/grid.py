"""Truncated Fourier lattice on the d-torus.

Everything downstream lives on the mode box ``{xi in Z^d : |xi_i| <= K}``.
Coefficient tables follow the symmetric Fourier convention

    u(x) = (2*pi)^(-d/2) * sum_n uhat(n) e^(i n.x),

so Parseval is exact: ``int |u|^2 dx = sum |uhat|^2``.  Modes produced by
nonlinear operations that fall outside the box are discarded (Galerkin
projection); that projection is the sole truncation error source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


def _as_metric(G, d: int) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape == () and d == 1:
        G = G.reshape(1, 1)
    if G.shape != (d, d):
        raise ValueError(f"metric must be {d}x{d}, got shape {G.shape}")
    return G


@dataclass(frozen=True)
class GridSpec:
    """Discrete universe: dimension, truncation, metric, mass, cutoff scale.

    ``eps_q`` is the scale parameter of the quantization cutoff; the kernel
    keeps the band |j-k| <~ eps_q * <j+k>.
    """

    d: int
    K: int
    G: np.ndarray
    m: float
    eps_q: float = 0.25

    def __post_init__(self):
        if self.d < 1 or self.d > 3:
            raise ValueError("dimension d must be 1, 2 or 3")
        if self.K < 1:
            raise ValueError("truncation K must be >= 1")
        G = _as_metric(self.G, self.d)
        if not np.array_equal(G, G.T):
            raise ValueError("metric G must be exactly symmetric")
        evals = np.linalg.eigvalsh(G)
        if evals.min() <= 0.0:
            raise ValueError(f"metric G must be positive definite (min eig {evals.min():g})")
        object.__setattr__(self, "G", G)
        if not self.m > 0.0:
            raise ValueError("mass m must be positive")
        if not (0.0 < self.eps_q < 0.5):
            raise ValueError("eps_q must lie in (0, 1/2)")

    # ------------------------------------------------------------------ shape
    @property
    def side(self) -> int:
        return 2 * self.K + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def nmodes(self) -> int:
        return self.side ** self.d

    @property
    def modes(self) -> np.ndarray:
        """All lattice points of the box, shape (nmodes, d), C-order flattened."""
        axes = [np.arange(-self.K, self.K + 1)] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def min_metric_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.G).min())

    def x_samples(self, oversample: int = 1) -> list[np.ndarray]:
        """Per-axis uniform sample points x_m = 2 pi m / M."""
        M = oversample * self.side
        pts = TWO_PI * np.arange(M) / M
        return [pts] * self.d

    # --------------------------------------------------------------- symbols
    def lambda_of(self, xi) -> np.ndarray:
        """Dispersion Lambda(xi) = G xi . xi + m; xi may be any integer or
        half-integer vector(s), not restricted to the box."""
        xi = np.asarray(xi, dtype=float)
        scalar = xi.ndim == 1
        pts = np.atleast_2d(xi)
        vals = np.einsum("ni,ij,nj->n", pts, self.G, pts) + self.m
        return float(vals[0]) if scalar else vals.reshape(xi.shape[:-1])

    def lambda_table(self) -> np.ndarray:
        """Lambda on the full box, flat order."""
        return self.lambda_of(self.modes)

    def jap_table(self, s: float = 1.0) -> np.ndarray:
        """<xi>^s = (1+|xi|^2)^(s/2) on the box (Euclidean norm, even if G != I)."""
        mods = self.modes
        return (1.0 + np.sum(mods.astype(float) ** 2, axis=1)) ** (s / 2.0)

    # ----------------------------------------------------------------- config
    def to_config(self) -> dict[str, str]:
        flat = ",".join(repr(float(v)) for v in self.G.ravel())
        return {
            "grid.d": str(self.d),
            "grid.K": str(self.K),
            "grid.G": flat,
            "grid.m": repr(float(self.m)),
            "grid.eps_q": repr(float(self.eps_q)),
        }

    @staticmethod
    def from_config(cfg: dict[str, str]) -> "GridSpec":
        d = int(cfg["grid.d"])
        K = int(cfg["grid.K"])
        raw = [float(v) for v in cfg["grid.G"].split(",")]
        if len(raw) != d * d:
            raise ValueError(f"grid.G needs {d * d} entries, got {len(raw)}")
        G = np.array(raw, dtype=float).reshape(d, d)
        return GridSpec(
            d=d, K=K, G=G, m=float(cfg["grid.m"]),
            eps_q=float(cfg.get("grid.eps_q", "0.25")),
        )


def lambda_of(grid: GridSpec, xi) -> float:
    return grid.lambda_of(xi)


# ============================================================== field values
@dataclass
class Field:
    """Complex Fourier coefficients on the full box.

    ``coeffs`` has shape (2K+1,)*d in centered layout: index i along an axis
    holds the mode i - K.  Missing modes are explicit zeros by construction.
    """

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coefficient table must have shape {self.grid.shape}, got {self.coeffs.shape}"
            )

    @staticmethod
    def zero(grid: GridSpec) -> "Field":
        return Field(grid, np.zeros(grid.shape, dtype=complex))

    @staticmethod
    def single_mode(grid: GridSpec, n, amplitude: complex = 1.0) -> "Field":
        f = Field.zero(grid)
        f[tuple(np.atleast_1d(n))] = amplitude
        return f

    def copy(self) -> "Field":
        return Field(self.grid, self.coeffs.copy())

    # centered-mode indexing: f[n] with n a lattice tuple
    def _slot(self, n) -> tuple[int, ...]:
        n = tuple(int(v) for v in np.atleast_1d(n))
        if len(n) != self.grid.d or any(abs(v) > self.grid.K for v in n):
            raise KeyError(f"mode {n} outside the box")
        return tuple(v + self.grid.K for v in n)

    def __getitem__(self, n) -> complex:
        return self.coeffs[self._slot(n)]

    def __setitem__(self, n, value):
        self.coeffs[self._slot(n)] = value

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()

    @staticmethod
    def from_flat(grid: GridSpec, vec: np.ndarray) -> "Field":
        return Field(grid, np.asarray(vec, dtype=complex).reshape(grid.shape))

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "Field":
        return Field(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def conjugate_field(self) -> "Field":
        """Coefficients of the complex conjugate function: vhat(k) = conj(uhat(-k))."""
        rev = tuple(slice(None, None, -1) for _ in range(self.grid.d))
        return Field(self.grid, np.conj(self.coeffs[rev]))


def conj_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Coefficient table of the conjugate function (centered layout)."""
    rev = tuple(slice(None, None, -1) for _ in range(coeffs.ndim))
    return np.conj(coeffs[rev])


@dataclass
class PairField:
    """U = (u, ubar) with the reality coupling ubar_hat(k) = conj(u_hat(-k))."""

    u: Field
    ubar: Field

    def __post_init__(self):
        defect = reality_defect(self)
        scale = max(np.abs(self.u.coeffs).max(), 1e-300)
        if defect > 1e-10 * scale:
            raise ValueError(f"reality coupling violated: defect {defect:g}")

    @staticmethod
    def from_u(u: Field) -> "PairField":
        return PairField(u, u.conjugate_field())

    @property
    def grid(self) -> GridSpec:
        return self.u.grid


def reality_defect(U: PairField) -> float:
    return float(np.abs(U.ubar.coeffs - U.u.conjugate_field().coeffs).max())


# ================================================================ transforms
def samples_from_field(f: Field, oversample: int = 1) -> np.ndarray:
    """Point values of u on the uniform grid with M = oversample*(2K+1)
    points per axis.  Exact for any oversample >= 1 (band-limited data)."""
    g = f.grid
    M = oversample * g.side
    buf = np.zeros((M,) * g.d, dtype=complex)
    ctr = tuple(slice(0, g.side) for _ in range(g.d))
    shifted = np.zeros_like(buf)
    shifted[ctr] = f.coeffs
    shifted = np.roll(shifted, shift=[-g.K] * g.d, axis=tuple(range(g.d)))
    return np.fft.ifftn(shifted) * (M ** g.d) * (TWO_PI ** (-g.d / 2.0))


def field_from_samples(grid: GridSpec, samples: np.ndarray) -> Field:
    """Inverse of :func:`samples_from_field`; modes outside the box are
    discarded (projection).  Sample count must be a multiple of (2K+1)^d."""
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != grid.d or any(n % grid.side != 0 for n in samples.shape) \
            or len(set(samples.shape)) != 1:
        raise ValueError(
            f"sample array must be cubic with side a multiple of {grid.side}, got {samples.shape}"
        )
    M = samples.shape[0]
    spec = np.fft.fftn(samples) * (TWO_PI ** (grid.d / 2.0)) / (M ** grid.d)
    rolled = np.roll(spec, shift=[grid.K] * grid.d, axis=tuple(range(grid.d)))
    ctr = tuple(slice(0, grid.side) for _ in range(grid.d))
    return Field(grid, rolled[ctr])


def apply_multiplier(f: Field, phi: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> Field:
    """uhat(xi) -> phi(xi) uhat(xi).  ``phi`` is a callable on (n, d) mode
    arrays or a precomputed flat table."""
    g = f.grid
    tab = phi if isinstance(phi, np.ndarray) else np.asarray(phi(g.modes), dtype=complex)
    return Field(g, (f.flat * tab.reshape(-1)).reshape(g.shape))


def derivative(f: Field, axis: int) -> Field:
    """Spectral d/dx_axis."""
    g = f.grid
    return apply_multiplier(f, 1j * g.modes[:, axis].astype(float))


# ==================================================================== norms
def sobolev_norm(f: Field, s: float) -> float:
    """|| u ||_{H^s} = ( sum <xi>^{2s} |uhat(xi)|^2 )^{1/2}."""
    w = f.grid.jap_table(s)
    return float(np.sqrt(np.sum(w ** 2 * np.abs(f.flat) ** 2)))


def sobolev_weights(grid: GridSpec, s: float) -> np.ndarray:
    return grid.jap_table(s)


# ====================================================================== I/O
def field_to_csv(f: Field, path) -> None:
    g = f.grid
    hdr = ",".join(f"xi_{i + 1}" for i in range(g.d)) + ",re,im"
    with open(path, "w") as fh:
        fh.write(hdr + "\n")
        for mode, c in zip(g.modes, f.flat):
            cols = ",".join(str(int(v)) for v in mode)
            fh.write(f"{cols},{float(c.real)!r},{float(c.imag)!r}\n")


def field_from_csv(grid: GridSpec, path) -> Field:
    f = Field.zero(grid)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != grid.d + 2:
            raise ValueError(f"expected {grid.d + 2} columns, got {len(header)}")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            mode = tuple(int(v) for v in parts[: grid.d])
            f[mode] = complex(float(parts[grid.d]), float(parts[grid.d + 1]))
    return f


def random_band_field(grid: GridSpec, rng: np.random.Generator,
                      band: int | None = None, shape_exp: float = 0.0) -> Field:
    """Random coefficients with random phases on |xi_i| <= band, amplitudes
    shaped <xi>^(-shape_exp).  Used for seeded test data."""
    band = grid.K if band is None else band
    mods = grid.modes
    mask = np.all(np.abs(mods) <= band, axis=1)
    amp = grid.jap_table(-shape_exp) * mask
    phase = rng.uniform(0.0, TWO_PI, size=grid.nmodes)
    mag = rng.uniform(0.5, 1.0, size=grid.nmodes)
    return Field.from_flat(grid, amp * mag * np.exp(1j * phase))
