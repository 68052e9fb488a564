"""Spectral toolkit for derivative Schrodinger equations on generic tori.

Layers, bottom up:

- :mod:`torusnls.grid` -- truncated Fourier lattice, fields, Sobolev norms;
- :mod:`torusnls.density` -- cubic Hamiltonian densities, the nonlinearity,
  and its paralinearization;
- :mod:`torusnls.paradiff` -- symbols, Bony-Weyl quantization, symbolic
  calculus, operator flows and structure residuals;
- :mod:`torusnls.normal_form` -- cutoff decomposition, homological solutions,
  one-step conjugation drivers;
- :mod:`torusnls.small_divisors` -- three-wave interactions, Diophantine
  scans, Birkhoff homological solves;
- :mod:`torusnls.evolution` -- split-step time integration and the
  quadratic-lifespan experiment;
- :mod:`torusnls.cli` -- configuration-driven commands emitting CSV/JSON
  artifacts (and, via ``report``, figures).
"""

from .grid import Field, GridSpec, PairField, sobolev_norm

__all__ = ["GridSpec", "Field", "PairField", "sobolev_norm"]
__version__ = "0.1.0"
