"""Dirichlet-Laplacian eigenbasis on (0, 1).

Coefficients are always taken with respect to the orthonormal basis
``e_n(xi) = sqrt(2) sin(n pi xi)``, with eigenvalues ``lambda_n = pi^2 n^2``.
Collocation uses the interior grid ``xi_n = n / (N_g + 1)``, ``n = 1..N_g``,
on which the type-I discrete sine transform is exactly orthogonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SpectralState:
    """Coefficients ``(y^1, ..., y^N)`` of a function in the basis ``e_n``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size < 1:
            raise ValueError("SpectralState needs at least one mode")
        if not np.all(np.isfinite(c)):
            raise ValueError("SpectralState coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, dim: int) -> "SpectralState":
        return cls(np.zeros(dim))

    @classmethod
    def basis(cls, n: int, dim: int) -> "SpectralState":
        """The state ``e_n`` in a space of ``dim`` modes (``n`` is 1-based)."""
        c = np.zeros(dim)
        c[n - 1] = 1.0
        return cls(c)

    def padded(self, dim: int) -> "SpectralState":
        """Zero-extend (or truncate) to ``dim`` modes."""
        return SpectralState(resize_modes(self.coeffs, dim))


@dataclass(frozen=True)
class GridFunction:
    """Samples at the interior points ``n / (grid_size + 1)``; zero on the boundary."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise ValueError("GridFunction needs at least one grid point")
        if not np.all(np.isfinite(v)):
            raise ValueError("GridFunction values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.size

    @property
    def points(self) -> np.ndarray:
        return grid_points(self.grid_size)

    @classmethod
    def from_function(cls, func, grid_size: int) -> "GridFunction":
        return cls(func(grid_points(grid_size)))


@dataclass(frozen=True)
class Eigensystem:
    """First ``dim`` Dirichlet eigenvalues, with the semigroup clock scaled by ``time_scale``."""

    dim: int
    time_scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("Eigensystem dim must be >= 1")
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.dim)


def eigenvalues(n: int) -> np.ndarray:
    """``lambda_l = (pi l)^2`` for ``l = 1..n``."""
    return (np.pi * np.arange(1, n + 1, dtype=float)) ** 2


def grid_points(grid_size: int) -> np.ndarray:
    return np.arange(1, grid_size + 1, dtype=float) / (grid_size + 1)


def resize_modes(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad or truncate the last axis of ``coeffs`` to ``dim`` modes."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[-1]
    if n >= dim:
        return coeffs[..., :dim].copy()
    out = np.zeros(coeffs.shape[:-1] + (dim,))
    out[..., :n] = coeffs
    return out


def sobolev_norm(y: SpectralState, kappa: float) -> float:
    """Norm in ``B_kappa``: ``sqrt(sum_n lambda_n^(2 kappa) (y^n)^2)``. Negative kappa allowed."""
    return float(sobolev_norms(y.coeffs, kappa))


def sobolev_norms(coeffs: np.ndarray, kappa: float) -> np.ndarray:
    """Array version of :func:`sobolev_norm` over the last axis."""
    coeffs = np.asarray(coeffs, dtype=float)
    weights = eigenvalues(coeffs.shape[-1]) ** (2.0 * kappa)
    return np.sqrt(np.sum(weights * coeffs**2, axis=-1))


def project(y: SpectralState, n: int) -> SpectralState:
    """Galerkin projection onto the first ``n`` modes; the dimension is kept."""
    if n < 1:
        raise ValueError("projection order must be >= 1")
    c = np.array(y.coeffs)
    c[n:] = 0.0
    return SpectralState(c)


def semigroup_factors(dim: int, t: float, time_scale: float = 1.0) -> np.ndarray:
    """Per-mode factors ``exp(-kappa lambda_l t)``; tiny values flush to 0."""
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    with np.errstate(under="ignore"):
        return np.exp(-time_scale * eigenvalues(dim) * t)


def semigroup_apply(y: SpectralState, t: float, sys: Eigensystem) -> SpectralState:
    """Exact heat flow ``S_t y`` on the clock rescaled by ``sys.time_scale``."""
    return SpectralState(semigroup_factors(y.dim, t, sys.time_scale) * y.coeffs)


def analyze(values: np.ndarray, n_modes: int) -> np.ndarray:
    """Grid samples (last axis, size ``N_g``) to the first ``n_modes`` coefficients.

    ``c_l = (1/(N_g+1)) sum_n g(xi_n) sqrt(2) sin(l pi xi_n)``.
    """
    values = np.asarray(values, dtype=float)
    ng = values.shape[-1]
    if n_modes > ng:
        raise ValueError(f"n_modes={n_modes} exceeds grid_size={ng}; aliasing")
    c = sfft.dst(values, type=1, axis=-1) * (SQRT2 / (2.0 * (ng + 1)))
    return c[..., :n_modes]


def synthesize(coeffs: np.ndarray, grid_size: int) -> np.ndarray:
    """Coefficients (last axis) to samples ``sum_l y^l sqrt(2) sin(l pi xi_n)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if grid_size < coeffs.shape[-1]:
        raise ValueError(f"grid_size={grid_size} smaller than dim={coeffs.shape[-1]}")
    return sfft.dst(resize_modes(coeffs, grid_size), type=1, axis=-1) * (SQRT2 / 2.0)


def grid_to_spectral(g: GridFunction, n_modes: int) -> SpectralState:
    return SpectralState(analyze(g.values, n_modes))


def spectral_to_grid(y: SpectralState, grid_size: int) -> GridFunction:
    return GridFunction(synthesize(y.coeffs, grid_size))


def evaluate(coeffs: np.ndarray, xi) -> np.ndarray:
    """Evaluate the expansion at arbitrary points ``xi`` (direct sum, not FFT)."""
    coeffs = np.asarray(coeffs, dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    modes = np.arange(1, coeffs.shape[-1] + 1)
    basis = SQRT2 * np.sin(np.pi * np.outer(modes, xi))
    return coeffs @ basis


def sine_series_state(sine_coeffs, dim: int) -> SpectralState:
    """State for ``sum_n a_n sin(n pi xi)`` given plain-sine amplitudes ``a_n``.

    Converts to the orthonormal basis (divide by sqrt 2).
    """
    a = np.asarray(sine_coeffs, dtype=float) / SQRT2
    return SpectralState(resize_modes(a, dim))


def default_initial_condition(dim: int) -> SpectralState:
    """``psi(xi) = sin(pi xi)/2 + 3 sin(3 pi xi)/5`` truncated to ``dim`` modes."""
    return sine_series_state([0.5, 0.0, 0.6], dim)


def regularization_constant(alpha: float, kappa: float, time_scale: float = 1.0) -> float:
    """Smallest ``c`` with ``||S_t y||_{B_alpha} <= c t^{-(alpha-kappa)} ||y||_{B_kappa}``.

    Per mode this is ``sup_{lam>0} lam^r exp(-time_scale lam t) = (r / (e time_scale t))^r``
    with ``r = alpha - kappa``.
    """
    r = alpha - kappa
    if r <= 0:
        return 1.0
    return (r / np.e) ** r * time_scale ** (-r)
