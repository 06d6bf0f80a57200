"""Exponential-integrator weights for piecewise-linear drivers.

On one step of length ``h`` with a linear driver segment, the first- and
second-order convolution operators act diagonally on mode ``l``:

    w1(lambda, h) = (1/h)   int_0^h exp(-lambda (h - u)) du
    w2(lambda, h) = (1/h^2) int_0^h exp(-lambda (h - u)) u du

Both depend on ``z = lambda h`` only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .spectral import eigenvalues

SERIES_THRESHOLD = 1e-4
SERIES_TERMS = 5

_W1_SERIES = np.array([(-1.0) ** n / factorial(n + 1) for n in range(SERIES_TERMS)])
_W2_SERIES = np.array([(-1.0) ** n / factorial(n + 2) for n in range(SERIES_TERMS)])


def _horner(coeffs, z):
    out = np.zeros_like(z)
    for c in coeffs[::-1]:
        out = out * z + c
    return out


def phi1(z):
    """``(1 - exp(-z)) / z`` with ``phi1(0) = 1``."""
    z = np.asarray(z, dtype=float)
    small = z < SERIES_THRESHOLD
    zs = np.where(small, 1.0, z)
    with np.errstate(under="ignore"):
        closed = -np.expm1(-zs) / zs
    out = np.where(small, _horner(_W1_SERIES, z), closed)
    return out if out.ndim else float(out)


def phi2(z):
    """``(z - 1 + exp(-z)) / z^2`` with ``phi2(0) = 1/2``."""
    z = np.asarray(z, dtype=float)
    small = z < SERIES_THRESHOLD
    zs = np.where(small, 1.0, z)
    with np.errstate(under="ignore"):
        closed = (zs + np.expm1(-zs)) / zs**2
    out = np.where(small, _horner(_W2_SERIES, z), closed)
    return out if out.ndim else float(out)


def weight1(lam, h):
    """First-order weight ``(1 - exp(-lambda h)) / (lambda h)``; 1 at ``lambda = 0``."""
    return phi1(np.asarray(lam, dtype=float) * h)


def weight2(lam, h):
    """Second-order weight ``(1/h^2) int_0^h exp(-lambda (h-u)) u du``."""
    return phi2(np.asarray(lam, dtype=float) * h)


@dataclass(frozen=True)
class KernelWeights:
    """Per-mode step factors for one (step, modes, time scale) triple.

    ``step`` is the effective step ``kappa * h``.
    """

    decay: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    step: float

    @property
    def dim(self) -> int:
        return self.w1.size


@lru_cache(maxsize=64)
def kernel_weights(dim: int, h: float, time_scale: float = 1.0) -> KernelWeights:
    lam = eigenvalues(dim)
    h_eff = time_scale * h
    with np.errstate(under="ignore"):
        decay = np.exp(-lam * h_eff)
    arrays = [decay, np.asarray(weight1(lam, h_eff)), np.asarray(weight2(lam, h_eff))]
    for a in arrays:
        a.setflags(write=False)
    return KernelWeights(*arrays, step=h_eff)
