"""Spectral Euler and Milstein iterations for the rough heat equation.

Both schemes advance the coefficient vector ``Y`` mode by mode:

    Y_{k+1} = e^{-kappa lam h} Y_k
              + w1 * sum_i dx^i <f_i(Y_k), e_l>
              + w2 * sum_ij dx^i dx^j <f_i'(Y_k) . P_N f_j(Y_k), e_l>   (Milstein only)

with ``w1``, ``w2`` from :mod:`roughheat.kernels`. Inner products are
computed by collocation on the interior sine grid.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spectral
from .driver import DriverPath
from .kernels import kernel_weights
from .spectral import SpectralState

BLOWUP_LIMIT = 1e150


class RegularityWarning(UserWarning):
    """Parameters lie outside the window where convergence is proven."""


class NonFiniteError(ArithmeticError):
    def __init__(self, step: int, max_coeff: float):
        super().__init__(f"scheme blew up at step {step} (max |coeff| = {max_coeff:.3e})")
        self.step = step
        self.max_coeff = max_coeff


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar vector fields ``f_i`` with derivatives, one per driver component."""

    f: tuple[Callable, ...]
    f_prime: tuple[Callable, ...]
    smoothness: int = 3
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.f) != len(self.f_prime) or not self.f:
            raise ValueError("need one derivative per vector field")

    @property
    def components(self) -> int:
        return len(self.f)

    def without_derivative(self) -> "Nonlinearity":
        zero = lambda x: np.zeros_like(x)
        return Nonlinearity(self.f, (zero,) * self.components, self.smoothness,
                            self.label + "-noderiv", dict(self.params))

    def describe(self) -> dict:
        return {"label": self.label, **self.params}


def rational_nonlinearity(k: float = 1.0, components: int = 1) -> Nonlinearity:
    """``f_k(x) = k (1 - x) / (1 + x^2)`` on every component."""
    k = float(k)

    def f(x):
        return k * (1.0 - x) / (1.0 + x * x)

    def fp(x):
        return k * (x * x - 2.0 * x - 1.0) / (1.0 + x * x) ** 2

    return Nonlinearity((f,) * components, (fp,) * components, 3, "rational", {"k": k})


def centered_rational_nonlinearity(k: float = 1.0, components: int = 1) -> Nonlinearity:
    """``f_k(x) - f_k(0) = -k x (1 + x) / (1 + x^2)``; vanishes at 0, so ``f(y)`` keeps Dirichlet data."""
    k = float(k)

    def f(x):
        return -k * x * (1.0 + x) / (1.0 + x * x)

    def fp(x):
        return k * (x * x - 2.0 * x - 1.0) / (1.0 + x * x) ** 2

    return Nonlinearity((f,) * components, (fp,) * components, 3, "rational-centered", {"k": k})


def constant_nonlinearity(c: float = 1.0, components: int = 1) -> Nonlinearity:
    c = float(c)
    f = lambda x: np.full_like(x, c)
    fp = lambda x: np.zeros_like(x)
    return Nonlinearity((f,) * components, (fp,) * components, 10, "constant", {"c": c})


def linear_nonlinearity(a: float = 1.0, components: int = 1) -> Nonlinearity:
    """``f(x) = a x``; unbounded, so only for tests on bounded states."""
    a = float(a)
    f = lambda x: a * x
    fp = lambda x: np.full_like(x, a)
    return Nonlinearity((f,) * components, (fp,) * components, 10, "linear", {"a": a})


def sine_nonlinearity(a: float = 1.0, components: int = 1) -> Nonlinearity:
    a = float(a)
    f = lambda x: a * np.sin(x)
    fp = lambda x: a * np.cos(x)
    return Nonlinearity((f,) * components, (fp,) * components, 10, "sine", {"a": a})


NONLINEARITIES = {
    "rational": lambda p, m: rational_nonlinearity(p.get("k", 1.0), m),
    "rational-centered": lambda p, m: centered_rational_nonlinearity(p.get("k", 1.0), m),
    "constant": lambda p, m: constant_nonlinearity(p.get("c", 1.0), m),
    "linear": lambda p, m: linear_nonlinearity(p.get("a", 1.0), m),
    "sine": lambda p, m: sine_nonlinearity(p.get("a", 1.0), m),
}


def make_nonlinearity(label: str, components: int = 1, **params) -> Nonlinearity:
    try:
        factory = NONLINEARITIES[label]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {label!r}; choose from {sorted(NONLINEARITIES)}")
    return factory(params, components)


@dataclass(frozen=True)
class SchemeConfig:
    """Resolution and model parameters for one run.

    ``time_mesh`` counts steps for Euler and is the dyadic exponent for
    Milstein (``2**time_mesh`` steps). ``grid_size`` overrides
    ``oversample * modes`` as the collocation grid.
    """

    scheme: str = "euler"
    time_mesh: int = 64
    modes: int = 32
    hurst: float = 0.6
    gamma: float = 0.55
    gamma_prime: float = 0.48
    kappa: float = 1.0
    nonlinearity: Nonlinearity = field(default_factory=rational_nonlinearity)
    initial_condition: SpectralState | None = None
    seed: int = 0
    oversample: int = 1
    grid_size: int | None = None

    def __post_init__(self):
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"scheme must be 'euler' or 'milstein', got {self.scheme!r}")
        if self.time_mesh < 1 or self.modes < 1 or self.oversample < 1:
            raise ValueError("time_mesh, modes and oversample must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.grid_size is not None and self.grid_size < self.modes:
            raise ValueError("grid_size must be >= modes")

    @property
    def steps(self) -> int:
        return 2**self.time_mesh if self.scheme == "milstein" else self.time_mesh

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    @property
    def collocation_size(self) -> int:
        return self.grid_size if self.grid_size is not None else self.oversample * self.modes

    def psi(self) -> SpectralState:
        if self.initial_condition is None:
            return spectral.default_initial_condition(self.modes)
        return self.initial_condition

    def regularity_issues(self) -> list[str]:
        g, gp, H = self.gamma, self.gamma_prime, self.hurst
        issues = []
        if not g < H:
            issues.append(f"gamma={g} should be below the Hurst index {H}")
        if self.scheme == "euler":
            if H <= 0.5:
                issues.append(f"Euler scheme with H={H} <= 1/2: no convergence guarantee")
            if not 0.5 < g < 1:
                issues.append(f"Euler needs gamma in (1/2, 1), got {g}")
            if not max(1 - g, g / 2) < gp < 0.5:
                issues.append(f"Euler needs gamma' in ({max(1 - g, g / 2):.4g}, 1/2), got {gp}")
        else:
            if not 1 / 3 < g < 0.5:
                issues.append(f"Milstein needs gamma in (1/3, 1/2), got {g}")
            if not 1 - g < gp <= 2 * g:
                issues.append(f"Milstein needs gamma' in ({1 - g:.4g}, {2 * g:.4g}], got {gp}")
        return issues

    def to_dict(self) -> dict:
        psi = self.psi().coeffs
        return {
            "scheme": self.scheme,
            "time_mesh": self.time_mesh,
            "steps": self.steps,
            "modes": self.modes,
            "hurst": self.hurst,
            "gamma": self.gamma,
            "gamma_prime": self.gamma_prime,
            "kappa": self.kappa,
            "nonlinearity": self.nonlinearity.describe(),
            "initial_condition": [float(v) for v in psi],
            "seed": self.seed,
            "oversample": self.oversample,
            "grid_size": self.collocation_size,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    config: SchemeConfig
    driver_digest: str

    def __len__(self):
        return self.times.size

    def state(self, k: int) -> SpectralState:
        return SpectralState(self.states[k])

    def on_grid(self, grid_size: int | None = None) -> np.ndarray:
        """All states synthesized on the interior grid; shape ``(K+1, grid_size)``."""
        return spectral.synthesize(self.states, grid_size or self.states.shape[1])

    def probe(self, xi) -> np.ndarray:
        """``Y_t(xi)`` for each stored time; shape ``(K+1, len(xi))``."""
        return spectral.evaluate(self.states, xi)


# --- collocation ----------------------------------------------------------


def _grid_size(dim, n_modes, oversample):
    return oversample * max(dim, n_modes)


def eval_nonlinearity(y: SpectralState, f: Nonlinearity, i: int, n_modes: int,
                      oversample: int = 1, grid_size: int | None = None) -> SpectralState:
    """``P_N f_i(y)`` by synthesis on the grid, pointwise ``f_i``, and analysis (``i`` is 0-based)."""
    ng = grid_size or _grid_size(y.dim, n_modes, oversample)
    values = spectral.synthesize(y.coeffs, ng)
    return SpectralState(spectral.analyze(f.f[i](values), n_modes))


def eval_milstein_product(y: SpectralState, f: Nonlinearity, i: int, j: int, n_modes: int,
                          oversample: int = 1, grid_size: int | None = None) -> SpectralState:
    """``P_N( f_i'(y) . P_N f_j(y) )`` with the inner projection applied literally."""
    ng = grid_size or _grid_size(y.dim, n_modes, oversample)
    values = spectral.synthesize(y.coeffs, ng)
    inner = spectral.analyze(f.f[j](values), n_modes)
    product = f.f_prime[i](values) * spectral.synthesize(inner, ng)
    return SpectralState(spectral.analyze(product, n_modes))


# --- schemes --------------------------------------------------------------


def _check_regularity(config: SchemeConfig):
    for msg in config.regularity_issues():
        warnings.warn(msg, RegularityWarning, stacklevel=3)


def _check_driver(config: SchemeConfig, driver: DriverPath):
    if driver.mesh != config.steps:
        raise ValueError(f"driver has {driver.mesh} steps, config expects {config.steps}")
    if driver.components != config.nonlinearity.components:
        raise ValueError(
            f"driver has {driver.components} components, nonlinearity has "
            f"{config.nonlinearity.components}"
        )


def _iterate(config: SchemeConfig, driver: DriverPath, second_order: bool) -> Trajectory:
    _check_driver(config, driver)
    n = config.modes
    ng = config.collocation_size
    kw = kernel_weights(n, config.h, config.kappa)
    fields, derivs = config.nonlinearity.f, config.nonlinearity.f_prime
    dx = driver.increments
    states = np.empty((config.steps + 1, n))
    states[0] = config.psi().padded(n).coeffs
    y = states[0].copy()
    for k in range(config.steps):
        values = spectral.synthesize(y, ng)
        step_dx = dx[k]
        forcing = step_dx[0] * fields[0](values)
        for i in range(1, len(fields)):
            forcing = forcing + step_dx[i] * fields[i](values)
        first = spectral.analyze(forcing, n)
        y_next = kw.decay * y + kw.w1 * first
        if second_order:
            # sum_ij dx^i dx^j f_i' . P_N f_j  =  (sum_i dx^i f_i') . P_N (sum_j dx^j f_j)
            slope = step_dx[0] * derivs[0](values)
            for i in range(1, len(derivs)):
                slope = slope + step_dx[i] * derivs[i](values)
            second = spectral.analyze(slope * spectral.synthesize(first, ng), n)
            y_next = y_next + kw.w2 * second
        peak = np.max(np.abs(y_next))
        if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise NonFiniteError(k + 1, float(peak))
        states[k + 1] = y_next
        y = y_next
    times = np.arange(config.steps + 1) / config.steps
    return Trajectory(times, states, config, driver.digest())


def euler_run(config: SchemeConfig, driver: DriverPath) -> Trajectory:
    if config.scheme != "euler":
        raise ValueError("euler_run needs an euler config")
    _check_regularity(config)
    return _iterate(config, driver, second_order=False)


def milstein_run(config: SchemeConfig, driver: DriverPath) -> Trajectory:
    if config.scheme != "milstein":
        raise ValueError("milstein_run needs a milstein config")
    _check_regularity(config)
    return _iterate(config, driver, second_order=True)


def run(config: SchemeConfig, driver: DriverPath) -> Trajectory:
    return milstein_run(config, driver) if config.scheme == "milstein" else euler_run(config, driver)


def pure_decay(psi: SpectralState, times: Sequence[float], kappa: float = 1.0) -> np.ndarray:
    """Exact heat flow of ``psi`` at each time; shape ``(len(times), dim)``."""
    lam = spectral.eigenvalues(psi.dim)
    with np.errstate(under="ignore"):
        return np.exp(-kappa * np.outer(times, lam)) * psi.coeffs
