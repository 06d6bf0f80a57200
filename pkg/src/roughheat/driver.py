"""Fractional Brownian motion drivers and their rough-path diagnostics."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

MAX_HOLDER_MESH = 2**12


class EmbeddingError(RuntimeError):
    """Circulant embedding produced a covariance that is not nonnegative-definite."""


@dataclass(frozen=True)
class DriverPath:
    """An ``m``-component path sampled at ``t_k = k / mesh``, ``k = 0..mesh``.

    ``samples`` has shape ``(mesh + 1, m)`` and starts at zero.
    """

    samples: np.ndarray
    hurst: float
    seed: int = 0

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
            raise ValueError(f"samples must have shape (M+1, m) with M, m >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("driver samples must be finite")
        if np.any(x[0] != 0.0):
            raise ValueError("driver paths must start at 0")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def mesh(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def components(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.mesh + 1) / self.mesh

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.samples, axis=0)

    @property
    def is_dyadic(self) -> bool:
        return self.mesh & (self.mesh - 1) == 0

    @property
    def mesh_exponent(self) -> int:
        if not self.is_dyadic:
            raise ValueError(f"mesh {self.mesh} is not a power of two")
        return self.mesh.bit_length() - 1

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.samples).tobytes())
        h.update(repr((float(self.hurst), int(self.seed))).encode())
        return h.hexdigest()[:16]


# --- sampling -------------------------------------------------------------


def fgn_autocovariance(hurst: float, n: int) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at lags ``0..n-1``."""
    k = np.arange(n, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** two_h + np.abs(k - 1) ** two_h - 2.0 * k**two_h)


def _circulant_eigenvalues(hurst: float, n: int, size: int) -> np.ndarray:
    half = size // 2
    rho = fgn_autocovariance(hurst, half + 1)
    row = np.concatenate([rho, rho[half - 1 : 0 : -1]])
    return np.fft.fft(row).real


def _fgn_circulant(hurst, n, rng, max_doublings):
    size = 2 * n
    for _ in range(max_doublings + 1):
        eig = _circulant_eigenvalues(hurst, n, size)
        tol = 1e-10 * eig.max()
        if eig.min() >= -tol:
            eig = np.clip(eig, 0.0, None)
            z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
            return np.fft.fft(np.sqrt(eig / size) * z).real[:n]
        size *= 2
    raise EmbeddingError(f"negative circulant eigenvalues for H={hurst}, n={n}")


def _fgn_cholesky(hurst, n, rng):
    rho = fgn_autocovariance(hurst, n)
    idx = np.arange(n)
    cov = rho[np.abs(idx[:, None] - idx[None, :])]
    return np.linalg.cholesky(cov) @ rng.standard_normal(n)


def component_rng(seed: int, component: int) -> np.random.Generator:
    """Independent stream keyed by (seed, component); schedule independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(component)]))


def fractional_gaussian_noise(hurst, n, rng, method="circulant", max_doublings=3):
    """``n`` samples of unit-step fGn (variance 1)."""
    if method == "cholesky":
        return _fgn_cholesky(hurst, n, rng)
    try:
        return _fgn_circulant(hurst, n, rng, max_doublings)
    except EmbeddingError:
        log.warning("circulant embedding failed (H=%s, n=%d); using Cholesky", hurst, n)
        return _fgn_cholesky(hurst, n, rng)


def sample_fbm(hurst: float, mesh: int, components: int = 1, seed: int = 0,
               method: str = "circulant") -> DriverPath:
    """Exact fBm on the grid ``k / mesh`` with ``components`` independent coordinates."""
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {hurst}")
    if mesh < 1 or components < 1:
        raise ValueError("mesh and components must be >= 1")
    x = np.zeros((mesh + 1, components))
    for i in range(components):
        noise = fractional_gaussian_noise(hurst, mesh, component_rng(seed, i), method=method)
        x[1:, i] = np.cumsum(noise) * float(mesh) ** (-hurst)
    return DriverPath(x, hurst, seed)


def sample_fbm_dyadic(hurst: float, exponent: int, components: int = 1, seed: int = 0) -> DriverPath:
    return sample_fbm(hurst, 2**exponent, components, seed)


# --- interpolation and restriction ----------------------------------------


def interpolate(path: DriverPath, t):
    """Piecewise-linear interpolation ``x^M_t``; returns shape ``(m,)`` or ``(len(t), m)``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError("interpolation time outside [0, 1]")
    scaled = np.atleast_1d(t_arr) * path.mesh
    k = np.minimum(np.floor(scaled).astype(int), path.mesh - 1)
    frac = (scaled - k)[:, None]
    x = path.samples
    out = x[k] + frac * (x[k + 1] - x[k])
    return out[0] if t_arr.ndim == 0 else out


def restrict(path: DriverPath, mesh: int) -> DriverPath:
    """Subsample a nested fine path to a coarser mesh that divides it."""
    if mesh < 1 or path.mesh % mesh:
        raise ValueError(f"mesh {mesh} does not divide {path.mesh}")
    return DriverPath(path.samples[:: path.mesh // mesh], path.hurst, path.seed)


def coarse_on_fine(path: DriverPath, coarse_mesh: int) -> DriverPath:
    """The mesh-``coarse_mesh`` interpolation of ``path``, sampled on ``path``'s own grid."""
    coarse = restrict(path, coarse_mesh)
    return DriverPath(interpolate(coarse, path.times), path.hurst, path.seed)


# --- Levy area ------------------------------------------------------------


class LevyArea:
    """Second-level iterated integrals of the piecewise-linear interpolation.

    ``area(s, t)[i, j] = int_s^t dx^i_u (x^j_u - x^j_s)`` for grid indices
    ``s < t``. Exact for linear segments; pairs are assembled from the
    cumulative area via Chen's relation.
    """

    def __init__(self, path: DriverPath, gamma: float | None = None):
        self.path = path
        self.gamma = gamma
        self._cum = _cumulative_area(path.samples)
        self._cum.setflags(write=False)

    def area(self, s, t) -> np.ndarray:
        s = np.asarray(s)
        t = np.asarray(t)
        x = self.path.samples
        dx = x[t] - x[s]
        return self._cum[t] - self._cum[s] - dx[..., :, None] * x[s][..., None, :]

    def elementary(self) -> np.ndarray:
        """Areas over each step ``[t_k, t_{k+1}]``."""
        k = np.arange(self.path.mesh)
        return self.area(k, k + 1)

    def lag_areas(self, lag: int) -> np.ndarray:
        s = np.arange(self.path.mesh + 1 - lag)
        return self.area(s, s + lag)


def levy_area_linear(path: DriverPath, gamma: float | None = None) -> LevyArea:
    return LevyArea(path, gamma)


# --- Holder norms ---------------------------------------------------------


def _as_samples(x) -> np.ndarray:
    if isinstance(x, DriverPath):
        return x.samples
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


@njit(cache=True)
def _path_sup(x, gamma, bound):
    mesh = x.shape[0] - 1
    m = x.shape[1]
    best = 0.0
    for lag in range(1, mesh + 1):
        scale = (lag / mesh) ** gamma
        if best > 0.0 and bound / scale <= best:
            break
        peak = 0.0
        for s in range(mesh + 1 - lag):
            acc = 0.0
            for i in range(m):
                d = x[s + lag, i] - x[s, i]
                acc += d * d
            if acc > peak:
                peak = acc
        r = np.sqrt(peak) / scale
        if r > best:
            best = r
    return best


@njit(cache=True)
def _area_sup(cum_a, xa, cum_b, xb, gamma, bound):
    # sup over s<t of |area_a(s,t) - area_b(s,t)| / ((t-s)/mesh)^gamma, Frobenius norm,
    # with area(s,t)[i,j] = cum[t,i,j] - cum[s,i,j] - (x[t,i] - x[s,i]) x[s,j]
    mesh = xa.shape[0] - 1
    m = xa.shape[1]
    best = 0.0
    for lag in range(1, mesh + 1):
        scale = (lag / mesh) ** gamma
        if best > 0.0 and bound / scale <= best:
            break
        peak = 0.0
        for s in range(mesh + 1 - lag):
            t = s + lag
            acc = 0.0
            for i in range(m):
                da = xa[t, i] - xa[s, i]
                db = xb[t, i] - xb[s, i]
                for j in range(m):
                    z = (cum_a[t, i, j] - cum_a[s, i, j] - da * xa[s, j]) - (
                        cum_b[t, i, j] - cum_b[s, i, j] - db * xb[s, j]
                    )
                    acc += z * z
            if acc > peak:
                peak = acc
        r = np.sqrt(peak) / scale
        if r > best:
            best = r
    return best


def _span(a):
    a = a.reshape(a.shape[0], -1)
    return float(np.sqrt(np.sum((a.max(axis=0) - a.min(axis=0)) ** 2)))


def _max_norm(a):
    a = a.reshape(a.shape[0], -1)
    return float(np.sqrt(np.max(np.sum(a * a, axis=1))))


def _check_mesh(mesh):
    if mesh > MAX_HOLDER_MESH:
        raise ValueError(f"mesh {mesh} above the O(M^2) scan cap {MAX_HOLDER_MESH}")


def holder_norm(x, gamma: float) -> float:
    """``sup_{s<t} |x_t - x_s| / |t - s|^gamma`` over grid pairs of a path on ``k/M``.

    Lags are scanned in increasing order and the scan stops once the path's
    range divided by ``lag^gamma`` cannot beat the running sup, so the value
    is exact.
    """
    x = np.ascontiguousarray(_as_samples(x), dtype=float)
    _check_mesh(x.shape[0] - 1)
    return float(_path_sup(x, float(gamma), _span(x) * (1.0 + 1e-12)))


def _cumulative_area(x):
    # cum_t[i, j] = int_0^t dx^i_u x^j_u for the linear interpolation
    dx = np.diff(x, axis=0)
    step = 0.5 * dx[:, :, None] * dx[:, None, :] + dx[:, :, None] * x[:-1, None, :]
    cum = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
    np.cumsum(step, axis=0, out=cum[1:])
    return cum


def area_gap_norm(a: DriverPath, b: DriverPath, gamma: float) -> float:
    """``sup_{s<t} ||A^a_ts - A^b_ts|| / |t - s|^gamma`` for the Levy areas of two paths on one grid."""
    if a.samples.shape != b.samples.shape:
        raise ValueError("paths must share grid and dimension")
    _check_mesh(a.mesh)
    # areas are invariant under a common shift; centering tightens the pruning bound
    c = 0.5 * (b.samples.max(axis=0) + b.samples.min(axis=0))
    xa = np.ascontiguousarray(a.samples - c)
    xb = np.ascontiguousarray(b.samples - c)
    cum_a, cum_b = _cumulative_area(xa), _cumulative_area(xb)
    e = xa - xb
    # |z_ts| <= |dG| + |dxa| |e_s| + |de| |xb_s|
    bound = _span(cum_a - cum_b) + _span(xa) * _max_norm(e) + _span(e) * _max_norm(xb)
    return float(_area_sup(cum_a, xa, cum_b, xb, float(gamma), bound * (1.0 + 1e-12) + 1e-300))


def area_holder_norm(area: "LevyArea", gamma: float) -> float:
    """``sup_{s<t} ||A_ts|| / |t - s|^gamma`` over grid pairs."""
    zero = DriverPath(np.zeros_like(area.path.samples), area.path.hurst, area.path.seed)
    return area_gap_norm(area.path, zero, gamma)


@dataclass(frozen=True)
class RoughnessReport:
    holder_norm: float
    u_M: float
    v_M: float
    gamma: float
    coarse_mesh: int
    fine_mesh: int


def approximation_errors(fine: DriverPath, coarse_mesh: int, gamma: float,
                         path_norm: float | None = None) -> RoughnessReport:
    """u_M and v_M of the mesh-``coarse_mesh`` interpolation, measured on ``fine``'s grid.

    The fine path's own linear-interpolation area stands in for the limit
    area. ``path_norm`` may pass a precomputed ``holder_norm(fine, gamma)``.
    """
    if coarse_mesh < 1 or fine.mesh % coarse_mesh:
        raise ValueError(f"coarse mesh {coarse_mesh} is not nested in fine mesh {fine.mesh}")
    approx = coarse_on_fine(fine, coarse_mesh)
    u = holder_norm(fine.samples - approx.samples, gamma)
    gap = area_gap_norm(approx, fine, 2.0 * gamma)
    if path_norm is None:
        path_norm = holder_norm(fine, gamma)
    return RoughnessReport(
        holder_norm=path_norm,
        u_M=u,
        v_M=u + gap,
        gamma=gamma,
        coarse_mesh=coarse_mesh,
        fine_mesh=fine.mesh,
    )


def approximation_study(fine: DriverPath, coarse_meshes, gamma: float) -> list[RoughnessReport]:
    norm = holder_norm(fine, gamma)
    return [approximation_errors(fine, m, gamma, path_norm=norm) for m in coarse_meshes]


# --- CSV ------------------------------------------------------------------


def write_csv(path: DriverPath, dest) -> None:
    header = ["t"] + [f"x{i + 1}" for i in range(path.components)]
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(path.times, path.samples):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_csv(src, hurst: float, seed: int = 0) -> DriverPath:
    with open(Path(src), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError("driver CSV must start with a 't' header column")
    data = np.array(body, dtype=float)
    t = data[:, 0]
    mesh = len(t) - 1
    if not np.allclose(t, np.arange(mesh + 1) / mesh, rtol=0, atol=1e-12):
        raise ValueError("driver CSV times are not a uniform grid on [0, 1]")
    return DriverPath(data[:, 1:], hurst, seed)
