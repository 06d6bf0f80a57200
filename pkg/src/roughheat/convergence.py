"""Convergence-rate studies against a fine nested reference run.

A study samples one fine driver per replication, runs the scheme at the
reference resolution, and measures

    sup_k || y_ref(t_k) - y^{M,N}(t_k) ||_{B_gamma'}

over the coarse grid's times for each (M, N) cell. Norms are truncated at
the reference's mode count. Medians over replications are fitted by least
squares in log-log coordinates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .driver import DriverPath, restrict, sample_fbm
from .schemes import (
    NonFiniteError,
    RegularityWarning,
    SchemeConfig,
    Trajectory,
    make_nonlinearity,
    run,
)
from .spectral import resize_modes, sobolev_norms

log = logging.getLogger(__name__)


class PlanError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class StudyPlan:
    """Ladders and targets for one convergence study.

    Mesh values use scheme units: step counts for Euler, dyadic exponents
    for Milstein. The time ladder runs at ``N = ref_modes`` and the space
    ladder at ``M = ref_mesh`` unless ``time_ladder_modes`` /
    ``space_ladder_mesh`` say otherwise.
    """

    scheme: str = "euler"
    hurst: float = 0.6
    gamma: float = 0.55
    gamma_prime: float = 0.48
    beta: float | None = None
    lam: float | None = None
    mesh_ladder: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    mode_ladder: tuple[int, ...] = (4, 8, 16, 32, 64)
    ref_mesh: int = 4096
    ref_modes: int = 128
    replications: int = 20
    base_seed: int = 0
    kappa: float = 1.0
    nonlinearity: str = "rational"
    nonlinearity_params: dict = field(default_factory=lambda: {"k": 1.0})
    components: int = 1
    oversample: int = 1
    shared_grid: bool = True
    time_ladder_modes: int | None = None
    space_ladder_mesh: int | None = None
    drop_finest: bool = True
    tolerance: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "mesh_ladder", tuple(int(m) for m in self.mesh_ladder))
        object.__setattr__(self, "mode_ladder", tuple(int(n) for n in self.mode_ladder))
        if self.scheme not in ("euler", "milstein"):
            raise PlanError(f"unknown scheme {self.scheme!r}")
        if not self.mesh_ladder or not self.mode_ladder:
            raise PlanError("ladders must be non-empty")
        ref_steps = self.steps(self.ref_mesh)
        for m in self.mesh_ladder:
            if m < 1 or ref_steps % self.steps(m):
                raise PlanError(f"mesh {m} is not nested in reference mesh {self.ref_mesh}")
        for n in self.mode_ladder:
            if not 1 <= n <= self.ref_modes:
                raise PlanError(f"mode count {n} exceeds reference modes {self.ref_modes}")
        if self.replications < 1:
            raise PlanError("need at least one replication")
        if self.scheme == "milstein":
            g, gp = self.gamma, self.gamma_prime
            beta_cap = min(g + gp - 1, g - gp + 0.5)
            lam_cap = g + gp - 1
            if not 0 < self.beta_target < beta_cap:
                raise PlanError(f"beta={self.beta_target} must lie in (0, {beta_cap:.4g})")
            if not 0 < self.lam_target < lam_cap:
                raise PlanError(f"lambda={self.lam_target} must lie in (0, {lam_cap:.4g})")

    def steps(self, mesh: int) -> int:
        return 2**mesh if self.scheme == "milstein" else mesh

    @property
    def beta_target(self) -> float:
        if self.beta is not None:
            return self.beta
        return 0.99 * min(self.gamma + self.gamma_prime - 1, self.gamma - self.gamma_prime + 0.5)

    @property
    def lam_target(self) -> float:
        return self.lam if self.lam is not None else 0.99 * (self.gamma + self.gamma_prime - 1)

    def seed(self, replication: int) -> int:
        return self.base_seed + replication

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mesh_ladder"] = list(self.mesh_ladder)
        d["mode_ladder"] = list(self.mode_ladder)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _time_mesh(self, mesh: int, scheme: str) -> int:
        """Translate a ladder entry into ``scheme``'s own ``time_mesh`` units."""
        if scheme == self.scheme:
            return mesh
        if scheme == "euler":
            return 2**mesh
        if mesh & (mesh - 1):
            raise PlanError(f"mesh {mesh} is not a power of two; a milstein comparison needs dyadic meshes")
        return mesh.bit_length() - 1

    def check_comparison(self, scheme: str):
        """Raise :class:`PlanError` unless every cell can also be run with ``scheme``."""
        for m in (*self.mesh_ladder, self.ref_mesh, self.space_ladder_mesh or self.ref_mesh):
            self._time_mesh(m, scheme)

    def config(self, mesh: int, modes: int, replication: int, scheme: str | None = None) -> SchemeConfig:
        scheme = scheme or self.scheme
        time_mesh = self._time_mesh(mesh, scheme)
        grid = self.oversample * self.ref_modes if self.shared_grid else None
        return SchemeConfig(
            scheme=scheme,
            time_mesh=time_mesh,
            modes=modes,
            hurst=self.hurst,
            gamma=self.gamma,
            gamma_prime=self.gamma_prime,
            kappa=self.kappa,
            nonlinearity=make_nonlinearity(self.nonlinearity, self.components,
                                           **self.nonlinearity_params),
            seed=self.seed(replication),
            oversample=self.oversample,
            grid_size=grid,
        )


# --- reference and error curves -------------------------------------------

_REFERENCES: dict[tuple[str, int], tuple[DriverPath, Trajectory]] = {}
_MAX_CACHED = 64


def fine_driver(plan: StudyPlan, replication: int) -> DriverPath:
    return sample_fbm(plan.hurst, plan.steps(plan.ref_mesh), plan.components,
                      plan.seed(replication))


def _quiet_run(config, driver):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegularityWarning)
        return run(config, driver)


def reference_solution(plan: StudyPlan, replication: int) -> Trajectory:
    """Scheme run at ``(ref_mesh, ref_modes)``; cached by (plan digest, replication)."""
    return _reference(plan, replication)[1]


def _reference(plan, replication):
    key = (plan.digest(), replication)
    hit = _REFERENCES.get(key)
    if hit is None:
        driver = fine_driver(plan, replication)
        traj = _quiet_run(plan.config(plan.ref_mesh, plan.ref_modes, replication), driver)
        if len(_REFERENCES) >= _MAX_CACHED:
            _REFERENCES.pop(next(iter(_REFERENCES)))
        hit = _REFERENCES[key] = (driver, traj)
    return hit


def trajectory_error(reference: Trajectory, coarse: Trajectory, kappa: float) -> float:
    """``sup_k ||ref(t_k) - coarse(t_k)||_{B_kappa}`` over the coarse grid; coarse times must nest."""
    ref_steps = len(reference) - 1
    steps = len(coarse) - 1
    if ref_steps % steps:
        raise ValueError("coarse trajectory times are not nested in the reference")
    stride = ref_steps // steps
    n_ref = reference.states.shape[1]
    diff = reference.states[::stride] - resize_modes(coarse.states, n_ref)
    return float(np.max(sobolev_norms(diff, kappa)))


def _cells(plan):
    n_time = plan.time_ladder_modes or plan.ref_modes
    m_space = plan.space_ladder_mesh or plan.ref_mesh
    cells = [("time", m, n_time) for m in plan.mesh_ladder]
    cells += [("space", m_space, n) for n in plan.mode_ladder]
    return cells


def error_curve(plan: StudyPlan, replication: int, scheme: str | None = None) -> list[dict]:
    """One row per ladder cell for this replication.

    ``scheme`` runs a different scheme on the same drivers, still measured
    against the plan's reference. Blow-ups mark the cell failed.
    """
    driver, ref = _reference(plan, replication)
    scheme = scheme or plan.scheme
    rows = []
    for axis, mesh, modes in _cells(plan):
        config = plan.config(mesh, modes, replication, scheme)
        row = {
            "axis": axis,
            "scheme": scheme,
            "hurst": plan.hurst,
            "M": mesh,
            "N": modes,
            "replication": replication,
            "seed": plan.seed(replication),
        }
        try:
            coarse = _quiet_run(config, restrict(driver, config.steps))
            row["error"] = trajectory_error(ref, coarse, plan.gamma_prime)
            row["status"] = "ok"
        except NonFiniteError as exc:
            log.warning("cell %s M=%d N=%d rep=%d failed: %s", axis, mesh, modes, replication, exc)
            row["error"] = None
            row["status"] = f"blowup at step {exc.step}"
        rows.append(row)
    return rows


# --- fitting --------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    points: int


def fit_slope(x, err) -> SlopeFit:
    """Least squares of ``log err`` on ``log x``."""
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise FitError("degenerate ladder: need at least two distinct resolutions")
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        raise FitError("cannot fit: some errors are zero, negative or missing")
    lx, ly = np.log(x), np.log(err)
    (slope, intercept), *_ = np.linalg.lstsq(np.column_stack([lx, np.ones_like(lx)]), ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    return SlopeFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), int(x.size))


def _targets(plan: StudyPlan, axis: str) -> dict:
    g, gp, H = plan.gamma, plan.gamma_prime, plan.hurst
    if axis == "space":
        return {"rate": 2 * plan.lam_target, "candidates": {"2*lambda": 2 * plan.lam_target}}
    driver_rate = H - g
    if plan.scheme == "euler":
        cands = {"gamma+gamma'-1": g + gp - 1, "H-gamma (u_M)": driver_rate}
    else:
        cands = {"beta": plan.beta_target, "H-gamma (v_M)": driver_rate}
    return {"rate": min(cands.values()), "candidates": cands}


def median_table(rows, axis):
    by_cell: dict[tuple[int, int], list[float]] = {}
    for r in rows:
        if r["axis"] != axis:
            continue
        by_cell.setdefault((r["M"], r["N"]), [])
        if r["error"] is not None:
            by_cell[(r["M"], r["N"])].append(r["error"])
    table = []
    for (m, n), errs in by_cell.items():
        table.append({"M": m, "N": n, "median": float(np.median(errs)) if errs else None,
                      "count": len(errs)})
    return table


def fit_rates(rows: list[dict], plan: StudyPlan) -> dict:
    """Fit median error against resolution on both axes and compare to the targets.

    Verdict is PASS when the fitted slope is at most ``-(target - tol)``.
    """
    out = {}
    for axis in ("time", "space"):
        table = median_table(rows, axis)
        key = "M" if axis == "time" else "N"
        res = [plan.steps(t["M"]) if axis == "time" else t["N"] for t in table]
        meds = [t["median"] for t in table]
        targets = _targets(plan, axis)
        entry = {"axis": axis, "resolution": res, "median_error": meds, "target": targets,
                 "tolerance": plan.tolerance, "monotone": strictly_decreasing(meds)}
        try:
            if len(table) < 4:
                raise FitError(f"need at least 4 ladder points on the {key} axis, got {len(table)}")
            if any(m is None for m in meds):
                raise FitError("cannot fit: some cells have no successful runs")
            use = slice(0, len(res) - 1) if plan.drop_finest else slice(None)
            fit = fit_slope(res[use], meds[use])
            spread = _per_seed_spread(rows, axis, plan, use)
            entry.update(
                slope=fit.slope,
                intercept=fit.intercept,
                residual=fit.residual,
                points=fit.points,
                seed_slope_iqr=spread,
                verdict="PASS" if fit.slope <= -(targets["rate"] - plan.tolerance) else "FAIL",
                resolvable=bool(targets["rate"] > plan.tolerance),
            )
        except FitError as exc:
            entry.update(verdict="REFUSED", reason=str(exc))
        out[axis] = entry
    return out


def strictly_decreasing(values) -> bool:
    """True when every value is present and each is strictly below the previous one."""
    if not values or any(v is None for v in values):
        return False
    return all(a > b for a, b in zip(values, values[1:]))


def _per_seed_spread(rows, axis, plan, use):
    slopes = []
    for rep in sorted({r["replication"] for r in rows}):
        mine = [r for r in rows if r["axis"] == axis and r["replication"] == rep]
        res = [plan.steps(r["M"]) if axis == "time" else r["N"] for r in mine][use]
        errs = [r["error"] for r in mine][use]
        try:
            slopes.append(fit_slope(res, [e if e is not None else np.nan for e in errs]).slope)
        except FitError:
            continue
    if not slopes:
        return None
    q1, q3 = np.percentile(slopes, [25, 75])
    return float(q3 - q1)


# --- study driver ---------------------------------------------------------


@dataclass
class ConvergenceReport:
    plan: StudyPlan
    rows: list[dict]
    fits: dict
    comparison: list[dict] | None = None

    @property
    def medians(self) -> dict:
        return {axis: median_table(self.rows, axis) for axis in ("time", "space")}

    def to_dict(self) -> dict:
        d = {
            "plan": self.plan.to_dict(),
            "plan_digest": self.plan.digest(),
            "rows": self.rows,
            "medians": self.medians,
            "fits": self.fits,
        }
        if self.comparison is not None:
            d["comparison"] = self.comparison
        return d

    def csv_rows(self) -> list[list]:
        rows = [["scheme", "H", "axis", "M", "N", "seed", "error"]]
        for r in self.rows + (self.comparison or []):
            err = "" if r["error"] is None else f"{r['error']:.17g}"
            rows.append([r["scheme"], f"{r['hurst']:.17g}", r["axis"], r["M"], r["N"], r["seed"], err])
        return rows


def run_study(plan: StudyPlan, threads: int = 1, compare_with: str | None = None) -> ConvergenceReport:
    """All replications of ``plan``; with ``compare_with`` also that scheme's errors on the same drivers."""

    if compare_with:
        plan.check_comparison(compare_with)

    def work(rep):
        rows = error_curve(plan, rep)
        extra = error_curve(plan, rep, scheme=compare_with) if compare_with else []
        _REFERENCES.pop((plan.digest(), rep), None)
        return rows, extra

    reps = range(plan.replications)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, reps))
    else:
        results = [work(r) for r in reps]
    rows = [row for r, _ in results for row in r]
    extra = [row for _, e in results for row in e] if compare_with else None
    return ConvergenceReport(plan, rows, fit_rates(rows, plan), extra)


def median_errors(rows: list[dict], axis: str) -> dict[tuple[int, int], float]:
    return {(t["M"], t["N"]): t["median"] for t in median_table(rows, axis)}
