from __future__ import annotations

from functools import lru_cache
import logging
import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded

from delaydensity.config import get_settings
from delaydensity.models.grid import MAX_SOLVER_DIMENSION, DensityField, Grid, SolverConfig
from delaydensity.models.sdde import AugmentedSystem
from delaydensity.services.augmentation_engine import (
    AssumptionViolationError,
    domain_for_axes,
    eval_diffusion,
    eval_drift,
    require_valid,
    validate,
)

logger = logging.getLogger(__name__)


CFL_LIMIT = 0.5
POSITIVITY_TOLERANCE = 1e-6
DELTA_EPS_DT_MULTIPLE = 3.0
TIME_TOLERANCE = 1e-12


class SolverInputError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@lru_cache(maxsize=16)
def _mesh(grid: Grid) -> np.ndarray:
    return grid.mesh()


def _check_dimensions(grid: Grid, aug: AugmentedSystem) -> None:
    if grid.dimension != aug.k:
        raise SolverInputError(f"Grid dimension {grid.dimension} does not match system dimension {aug.k}.")
    if grid.dimension > MAX_SOLVER_DIMENSION:
        raise SolverInputError(f"Grid solver supports at most {MAX_SOLVER_DIMENSION} dimensions, got {grid.dimension}.")


def _zero_boundary(values: np.ndarray) -> np.ndarray:
    for axis in range(values.ndim):
        index = [slice(None)] * values.ndim
        index[axis] = 0
        values[tuple(index)] = 0.0
        index[axis] = -1
        values[tuple(index)] = 0.0
    return values


def init_delta(grid: Grid, v, aug: AugmentedSystem, s: float, eps: float) -> DensityField:
    """Short-time Gaussian standing in for the point mass at v (time s + eps)."""
    _check_dimensions(grid, aug)
    point = np.asarray(v, dtype=float).reshape(-1)
    if point.size != aug.k:
        raise SolverInputError(f"Initial point must have {aug.k} components.")
    if not grid.contains(point):
        raise SolverInputError(f"Initial point {point.tolist()} is not strictly inside the grid.")
    if not eps > 0.0:
        raise SolverInputError("Mollification time must be positive.")

    mean = point + eval_drift(aug, point, s) * eps
    variance = eval_diffusion(aug, point, s) ** 2 * eps
    if np.any(variance <= 0.0):
        raise AssumptionViolationError(
            "Degenerate diffusion at the initial point.",
            location=tuple(point.tolist()),
            value=float(variance.min()),
        )

    values = np.ones(grid.shape)
    for axis, (nodes, mu, var) in enumerate(zip(grid.node_vectors(), mean, variance)):
        profile = np.exp(-((nodes - mu) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
        shape = [1] * grid.dimension
        shape[axis] = nodes.size
        values = values * profile.reshape(shape)
    return DensityField(grid=grid, values=_zero_boundary(values), time=s + eps)


def _check_cfl(grid: Grid, drift: np.ndarray, dt: float) -> None:
    for axis, dx in enumerate(grid.spacings):
        speed = float(np.max(np.abs(drift[..., axis])))
        if speed > 0.0 and dt > CFL_LIMIT * dx / speed:
            raise SolverError(
                f"Time step {dt:.3g} violates the advection CFL bound {CFL_LIMIT * dx / speed:.3g} on axis {axis}."
            )


def _limited_slopes(q: np.ndarray) -> np.ndarray:
    """Van Leer slopes along the last axis; zero at extrema and at the end nodes."""
    slopes = np.zeros_like(q)
    backward = q[..., 1:-1] - q[..., :-2]
    forward = q[..., 2:] - q[..., 1:-1]
    product = backward * forward
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes[..., 1:-1] = np.where(product > 0.0, 2.0 * product / (backward + forward), 0.0)
    return slopes


def _advection_rate(q: np.ndarray, face: np.ndarray, dx: float) -> np.ndarray:
    slopes = _limited_slopes(q)
    left = q[..., :-1] + 0.5 * slopes[..., :-1]
    right = q[..., 1:] - 0.5 * slopes[..., 1:]
    flux = np.maximum(face, 0.0) * left + np.minimum(face, 0.0) * right
    rate = np.zeros_like(q)
    rate[..., 1:-1] = -(flux[..., 1:] - flux[..., :-1]) / dx
    return rate


def _advect(values: np.ndarray, drift: np.ndarray, spacings: tuple[float, ...], dt: float) -> np.ndarray:
    # Limited second-order upwind fluxes with a two-stage SSP Runge-Kutta step, one axis at a time.
    for axis, dx in enumerate(spacings):
        speed = np.moveaxis(drift[..., axis], axis, -1)
        face = 0.5 * (speed[..., :-1] + speed[..., 1:])
        if not np.any(face):
            continue
        q = np.moveaxis(values, axis, -1)
        stage = q + dt * _advection_rate(q, face, dx)
        q = 0.5 * (q + stage + dt * _advection_rate(stage, face, dx))
        values = np.moveaxis(q, -1, axis)
    return values


def _banded_matrix(coeff: np.ndarray, r: float, theta: float) -> np.ndarray:
    n = coeff.size
    ab = np.zeros((3, n))
    ab[1, :] = 1.0
    ab[1, 1:-1] += 2.0 * theta * r * coeff[1:-1]
    ab[0, 2:] = -theta * r * coeff[2:]
    ab[2, : n - 2] = -theta * r * coeff[: n - 2]
    return ab


def _diffuse_axis(values: np.ndarray, coeff: np.ndarray, axis: int, dx: float, dt: float, theta: float) -> np.ndarray:
    q = np.moveaxis(values, axis, -1)
    d = np.moveaxis(coeff, axis, -1)
    shape = q.shape
    lines = q.reshape(-1, shape[-1])
    d_lines = d.reshape(-1, shape[-1])
    r = dt / (2.0 * dx * dx)

    dq = d_lines * lines
    rhs = lines.copy()
    rhs[:, 1:-1] += (1.0 - theta) * r * (dq[:, 2:] - 2.0 * dq[:, 1:-1] + dq[:, :-2])
    rhs[:, 0] = 0.0
    rhs[:, -1] = 0.0

    if np.all(d_lines == d_lines[0]):
        solved = solve_banded((1, 1), _banded_matrix(d_lines[0], r, theta), rhs.T).T
    else:
        solved = np.empty_like(rhs)
        for index in range(rhs.shape[0]):
            solved[index] = solve_banded((1, 1), _banded_matrix(d_lines[index], r, theta), rhs[index])
    return np.moveaxis(solved.reshape(shape), -1, axis)


def step(
    field: DensityField,
    aug: AugmentedSystem,
    dt: float,
    *,
    implicitness: float = 0.5,
    renormalize: bool = False,
) -> DensityField:
    """Advance one Strang step: half advection, implicit diffusion sweeps, half advection."""
    grid = field.grid
    _check_dimensions(grid, aug)
    if not 0.5 <= implicitness <= 1.0:
        raise SolverInputError("Implicitness must lie in [0.5, 1].")
    mesh = _mesh(grid)
    t0 = field.time

    drift_first = eval_drift(aug, mesh, t0 + 0.25 * dt)
    drift_second = eval_drift(aug, mesh, t0 + 0.75 * dt)
    _check_cfl(grid, drift_first, dt)
    _check_cfl(grid, drift_second, dt)

    values = _advect(field.values, drift_first, grid.spacings, 0.5 * dt)
    diffusion_sq = eval_diffusion(aug, mesh, t0 + 0.5 * dt) ** 2
    for axis, dx in enumerate(grid.spacings):
        values = _diffuse_axis(values, diffusion_sq[..., axis], axis, dx, dt, implicitness)
    values = _zero_boundary(_advect(values, drift_second, grid.spacings, 0.5 * dt))

    if not np.all(np.isfinite(values)):
        raise SolverError(f"Non-finite density values at t'={t0 + dt:.6g}.")

    warnings = field.warnings
    peak = float(values.max())
    floor = float(values.min())
    if floor < -POSITIVITY_TOLERANCE * peak and not any(w.startswith("positivity") for w in warnings):
        message = f"positivity undershoot min={floor:.3e} max={peak:.3e} at t'={t0 + dt:.6g}"
        logger.warning("Fokker-Planck %s", message)
        warnings = warnings + (message,)

    result = DensityField(grid=grid, values=values, time=t0 + dt, warnings=warnings)
    if renormalize and result.mass > 0.0:
        result = DensityField(grid=grid, values=values / result.mass, time=result.time, warnings=warnings)
    return result


def mollification_time(grid: Grid, cfg: SolverConfig, min_diffusion: float) -> float:
    if cfg.delta_init_eps is not None:
        return cfg.delta_init_eps
    resolved = (max(grid.spacings) / min_diffusion) ** 2
    return max(DELTA_EPS_DT_MULTIPLE * cfg.dt, resolved)


def solve_kernel(
    aug: AugmentedSystem,
    v,
    s: float,
    t: float,
    grid: Grid,
    cfg: SolverConfig,
) -> DensityField:
    """Grid approximation of Q_k(.; t | v; s)."""
    _check_dimensions(grid, aug)
    if not cfg.dt > 0.0:
        raise SolverInputError("Solver time step must be positive.")
    if cfg.boundary != "absorbing":
        raise SolverInputError(f"Unsupported boundary condition: {cfg.boundary}")
    if abs(t - s) <= TIME_TOLERANCE:
        raise SolverInputError("Degenerate request t == s: the kernel is a point mass.")
    if s < -TIME_TOLERANCE or t <= s or t > aug.tau + TIME_TOLERANCE:
        raise SolverInputError(f"Kernel times must satisfy 0 <= s < t <= tau, got s={s}, t={t}.")

    report = validate(aug.model, domain_for_axes(aug.model, [(axis.min, axis.max) for axis in grid.axes]))
    require_valid(report)

    eps = min(mollification_time(grid, cfg, report.min_diffusion), t - s)
    field = init_delta(grid, v, aug, s, eps)
    remaining = t - field.time
    n_steps = math.ceil(remaining / cfg.dt - 1e-9) if remaining > TIME_TOLERANCE else 0
    if n_steps:
        dt = remaining / n_steps
        for _ in range(n_steps):
            field = step(
                field,
                aug,
                dt,
                implicitness=cfg.implicitness,
                renormalize=cfg.renormalize_each_step,
            )

    settings = get_settings()
    mass_error = abs(field.mass - 1.0)
    warnings = field.warnings
    if mass_error > settings.mass_warn_fraction:
        message = f"mass loss {mass_error:.3e} exceeds {settings.mass_warn_fraction:g}"
        logger.warning("Fokker-Planck kernel %s v=%s s=%.6g t=%.6g", message, np.asarray(v).tolist(), s, t)
        warnings = warnings + (message,)
    logger.debug(
        "Fokker-Planck kernel solved k=%s v=%s s=%.6g t=%.6g steps=%s eps=%.3g mass=%.8f",
        aug.k,
        np.asarray(v).tolist(),
        s,
        t,
        n_steps,
        eps,
        field.mass,
    )
    return DensityField(grid=grid, values=field.values, time=t, warnings=warnings)


def mass(field: DensityField) -> float:
    return field.mass


def field_interpolator(field: DensityField) -> RegularGridInterpolator:
    return RegularGridInterpolator(
        tuple(field.grid.node_vectors()),
        field.values,
        method="linear",
        bounds_error=False,
        fill_value=0.0,
    )


def interpolate(field: DensityField, point):
    """Multilinear value at point(s) with trailing dimension k; 0 outside the grid."""
    dimension = field.grid.dimension
    points = np.asarray(point, dtype=float)
    if points.ndim == 0:
        points = points.reshape(1)
    if dimension == 1 and points.shape[-1] != 1:
        points = points[..., None]
    values = field_interpolator(field)(points.reshape(-1, dimension))
    if points.ndim == 1:
        return float(values[0])
    return values.reshape(points.shape[:-1])
