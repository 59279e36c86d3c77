from __future__ import annotations

import logging
import math

import numpy as np

from delaydensity.config import get_settings
from delaydensity.models.gaussian import GaussianKernel, MomentState
from delaydensity.models.grid import MIN_GRID_NODES, Grid, GridAxis, SolverConfig
from delaydensity.models.kernels import KernelQueryError, TransitionKernelHandle
from delaydensity.models.sdde import AugmentedSystem, is_worked_example
from delaydensity.services.analytic_kernels import (
    AnalyticDomainError,
    eval_gaussian,
    example_q2,
    gaussian_kernel_via_moments,
    heat_kernel_q1,
    propagate_moments,
)
from delaydensity.services.fokker_planck_engine import field_interpolator, solve_kernel

logger = logging.getLogger(__name__)


GRID_HALF_WIDTH_SIGMAS = 6.0
MIN_GRID_HALF_WIDTH = 1e-2


def analytic_kernel_handle(aug: AugmentedSystem, *, prefer_closed_form: bool = True) -> TransitionKernelHandle:
    """Closed forms for the worked example (k <= 2), moment-ODE Gaussians otherwise."""
    if not aug.model.additive_noise:
        raise AnalyticDomainError("Analytic kernels need additive noise (s1 = s2 = 0).")
    if prefer_closed_form and is_worked_example(aug.model) and aug.k == 1:

        def evaluate(u, t, v, s):
            return heat_kernel_q1(u[..., 0], t, v[..., 0], s)

        return TransitionKernelHandle(k=1, backend="analytic", tau=aug.tau, evaluator=evaluate)

    if prefer_closed_form and is_worked_example(aug.model) and aug.k == 2:

        def evaluate(u, t, v, s):
            return example_q2(u[..., 0], u[..., 1], t, v[..., 0], v[..., 1], s)

        return TransitionKernelHandle(k=2, backend="analytic", tau=aug.tau, evaluator=evaluate)

    cache: dict[tuple[float, float], GaussianKernel] = {}

    def evaluate(u, t, v, s):
        key = (s, t)
        kernel = cache.get(key)
        if kernel is None:
            kernel = gaussian_kernel_via_moments(aug, s, t)
            cache[key] = kernel
        return eval_gaussian(kernel, u, v)

    return TransitionKernelHandle(k=aug.k, backend="analytic", tau=aug.tau, evaluator=evaluate)


def auto_grid(aug: AugmentedSystem, v, s: float, t: float, nodes: int) -> Grid:
    """Grid centred on the predicted mean with half-width 6 sigma plus the drift displacement."""
    start = np.asarray(v, dtype=float).reshape(-1)
    moments = propagate_moments(
        aug,
        MomentState(mean=start, cov=np.zeros((aug.k, aug.k)), time=s),
        t,
        steps=200,
    )
    axes = []
    for index in range(aug.k):
        sigma = math.sqrt(max(moments.cov[index, index], 0.0))
        centre = 0.5 * (start[index] + moments.mean[index])
        half = GRID_HALF_WIDTH_SIGMAS * sigma + 0.5 * abs(moments.mean[index] - start[index])
        half = max(half, MIN_GRID_HALF_WIDTH)
        axes.append(GridAxis(min=centre - half, max=centre + half, n=max(nodes, MIN_GRID_NODES)))
    return Grid(axes=tuple(axes))


def grid_kernel_handle(
    aug: AugmentedSystem,
    cfg: SolverConfig,
    *,
    grid: Grid | None = None,
    nodes: int | None = None,
) -> TransitionKernelHandle:
    """Kernel evaluated by solving the Fokker-Planck equation once per conditioning point.

    Without an explicit grid, each solve gets an automatic grid from the moment oracle,
    which needs additive noise.
    """
    if grid is None and not aug.model.additive_noise:
        raise KernelQueryError("Automatic solver grids need additive noise; configure an explicit grid.")
    nodes = nodes or get_settings().grid_nodes
    cache: dict[tuple, object] = {}
    notes: list[str] = []

    def kernel_at(point: np.ndarray, s: float, t: float):
        key = (tuple(point.tolist()), s, t)
        interpolator = cache.get(key)
        if interpolator is None:
            solve_grid = grid if grid is not None else auto_grid(aug, point, s, t, nodes)
            field = solve_kernel(aug, point, s, t, solve_grid, cfg)
            for message in field.warnings:
                if message not in notes:
                    notes.append(message)
            interpolator = field_interpolator(field)
            cache[key] = interpolator
        return interpolator

    def evaluate(u, t, v, s):
        flat_u = u.reshape(-1, aug.k)
        flat_v = v.reshape(-1, aug.k)
        unique_v, inverse = np.unique(flat_v, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        out = np.empty(flat_u.shape[0])
        misses = sum(1 for row in unique_v if (tuple(row.tolist()), s, t) not in cache)
        for index, row in enumerate(unique_v):
            mask = inverse == index
            out[mask] = kernel_at(row, s, t)(flat_u[mask])
        if misses:
            logger.debug("Grid kernel cache k=%s s=%.6g t=%.6g solves=%s cached=%s", aug.k, s, t, misses, len(cache))
        return out.reshape(u.shape[:-1])

    return TransitionKernelHandle(k=aug.k, backend="grid", tau=aug.tau, evaluator=evaluate, notes=notes)
