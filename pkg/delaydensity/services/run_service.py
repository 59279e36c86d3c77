from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
import itertools
import logging
import time

import numpy as np
from scipy.integrate import cumulative_trapezoid

from delaydensity.config import get_settings
from delaydensity.models.grid import Grid, GridAxis, SolverConfig
from delaydensity.models.kernels import DensityCurve, QuadratureAxis, QuadratureGrid, TransitionKernelHandle
from delaydensity.models.run_config import RunConfig, RunConfigError
from delaydensity.models.sdde import SDDEModel
from delaydensity.models.simulation import SimConfig
from delaydensity.services.augmentation_engine import build_augmented, check_model
from delaydensity.services.composition_service import (
    bridge_density,
    default_quadrature,
    density_at_time,
    segment_for_time,
)
from delaydensity.services.fokker_planck_engine import solve_kernel
from delaydensity.services.kernel_backends import analytic_kernel_handle, auto_grid, grid_kernel_handle
from delaydensity.services.montecarlo_service import (
    estimate_density,
    estimate_kernel,
    frequency_polygon_bins,
    simulate_sdde,
)

logger = logging.getLogger(__name__)


DENSITY_METHODS = ("analytic", "fp", "mc")
KERNEL_METHODS = ("analytic", "fp")


@dataclass(frozen=True, eq=False)
class TableResult:
    header: list[str]
    rows: np.ndarray
    diagnostics: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class ComparisonReport:
    methods: list[str]
    t: float
    metrics: list[dict[str, object]]
    runtimes: dict[str, float]

    def to_dict(self) -> dict[str, object]:
        return {"methods": self.methods, "t": self.t, "metrics": self.metrics, "runtime_seconds": self.runtimes}


def _require_method(method: str, allowed: tuple[str, ...]) -> str:
    normalized = (method or "").strip().lower()
    if normalized not in allowed:
        raise RunConfigError(f"Invalid method {method!r}. Allowed: {', '.join(allowed)}.")
    return normalized


def _model(config: RunConfig) -> SDDEModel:
    return check_model(config.model.to_model())


def abscissae(config: RunConfig) -> np.ndarray:
    block = config.output.abscissae
    return np.linspace(block.min, block.max, block.n)


def _solver_config(config: RunConfig, model: SDDEModel) -> SolverConfig:
    dt = config.solver.dt or get_settings().fp_dt_fraction * model.tau
    return SolverConfig(
        dt=dt,
        delta_init_eps=config.solver.delta_init_eps,
        implicitness=config.solver.implicitness,
        renormalize_each_step=config.solver.renormalize_each_step,
    )


def _explicit_grid(config: RunConfig, k: int) -> Grid | None:
    axes = config.grid.axes
    if not axes:
        return None
    if len(axes) < k:
        raise RunConfigError(f"grid.axes lists {len(axes)} axes; a {k}-segment kernel needs {k}.")
    return Grid(axes=tuple(GridAxis(min=axis.min, max=axis.max, n=axis.n) for axis in axes[:k]))


def kernel_factory(config: RunConfig, method: str) -> Callable[[int], TransitionKernelHandle]:
    """Kernel handles by segment count, built once per k."""
    method = _require_method(method, KERNEL_METHODS)
    model = _model(config)
    cache: dict[int, TransitionKernelHandle] = {}

    def kernel_for(k: int) -> TransitionKernelHandle:
        handle = cache.get(k)
        if handle is None:
            aug = build_augmented(model, k)
            if method == "analytic":
                handle = analytic_kernel_handle(aug)
            else:
                handle = grid_kernel_handle(
                    aug,
                    _solver_config(config, model),
                    grid=_explicit_grid(config, k),
                    nodes=config.grid.nodes,
                )
            cache[k] = handle
        return handle

    return kernel_for


def _quadrature(config: RunConfig, model: SDDEModel, t: float, method: str) -> QuadratureGrid | None:
    """Sheared layouts for analytic kernels; solver kernels keep plain windows, one solve per y row."""
    segment = segment_for_time(t, model.tau)
    points = config.quadrature.points or get_settings().quad_points
    if segment.branch == "first":
        return None
    if method == "fp" and config.quadrature.offsets != "none":
        raise RunConfigError("quadrature.offsets needs the analytic method; solver kernels use plain windows.")
    if config.quadrature.window is None:
        return default_quadrature(model, segment, points, offsets="auto" if method == "analytic" else "none")
    needed = segment.k - 1 if segment.branch == "multiple" else 2 * (segment.k - 1)
    if len(config.quadrature.window) != needed:
        raise RunConfigError(f"quadrature.window needs {needed} entries at t={t}, got {len(config.quadrature.window)}.")
    offsets = config.quadrature.offsets if segment.branch == "general" else "none"
    return QuadratureGrid(
        axes=tuple(QuadratureAxis(min=window.min, max=window.max, n=points) for window in config.quadrature.window),
        offsets=offsets,
    )


def _mc_config(config: RunConfig, t_max: float) -> SimConfig:
    block = config.mc
    return SimConfig(dt=block.dt, n_paths=block.n_paths, seed=block.seed, t_max=t_max)


def _mc_curve(config: RunConfig, model: SDDEModel, x: np.ndarray, t: float) -> DensityCurve:
    """Frequency polygon of the samples at t, normalized by the number of paths."""
    ensemble = simulate_sdde(model, _mc_config(config, t), [t])
    samples = ensemble.samples[:, 0]
    window = (config.mc.window.min, config.mc.window.max) if config.mc.window else (float(x[0]), float(x[-1]))
    bins = config.mc.bins or frequency_polygon_bins(samples, window)
    histogram = estimate_density(samples, bins=bins, window=window, over_all_samples=True)
    logger.debug("Monte Carlo curve t=%.6g bins=%s captured=%.6f", t, bins, histogram.mass)
    return DensityCurve(x=x, values=histogram.polygon(x), t=t, backends=("monte-carlo",))


def density_curve(config: RunConfig, t: float, method: str) -> DensityCurve:
    method = _require_method(method, DENSITY_METHODS)
    model = _model(config)
    x = abscissae(config)
    if method == "mc":
        return _mc_curve(config, model, x, t)
    return density_at_time(
        kernel_factory(config, method),
        model.history.gamma0,
        x,
        t,
        model.tau,
        _quadrature(config, model, t, method),
        noise_scale=model.s0 if model.additive_noise else None,
    )


def _diagnostics(curve: DensityCurve, method: str) -> dict[str, object]:
    return {
        "method": method,
        "t": curve.t,
        "mass": curve.mass,
        "backend": "+".join(curve.backends),
        "warnings": "; ".join(curve.warnings) if curve.warnings else "none",
    }


def run_density(config: RunConfig, t: float, method: str) -> TableResult:
    started = time.perf_counter()
    curve = density_curve(config, t, method)
    runtime = time.perf_counter() - started
    logger.info("Density computed method=%s t=%.6g mass=%.6f runtime=%.3fs", method, t, curve.mass, runtime)
    return TableResult(
        header=["x", "density"],
        rows=np.column_stack([curve.x, curve.values]),
        diagnostics=_diagnostics(curve, method),
    )


def compare_curves(x: np.ndarray, p: np.ndarray, q: np.ndarray) -> dict[str, float]:
    gap = np.abs(p - q)
    cdf_gap = np.abs(cumulative_trapezoid(p, x, initial=0.0) - cumulative_trapezoid(q, x, initial=0.0))
    return {
        "l1": float(np.trapezoid(gap, x)),
        "linf": float(gap.max()),
        "ks": float(cdf_gap.max()),
    }


def run_compare(config: RunConfig, t: float, methods: list[str]) -> tuple[TableResult, ComparisonReport]:
    methods = [_require_method(method, DENSITY_METHODS) for method in methods]
    if len(methods) < 2:
        raise RunConfigError("compare needs at least two methods.")
    curves: dict[str, DensityCurve] = {}
    runtimes: dict[str, float] = {}
    for method in methods:
        if method in curves:
            continue
        started = time.perf_counter()
        curves[method] = density_curve(config, t, method)
        runtimes[method] = round(time.perf_counter() - started, 6)

    x = abscissae(config)
    metrics = []
    for first, second in itertools.combinations(methods, 2):
        entry: dict[str, object] = {"methods": [first, second]}
        entry.update(compare_curves(x, curves[first].values, curves[second].values))
        metrics.append(entry)
        logger.info("Compared %s vs %s t=%.6g l1=%.3e linf=%.3e ks=%.3e", first, second, t, entry["l1"], entry["linf"], entry["ks"])

    columns = list(dict.fromkeys(methods))
    table = TableResult(
        header=["x", *columns],
        rows=np.column_stack([x, *(curves[method].values for method in columns)]),
        diagnostics={
            "t": t,
            "methods": ",".join(columns),
            **{f"mass_{method}": curves[method].mass for method in columns},
        },
    )
    return table, ComparisonReport(methods=methods, t=t, metrics=metrics, runtimes=runtimes)


def run_simulate(config: RunConfig, times: list[float], *, raw: bool = False) -> TableResult:
    model = _model(config)
    times = list(times) if times else list(config.mc.times)
    if not times:
        raise RunConfigError("simulate needs observation times (--times or mc.times).")
    ensemble = simulate_sdde(model, _mc_config(config, max(times)), times)
    diagnostics: dict[str, object] = {
        "n_paths": ensemble.n_paths,
        "dt": config.mc.dt,
        "seed": config.mc.seed,
    }
    if raw:
        paths = np.repeat(np.arange(ensemble.n_paths), len(times))
        stamps = np.tile(ensemble.times, ensemble.n_paths)
        return TableResult(
            header=["path", "time", "value"],
            rows=np.column_stack([paths, stamps, ensemble.samples.reshape(-1)]),
            diagnostics=diagnostics,
        )

    blocks = []
    window = config.mc.window
    for column, t in enumerate(ensemble.times):
        samples = ensemble.samples[:, column]
        histogram = estimate_density(samples, bins=config.mc.bins, window=(window.min, window.max) if window else None)
        diagnostics[f"mean_t{t:g}"] = float(samples.mean())
        diagnostics[f"variance_t{t:g}"] = float(samples.var(ddof=1))
        blocks.append(np.column_stack([np.full(histogram.heights.size, t), histogram.centers, histogram.heights]))
    return TableResult(header=["time", "bin_center", "density"], rows=np.vstack(blocks), diagnostics=diagnostics)


def _grid_rows(grid: Grid, values: np.ndarray) -> np.ndarray:
    coordinates = grid.mesh().reshape(-1, grid.dimension)
    return np.column_stack([coordinates, np.asarray(values).reshape(-1)])


def run_kernel(config: RunConfig, method: str = "fp") -> TableResult:
    """Q_k on solver grid nodes for the kernel block's conditioning point."""
    if config.kernel is None:
        raise RunConfigError("The kernel subcommand needs a kernel block.")
    method = _require_method(method, DENSITY_METHODS)
    block = config.kernel
    model = _model(config)
    aug = build_augmented(model, block.k)
    grid = _explicit_grid(config, block.k) or auto_grid(aug, block.v, block.s, block.t, config.grid.nodes or get_settings().grid_nodes)
    header = [f"x{i}" for i in range(1, block.k + 1)] + ["density"]
    diagnostics: dict[str, object] = {"method": method, "k": block.k, "s": block.s, "t": block.t}

    if method == "fp":
        solved = solve_kernel(aug, block.v, block.s, block.t, grid, _solver_config(config, model))
        diagnostics["mass"] = solved.mass
        diagnostics["warnings"] = "; ".join(solved.warnings) if solved.warnings else "none"
        return TableResult(header=header, rows=_grid_rows(grid, solved.values), diagnostics=diagnostics)

    if method == "mc":
        handle = estimate_kernel(aug, block.v, block.s, block.t, grid, _mc_config(config, block.t))
    else:
        handle = analytic_kernel_handle(aug)
    nodes = grid.mesh()
    values = handle.density(nodes, block.t, np.asarray(block.v, dtype=float), block.s)
    diagnostics["warnings"] = "; ".join(handle.notes) if handle.notes else "none"
    return TableResult(header=header, rows=_grid_rows(grid, values), diagnostics=diagnostics)


def run_bridge(config: RunConfig, method: str = "analytic") -> TableResult:
    if config.bridge is None:
        raise RunConfigError("The bridge subcommand needs a bridge block.")
    block = config.bridge
    model = _model(config)
    if not block.t_prime < model.tau:
        raise RunConfigError(f"bridge.t_prime must lie in (0, tau={model.tau}).")
    handle = kernel_factory(config, method)(block.k)
    if block.points is not None:
        points = np.asarray(block.points, dtype=float)
    else:
        window = block.window or config.output.abscissae
        points = np.linspace(window.min, window.max, window.n)[:, None]
    values = bridge_density(handle, points, block.t_prime, block.v0, block.v1)
    header = [f"u{i}" for i in range(1, block.k + 1)] + ["density"]
    diagnostics: dict[str, object] = {"method": method, "k": block.k, "t_prime": block.t_prime}
    if block.k == 1 and block.points is None:
        diagnostics["mass"] = float(np.trapezoid(values, points[:, 0]))
    return TableResult(header=header, rows=np.column_stack([points, values]), diagnostics=diagnostics)

