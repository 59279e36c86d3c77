from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import logging
import math
import time

import numpy as np

from delaydensity.config import get_settings
from delaydensity.models.grid import DensityField, Grid
from delaydensity.models.kernels import KernelQueryError, TransitionKernelHandle
from delaydensity.models.sdde import AugmentedSystem, SDDEModel
from delaydensity.models.simulation import (
    MIN_HISTOGRAM_SAMPLES,
    HistogramDensity,
    PathEnsemble,
    SegmentedEnsemble,
    SimConfig,
)
from delaydensity.services.augmentation_engine import check_model, eval_diffusion, eval_drift, history_eval
from delaydensity.services.fokker_planck_engine import field_interpolator
from delaydensity.services.noise_streams import SEED_MAX, brownian_increments

logger = logging.getLogger(__name__)


GRID_TOLERANCE = 1e-9
KERNEL_POINT_TOLERANCE = 1e-12
FREQUENCY_POLYGON_FACTOR = 2.15


class SimulationConfigError(ValueError):
    pass


def _check_config(cfg: SimConfig) -> None:
    if not cfg.dt > 0.0:
        raise SimulationConfigError(f"dt must be positive, got {cfg.dt}.")
    if cfg.n_paths < 1:
        raise SimulationConfigError(f"n_paths must be at least 1, got {cfg.n_paths}.")
    if not 0 <= cfg.seed <= SEED_MAX:
        raise SimulationConfigError(f"Seed must be a 64-bit unsigned integer, got {cfg.seed}.")


def _steps_for(duration: float, dt: float, what: str) -> int:
    steps = int(round(duration / dt))
    if abs(steps * dt - duration) > GRID_TOLERANCE * max(1.0, abs(duration)):
        raise SimulationConfigError(f"{what} {duration} is not an integer multiple of dt={dt}.")
    return steps


def delay_steps(model: SDDEModel, dt: float) -> int:
    m = _steps_for(model.tau, dt, "Delay tau")
    if m < 1:
        raise SimulationConfigError(f"dt={dt} exceeds the delay tau={model.tau}.")
    return m


def _history_lags(model: SDDEModel, m: int, dt: float) -> np.ndarray:
    # Delayed value at step j < m is X((j - m) dt) = gamma((m - j) dt).
    return np.asarray(history_eval(model.history, (m - np.arange(m)) * dt, model.tau), dtype=float).reshape(m)


def _em_step(model: SDDEModel, x, y, dt: float, dw):
    return x + model.drift(x, y) * dt + model.diffusion(x, y) * dw


def euler_maruyama_paths(model: SDDEModel, increments, dt: float) -> np.ndarray:
    """Explicit Euler-Maruyama for the delay equation driven by the given dB matrix.

    increments has shape (n_paths, n_steps); the result holds X at steps 0..n_steps.
    """
    check_model(model)
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    m = delay_steps(model, dt)
    n_paths, n_steps = increments.shape
    lags = _history_lags(model, m, dt)
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = model.history.gamma0
    for j in range(n_steps):
        delayed = lags[j] if j < m else paths[:, j - m]
        paths[:, j + 1] = _em_step(model, paths[:, j], delayed, dt, increments[:, j])
    return paths


def _chunks(n_paths: int) -> list[range]:
    size = get_settings().chunk_paths
    return [range(start, min(start + size, n_paths)) for start in range(0, n_paths, size)]


def _run_chunks(work, n_paths: int) -> list[np.ndarray]:
    chunks = _chunks(n_paths)
    workers = get_settings().workers
    if workers == 1 or len(chunks) == 1:
        return [work(chunk) for chunk in chunks]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(work, chunks))


def _observation_steps(times, dt: float, horizon: float) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise SimulationConfigError("At least one observation time is required.")
    if np.any(times < 0.0) or np.any(times > horizon + GRID_TOLERANCE):
        raise SimulationConfigError(f"Observation times must lie in [0, {horizon}].")
    return np.array([_steps_for(t, dt, "Observation time") for t in times], dtype=int)


def simulate_sdde(model: SDDEModel, cfg: SimConfig, times) -> PathEnsemble:
    _check_config(cfg)
    check_model(model)
    delay_steps(model, cfg.dt)
    columns = _observation_steps(times, cfg.dt, cfg.t_max)
    n_steps = int(columns.max())
    started = time.perf_counter()

    def work(chunk: range) -> np.ndarray:
        increments = brownian_increments(cfg.seed, chunk, 0, n_steps, cfg.dt)
        return euler_maruyama_paths(model, increments, cfg.dt)[:, columns]

    samples = np.vstack(_run_chunks(work, cfg.n_paths))
    logger.info(
        "SDDE simulated paths=%s steps=%s runtime=%.3fs",
        cfg.n_paths,
        n_steps,
        time.perf_counter() - started,
    )
    return PathEnsemble(times=np.atleast_1d(np.asarray(times, dtype=float)), samples=samples)


def _segment_paths(aug: AugmentedSystem, increments: np.ndarray, dt: float, m: int) -> np.ndarray:
    """Segments chained by X_i(0) = X_{i-1}(tau); segment i uses increments [(i-1)m, im)."""
    model = aug.model
    lags = _history_lags(model, m, dt)
    n_paths = increments.shape[0]
    segments = np.empty((n_paths, aug.k, m + 1))
    for i in range(aug.k):
        x = segments[:, i, :]
        x[:, 0] = model.history.gamma0 if i == 0 else segments[:, i - 1, m]
        for step in range(m):
            delayed = lags[step] if i == 0 else segments[:, i - 1, step]
            x[:, step + 1] = _em_step(model, x[:, step], delayed, dt, increments[:, i * m + step])
    return segments


def simulate_augmented(aug: AugmentedSystem, cfg: SimConfig, times=None) -> SegmentedEnsemble:
    """Augmented system under the continuous condition, observed at local times t' in [0, tau]."""
    _check_config(cfg)
    check_model(aug.model)
    m = delay_steps(aug.model, cfg.dt)
    if times is None:
        times = np.arange(m + 1) * cfg.dt
    columns = _observation_steps(times, cfg.dt, aug.tau)
    started = time.perf_counter()

    def work(chunk: range) -> np.ndarray:
        increments = brownian_increments(cfg.seed, chunk, 0, aug.k * m, cfg.dt)
        return _segment_paths(aug, increments, cfg.dt, m)[:, :, columns]

    samples = np.concatenate(_run_chunks(work, cfg.n_paths), axis=0)
    logger.info(
        "Augmented system simulated k=%s paths=%s runtime=%.3fs",
        aug.k,
        cfg.n_paths,
        time.perf_counter() - started,
    )
    return SegmentedEnsemble(times=np.atleast_1d(np.asarray(times, dtype=float)), samples=samples)


def simulate_augmented_from(aug: AugmentedSystem, cfg: SimConfig, v, s: float, t: float) -> np.ndarray:
    """Augmented system started at every segment from v at local time s; samples at t, shape (n_paths, k)."""
    _check_config(cfg)
    check_model(aug.model)
    start = np.asarray(v, dtype=float).reshape(-1)
    if start.size != aug.k:
        raise SimulationConfigError(f"Start point needs {aug.k} values, got {start.size}.")
    if not 0.0 <= s < t <= aug.tau + GRID_TOLERANCE:
        raise SimulationConfigError(f"Need 0 <= s < t <= tau, got s={s}, t={t}.")
    steps = _steps_for(t - s, cfg.dt, "Interval t - s")
    if steps < 1:
        raise SimulationConfigError(f"dt={cfg.dt} exceeds the interval t - s={t - s}.")

    def work(chunk: range) -> np.ndarray:
        increments = brownian_increments(cfg.seed, chunk, 0, aug.k * steps, cfg.dt)
        increments = increments.reshape(len(chunk), aug.k, steps)
        state = np.broadcast_to(start, (len(chunk), aug.k)).copy()
        for step in range(steps):
            t_prime = min(s + step * cfg.dt, aug.tau)
            state = (
                state
                + eval_drift(aug, state, t_prime) * cfg.dt
                + eval_diffusion(aug, state, t_prime) * increments[:, :, step]
            )
        return state

    return np.concatenate(_run_chunks(work, cfg.n_paths), axis=0)


def frequency_polygon_bins(samples, window: tuple[float, float]) -> int:
    """Bin count for a frequency polygon: width 2.15 * sd * n**(-1/5), the normal-reference rule."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    spread = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    if not spread > 0.0:
        return get_settings().hist_bins
    width = FREQUENCY_POLYGON_FACTOR * spread * samples.size ** (-0.2)
    return max(1, math.ceil((window[1] - window[0]) / width))


def estimate_density(
    samples,
    bins: int | None = None,
    window: tuple[float, float] | None = None,
    *,
    over_all_samples: bool = False,
) -> HistogramDensity:
    """Histogram normalized over the samples inside the window, or over all of them.

    With `over_all_samples` the mass is the captured fraction, so a window that cuts the
    tails does not inflate the heights.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < MIN_HISTOGRAM_SAMPLES:
        raise SimulationConfigError(f"Density estimation needs at least {MIN_HISTOGRAM_SAMPLES} samples, got {samples.size}.")
    bins = bins or get_settings().hist_bins
    if window is None:
        low, high = float(samples.min()), float(samples.max())
        if high == low:
            low, high = low - 0.5, high + 0.5
    else:
        low, high = float(window[0]), float(window[1])
    if not high > low:
        raise SimulationConfigError(f"Histogram window [{low}, {high}] is empty.")
    counts, edges = np.histogram(samples, bins=bins, range=(low, high))
    inside = int(counts.sum())
    if inside == 0:
        raise SimulationConfigError(f"No samples fall inside the window [{low}, {high}].")
    total = samples.size if over_all_samples else inside
    heights = counts / (total * np.diff(edges))
    return HistogramDensity(edges=edges, heights=heights, count=inside)


def _cell_edges(grid: Grid) -> list[np.ndarray]:
    edges = []
    for axis in grid.axes:
        nodes = axis.nodes()
        half = 0.5 * axis.spacing
        edges.append(np.concatenate([nodes - half, [nodes[-1] + half]]))
    return edges


def estimate_kernel(
    aug: AugmentedSystem,
    v,
    s: float,
    t: float,
    grid: Grid,
    cfg: SimConfig,
) -> TransitionKernelHandle:
    """Histogram estimate of Q_k(.; t | v; s) on the cells centred at the grid nodes."""
    if grid.dimension != aug.k:
        raise SimulationConfigError(f"Grid dimension {grid.dimension} does not match k={aug.k}.")
    start = np.asarray(v, dtype=float).reshape(-1)
    samples = simulate_augmented_from(aug, cfg, start, s, t)
    counts, _ = np.histogramdd(samples, bins=_cell_edges(grid))
    volume = float(np.prod(grid.spacings))
    field = DensityField(grid=grid, values=counts / (cfg.n_paths * volume), time=t)
    captured = float(counts.sum()) / cfg.n_paths

    notes: list[str] = []
    if 1.0 - captured > get_settings().mass_warn_fraction:
        notes.append(f"monte-carlo samples outside grid: {1.0 - captured:.3e}")
        logger.warning("Kernel estimate lost samples outside grid k=%s fraction=%.3e", aug.k, 1.0 - captured)
    interpolator = field_interpolator(field)

    def evaluate(u, t_query, v_query, s_query):
        same_point = np.all(np.abs(v_query - start) <= KERNEL_POINT_TOLERANCE * np.maximum(1.0, np.abs(start)))
        if not same_point or abs(t_query - t) > GRID_TOLERANCE or abs(s_query - s) > GRID_TOLERANCE:
            raise KernelQueryError(
                f"Monte Carlo kernel was built for v={start.tolist()}, s={s}, t={t}; "
                f"got s={s_query}, t={t_query}."
            )
        return interpolator(u.reshape(-1, aug.k)).reshape(u.shape[:-1])

    return TransitionKernelHandle(k=aug.k, backend="monte-carlo", tau=aug.tau, evaluator=evaluate, notes=notes)
