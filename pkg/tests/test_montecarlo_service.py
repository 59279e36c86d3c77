import math

import numpy as np
import pytest
from scipy.stats import kstest, norm

from delaydensity.models.grid import Grid, GridAxis
from delaydensity.models.kernels import KernelQueryError
from delaydensity.models.sdde import SDDEModel, worked_example_model
from delaydensity.models.simulation import SimConfig
from delaydensity.services.analytic_kernels import heat_kernel_q1
from delaydensity.services.augmentation_engine import build_augmented
from delaydensity.services.montecarlo_service import (
    SimulationConfigError,
    estimate_density,
    estimate_kernel,
    euler_maruyama_paths,
    frequency_polygon_bins,
    simulate_augmented,
    simulate_augmented_from,
    simulate_sdde,
)
from delaydensity.services.noise_streams import brownian_increments, standard_normals, uniform_stream


def _make_config(n_paths: int = 200, dt: float = 0.01, seed: int = 7, t_max: float = 2.0) -> SimConfig:
    return SimConfig(dt=dt, n_paths=n_paths, seed=seed, t_max=t_max)


def test_noise_depends_only_on_seed_path_and_step() -> None:
    full = uniform_stream(11, 3, 0, 40)
    np.testing.assert_array_equal(uniform_stream(11, 3, 5, 20), full[5:25])
    np.testing.assert_array_equal(uniform_stream(11, 3, 12, 1), full[12:13])
    assert np.all((full > 0.0) & (full < 1.0))
    assert not np.array_equal(uniform_stream(11, 4, 0, 40), full)
    assert not np.array_equal(uniform_stream(12, 3, 0, 40), full)
    assert standard_normals(11, 3, 0, 40) == pytest.approx(norm.ppf(full))


def test_segment_increments_are_uncorrelated() -> None:
    m = 50
    increments = brownian_increments(5, range(4000), 0, 2 * m, 0.02)
    first = increments[:, :m].sum(axis=1)
    second = increments[:, m:].sum(axis=1)
    assert abs(np.corrcoef(first, second)[0, 1]) < 4.0 / math.sqrt(4000)


def test_simulation_is_bitwise_identical_across_workers_and_chunks(monkeypatch) -> None:
    model = worked_example_model()
    cfg = _make_config(n_paths=300)
    monkeypatch.setenv("DELAYDENSITY_WORKERS", "1")
    monkeypatch.setenv("DELAYDENSITY_CHUNK_PATHS", "4096")
    serial = simulate_sdde(model, cfg, [1.0, 2.0])
    monkeypatch.setenv("DELAYDENSITY_WORKERS", "4")
    monkeypatch.setenv("DELAYDENSITY_CHUNK_PATHS", "37")
    threaded = simulate_sdde(model, cfg, [1.0, 2.0])
    np.testing.assert_array_equal(serial.samples, threaded.samples)


def test_augmented_segments_equal_sdde_path_exactly() -> None:
    model = worked_example_model()
    cfg = _make_config(n_paths=200)
    m = 100
    sdde = simulate_sdde(model, cfg, np.arange(2 * m + 1) * cfg.dt)
    augmented = simulate_augmented(build_augmented(model, 2), cfg)
    np.testing.assert_array_equal(augmented.segment(1), sdde.samples[:, : m + 1])
    np.testing.assert_array_equal(augmented.segment(2), sdde.samples[:, m:])


def test_single_segment_reduces_to_sdde_on_first_interval() -> None:
    model = worked_example_model()
    cfg = _make_config(n_paths=50)
    sdde = simulate_sdde(model, cfg, [0.25, 0.5, 1.0])
    augmented = simulate_augmented(build_augmented(model, 1), cfg, [0.25, 0.5, 1.0])
    np.testing.assert_array_equal(augmented.segment(1), sdde.samples)


def test_worked_example_moments() -> None:
    """Reduced from 1e5 paths at dt=1e-3 to keep the suite fast; tolerances scale with the standard error."""
    n = 20_000
    ensemble = simulate_sdde(worked_example_model(), _make_config(n_paths=n), [1.0, 2.0])
    for t, variance in ((1.0, 1.0), (2.0, 10.0 / 3.0)):
        samples = ensemble.at(t)
        assert abs(samples.mean()) < 4.0 * math.sqrt(variance / n)
        assert abs(samples.var(ddof=1) - variance) < 4.0 * variance * math.sqrt(2.0 / n)


def test_driftless_model_is_brownian() -> None:
    n = 5000
    model = SDDEModel(a=0.0, b=0.0, c=0.0, s0=1.0)
    samples = simulate_sdde(model, _make_config(n_paths=n, seed=2024), [1.0]).samples[:, 0]
    assert kstest(samples, "norm").statistic < 1.95 / math.sqrt(n)


def test_strong_error_halves_with_step() -> None:
    model = worked_example_model()
    fine = brownian_increments(3, range(2000), 0, 400, 0.005)
    levels = []
    for factor, dt in ((4, 0.02), (2, 0.01), (1, 0.005)):
        coarse = fine.reshape(2000, 400 // factor, factor).sum(axis=2)
        levels.append(euler_maruyama_paths(model, coarse, dt)[:, -1])
    first = np.mean(np.abs(levels[0] - levels[1]))
    second = np.mean(np.abs(levels[1] - levels[2]))
    assert first / second >= 1.8


def test_simulation_rejects_bad_grids() -> None:
    model = worked_example_model()
    with pytest.raises(SimulationConfigError):
        simulate_sdde(model, _make_config(dt=0.3), [0.6])
    with pytest.raises(SimulationConfigError):
        simulate_sdde(model, _make_config(), [0.555])
    with pytest.raises(SimulationConfigError):
        simulate_sdde(model, _make_config(t_max=1.0), [2.0])
    with pytest.raises(SimulationConfigError):
        simulate_sdde(model, SimConfig(dt=0.01, n_paths=0, seed=1, t_max=1.0), [1.0])


def test_histogram_of_normal_samples() -> None:
    samples = np.random.default_rng(17).standard_normal(1_000_000)
    histogram = estimate_density(samples, bins=100, window=(-5.0, 5.0))
    widths = np.diff(histogram.edges)
    l1 = np.sum(np.abs(histogram.heights - norm.pdf(histogram.centers)) * widths)
    assert l1 <= 0.01
    assert histogram.mass == pytest.approx(1.0)


def test_histogram_of_constant_samples_is_one_bin() -> None:
    histogram = estimate_density(np.full(1000, 2.0))
    assert np.count_nonzero(histogram.heights) == 1
    assert histogram.mass == pytest.approx(1.0)
    assert histogram.polygon(2.0) > 0.0
    assert histogram.polygon(10.0) == 0.0


def test_histogram_over_all_samples_keeps_the_captured_fraction() -> None:
    samples = np.random.default_rng(5).standard_normal(100_000)
    inside_only = estimate_density(samples, bins=40, window=(-1.0, 1.0))
    over_all = estimate_density(samples, bins=40, window=(-1.0, 1.0), over_all_samples=True)
    assert inside_only.mass == pytest.approx(1.0)
    assert over_all.mass == pytest.approx(0.6827, abs=1e-2)
    assert over_all.count == inside_only.count


def test_frequency_polygon_of_normal_samples() -> None:
    samples = np.random.default_rng(23).standard_normal(100_000)
    bins = frequency_polygon_bins(samples, (-5.0, 5.0))
    assert bins == 47
    histogram = estimate_density(samples, bins=bins, window=(-5.0, 5.0), over_all_samples=True)
    x = np.linspace(-5.0, 5.0, 1001)
    assert np.trapezoid(np.abs(histogram.polygon(x) - norm.pdf(x)), x) <= 2e-2
    assert frequency_polygon_bins(np.full(1000, 2.0), (1.5, 2.5)) == 200


def test_histogram_input_checks() -> None:
    with pytest.raises(SimulationConfigError):
        estimate_density(np.zeros(999))
    with pytest.raises(SimulationConfigError):
        estimate_density(np.zeros(2000), window=(1.0, 1.0))


def test_kernel_estimate_matches_heat_kernel() -> None:
    aug = build_augmented(worked_example_model(), 1)
    grid = Grid(axes=(GridAxis(min=-5.0, max=5.0, n=41),))
    handle = estimate_kernel(aug, [0.0], 0.0, 1.0, grid, _make_config(n_paths=20_000, t_max=1.0))
    nodes = grid.axes[0].nodes()
    values = handle.density(nodes[:, None], 1.0, np.array([0.0]), 0.0)
    assert handle.backend == "monte-carlo"
    assert np.sum(np.abs(values - heat_kernel_q1(nodes, 1.0, 0.0, 0.0))) * grid.axes[0].spacing <= 0.05
    assert np.sum(values) * grid.axes[0].spacing == pytest.approx(1.0, abs=0.02)
    with pytest.raises(KernelQueryError):
        handle.density(nodes[:, None], 1.0, np.array([0.5]), 0.0)
    with pytest.raises(KernelQueryError):
        handle.density(nodes[:, None], 0.5, np.array([0.0]), 0.0)


def test_two_segment_samples_have_closed_form_covariance() -> None:
    n = 20_000
    aug = build_augmented(worked_example_model(), 2)
    samples = simulate_augmented_from(aug, _make_config(n_paths=n, t_max=1.0), [0.0, 0.0], 0.0, 1.0)
    assert samples.shape == (n, 2)
    np.testing.assert_allclose(np.cov(samples, rowvar=False), [[1.0, 0.5], [0.5, 4.0 / 3.0]], atol=0.06)
    with pytest.raises(SimulationConfigError):
        simulate_augmented_from(aug, _make_config(), [0.0, 0.0], 0.0, 1.5)
