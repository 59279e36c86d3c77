import numpy as np
import pytest
from scipy.stats import norm

from delaydensity.models.grid import Grid, GridAxis, SolverConfig
from delaydensity.models.sdde import SDDEModel, worked_example_model
from delaydensity.services.analytic_kernels import example_q2
from delaydensity.services.augmentation_engine import AssumptionViolationError, build_augmented
from delaydensity.services.fokker_planck_engine import (
    SolverError,
    SolverInputError,
    init_delta,
    interpolate,
    mass,
    solve_kernel,
)


def _make_brownian_system():
    return build_augmented(SDDEModel(a=0.0, b=0.0, c=0.0, s0=1.0), 1)


def _make_line(n: int, half_width: float = 8.0) -> Grid:
    return Grid(axes=(GridAxis(min=-half_width, max=half_width, n=n),))


def test_pure_diffusion_matches_heat_kernel() -> None:
    grid = _make_line(161)
    field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 1.0, grid, SolverConfig(dt=1e-3))
    nodes = grid.axes[0].nodes()
    l1 = np.trapezoid(np.abs(field.values - norm.pdf(nodes)), nodes)
    assert l1 < 1e-2
    assert mass(field) == pytest.approx(1.0, abs=1e-3)
    assert field.time == pytest.approx(1.0)


def test_pure_diffusion_error_shrinks_quadratically_with_spacing() -> None:
    errors = []
    for n in (81, 161):
        grid = _make_line(n)
        field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 1.0, grid, SolverConfig(dt=5e-4))
        errors.append(float(np.max(np.abs(field.values - norm.pdf(grid.axes[0].nodes())))))
    assert errors[0] / errors[1] >= 3.5


def test_heat_kernel_error_at_documented_resolution() -> None:
    errors = []
    for n in (401, 801):
        grid = _make_line(n)
        field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 1.0, grid, SolverConfig(dt=1e-3))
        errors.append(float(np.max(np.abs(field.values - norm.pdf(grid.axes[0].nodes())))))
    assert errors[1] <= 1e-3
    assert errors[0] / errors[1] >= 1.8


def test_two_segment_kernel_matches_closed_form() -> None:
    aug = build_augmented(worked_example_model(), 2)
    grid = Grid(axes=(GridAxis(min=-6.0, max=6.0, n=257), GridAxis(min=-6.0, max=6.0, n=257)))
    field = solve_kernel(aug, [0.0, 0.0], 0.0, 1.0, grid, SolverConfig(dt=5e-4))
    x1, x2 = np.meshgrid(*grid.node_vectors(), indexing="ij")
    exact = example_q2(x1, x2, 1.0, 0.0, 0.0, 0.0)
    gap = np.abs(field.values - exact)
    l1 = np.trapezoid(np.trapezoid(gap, grid.axes[1].nodes(), axis=1), grid.axes[0].nodes())
    assert field.mass == pytest.approx(1.0, abs=1e-3)
    assert l1 <= 5e-3
    assert field.values.min() >= -1e-6 * field.values.max()


def test_init_delta_is_normalized_gaussian() -> None:
    grid = _make_line(321)
    field = init_delta(grid, [0.5], _make_brownian_system(), 0.0, 0.04)
    assert field.time == pytest.approx(0.04)
    assert field.mass == pytest.approx(1.0, abs=1e-6)
    assert interpolate(field, [0.5]) == pytest.approx(norm.pdf(0.0, scale=0.2), rel=1e-2)


def test_solver_rejects_degenerate_and_mismatched_requests() -> None:
    aug = _make_brownian_system()
    grid = _make_line(41)
    with pytest.raises(SolverInputError):
        solve_kernel(aug, [0.0], 0.5, 0.5, grid, SolverConfig(dt=1e-2))
    with pytest.raises(SolverInputError):
        solve_kernel(aug, [20.0], 0.0, 0.5, grid, SolverConfig(dt=1e-2))
    with pytest.raises(SolverInputError):
        solve_kernel(build_augmented(worked_example_model(), 2), [0.0, 0.0], 0.0, 0.5, grid, SolverConfig(dt=1e-2))
    with pytest.raises(SolverInputError):
        solve_kernel(aug, [0.0], 0.0, 0.5, grid, SolverConfig(dt=1e-2, boundary="reflecting"))


def test_solver_refuses_model_without_ellipticity() -> None:
    aug = build_augmented(SDDEModel(s0=0.5, s1=1.0), 1)
    grid = _make_line(41, half_width=3.0)
    with pytest.raises(AssumptionViolationError) as excinfo:
        solve_kernel(aug, [0.0], 0.0, 0.5, grid, SolverConfig(dt=1e-2))
    assert excinfo.value.value < 0.0


def test_cfl_violation_is_a_solver_error() -> None:
    aug = build_augmented(SDDEModel(a=50.0), 1)
    grid = _make_line(101, half_width=5.0)
    with pytest.raises(SolverError):
        solve_kernel(aug, [0.0], 0.0, 0.5, grid, SolverConfig(dt=1e-2))


def test_mass_loss_through_boundary_is_reported() -> None:
    grid = _make_line(41, half_width=1.0)
    field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 1.0, grid, SolverConfig(dt=1e-3))
    assert field.mass < 0.9
    assert any(message.startswith("mass loss") for message in field.warnings)


def test_interpolate_is_zero_outside_grid() -> None:
    grid = _make_line(81)
    field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 0.5, grid, SolverConfig(dt=1e-3))
    assert interpolate(field, [9.0]) == 0.0
    values = interpolate(field, np.array([[0.0], [1.0]]))
    assert values.shape == (2,)
    assert values[0] > values[1] > 0.0


def test_renormalizing_each_step_keeps_unit_mass() -> None:
    grid = _make_line(41, half_width=1.0)
    cfg = SolverConfig(dt=1e-3, renormalize_each_step=True)
    field = solve_kernel(_make_brownian_system(), [0.0], 0.0, 1.0, grid, cfg)
    assert field.mass == pytest.approx(1.0, abs=1e-9)
    assert not any(message.startswith("mass loss") for message in field.warnings)


def test_grid_axes_need_nodes_and_extent() -> None:
    with pytest.raises(ValueError):
        GridAxis(min=-1.0, max=1.0, n=4)
    with pytest.raises(ValueError):
        GridAxis(min=1.0, max=1.0, n=16)
