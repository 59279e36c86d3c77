from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


MIN_GRID_NODES = 8
MAX_SOLVER_DIMENSION = 3


@dataclass(frozen=True)
class GridAxis:
    min: float
    max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < MIN_GRID_NODES:
            raise ValueError(f"Grid axes need at least {MIN_GRID_NODES} nodes, got {self.n}.")
        if not self.max > self.min:
            raise ValueError(f"Grid axis [{self.min}, {self.max}] is empty.")

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n)


@dataclass(frozen=True)
class Grid:
    axes: tuple[GridAxis, ...]

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(axis.n for axis in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(axis.spacing for axis in self.axes)

    def node_vectors(self) -> list[np.ndarray]:
        return [axis.nodes() for axis in self.axes]

    def mesh(self) -> np.ndarray:
        """Node coordinates with shape (*grid.shape, dimension)."""
        return np.stack(np.meshgrid(*self.node_vectors(), indexing="ij"), axis=-1)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float).reshape(-1)
        return all(axis.min < value < axis.max for axis, value in zip(self.axes, p))


@dataclass(frozen=True, eq=False)
class DensityField:
    """A density sampled on grid nodes at time `time`; mass is the tensor-trapezoid integral."""

    grid: Grid
    values: np.ndarray
    time: float
    warnings: tuple[str, ...] = ()
    mass: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", trapezoid_mass(self.grid, self.values))


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    delta_init_eps: float | None = None
    boundary: str = "absorbing"
    renormalize_each_step: bool = False
    implicitness: float = 0.5


def trapezoid_mass(grid: Grid, values: np.ndarray) -> float:
    total = np.asarray(values, dtype=float)
    # Collapse the last axis first so the summation order is fixed.
    for axis in reversed(grid.axes):
        total = np.trapezoid(total, dx=axis.spacing, axis=-1)
    return float(total)
