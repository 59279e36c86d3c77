from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np


KERNEL_BACKENDS = ("analytic", "grid", "monte-carlo")
QUADRATURE_OFFSETS = ("none", "forward", "backward")
MIN_QUADRATURE_POINTS = 16

KernelEvaluator = Callable[[np.ndarray, float, np.ndarray, float], np.ndarray]


class KernelQueryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionKernelHandle:
    """Evaluator for Q_k(u; t | v; s), whatever produced it."""

    k: int
    backend: str
    tau: float
    evaluator: KernelEvaluator
    notes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.backend not in KERNEL_BACKENDS:
            raise KernelQueryError(f"Unknown kernel backend {self.backend!r}; expected one of {KERNEL_BACKENDS}.")

    def density(self, u, t: float, v, s: float):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.ndim == 0 or v.ndim == 0 or u.shape[-1] != self.k or v.shape[-1] != self.k:
            raise KernelQueryError(f"Kernel points must have trailing dimension {self.k}.")
        u, v = np.broadcast_arrays(u, v)
        values = self.evaluator(u, float(t), v, float(s))
        if np.ndim(values) == 0:
            return float(values)
        return np.asarray(values)


@dataclass(frozen=True)
class QuadratureAxis:
    min: float
    max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < MIN_QUADRATURE_POINTS:
            raise ValueError(f"Quadrature axes need at least {MIN_QUADRATURE_POINTS} points, got {self.n}.")
        if not self.max > self.min:
            raise ValueError(f"Quadrature window [{self.min}, {self.max}] is empty.")

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.n)

    def weights(self) -> np.ndarray:
        h = self.spacing
        weights = np.full(self.n, h)
        weights[0] = weights[-1] = 0.5 * h
        return weights


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor trapezoid grid over (xs, ys).

    With `offsets="none"` the y-axes hold the values y_i themselves. "forward" stores
    d_i = x_{i+1} - y_i (x_k being the target point) and "backward" stores d_i = y_i - x_i,
    so the grid follows the narrow ridge of the short-lag factor. Both shears have unit Jacobian.
    """

    axes: tuple[QuadratureAxis, ...]
    rule: str = "trapezoid"
    offsets: str = "none"

    def __post_init__(self) -> None:
        if self.offsets not in QUADRATURE_OFFSETS:
            raise ValueError(f"Unknown quadrature offsets {self.offsets!r}; expected one of {QUADRATURE_OFFSETS}.")

    @property
    def dimension(self) -> int:
        return len(self.axes)


@dataclass(frozen=True, eq=False)
class DensityCurve:
    x: np.ndarray
    values: np.ndarray
    t: float
    backends: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()
    mass: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", float(np.trapezoid(self.values, self.x)) if len(self.x) > 1 else 0.0)
