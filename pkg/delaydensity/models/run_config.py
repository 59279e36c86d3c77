from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from delaydensity.models.sdde import HistoryFunction, SDDEModel


class RunConfigError(ValueError):
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    s0: float = 1.0
    s1: float = 0.0
    s2: float = 0.0
    tau: float = Field(default=1.0, gt=0)
    history: list[float] = Field(default_factory=lambda: [0.0], min_length=1)

    def to_model(self) -> SDDEModel:
        return SDDEModel(
            a=self.a,
            b=self.b,
            c=self.c,
            s0=self.s0,
            s1=self.s1,
            s2=self.s2,
            tau=self.tau,
            history=HistoryFunction(tuple(self.history)),
        )


class AxisBlock(_Block):
    min: float
    max: float
    n: int = Field(ge=8)

    @model_validator(mode="after")
    def _window_not_empty(self) -> AxisBlock:
        if not self.max > self.min:
            raise ValueError(f"axis window [{self.min}, {self.max}] is empty")
        return self


class GridBlock(_Block):
    """Explicit axes are shared by all kernels (a k-segment kernel uses the first k); empty means automatic grids."""

    axes: list[AxisBlock] = Field(default_factory=list, max_length=3)
    nodes: int | None = Field(default=None, ge=8)


class SolverBlock(_Block):
    dt: float | None = Field(default=None, gt=0)
    delta_init_eps: float | None = Field(default=None, gt=0)
    implicitness: float = Field(default=0.5, ge=0.5, le=1.0)
    renormalize_each_step: bool = False


class WindowBlock(_Block):
    min: float
    max: float

    @model_validator(mode="after")
    def _window_not_empty(self) -> WindowBlock:
        if not self.max > self.min:
            raise ValueError(f"window [{self.min}, {self.max}] is empty")
        return self


class QuadratureBlock(_Block):
    """Explicit windows list the x-axes, then the y-axes (values, or offsets when `offsets` is not "none")."""

    window: list[WindowBlock] | None = None
    points: int | None = Field(default=None, ge=16)
    offsets: Literal["none", "forward", "backward"] = "none"


class MonteCarloBlock(_Block):
    dt: float = Field(default=1e-3, gt=0)
    n_paths: int = Field(default=10_000, ge=1)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    times: list[float] = Field(default_factory=list)
    bins: int | None = Field(default=None, ge=1)
    window: WindowBlock | None = None


class AbscissaeBlock(_Block):
    min: float = -5.0
    max: float = 5.0
    n: int = Field(default=201, ge=2)


class OutputBlock(_Block):
    path: str | None = None
    format: Literal["csv"] = "csv"
    abscissae: AbscissaeBlock = Field(default_factory=AbscissaeBlock)


class KernelBlock(_Block):
    k: int = Field(default=1, ge=1, le=3)
    v: list[float]
    s: float = Field(default=0.0, ge=0)
    t: float = Field(gt=0)

    @model_validator(mode="after")
    def _shape(self) -> KernelBlock:
        if len(self.v) != self.k:
            raise ValueError(f"kernel.v needs {self.k} values")
        if not self.t > self.s:
            raise ValueError("kernel.t must exceed kernel.s")
        return self


class BridgeBlock(_Block):
    k: int = Field(default=1, ge=1, le=3)
    v0: list[float]
    v1: list[float]
    t_prime: float = Field(gt=0)
    window: AbscissaeBlock | None = None
    points: list[list[float]] | None = None

    @model_validator(mode="after")
    def _shape(self) -> BridgeBlock:
        if len(self.v0) != self.k or len(self.v1) != self.k:
            raise ValueError(f"bridge.v0 and bridge.v1 need {self.k} values")
        if self.points is None and self.k != 1:
            raise ValueError("bridge.points is required when k > 1")
        if self.points is not None and any(len(point) != self.k for point in self.points):
            raise ValueError(f"every bridge point needs {self.k} values")
        return self


class RunConfig(_Block):
    model: ModelBlock = Field(default_factory=ModelBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    quadrature: QuadratureBlock = Field(default_factory=QuadratureBlock)
    mc: MonteCarloBlock = Field(default_factory=MonteCarloBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)
    kernel: KernelBlock | None = None
    bridge: BridgeBlock | None = None


def parse_run_config(document: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        raise RunConfigError(f"Invalid run configuration: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise RunConfigError(f"Cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"Configuration {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise RunConfigError("Configuration must be a JSON object.")
    return parse_run_config(document)
