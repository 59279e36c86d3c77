from delaydensity.models.gaussian import GaussianKernel, MomentState
from delaydensity.models.grid import DensityField, Grid, GridAxis, SolverConfig
from delaydensity.models.kernels import DensityCurve, QuadratureAxis, QuadratureGrid, TransitionKernelHandle
from delaydensity.models.run_config import RunConfig
from delaydensity.models.sdde import AugmentedSystem, HistoryFunction, Rectangle, SDDEModel, ValidationReport
from delaydensity.models.simulation import HistogramDensity, PathEnsemble, SegmentedEnsemble, SimConfig

__all__ = [
    "AugmentedSystem",
    "DensityCurve",
    "DensityField",
    "GaussianKernel",
    "Grid",
    "GridAxis",
    "HistogramDensity",
    "HistoryFunction",
    "MomentState",
    "PathEnsemble",
    "QuadratureAxis",
    "QuadratureGrid",
    "Rectangle",
    "RunConfig",
    "SDDEModel",
    "SegmentedEnsemble",
    "SimConfig",
    "SolverConfig",
    "TransitionKernelHandle",
    "ValidationReport",
]
