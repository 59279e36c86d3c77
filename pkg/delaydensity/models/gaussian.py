from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Gaussian transition density with mean M @ v + offset and covariance cov."""

    k: int
    mean_map: np.ndarray
    offset: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentState:
    mean: np.ndarray
    cov: np.ndarray
    time: float
