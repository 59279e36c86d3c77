from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


MIN_HISTOGRAM_SAMPLES = 1000


@dataclass(frozen=True)
class SimConfig:
    """Euler-Maruyama settings; tau must be an integer multiple of dt."""

    dt: float
    n_paths: int
    seed: int
    t_max: float


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """X(t) samples, one row per path and one column per observation time."""

    times: np.ndarray
    samples: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.samples.shape[0])

    def at(self, t: float) -> np.ndarray:
        index = int(np.argmin(np.abs(self.times - t)))
        return self.samples[:, index]


@dataclass(frozen=True, eq=False)
class SegmentedEnsemble:
    """Augmented-system samples: (n_paths, k, len(times)) with times local to [0, tau]."""

    times: np.ndarray
    samples: np.ndarray

    @property
    def k(self) -> int:
        return int(self.samples.shape[1])

    def segment(self, i: int) -> np.ndarray:
        return self.samples[:, i - 1, :]


@dataclass(frozen=True, eq=False)
class HistogramDensity:
    edges: np.ndarray
    heights: np.ndarray
    count: int
    mass: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", float(np.sum(self.heights * np.diff(self.edges))))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def polygon(self, x) -> np.ndarray:
        """Frequency polygon: linear between bin centres, falling to zero one bin past either end."""
        widths = np.diff(self.edges)
        centers = self.centers
        knots = np.concatenate([[centers[0] - widths[0]], centers, [centers[-1] + widths[-1]]])
        heights = np.concatenate([[0.0], self.heights, [0.0]])
        return np.interp(np.asarray(x, dtype=float), knots, heights, left=0.0, right=0.0)
