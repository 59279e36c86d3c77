from __future__ import annotations

import numpy as np

from delaydensity.models.kernels import QuadratureGrid


def tensor_nodes(quad: QuadratureGrid) -> np.ndarray:
    """All nodes as an (N, d) array, last axis varying fastest."""
    vectors = [axis.nodes() for axis in quad.axes]
    return np.stack(np.meshgrid(*vectors, indexing="ij"), axis=-1).reshape(-1, quad.dimension)


def tensor_weights(quad: QuadratureGrid) -> np.ndarray:
    weights = np.ones(1)
    for axis in quad.axes:
        weights = np.multiply.outer(weights, axis.weights()).reshape(-1)
    return weights


def integrate(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum over the last axis.

    Uses numpy pairwise summation rather than BLAS so the order does not depend on threading.
    """
    return np.sum(np.asarray(values) * weights, axis=-1)
