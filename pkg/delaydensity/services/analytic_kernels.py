from __future__ import annotations

import logging
import math

import numpy as np
from scipy.linalg import expm, solve_triangular

from delaydensity.models.gaussian import GaussianKernel, MomentState
from delaydensity.models.sdde import AugmentedSystem, SDDEModel
from delaydensity.services.augmentation_engine import history_eval

logger = logging.getLogger(__name__)


MOMENT_STEPS = 1000
SDDE_MOMENT_STEPS_PER_DELAY = 200


class AnalyticDomainError(ValueError):
    pass


def _require_forward(t: float, s: float) -> float:
    if not t > s:
        raise AnalyticDomainError(f"Kernel requires t > s, got t={t}, s={s}.")
    return t - s


def heat_kernel_q1(x, t: float, y, s: float):
    delta = _require_forward(t, s)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.exp(-((x - y) ** 2) / (2.0 * delta)) / np.sqrt(2.0 * np.pi * delta)


def example_q2(x1, x2, t: float, y1, y2, s: float):
    """Two-segment kernel of dX = X(t-1) dt + dB, in its closed quadratic form."""
    delta = _require_forward(t, s)
    x1, x2, y1, y2 = (np.asarray(value, dtype=float) for value in (x1, x2, y1, y2))
    lead = x1 - y1
    lag = x2 - y2 - y1 * delta
    d2 = delta * delta
    scale = (2.0 * d2 + 6.0) / (d2 + 12.0)
    form = lead**2 / delta - 3.0 * lead * lag / (d2 + 3.0) + 3.0 * lag**2 / (d2 * delta + 3.0 * delta)
    prefactor = 1.0 / (2.0 * np.pi * delta * np.sqrt((d2 + 12.0) / 12.0))
    return prefactor * np.exp(-scale * form)


def example_variance(t: float) -> float:
    if not 0.0 < t <= 2.0:
        raise AnalyticDomainError(f"Closed-form density is defined for 0 < t <= 2, got t={t}.")
    if t <= 1.0:
        return t
    return (t**3 + 2.0) / 3.0


def exact_example_density(x, t: float):
    variance = example_variance(t)
    x = np.asarray(x, dtype=float)
    return np.exp(-(x**2) / (2.0 * variance)) / np.sqrt(2.0 * np.pi * variance)


def _linear_coefficients(aug: AugmentedSystem) -> np.ndarray:
    model = aug.model
    a_matrix = model.a * np.eye(aug.k)
    if aug.k > 1:
        a_matrix += model.b * np.eye(aug.k, k=-1)
    return a_matrix


def _forcing(aug: AugmentedSystem, t_prime: float) -> np.ndarray:
    model = aug.model
    forcing = np.full(aug.k, model.c)
    forcing[0] += model.b * history_eval(model.history, aug.tau - t_prime, aug.tau)
    return forcing


def _require_additive(model: SDDEModel) -> None:
    if not model.additive_noise:
        raise AnalyticDomainError("Moment oracle requires additive noise (s1 = s2 = 0).")


def propagate_moments(aug: AugmentedSystem, initial: MomentState, t: float, steps: int = MOMENT_STEPS) -> MomentState:
    """Fixed-step RK4 for mean' = A mean + b(t'), cov' = A cov + cov A^T + G G^T."""
    _require_additive(aug.model)
    _require_forward(t, initial.time)
    a_matrix = _linear_coefficients(aug)
    noise = aug.model.s0**2 * np.eye(aug.k)
    h = (t - initial.time) / steps

    def rates(time: float, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return a_matrix @ mean + _forcing(aug, time), a_matrix @ cov + cov @ a_matrix.T + noise

    mean = np.array(initial.mean, dtype=float)
    cov = np.array(initial.cov, dtype=float)
    time = initial.time
    for index in range(steps):
        time = initial.time + index * h
        k1m, k1c = rates(time, mean, cov)
        k2m, k2c = rates(time + 0.5 * h, mean + 0.5 * h * k1m, cov + 0.5 * h * k1c)
        k3m, k3c = rates(time + 0.5 * h, mean + 0.5 * h * k2m, cov + 0.5 * h * k2c)
        k4m, k4c = rates(time + h, mean + h * k3m, cov + h * k3c)
        mean = mean + h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        cov = cov + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
    cov = 0.5 * (cov + cov.T)
    return MomentState(mean=mean, cov=cov, time=t)


def gaussian_kernel_via_moments(aug: AugmentedSystem, s: float, t: float, steps: int = MOMENT_STEPS) -> GaussianKernel:
    _require_additive(aug.model)
    delta = _require_forward(t, s)
    start = MomentState(mean=np.zeros(aug.k), cov=np.zeros((aug.k, aug.k)), time=s)
    final = propagate_moments(aug, start, t, steps)
    if np.any(np.linalg.eigvalsh(final.cov) <= 0.0):
        raise AnalyticDomainError(f"Moment covariance is not positive definite for s={s}, t={t}.")
    return GaussianKernel(
        k=aug.k,
        mean_map=expm(_linear_coefficients(aug) * delta),
        offset=final.mean,
        cov=final.cov,
    )


def eval_gaussian(kern: GaussianKernel, u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != kern.k or v.shape[-1] != kern.k:
        raise AnalyticDomainError(f"Points must have trailing dimension {kern.k}.")
    try:
        chol = np.linalg.cholesky(kern.cov)
    except np.linalg.LinAlgError as exc:
        raise AnalyticDomainError("Gaussian covariance is singular.") from exc
    u, v = np.broadcast_arrays(u, v)
    resid = u - (v @ kern.mean_map.T + kern.offset)
    flat = resid.reshape(-1, kern.k)
    whitened = solve_triangular(chol, flat.T, lower=True)
    quad = np.sum(whitened**2, axis=0)
    log_norm = 0.5 * kern.k * math.log(2.0 * math.pi) + float(np.sum(np.log(np.diag(chol))))
    density = np.exp(-0.5 * quad - log_norm).reshape(resid.shape[:-1])
    if density.ndim == 0:
        return float(density)
    return density


def sdde_marginal_moments(
    model: SDDEModel,
    times,
    steps_per_delay: int = SDDE_MOMENT_STEPS_PER_DELAY,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of X(t) from the exact second moments of the Euler-Maruyama recursion.

    Off-step times interpolate linearly between neighbouring steps.
    """
    _require_additive(model)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0.0):
        raise AnalyticDomainError("Times must be non-negative.")
    m = steps_per_delay
    dt = model.tau / m
    steps = times / dt

    # State (X_j, X_{j-1}, ..., X_{j-m}); negative-time entries come from the history.
    lags = np.arange(m + 1) * dt
    mean = np.asarray(model.history.polynomial(lags), dtype=float)
    cov = np.zeros((m + 1, m + 1))
    weights = np.zeros(m + 1)
    weights[0] = 1.0 + model.a * dt
    weights[m] += model.b * dt
    noise = model.s0**2 * dt

    last = int(np.ceil(steps.max() - 1e-9)) if steps.size else 0
    head_means = np.empty(last + 1)
    head_variances = np.empty(last + 1)
    for j in range(last + 1):
        head_means[j] = mean[0]
        head_variances[j] = cov[0, 0]
        if j == last:
            break
        head_cov = cov @ weights
        new_cov = np.empty_like(cov)
        new_cov[0, 0] = weights @ head_cov + noise
        new_cov[0, 1:] = head_cov[:m]
        new_cov[1:, 0] = head_cov[:m]
        new_cov[1:, 1:] = cov[:m, :m]
        cov = new_cov
        mean = np.concatenate(([weights @ mean + model.c * dt], mean[:m]))
    grid = np.arange(last + 1, dtype=float)
    means = np.interp(steps, grid, head_means)
    variances = np.interp(steps, grid, head_variances)
    logger.debug("SDDE marginal moments computed times=%s steps=%s", times.tolist(), last)
    return means, variances
