from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from delaydensity.config import get_settings
from delaydensity.models.kernels import DensityCurve, QuadratureAxis, QuadratureGrid, TransitionKernelHandle
from delaydensity.models.sdde import SDDEModel
from delaydensity.services.analytic_kernels import sdde_marginal_moments
from delaydensity.services.augmentation_engine import AssumptionViolationError
from delaydensity.services.quadrature import integrate, tensor_nodes, tensor_weights

logger = logging.getLogger(__name__)


MAX_SEGMENTS = 3
POSITIVITY_FLOOR = 1e-300
TIME_TOLERANCE = 1e-9
MAX_EVALUATIONS_PER_BATCH = 2_000_000
WINDOW_SIGMAS = 6.0
MIN_WINDOW_HALF_WIDTH = 1e-3
COARSE_POINTS = 32
RESOLUTION_RATIO = 0.5
BAND_SAMPLES = 5


class CompositionError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """Where t falls: first interval, an exact multiple k*tau, or strictly inside segment k."""

    k: int
    branch: str
    t_prime: float


def segment_for_time(t: float, tau: float) -> Segment:
    if not t > 0.0:
        raise CompositionError(f"Density time must be positive, got {t}.")
    ratio = t / tau
    if ratio <= 1.0 + TIME_TOLERANCE:
        return Segment(k=1, branch="first", t_prime=min(t, tau))
    nearest = round(ratio)
    if abs(ratio - nearest) <= TIME_TOLERANCE:
        k = int(nearest)
        branch = "multiple"
        t_prime = tau
    else:
        k = math.ceil(ratio)
        branch = "general"
        t_prime = t - (k - 1) * tau
    if k > MAX_SEGMENTS:
        raise CompositionError(f"t={t} needs {k} delay segments; at most {MAX_SEGMENTS} are supported.")
    return Segment(k=k, branch=branch, t_prime=t_prime)


def _curve(x: np.ndarray, values: np.ndarray, t: float, handles: list[TransitionKernelHandle]) -> DensityCurve:
    warnings: list[str] = []
    peak = float(np.max(values)) if values.size else 0.0
    floor = float(np.min(values)) if values.size else 0.0
    if floor < -1e-12 * max(peak, 1.0):
        warnings.append(f"negative density values clipped (min={floor:.3e})")
    for handle in handles:
        for note in handle.notes:
            if note not in warnings:
                warnings.append(note)
    backends = tuple(dict.fromkeys(handle.backend for handle in handles))
    curve = DensityCurve(
        x=x,
        values=np.maximum(values, 0.0),
        t=t,
        backends=backends,
        warnings=tuple(warnings),
    )
    tolerance = get_settings().mass_warn_fraction
    if x.size > 1 and abs(curve.mass - 1.0) > tolerance:
        message = f"curve mass {curve.mass:.6f} is off by more than {tolerance:g}"
        logger.warning("Density curve t=%.6g: %s", t, message)
        curve = replace(curve, warnings=(*curve.warnings, message))
    return curve


def _check_k(handle: TransitionKernelHandle, k: int, name: str) -> None:
    if handle.k != k:
        raise CompositionError(f"{name} must be a {k}-segment kernel, got k={handle.k}.")


def _check_axes(quad: QuadratureGrid, expected: int) -> None:
    if quad.dimension != expected:
        raise CompositionError(f"Quadrature needs {expected} axes, got {quad.dimension}.")


def _batches(count: int, per_item: int):
    size = max(1, MAX_EVALUATIONS_PER_BATCH // max(per_item, 1))
    for start in range(0, count, size):
        yield slice(start, min(start + size, count))


def density_first_interval(q1: TransitionKernelHandle, gamma0: float, x, t: float) -> DensityCurve:
    _check_k(q1, 1, "q1")
    if not 0.0 < t <= q1.tau * (1.0 + TIME_TOLERANCE):
        raise CompositionError(f"First-interval density needs 0 < t <= tau, got t={t}.")
    x = np.asarray(x, dtype=float)
    values = q1.density(x[:, None], min(t, q1.tau), np.array([gamma0]), 0.0)
    return _curve(x, np.asarray(values, dtype=float), t, [q1])


def density_at_multiple(
    qk: TransitionKernelHandle,
    gamma0: float,
    x,
    k: int,
    quad: QuadratureGrid,
) -> DensityCurve:
    """P_A(x, k tau) as the integral of Q_k over the values at tau, ..., (k-1) tau."""
    if k < 2:
        raise CompositionError("Multiple-of-tau composition needs k >= 2.")
    _check_k(qk, k, "qk")
    _check_axes(quad, k - 1)
    x = np.asarray(x, dtype=float)
    nodes = tensor_nodes(quad)
    weights = tensor_weights(quad)
    conditioning = np.concatenate([np.full((nodes.shape[0], 1), gamma0), nodes], axis=1)

    values = np.empty(x.size)
    for batch in _batches(x.size, nodes.shape[0]):
        chunk = x[batch]
        u = np.concatenate(
            [np.broadcast_to(nodes, (chunk.size, *nodes.shape)), np.broadcast_to(chunk[:, None, None], (chunk.size, nodes.shape[0], 1))],
            axis=2,
        )
        dens = qk.density(u, qk.tau, conditioning[None, :, :], 0.0)
        values[batch] = integrate(dens, weights)
    logger.debug("Composition at multiple k=%s nodes=%s abscissae=%s", k, nodes.shape[0], x.size)
    return _curve(x, values, k * qk.tau, [qk])


def density_general(
    qk: TransitionKernelHandle,
    qk_minus_1: TransitionKernelHandle,
    gamma0: float,
    x,
    t: float,
    k: int,
    quad: QuadratureGrid,
) -> DensityCurve:
    """P_A(x, t) for (k-1) tau < t < k tau via the double composition of Q_{k-1} and Q_k.

    Quadrature axes are (x_1, ..., x_{k-1}) followed by either the values y_1, ..., y_{k-1}
    at tau, ..., (k-1) tau or their offsets, as `quad.offsets` says.
    """
    if k < 2:
        raise CompositionError("General composition needs k >= 2.")
    _check_k(qk, k, "qk")
    _check_k(qk_minus_1, k - 1, "qk_minus_1")
    _check_axes(quad, 2 * (k - 1))
    tau = qk.tau
    t_prime = t - (k - 1) * tau
    if not TIME_TOLERANCE < t_prime / tau < 1.0 - TIME_TOLERANCE:
        raise CompositionError(f"t={t} is not strictly inside (({k}-1) tau, {k} tau).")

    x = np.asarray(x, dtype=float)
    nodes = tensor_nodes(quad)
    weights = tensor_weights(quad)
    xs = nodes[:, : k - 1]
    tail = nodes[:, k - 1 :]
    values = np.empty(x.size)

    if quad.offsets == "forward":
        # y_i = x_{i+1} - d_i depends on x, so Q_{k-1} is evaluated per abscissa.
        for batch in _batches(x.size, nodes.shape[0]):
            chunk = x[batch]
            lead = np.broadcast_to(xs, (chunk.size, *xs.shape))
            u = np.concatenate([lead, np.broadcast_to(chunk[:, None, None], (chunk.size, xs.shape[0], 1))], axis=2)
            ys = u[..., 1:] - tail[None, :, :]
            conditioning = np.concatenate([np.full((*ys.shape[:-1], 1), gamma0), ys], axis=-1)
            dens = qk.density(u, t_prime, conditioning, 0.0)
            back = qk_minus_1.density(ys, tau, lead, t_prime)
            values[batch] = integrate(dens * back, weights)
    else:
        ys = tail if quad.offsets == "none" else xs + tail
        # The Q_{k-1} factor does not depend on x; fold it into the weights once.
        folded = weights * qk_minus_1.density(ys, tau, xs, t_prime)
        conditioning = np.concatenate([np.full((nodes.shape[0], 1), gamma0), ys], axis=1)
        for batch in _batches(x.size, nodes.shape[0]):
            chunk = x[batch]
            u = np.concatenate(
                [np.broadcast_to(xs, (chunk.size, *xs.shape)), np.broadcast_to(chunk[:, None, None], (chunk.size, xs.shape[0], 1))],
                axis=2,
            )
            dens = qk.density(u, t_prime, conditioning[None, :, :], 0.0)
            values[batch] = integrate(dens, folded)
    logger.debug(
        "Composition general k=%s t=%.6g offsets=%s nodes=%s abscissae=%s", k, t, quad.offsets, nodes.shape[0], x.size
    )
    return _curve(x, values, t, [qk, qk_minus_1])


def _guard_denominator(value, where) -> None:
    value = np.asarray(value, dtype=float)
    if np.any(value < POSITIVITY_FLOOR):
        raise AssumptionViolationError(
            f"Transition density vanishes at {np.asarray(where).tolist()}; the kernel is not strictly positive.",
            location=tuple(np.asarray(where, dtype=float).reshape(-1).tolist()),
            value=float(np.min(value)),
        )


def bridge_density(qk: TransitionKernelHandle, u, t_prime: float, v0, v1):
    """Density at time t' of the segments pinned to v0 at 0 and v1 at tau."""
    tau = qk.tau
    if not 0.0 < t_prime < tau:
        raise CompositionError(f"Bridge time must lie in (0, tau), got {t_prime}.")
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    denominator = qk.density(v1, tau, v0, 0.0)
    _guard_denominator(denominator, v1)
    u = np.asarray(u, dtype=float)
    forward = qk.density(u, t_prime, v0, 0.0)
    backward = qk.density(v1, tau, u, t_prime)
    return forward * backward / denominator


def _shifted_conditioning(gamma0: float, x: np.ndarray) -> np.ndarray:
    head = np.full(x.shape[:-1] + (1,), gamma0)
    return np.concatenate([head, x[..., :-1]], axis=-1)


def joint_density_multiples(qk: TransitionKernelHandle, gamma0: float, x):
    """Joint density of (X(tau), ..., X(k tau)) at x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != qk.k:
        raise CompositionError(f"Joint density needs {qk.k} values, got {x.shape[-1]}.")
    return qk.density(x, qk.tau, _shifted_conditioning(gamma0, x), 0.0)


def conditional_density_multiple(
    qk: TransitionKernelHandle,
    qk_minus_1: TransitionKernelHandle,
    gamma0: float,
    xk,
    history_points,
):
    """Density of X(k tau) at xk given X(i tau) = history_points[i-1]."""
    history = np.asarray(history_points, dtype=float).reshape(-1)
    _check_k(qk_minus_1, history.size, "qk_minus_1")
    _check_k(qk, history.size + 1, "qk")
    denominator = joint_density_multiples(qk_minus_1, gamma0, history)
    _guard_denominator(denominator, history)
    xk = np.asarray(xk, dtype=float)
    points = np.concatenate([np.broadcast_to(history, xk.shape + history.shape), xk[..., None]], axis=-1)
    return joint_density_multiples(qk, gamma0, points) / denominator


def conditional_density_general(
    qk: TransitionKernelHandle,
    qk_minus_1: TransitionKernelHandle,
    gamma0: float,
    y,
    t: float,
    history_points,
    quad: QuadratureGrid,
):
    """Density of X(t) at y for (k-1) tau < t < k tau, given X(i tau) = history_points[i-1]."""
    history = np.asarray(history_points, dtype=float).reshape(-1)
    k = history.size + 1
    _check_k(qk, k, "qk")
    _check_k(qk_minus_1, k - 1, "qk_minus_1")
    _check_axes(quad, k - 1)
    tau = qk.tau
    t_prime = t - (k - 1) * tau
    if not TIME_TOLERANCE < t_prime / tau < 1.0 - TIME_TOLERANCE:
        raise CompositionError(f"t={t} is not strictly inside (({k}-1) tau, {k} tau).")

    denominator = joint_density_multiples(qk_minus_1, gamma0, history)
    _guard_denominator(denominator, history)
    nodes = tensor_nodes(quad)
    weights = tensor_weights(quad) * qk_minus_1.density(history, tau, nodes, t_prime)
    conditioning = np.concatenate([[gamma0], history])

    y = np.asarray(y, dtype=float)
    flat_y = y.reshape(-1)
    values = np.empty(flat_y.size)
    for batch in _batches(flat_y.size, nodes.shape[0]):
        chunk = flat_y[batch]
        u = np.concatenate(
            [np.broadcast_to(nodes, (chunk.size, *nodes.shape)), np.broadcast_to(chunk[:, None, None], (chunk.size, nodes.shape[0], 1))],
            axis=2,
        )
        values[batch] = integrate(qk.density(u, t_prime, conditioning, 0.0), weights)
    values = values / denominator
    return float(values[0]) if y.ndim == 0 else values.reshape(y.shape)


def marginalize_last(
    q_kplus1: TransitionKernelHandle,
    axis: QuadratureAxis,
    *,
    dropped_value: float | None = None,
) -> TransitionKernelHandle:
    """Q_k from Q_{k+1} by integrating out the last coordinate.

    The last conditioning entry does not influence the first k coordinates, so it is
    pinned to `dropped_value` (default: the window midpoint).
    """
    if q_kplus1.k < 2:
        raise CompositionError("Marginalization needs a kernel with at least two segments.")
    z = axis.nodes()
    weights = axis.weights()
    pad = 0.5 * (axis.min + axis.max) if dropped_value is None else float(dropped_value)
    k = q_kplus1.k - 1

    def evaluate(u, t, v, s):
        lead_shape = u.shape[:-1]
        flat_u = u.reshape(-1, k)
        flat_v = v.reshape(-1, k)
        full_u = np.concatenate(
            [np.broadcast_to(flat_u[:, None, :], (flat_u.shape[0], z.size, k)), np.broadcast_to(z[None, :, None], (flat_u.shape[0], z.size, 1))],
            axis=2,
        )
        full_v = np.concatenate([flat_v, np.full((flat_v.shape[0], 1), pad)], axis=1)[:, None, :]
        dens = q_kplus1.density(full_u, t, full_v, s)
        return integrate(dens, weights).reshape(lead_shape)

    return TransitionKernelHandle(
        k=k,
        backend=q_kplus1.backend,
        tau=q_kplus1.tau,
        evaluator=evaluate,
        notes=q_kplus1.notes,
    )


def _window(mean: float, variance: float, points: int) -> QuadratureAxis:
    half = max(WINDOW_SIGMAS * math.sqrt(max(variance, 0.0)), MIN_WINDOW_HALF_WIDTH)
    return QuadratureAxis(min=mean - half, max=mean + half, n=points)


def _band(model: SDDEModel, start: float, end: float) -> float:
    """Largest |X| expected on [start, end]: the history range, or mean plus 6 sigma."""
    if end <= 0.0:
        low, high = model.history.range_on(model.tau)
        return max(abs(low), abs(high))
    means, variances = sdde_marginal_moments(model, np.linspace(max(start, 0.0), end, BAND_SAMPLES))
    return float(np.max(np.abs(means) + WINDOW_SIGMAS * np.sqrt(np.maximum(variances, 0.0))))


def _offset_window(model: SDDEModel, start: float, lag: float, points: int) -> QuadratureAxis:
    """Increment of X over [start, start + lag]: diffusion spread plus the largest drift displacement."""
    tau = model.tau
    reach = (
        abs(model.a) * _band(model, start, start + lag)
        + abs(model.b) * _band(model, start - tau, start - tau + lag)
        + abs(model.c)
    )
    half = max(WINDOW_SIGMAS * abs(model.s0) * math.sqrt(lag) + reach * lag, MIN_WINDOW_HALF_WIDTH)
    return QuadratureAxis(min=-half, max=half, n=points)


def default_quadrature(
    model: SDDEModel,
    segment: Segment,
    points: int,
    *,
    offsets: str = "auto",
) -> QuadratureGrid | None:
    """Windows of +-6 predicted standard deviations around each integration variable.

    Inside a segment, "auto" pairs each y_i with the short-lag factor of the composition:
    forward offsets while t' <= tau/2, backward offsets after. Grids with more than two
    axes use at most COARSE_POINTS points per axis.
    """
    if segment.branch == "first":
        return None
    tau = model.tau
    k = segment.k
    if segment.branch == "multiple":
        means, variances = sdde_marginal_moments(model, [i * tau for i in range(1, k)])
        return QuadratureGrid(axes=tuple(_window(m, var, points) for m, var in zip(means, variances)))

    t_prime = segment.t_prime
    if offsets == "auto":
        offsets = "forward" if t_prime <= 0.5 * tau else "backward"
    if 2 * (k - 1) > 2:
        points = min(points, COARSE_POINTS)
    lead_means, lead_variances = sdde_marginal_moments(model, [(i - 1) * tau + t_prime for i in range(1, k)])
    axes = [_window(m, var, points) for m, var in zip(lead_means, lead_variances)]
    if offsets == "forward":
        axes += [_offset_window(model, i * tau, t_prime, points) for i in range(1, k)]
    elif offsets == "backward":
        axes += [_offset_window(model, (i - 1) * tau + t_prime, tau - t_prime, points) for i in range(1, k)]
    else:
        means, variances = sdde_marginal_moments(model, [i * tau for i in range(1, k)])
        axes += [_window(m, var, points) for m, var in zip(means, variances)]
    return QuadratureGrid(axes=tuple(axes), offsets=offsets)


def unresolved_boundary(segment: Segment, tau: float, quad: QuadratureGrid, noise_scale: float) -> float | None:
    """The segment end a plain layout cannot resolve at this t, or None.

    Near either end the short-lag factor has width about noise_scale * sqrt(lag); once that
    drops below half the coarsest axis spacing the trapezoid sum misses the peak.
    """
    if segment.branch != "general" or quad.offsets != "none":
        return None
    lag = min(segment.t_prime, tau - segment.t_prime)
    spacing = max(axis.spacing for axis in quad.axes)
    if abs(noise_scale) * math.sqrt(lag) >= RESOLUTION_RATIO * spacing:
        return None
    return (segment.k - 1) * tau if segment.t_prime < 0.5 * tau else segment.k * tau


def _boundary_density(
    kernel_for: Callable[[int], TransitionKernelHandle],
    gamma0: float,
    x,
    boundary: float,
    segment: Segment,
    tau: float,
    quad: QuadratureGrid,
) -> DensityCurve:
    multiple = round(boundary / tau)
    if multiple == 1:
        return density_first_interval(kernel_for(1), gamma0, x, tau)
    y_axes = quad.axes[segment.k - 1 : segment.k - 1 + multiple - 1]
    return density_at_multiple(kernel_for(multiple), gamma0, x, multiple, QuadratureGrid(axes=y_axes))


def density_at_time(
    kernel_for: Callable[[int], TransitionKernelHandle],
    gamma0: float,
    x,
    t: float,
    tau: float,
    quad: QuadratureGrid | None,
    *,
    noise_scale: float | None = None,
) -> DensityCurve:
    """Dispatch to the first-interval, multiple-of-tau, or general composition.

    With `noise_scale` set, a plain layout too coarse for t falls back to the density at
    the nearer segment end, flagged in the curve warnings.
    """
    segment = segment_for_time(t, tau)
    if segment.branch == "first":
        return density_first_interval(kernel_for(1), gamma0, x, t)
    if quad is None:
        raise CompositionError("A quadrature grid is required beyond the first delay interval.")
    if segment.branch == "multiple":
        return density_at_multiple(kernel_for(segment.k), gamma0, x, segment.k, quad)
    boundary = None if noise_scale is None else unresolved_boundary(segment, tau, quad, noise_scale)
    if boundary is not None:
        message = f"quadrature too coarse at t={t:.6g}; density taken at t={boundary:.6g}"
        logger.warning("Composition fallback: %s", message)
        curve = _boundary_density(kernel_for, gamma0, x, boundary, segment, tau, quad)
        return replace(curve, t=t, warnings=(*curve.warnings, message))
    return density_general(kernel_for(segment.k), kernel_for(segment.k - 1), gamma0, x, t, segment.k, quad)
