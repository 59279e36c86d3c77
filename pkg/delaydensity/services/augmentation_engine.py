from __future__ import annotations

import logging

import numpy as np

from delaydensity.models.sdde import AugmentedSystem, HistoryFunction, Rectangle, SDDEModel, ValidationReport

logger = logging.getLogger(__name__)


HISTORY_RANGE_TOLERANCE = 1e-12


class ModelValidationError(ValueError):
    pass


class AssumptionViolationError(ValueError):
    def __init__(self, message: str, *, location: tuple[float, ...] | None = None, value: float | None = None):
        super().__init__(message)
        self.location = location
        self.value = value


def check_model(model: SDDEModel) -> SDDEModel:
    if not model.tau > 0.0:
        raise ModelValidationError(f"Delay tau must be positive, got {model.tau}.")
    numbers = (model.a, model.b, model.c, model.s0, model.s1, model.s2, *model.history.coeffs)
    if not all(np.isfinite(value) for value in numbers):
        raise ModelValidationError("Model coefficients must be finite.")
    return model


def history_eval(history: HistoryFunction, s, tau: float | None = None):
    """gamma(s); with tau given, s outside [0, tau] is rejected."""
    s_arr = np.asarray(s, dtype=float)
    if tau is not None:
        if np.any(s_arr < -HISTORY_RANGE_TOLERANCE) or np.any(s_arr > tau + HISTORY_RANGE_TOLERANCE):
            raise ModelValidationError(f"History argument outside [0, {tau}].")
    value = history.polynomial(s_arr)
    if np.ndim(value) == 0:
        return float(value)
    return value


def build_augmented(model: SDDEModel, k: int) -> AugmentedSystem:
    if int(k) != k or k < 1:
        raise ModelValidationError(f"Number of delay segments must be a positive integer, got {k}.")
    check_model(model)
    return AugmentedSystem(model=model, k=int(k))


def _state_array(aug: AugmentedSystem, state) -> np.ndarray:
    arr = np.asarray(state, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != aug.k:
        raise ModelValidationError(f"State must have trailing dimension {aug.k}, got shape {arr.shape}.")
    return arr


def _delayed_arguments(aug: AugmentedSystem, arr: np.ndarray, t_prime: float) -> np.ndarray:
    # Component 1 sees the history gamma(tau - t'); component i sees x_{i-1}.
    delayed = np.empty_like(arr)
    delayed[..., 0] = history_eval(aug.model.history, aug.tau - t_prime, aug.tau)
    if aug.k > 1:
        delayed[..., 1:] = arr[..., :-1]
    return delayed


def eval_drift(aug: AugmentedSystem, state, t_prime: float) -> np.ndarray:
    arr = _state_array(aug, state)
    return aug.model.drift(arr, _delayed_arguments(aug, arr, t_prime))


def eval_diffusion(aug: AugmentedSystem, state, t_prime: float) -> np.ndarray:
    """Diagonal entries G_i; the noise channels are independent."""
    arr = _state_array(aug, state)
    return aug.model.diffusion(arr, _delayed_arguments(aug, arr, t_prime))


def validate(model: SDDEModel, domain: Rectangle) -> ValidationReport:
    check_model(model)
    # g is affine, so its minimum over a rectangle sits at a corner.
    corners = domain.corners()
    values = [model.diffusion(x, y) for x, y in corners]
    index = int(np.argmin(values))
    min_g = float(values[index])
    messages: list[str] = []
    ellipticity_ok = min_g > 0.0
    if not ellipticity_ok:
        messages.append(f"diffusion minimum {min_g:.6g} <= 0 at (x, y)={corners[index]}")
    report = ValidationReport(
        min_diffusion=min_g,
        argmin=corners[index],
        ellipticity_ok=ellipticity_ok,
        history_continuous=True,
        messages=tuple(messages),
    )
    logger.debug("Model validation min_g=%.6g passed=%s", min_g, report.passed)
    return report


def domain_for_axes(model: SDDEModel, axis_ranges: list[tuple[float, float]]) -> Rectangle:
    """The (x, y) rectangle that g is evaluated on for a grid with the given axis ranges."""
    x_min = min(lo for lo, _ in axis_ranges)
    x_max = max(hi for _, hi in axis_ranges)
    h_min, h_max = model.history.range_on(model.tau)
    return Rectangle(x_min=x_min, x_max=x_max, y_min=min(x_min, h_min), y_max=max(x_max, h_max))


def require_valid(report: ValidationReport) -> None:
    if not report.passed:
        raise AssumptionViolationError(
            "Model violates the ellipticity assumption: " + "; ".join(report.messages),
            location=report.argmin,
            value=report.min_diffusion,
        )
