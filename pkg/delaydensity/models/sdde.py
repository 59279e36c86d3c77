from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial


@dataclass(frozen=True)
class HistoryFunction:
    """Polynomial history gamma(s) = sum(coeffs[j] * s**j) for s in [0, tau]."""

    coeffs: tuple[float, ...] = (0.0,)

    @property
    def gamma0(self) -> float:
        return float(self.coeffs[0]) if self.coeffs else 0.0

    @property
    def polynomial(self) -> Polynomial:
        return Polynomial(self.coeffs if self.coeffs else (0.0,))

    def range_on(self, tau: float) -> tuple[float, float]:
        """Min and max of gamma over [0, tau] (endpoints plus interior critical points)."""
        poly = self.polynomial
        candidates = [0.0, tau]
        if poly.degree() >= 2:
            for root in poly.deriv().roots():
                if abs(root.imag) < 1e-12 and 0.0 < root.real < tau:
                    candidates.append(float(root.real))
        values = poly(np.asarray(candidates))
        return float(values.min()), float(values.max())


@dataclass(frozen=True)
class SDDEModel:
    """Scalar SDDE dX = f(X(t), X(t-tau)) dt + g(X(t), X(t-tau)) dB with affine f, g.

    f(x, y) = a*x + b*y + c and g(x, y) = s0 + s1*x + s2*y.
    """

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    s0: float = 1.0
    s1: float = 0.0
    s2: float = 0.0
    tau: float = 1.0
    history: HistoryFunction = HistoryFunction()

    def drift(self, x, y):
        return self.a * x + self.b * y + self.c

    def diffusion(self, x, y):
        return self.s0 + self.s1 * x + self.s2 * y

    @property
    def additive_noise(self) -> bool:
        return self.s1 == 0.0 and self.s2 == 0.0


@dataclass(frozen=True)
class AugmentedSystem:
    """The k-segment delay-free system; segment i tracks X on [(i-1)tau, i*tau]."""

    model: SDDEModel
    k: int

    @property
    def tau(self) -> float:
        return self.model.tau


@dataclass(frozen=True)
class Rectangle:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def corners(self) -> list[tuple[float, float]]:
        return [
            (self.x_min, self.y_min),
            (self.x_min, self.y_max),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
        ]


@dataclass(frozen=True)
class ValidationReport:
    min_diffusion: float
    argmin: tuple[float, float]
    ellipticity_ok: bool
    history_continuous: bool
    messages: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.ellipticity_ok and self.history_continuous


def worked_example_model() -> SDDEModel:
    """dX(t) = X(t-1) dt + dB(t) with zero history on [-1, 0]."""
    return SDDEModel(a=0.0, b=1.0, c=0.0, s0=1.0, s1=0.0, s2=0.0, tau=1.0, history=HistoryFunction((0.0,)))


def is_worked_example(model: SDDEModel) -> bool:
    history_zero = all(coef == 0.0 for coef in model.history.coeffs)
    return (
        model.a == 0.0
        and model.b == 1.0
        and model.c == 0.0
        and model.s0 == 1.0
        and model.additive_noise
        and history_zero
    )
