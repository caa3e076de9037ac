"""Double-well energies for the generalized Allen-Cahn equation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NoDoubleWell


class EnergyKind(str, enum.Enum):
    POLYNOMIAL = "polynomial"
    LOGARITHMIC = "logarithmic"
    NULL = "null"


@dataclass(frozen=True)
class EnergyModel:
    """Energy ``F`` with wells at ``+-beta``.

    Polynomial: ``F = (x**2 - 1)**2 / 4``.
    Logarithmic: ``F = theta/2 [(1+x)ln(1+x) + (1-x)ln(1-x)] - theta_c/2 * x**2``;
    with ``log_variant="linear"`` the last term is ``theta_c/2 * x`` instead,
    which has no symmetric double well and is kept only for comparison.
    """

    kind: EnergyKind = EnergyKind.POLYNOMIAL
    epsilon: float = 1.0
    theta: float = 1.0
    theta_c: float = 2.0
    log_variant: str = "quadratic"
    beta: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", EnergyKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.log_variant not in ("quadratic", "linear"):
            raise ValueError(f"unknown log_variant {self.log_variant!r}")
        try:
            beta = solve_beta(self)
        except NoDoubleWell:
            beta = math.nan
        object.__setattr__(self, "beta", beta)

    @classmethod
    def polynomial(cls, epsilon: float) -> "EnergyModel":
        return cls(EnergyKind.POLYNOMIAL, epsilon)

    @classmethod
    def logarithmic(cls, epsilon: float, theta: float, theta_c: float, log_variant: str = "quadratic") -> "EnergyModel":
        return cls(EnergyKind.LOGARITHMIC, epsilon, theta, theta_c, log_variant)

    @classmethod
    def null(cls, epsilon: float = 1.0) -> "EnergyModel":
        return cls(EnergyKind.NULL, epsilon)

    @property
    def has_double_well(self) -> bool:
        return not math.isnan(self.beta)

    @property
    def f2max(self) -> float:
        return _f2max(self)

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is EnergyKind.POLYNOMIAL:
            return 0.25 * (x * x - 1.0) ** 2
        if self.kind is EnergyKind.NULL:
            return np.zeros_like(x)
        _check_log_domain(x)
        ent = 0.5 * self.theta * ((1 + x) * np.log1p(x) + (1 - x) * np.log1p(-x))
        if self.log_variant == "linear":
            return ent - 0.5 * self.theta_c * x
        return ent - 0.5 * self.theta_c * x * x

    def f_prime(self, x):
        return f_prime(self, x)

    def f_second(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is EnergyKind.POLYNOMIAL:
            return 3.0 * x * x - 1.0
        if self.kind is EnergyKind.NULL:
            return np.zeros_like(x)
        _check_log_domain(x)
        out = self.theta / (1.0 - x * x)
        return out if self.log_variant == "linear" else out - self.theta_c


def _check_log_domain(x):
    if np.any(np.abs(x) >= 1.0) or np.any(np.isnan(x)):
        raise DomainError("logarithmic energy needs |x| < 1")


def f_prime(model: EnergyModel, x):
    x = np.asarray(x, dtype=float)
    if model.kind is EnergyKind.POLYNOMIAL:
        return x * x * x - x
    if model.kind is EnergyKind.NULL:
        return np.zeros_like(x)
    _check_log_domain(x)
    ent = 0.5 * model.theta * (np.log1p(x) - np.log1p(-x))
    if model.log_variant == "linear":
        return ent - 0.5 * model.theta_c
    return ent - model.theta_c * x


def solve_beta(model: EnergyModel) -> float:
    """Positive well location: 1 for the polynomial energy, otherwise the
    root of ``artanh(b)/b = theta_c/theta`` on (0, 1)."""
    if model.kind is EnergyKind.POLYNOMIAL:
        return 1.0
    if model.kind is EnergyKind.NULL:
        raise NoDoubleWell("null energy has no wells")
    if model.log_variant == "linear":
        raise NoDoubleWell("linear-term logarithmic energy has no symmetric double well")
    ratio = model.theta_c / model.theta
    if ratio <= 1.0:
        raise NoDoubleWell(f"theta_c/theta = {ratio:g} <= 1 gives a single well at 0")
    g = lambda b: math.atanh(b) / b - ratio  # noqa: E731
    hi = 1.0 - 1e-16
    if g(hi) < 0:  # ratio beyond float resolution near 1
        raise NoDoubleWell(f"well location for ratio {ratio:g} is indistinguishable from 1")
    return brentq(g, 1e-12, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def _f2max(model: EnergyModel) -> float:
    if model.kind is EnergyKind.NULL:
        return 0.0
    if model.kind is EnergyKind.POLYNOMIAL:
        b = model.beta
        return 3.0 * b * b - 1.0
    if not model.has_double_well:
        return math.nan
    # F'' is even and increasing in |x|, so its max on [-beta, beta] is at the wells.
    return float(model.f_second(model.beta))


def dt_bound(model: EnergyModel) -> float:
    """Largest ``dt`` with ``dt * max F'' <= epsilon`` on ``[-beta, beta]``."""
    m = _f2max(model)
    if math.isnan(m):
        raise NoDoubleWell("no well location, time-step bound undefined")
    return math.inf if m <= 0 else model.epsilon / m


def pointwise_rhs_map(model: EnergyModel, dt_eff: float, x):
    """``x - dt_eff/epsilon * F'(x)``; maps ``[-beta, beta]`` into itself when
    ``dt_eff <= dt_bound(model)``. Never clamps."""
    return np.asarray(x, dtype=float) - (dt_eff / model.epsilon) * f_prime(model, x)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution with the derivatives needed to build a source term.

    All callables take ``(x, y, t)`` and broadcast over arrays.
    """

    phi: Callable
    phi_t: Callable
    phi_x: Callable
    phi_y: Callable
    laplacian: Callable


def allen_cahn_accuracy_solution() -> ManufacturedSolution:
    """``phi = (0.75 + 0.25 sin t) sin y sin^2 x`` on ``[0, 2 pi]^2``."""

    def amp(t):
        return 0.75 + 0.25 * np.sin(t)

    return ManufacturedSolution(
        phi=lambda x, y, t: amp(t) * np.sin(y) * np.sin(x) ** 2,
        phi_t=lambda x, y, t: 0.25 * np.cos(t) * np.sin(y) * np.sin(x) ** 2,
        phi_x=lambda x, y, t: amp(t) * np.sin(y) * np.sin(2 * x),
        phi_y=lambda x, y, t: amp(t) * np.cos(y) * np.sin(x) ** 2,
        # sin^2 x = (1 - cos 2x)/2: d2/dx2 -> 2 cos 2x; d2/dy2 sin y -> -sin y
        laplacian=lambda x, y, t: amp(t) * np.sin(y) * (2 * np.cos(2 * x) - np.sin(x) ** 2),
    )


def manufactured_forcing(
    model: EnergyModel,
    mu: float,
    exact: ManufacturedSolution,
    velocity: Callable,
) -> Callable:
    """Source ``f = phi_t + u phi_x + v phi_y - mu lap(phi) + F'(phi)/epsilon``.

    ``velocity(x, y, t)`` returns ``(u, v)``.
    """

    def forcing(x, y, t):
        u, v = velocity(x, y, t)
        p = exact.phi(x, y, t)
        return (
            exact.phi_t(x, y, t)
            + u * exact.phi_x(x, y, t)
            + v * exact.phi_y(x, y, t)
            - mu * exact.laplacian(x, y, t)
            + f_prime(model, p) / model.epsilon
        )

    return forcing


def shear_velocity(x, y, t=0.0):
    """``u = v = sin(y - x)`` (divergence free)."""
    w = np.sin(y - x)
    return w, w
