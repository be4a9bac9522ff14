"""Scalar functions of time used as constraint bounds and performance funnels.

Everything here is a pure function of its arguments. The finite-time bound is
used both as the static lower bound on the consolidated constraint and as the
nominal bound of the adaptive policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union


@dataclass(frozen=True)
class TimeFunction:
    """A scalar function of time together with its analytic derivative.

    ``knots`` lists times where the derivative may be discontinuous; finite
    difference checks skip a neighbourhood around them.
    """

    value: Callable[[float], float]
    derivative: Callable[[float], float]
    knots: Tuple[float, ...] = ()
    label: str = ""

    def __call__(self, t: float) -> float:
        return self.value(t)

    @classmethod
    def constant(cls, c: float) -> "TimeFunction":
        c = float(c)
        return cls(lambda t: c, lambda t: 0.0, label=repr(c))


@dataclass(frozen=True)
class FiniteTimeBoundParams:
    """Parameters of the appointed-time bound.

    ``rho0`` may be ``None`` until it is resolved from the initial state.
    """

    T: float
    beta: float
    rho_inf: float
    rho0: Optional[float] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.rho0 is not None and self.rho0 > self.rho_inf:
            raise ValueError(f"rho0={self.rho0} exceeds rho_inf={self.rho_inf}")


@dataclass(frozen=True)
class PerfFunnelParams:
    theta_inf: float
    l: float
    theta0: Optional[float] = None

    def __post_init__(self):
        if not self.theta_inf > 0:
            raise ValueError(f"theta_inf must be positive, got {self.theta_inf}")
        if not self.l > 0:
            raise ValueError(f"l must be positive, got {self.l}")
        if self.theta0 is not None and self.theta0 < self.theta_inf:
            raise ValueError(f"theta0={self.theta0} below theta_inf={self.theta_inf}")


@dataclass(frozen=True)
class EstimatorParams:
    k_alpha: float
    eps_g: float
    mu_chi: float
    x_tilde0: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        for name in ("k_alpha", "eps_g", "mu_chi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class StaticBound:
    params: FiniteTimeBoundParams


@dataclass(frozen=True)
class AdaptiveBound:
    """Adaptive lower bound: nominal finite-time bound relaxed towards the
    online estimate of the best attainable consolidated value."""

    nominal: FiniteTimeBoundParams
    mu: float
    estimator: EstimatorParams = field(default_factory=lambda: EstimatorParams(2.0, 1.0, 0.1))

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


BoundPolicy = Union[StaticBound, AdaptiveBound]


def finite_time_bound(p: FiniteTimeBoundParams, t: float) -> Tuple[float, float]:
    """Value and derivative of the appointed-time bound at ``t``.

    Rises from ``rho0`` at t=0 to ``rho_inf`` at t=T and stays there.
    """
    if p.rho0 is None:
        raise ValueError("rho0 has not been resolved")
    if t >= p.T:
        return p.rho_inf, 0.0
    expo = 1.0 / (1.0 - p.beta)
    s = (p.T - t) / p.T
    span = p.rho0 - p.rho_inf
    value = s ** expo * span + p.rho_inf
    deriv = -expo * s ** (expo - 1.0) * span / p.T
    return value, deriv


def perf_funnel(p: PerfFunnelParams, t: float) -> Tuple[float, float]:
    if p.theta0 is None:
        raise ValueError("theta0 has not been resolved")
    a = (p.theta0 - p.theta_inf) * math.exp(-p.l * t)
    return a + p.theta_inf, -p.l * a


def chi_switch(z: float, mu_chi: float) -> float:
    """C1 switch that is 1 below zero and 0 above ``mu_chi``."""
    if z < 0.0:
        return 1.0
    if z > mu_chi:
        return 0.0
    r = z / mu_chi
    return 2.0 * r ** 3 - 3.0 * r ** 2 + 1.0


def chi_switch_derivative(z: float, mu_chi: float) -> float:
    if z < 0.0 or z > mu_chi:
        return 0.0
    r = z / mu_chi
    return (6.0 * r ** 2 - 6.0 * r) / mu_chi


def iota_switch(phi: float, mu: float) -> float:
    """C1 switch that is 0 below zero and 1 above ``mu``."""
    if phi > mu:
        return 1.0
    if phi < 0.0:
        return 0.0
    r = phi / mu
    return -2.0 * r ** 3 + 3.0 * r ** 2


def iota_switch_derivative(phi: float, mu: float) -> float:
    if phi > mu or phi < 0.0:
        return 0.0
    r = phi / mu
    return (-6.0 * r ** 2 + 6.0 * r) / mu


def adaptive_bound(policy: AdaptiveBound, t: float, alpha_hat: float,
                   alpha_hat_dot: float) -> Tuple[float, float]:
    """Blend the nominal bound with ``alpha_hat - mu``.

    Returns the bound value and its time derivative (chain rule through the
    switch, the nominal bound and the estimate).
    """
    varrho, varrho_dot = finite_time_bound(policy.nominal, t)
    phi = alpha_hat - varrho
    iota = iota_switch(phi, policy.mu)
    iota_dot = iota_switch_derivative(phi, policy.mu) * (alpha_hat_dot - varrho_dot)
    relaxed = alpha_hat - policy.mu
    value = iota * varrho + (1.0 - iota) * relaxed
    deriv = iota_dot * (varrho - relaxed) + iota * varrho_dot + (1.0 - iota) * alpha_hat_dot
    return value, deriv


def auto_rho0(alpha0: float) -> float:
    """Initial bound strictly below the initial consolidated value, with margin."""
    return min(0.0, alpha0) - max(0.25, 0.25 * abs(alpha0))


def auto_theta0(e0: float) -> float:
    return 1.5 * abs(e0) + 0.1
