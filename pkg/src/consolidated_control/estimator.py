"""Online estimate of the best attainable consolidated value.

A prediction-correction gradient flow tracks the time-varying maximizer of
``alpha(t, .)``. The ascent term pulls the estimate uphill; the correction
term cancels the explicit drift ``dalpha/dt`` along the gradient direction
and is gated by :func:`chi_switch` so it stays finite at critical points.
The flow never reads the plant state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .bounds import EstimatorParams, chi_switch
from .constraints import Consolidation, alpha, alpha_jet


@dataclass(frozen=True)
class EstimatorState:
    x_tilde: np.ndarray
    alpha_hat: float


def _rhs_from_jet(p: EstimatorParams, g: np.ndarray, a_t: float) -> np.ndarray:
    gn2 = float(g @ g)
    denom = gn2 + p.eps_g * chi_switch(gn2 ** 0.5, p.mu_chi)
    return p.k_alpha * g - g * (a_t / denom)


def estimator_rhs(cons: Consolidation, p: EstimatorParams, t: float, x_tilde) -> np.ndarray:
    """Velocity of the estimate ``x_tilde``."""
    _, g, a_t = alpha_jet(cons, t, np.asarray(x_tilde, dtype=float))
    return _rhs_from_jet(p, g, a_t)


def estimator_terms(cons: Consolidation, p: EstimatorParams, t: float,
                    x_tilde) -> Tuple[float, float, np.ndarray]:
    """``(alpha_hat, alpha_hat_dot, x_tilde_dot)`` from a single evaluation.

    ``alpha_hat_dot = dalpha/dt + grad . x_tilde_dot`` feeds the adaptive
    bound derivative.
    """
    a, g, a_t = alpha_jet(cons, t, np.asarray(x_tilde, dtype=float))
    xdot = _rhs_from_jet(p, g, a_t)
    return a, a_t + float(g @ xdot), xdot


def estimator_output(cons: Consolidation, t: float, state: EstimatorState) -> float:
    return alpha(cons, t, state.x_tilde)


def estimator_output_dot(cons: Consolidation, p: EstimatorParams, t: float,
                         state: EstimatorState) -> float:
    return estimator_terms(cons, p, t, state.x_tilde)[1]
