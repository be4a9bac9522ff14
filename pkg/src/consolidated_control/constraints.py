"""Constraint representation and the smooth consolidated metric.

A :class:`ConstraintSet` holds time-varying output constraints over a map
``h(t, x1)``. Each constraint contributes one or two entries to the vector
``psi`` (positive means satisfied). The nonsmooth signed distance is
``min(psi)``; the consolidated metric is its log-sum-exp under-approximation

    alpha = -(1/nu) * log(sum(exp(-nu * psi)))

whose gradient, time partial and Hessian are provided in closed form. All
exponentials are evaluated after shifting by ``min(psi)`` so that ``nu * psi``
may be arbitrarily large.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .bounds import TimeFunction

FD_STEP = 1e-6


class ContractViolation(ValueError):
    """Raised when an operation is called with inconsistent dimensions."""


@dataclass(frozen=True)
class OutputChannel:
    """One output ``h_i(t, x1)`` with its analytic derivatives.

    ``value`` accepts ``x1`` of shape ``(n,)``; channels built by the
    expression loader also accept ``(n, N)`` stacks of points. ``jet`` is an
    optional fused evaluator returning ``(value, gradient, time_partial)``.
    """

    name: str
    value: Callable[[float, np.ndarray], float]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    time_partial: Callable[[float, np.ndarray], float]
    hessian: Callable[[float, np.ndarray], np.ndarray]
    jet: Optional[Callable[[float, np.ndarray], Tuple[float, np.ndarray, float]]] = None
    validation_only: bool = False

    def first_order(self, t, x1):
        if self.jet is not None:
            return self.jet(t, x1)
        return self.value(t, x1), self.gradient(t, x1), self.time_partial(t, x1)


def finite_difference_channel(name: str, value: Callable[[float, np.ndarray], float],
                              step: float = FD_STEP) -> OutputChannel:
    """Wrap a bare value function with central-difference derivatives.

    The result is flagged ``validation_only``: it is adequate for
    cross-checks but the controller should be given analytic derivatives.
    """

    def gradient(t, x1):
        x1 = np.asarray(x1, dtype=float)
        g = np.empty(x1.shape[0])
        for k in range(x1.shape[0]):
            e = np.zeros_like(x1)
            e[k] = step
            g[k] = (value(t, x1 + e) - value(t, x1 - e)) / (2 * step)
        return g

    def time_partial(t, x1):
        return (value(t + step, x1) - value(t - step, x1)) / (2 * step)

    def hessian(t, x1):
        x1 = np.asarray(x1, dtype=float)
        n = x1.shape[0]
        H = np.empty((n, n))
        h = 1e-4
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            H[:, k] = (gradient(t, x1 + e) - gradient(t, x1 - e)) / (2 * h)
        return 0.5 * (H + H.T)

    return OutputChannel(name, value, gradient, time_partial, hessian, validation_only=True)


@dataclass(frozen=True)
class Funnel:
    lower: TimeFunction
    upper: TimeFunction


@dataclass(frozen=True)
class LowerBounded:
    lower: TimeFunction


@dataclass(frozen=True)
class UpperBounded:
    upper: TimeFunction


ConstraintKind = Union[Funnel, LowerBounded, UpperBounded]
_ORDER = {Funnel: 0, LowerBounded: 1, UpperBounded: 2}


@dataclass(frozen=True)
class ConstraintSpec:
    channel: OutputChannel
    kind: ConstraintKind


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered constraints: funnels first, then lower-bounded, then upper-bounded.

    ``fused`` optionally evaluates ``(psi, dpsi/dx1, dpsi/dt)`` in one call; it
    must describe the same constraints as ``specs`` and is used only for the
    first-order quantities.
    """

    specs: Tuple[ConstraintSpec, ...]
    n: int
    fused: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        ranks = [_ORDER[type(s.kind)] for s in self.specs]
        if ranks != sorted(ranks):
            raise ContractViolation(
                "constraints must be ordered funnels, then lower-bounded, then upper-bounded")
        if self.n < 1:
            raise ContractViolation(f"state dimension must be positive, got {self.n}")

    @property
    def m(self) -> int:
        return len(self.specs)

    @property
    def p(self) -> int:
        return sum(isinstance(s.kind, Funnel) for s in self.specs)

    @property
    def q(self) -> int:
        return sum(isinstance(s.kind, LowerBounded) for s in self.specs)

    @property
    def size(self) -> int:
        """Length of ``psi`` (m + p)."""
        return self.m + self.p

    def check_funnels(self, horizon: float, samples: int = 1000, eps: float = 1e-6):
        """Return ``(index, t, width)`` for every funnel whose width drops
        below ``eps`` on a uniform grid over ``[0, horizon]``."""
        bad = []
        ts = np.linspace(0.0, horizon, samples)
        for i, spec in enumerate(self.specs):
            if not isinstance(spec.kind, Funnel):
                continue
            for t in ts:
                w = spec.kind.upper(t) - spec.kind.lower(t)
                if w < eps:
                    bad.append((i, float(t), float(w)))
                    break
        return bad


@dataclass(frozen=True)
class Consolidation:
    set: ConstraintSet
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ContractViolation(f"nu must be positive, got {self.nu}")


class Membership(enum.Enum):
    IN_OMEGA = "InOmega"
    IN_OBAR_ONLY = "InObarOnly"
    OUTSIDE = "Outside"


def _check_x(cset: ConstraintSet, x1) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    if x1.ndim != 1 or x1.shape[0] != cset.n:
        raise ContractViolation(f"x1 must have shape ({cset.n},), got {x1.shape}")
    return x1


def _psi_first_order(cset: ConstraintSet, t: float, x1: np.ndarray, need_grad: bool,
                     need_dt: bool):
    """psi, its x1-gradients (rows) and its time partials."""
    if cset.fused is not None and (need_grad or need_dt):
        psi, dpsi, dpsi_dt = cset.fused(t, x1.tolist())
        return psi, dpsi if need_grad else None, dpsi_dt if need_dt else None
    size = cset.size
    psi = np.empty(size)
    dpsi = np.empty((size, cset.n)) if need_grad else None
    dpsi_dt = np.empty(size) if need_dt else None
    k = 0
    for spec in cset.specs:
        ch, kind = spec.channel, spec.kind
        if need_grad or need_dt:
            h, g, ht = ch.first_order(t, x1)
        else:
            h = ch.value(t, x1)
        if isinstance(kind, Funnel):
            psi[k] = h - kind.lower.value(t)
            psi[k + 1] = kind.upper.value(t) - h
            if need_grad:
                dpsi[k] = g
                dpsi[k + 1] = -np.asarray(g)
            if need_dt:
                dpsi_dt[k] = ht - kind.lower.derivative(t)
                dpsi_dt[k + 1] = kind.upper.derivative(t) - ht
            k += 2
        elif isinstance(kind, LowerBounded):
            psi[k] = h - kind.lower.value(t)
            if need_grad:
                dpsi[k] = g
            if need_dt:
                dpsi_dt[k] = ht - kind.lower.derivative(t)
            k += 1
        else:
            psi[k] = kind.upper.value(t) - h
            if need_grad:
                dpsi[k] = -np.asarray(g)
            if need_dt:
                dpsi_dt[k] = kind.upper.derivative(t) - ht
            k += 1
    return psi, dpsi, dpsi_dt


def _lse_weights(psi: np.ndarray, nu: float):
    """alpha and softmin weights exp(-nu psi_i)/sum_j exp(-nu psi_j), shifted."""
    lo = psi.min()
    z = np.exp(-nu * (psi - lo))
    s = z.sum()
    return lo - math.log(s) / nu, z / s


def eval_psi(cset: ConstraintSet, t: float, x1) -> np.ndarray:
    """Constraint margins in layout (funnel lower, funnel upper)*, lower*, upper*."""
    x1 = _check_x(cset, x1)
    return _psi_first_order(cset, t, x1, False, False)[0]


def alpha_bar(cset: ConstraintSet, t: float, x1) -> float:
    """Signed minimum distance (min over psi). ``+inf`` for an empty set."""
    psi = eval_psi(cset, t, x1)
    return float(psi.min()) if psi.size else math.inf


def alpha(cons: Consolidation, t: float, x1) -> float:
    psi = eval_psi(cons.set, t, x1)
    if psi.size == 0:
        return math.inf
    return float(_lse_weights(psi, cons.nu)[0])


def _gamma_scaled(cset: ConstraintSet, w: np.ndarray) -> np.ndarray:
    """Per-channel gamma_i * exp(nu alpha), read off the softmin weights."""
    out = np.empty(cset.m)
    k = 0
    for i, spec in enumerate(cset.specs):
        if isinstance(spec.kind, Funnel):
            out[i] = w[k] - w[k + 1]
            k += 2
        elif isinstance(spec.kind, LowerBounded):
            out[i] = w[k]
            k += 1
        else:
            out[i] = -w[k]
            k += 1
    return out


def gamma_scaled(cons: Consolidation, t: float, x1) -> np.ndarray:
    """``gamma(t, x1) * exp(nu * alpha(t, x1))`` computed without overflow."""
    psi = eval_psi(cons.set, t, x1)
    return _gamma_scaled(cons.set, _lse_weights(psi, cons.nu)[1])


def jacobian(cset: ConstraintSet, t: float, x1) -> np.ndarray:
    x1 = _check_x(cset, x1)
    J = np.empty((cset.m, cset.n))
    for i, spec in enumerate(cset.specs):
        J[i] = spec.channel.gradient(t, x1)
    return J


def grad_alpha(cons: Consolidation, t: float, x1) -> np.ndarray:
    """Gradient ``J^T gamma exp(nu alpha)`` of the consolidated metric."""
    x1 = _check_x(cons.set, x1)
    if cons.set.m == 0:
        return np.zeros(cons.set.n)
    psi, _, _ = _psi_first_order(cons.set, t, x1, False, False)
    w = _lse_weights(psi, cons.nu)[1]
    return jacobian(cons.set, t, x1).T @ _gamma_scaled(cons.set, w)


def dalpha_dt(cons: Consolidation, t: float, x1) -> float:
    """Explicit time partial: softmin-weighted average of the psi time partials."""
    x1 = _check_x(cons.set, x1)
    if cons.set.m == 0:
        return 0.0
    psi, _, dpsi_dt = _psi_first_order(cons.set, t, x1, False, True)
    w = _lse_weights(psi, cons.nu)[1]
    return float(dpsi_dt @ w)


def alpha_jet(cons: Consolidation, t: float, x1, need_dt: bool = True):
    """``(alpha, grad_alpha, dalpha_dt)`` in one pass; the hot path of the loop.

    ``dalpha_dt`` is ``None`` when ``need_dt`` is false.
    """
    psi, dpsi, dpsi_dt = _psi_first_order(cons.set, t, x1, True, need_dt)
    a, w = _lse_weights(psi, cons.nu)
    g = w @ dpsi
    return a, g, (float(w @ dpsi_dt) if need_dt else None)


def hessian_alpha(cons: Consolidation, t: float, x1) -> np.ndarray:
    """Full Hessian of alpha in x1.

    With softmin weights ``w`` and ``grad = sum w_j dpsi_j``::

        H = sum_i gamma_i e^{nu alpha} hess(h_i)
            - nu * (sum_j w_j dpsi_j dpsi_j^T - grad grad^T)
    """
    cset = cons.set
    x1 = _check_x(cset, x1)
    n = cset.n
    if cset.m == 0:
        return np.zeros((n, n))
    psi, dpsi, _ = _psi_first_order(cset, t, x1, True, False)
    _, w = _lse_weights(psi, cons.nu)
    gs = _gamma_scaled(cset, w)
    g = w @ dpsi
    H = np.zeros((n, n))
    for i, spec in enumerate(cset.specs):
        if gs[i] != 0.0:
            H += gs[i] * np.asarray(spec.channel.hessian(t, x1), dtype=float)
    H -= cons.nu * ((dpsi.T * w) @ dpsi - np.outer(g, g))
    return 0.5 * (H + H.T)


def membership(cons: Consolidation, t: float, x1) -> Membership:
    psi = eval_psi(cons.set, t, x1)
    abar = float(psi.min())
    a = float(_lse_weights(psi, cons.nu)[0])
    if abar <= 0.0:
        return Membership.OUTSIDE
    if a > 0.0:
        return Membership.IN_OMEGA
    return Membership.IN_OBAR_ONLY


# -- vectorised evaluation over point clouds (oracle / plotting) -------------

def _channel_values(ch: OutputChannel, t: float, X: np.ndarray) -> np.ndarray:
    """Evaluate a channel on an ``(n, N)`` stack, falling back to a loop."""
    try:
        v = np.asarray(ch.value(t, X), dtype=float)
        if v.shape == (X.shape[1],):
            return v
        if v.ndim == 0:
            return np.full(X.shape[1], float(v))
    except Exception:  # channel not vectorised
        pass
    return np.array([ch.value(t, X[:, j]) for j in range(X.shape[1])], dtype=float)


def psi_many(cset: ConstraintSet, t: float, X: np.ndarray) -> np.ndarray:
    """psi at many points. ``X`` has shape ``(n, N)``; returns ``(m+p, N)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != cset.n:
        raise ContractViolation(f"X must have shape ({cset.n}, N), got {X.shape}")
    out = np.empty((cset.size, X.shape[1]))
    k = 0
    for spec in cset.specs:
        h = _channel_values(spec.channel, t, X)
        kind = spec.kind
        if isinstance(kind, Funnel):
            out[k] = h - kind.lower.value(t)
            out[k + 1] = kind.upper.value(t) - h
            k += 2
        elif isinstance(kind, LowerBounded):
            out[k] = h - kind.lower.value(t)
            k += 1
        else:
            out[k] = kind.upper.value(t) - h
            k += 1
    return out


def alpha_many(cons: Consolidation, t: float, X: np.ndarray) -> np.ndarray:
    psi = psi_many(cons.set, t, X)
    lo = psi.min(axis=0)
    s = np.exp(-cons.nu * (psi - lo)).sum(axis=0)
    return lo - np.log(s) / cons.nu


def alpha_bar_many(cset: ConstraintSet, t: float, X: np.ndarray) -> np.ndarray:
    return psi_many(cset, t, X).min(axis=0)
