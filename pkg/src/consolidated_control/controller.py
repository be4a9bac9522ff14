"""Low-complexity backstepping law for the consolidated constraint.

Step 1 drives ``x1`` up the gradient of ``alpha`` through the barrier
``ln((alpha - rho_alpha)/upsilon)``. Each later step keeps the intermediate
error ``e_i = x_i - s_{i-1}`` inside a shrinking performance funnel through
the odd transform ``ln((1+e)/(1-e))``. The law is static: no derivative of
any intermediate control is formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bounds import PerfFunnelParams, perf_funnel
from .constraints import Consolidation, alpha_jet

# Abort thresholds applied in the closed loop; the transforms themselves only
# reject points where they are undefined.
E_ALPHA_MIN = 1e-9
E_HAT_MAX = 1.0 - 1e-9


class ConstraintTransformSingularity(ArithmeticError):
    """The consolidating constraint ``alpha > rho_alpha`` failed numerically."""

    def __init__(self, e_alpha: float, t: Optional[float] = None):
        self.e_alpha = e_alpha
        self.t = t
        at = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"consolidating constraint singular{at}: e_alpha={e_alpha:.6g}")


class IntermediateFunnelSingularity(ArithmeticError):
    """A normalized intermediate error reached the edge of its funnel."""

    def __init__(self, j: int, e_hat: float, i: Optional[int] = None,
                 t: Optional[float] = None):
        self.i, self.j, self.e_hat, self.t = i, j, e_hat, t
        where = f"e_hat[{j}]" if i is None else f"e_hat_{i}_{j + 1}"
        at = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"intermediate funnel singular{at}: {where}={e_hat:.6g}")


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and funnels of an order-``r`` controller on ``n`` channels.

    ``funnels[i - 2][j]`` parameterizes the funnel on ``e_{i,j}``; it is empty
    for ``r = 1``.
    """

    r: int
    n: int
    gains: Tuple[float, ...]
    upsilon: float
    funnels: Tuple[Tuple[PerfFunnelParams, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(float(k) for k in self.gains))
        object.__setattr__(self, "funnels", tuple(tuple(row) for row in self.funnels))
        if self.r < 1 or self.n < 1:
            raise ValueError("r and n must be positive")
        if len(self.gains) != self.r:
            raise ValueError(f"expected {self.r} gains, got {len(self.gains)}")
        if any(not k > 0 for k in self.gains):
            raise ValueError("all gains must be positive")
        if not self.upsilon > 0:
            raise ValueError(f"upsilon must be positive, got {self.upsilon}")
        if len(self.funnels) != self.r - 1 or any(len(row) != self.n for row in self.funnels):
            raise ValueError(f"funnels must be a {self.r - 1} x {self.n} table")


@dataclass
class ControllerDiagnostics:
    alpha: float
    e_alpha: float
    eps_alpha: float
    e: List[np.ndarray] = field(default_factory=list)
    e_hat: List[np.ndarray] = field(default_factory=list)
    xi: List[np.ndarray] = field(default_factory=list)
    s: List[np.ndarray] = field(default_factory=list)


def transform_alpha(e_alpha: float, upsilon: float) -> float:
    if not e_alpha > 0.0:
        raise ConstraintTransformSingularity(e_alpha)
    return math.log(e_alpha / upsilon)


def s1(cons: Consolidation, cfg: ControllerConfig, rho_alpha: float, t: float, x1) -> np.ndarray:
    """First intermediate control ``-k1 grad(alpha) eps_alpha / e_alpha``."""
    a, g, _ = alpha_jet(cons, t, np.asarray(x1, dtype=float), need_dt=False)
    e_alpha = a - rho_alpha
    eps = transform_alpha(e_alpha, cfg.upsilon)
    return -cfg.gains[0] * g * (eps / e_alpha)


def intermediate_error(x_i, s_prev) -> np.ndarray:
    x_i, s_prev = np.asarray(x_i, dtype=float), np.asarray(s_prev, dtype=float)
    if x_i.shape != s_prev.shape:
        raise ValueError(f"shape mismatch {x_i.shape} vs {s_prev.shape}")
    return x_i - s_prev


def normalize_and_transform(e_i, theta: Sequence[Tuple[float, float]]):
    """Normalized errors, their transforms and the diagonal gains ``xi``.

    ``theta`` holds ``(value, derivative)`` pairs; only values are used.
    """
    e_i = np.asarray(e_i, dtype=float)
    th = np.array([v for v, _ in theta], dtype=float)
    e_hat = e_i / th
    for j, eh in enumerate(e_hat):
        if not abs(eh) < 1.0:
            raise IntermediateFunnelSingularity(j, float(eh))
    eps = np.log((1.0 + e_hat) / (1.0 - e_hat))
    xi = 2.0 / (th * (1.0 - e_hat * e_hat))
    return e_hat, eps, xi


def s_i(k_i: float, xi, eps) -> np.ndarray:
    xi, eps = np.asarray(xi, dtype=float), np.asarray(eps, dtype=float)
    if xi.shape != eps.shape:
        raise ValueError(f"shape mismatch {xi.shape} vs {eps.shape}")
    return -k_i * xi * eps


def control_u(cons: Consolidation, cfg: ControllerConfig, bound: Tuple[float, float],
              t: float, x) -> Tuple[np.ndarray, ControllerDiagnostics]:
    """Evaluate the full law at ``(t, x)`` with ``x`` the stacked state ``[x1, ..., xr]``.

    Raises a singularity error when ``e_alpha <= 1e-9`` or any
    ``|e_hat| >= 1 - 1e-9``.
    """
    x = np.asarray(x, dtype=float)
    n = cfg.n
    if x.shape != (n * cfg.r,):
        raise ValueError(f"state must have shape ({n * cfg.r},), got {x.shape}")
    rho_alpha = bound[0]
    a, g, _ = alpha_jet(cons, t, x[:n], need_dt=False)
    e_alpha = a - rho_alpha
    if not e_alpha > E_ALPHA_MIN:
        raise ConstraintTransformSingularity(e_alpha, t)
    eps_alpha = math.log(e_alpha / cfg.upsilon)
    s = -cfg.gains[0] * g * (eps_alpha / e_alpha)
    diag = ControllerDiagnostics(a, e_alpha, eps_alpha, s=[s])
    # the blocks below work on plain floats: n is small and numpy call
    # overhead dominates the closed loop
    xs = x.tolist()
    sl = s.tolist()
    for i in range(2, cfg.r + 1):
        k = cfg.gains[i - 1]
        e, e_hat, xi, sl_next = [], [], [], []
        for j, fp in enumerate(cfg.funnels[i - 2]):
            th = perf_funnel(fp, t)[0]
            ej = xs[(i - 1) * n + j] - sl[j]
            eh = ej / th
            if not abs(eh) < E_HAT_MAX:
                raise IntermediateFunnelSingularity(j, eh, i, t)
            xij = 2.0 / (th * (1.0 - eh * eh))
            e.append(ej)
            e_hat.append(eh)
            xi.append(xij)
            sl_next.append(-k * xij * math.log((1.0 + eh) / (1.0 - eh)))
        sl = sl_next
        diag.e.append(np.array(e))
        diag.e_hat.append(np.array(e_hat))
        diag.xi.append(np.array(xi))
        diag.s.append(np.array(sl))
    return diag.s[-1], diag
