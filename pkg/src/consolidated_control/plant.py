"""Plant models in lower-triangular form ``x_i' = f_i + G_i x_{i+1}``, ``x_{r+1} = u``.

The mobile-robot model controls the hand point ``p_H = p_c + L[cos th, sin th]``
of a unicycle. With ``zeta = [v, omega]`` the hand velocity is
``x2 = J(th) zeta`` where ``J = [[cos, -L sin], [sin, L cos]]``, so
``zeta = Upsilon x2`` with ``Upsilon = J^{-1}``. The heading is carried as an
auxiliary state with ``th' = omega``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

Vector = np.ndarray


@dataclass(frozen=True)
class PlantModel:
    """Generic plant on ``n`` channels and ``r`` blocks.

    ``f[i]`` and ``G[i]`` take ``(t, xbar, aux)`` where ``xbar`` is the full
    stacked state; block ``i`` may only read ``x_1 .. x_{i+1}`` of it.
    ``aux_rhs(t, x, aux)`` advances optional auxiliary states.
    """

    n: int
    r: int
    f: Tuple[Callable, ...]
    G: Tuple[Callable, ...]
    aux_rhs: Optional[Callable] = None
    aux_names: Tuple[str, ...] = ()
    name: str = "generic"

    def __post_init__(self):
        if len(self.f) != self.r or len(self.G) != self.r:
            raise ValueError(f"need {self.r} drift and gain functions")

    @property
    def aux_dim(self) -> int:
        return len(self.aux_names)


def plant_rhs(model: PlantModel, t: float, x, u, aux=()) -> Vector:
    """Stacked ``x'`` with ``x_{r+1}`` replaced by ``u``."""
    n, r = model.n, model.r
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (n * r,) or u.shape != (n,):
        raise ValueError(f"expected x of shape ({n * r},) and u of shape ({n},)")
    out = np.empty(n * r)
    for i in range(r):
        nxt = u if i == r - 1 else x[(i + 1) * n:(i + 2) * n]
        out[i * n:(i + 1) * n] = model.f[i](t, x, aux) + model.G[i](t, x, aux) @ nxt
    return out


def aux_rhs(model: PlantModel, t: float, x, aux) -> Vector:
    if model.aux_rhs is None:
        return np.empty(0)
    return np.asarray(model.aux_rhs(t, x, aux), dtype=float)


def _zero(n):
    z = np.zeros(n)
    return lambda t, x, aux: z


def _eye(n):
    eye = np.eye(n)
    return lambda t, x, aux: eye


def integrator_chain(n: int, r: int) -> PlantModel:
    """``r`` stacked integrators per channel: ``x_i' = x_{i+1}``, ``x_r' = u``."""
    return PlantModel(n, r, tuple(_zero(n) for _ in range(r)),
                      tuple(_eye(n) for _ in range(r)), name="integrator_chain")


def default_disturbance(t: float) -> Vector:
    return np.array([
        0.75 * math.sin(3.0 * t + math.pi / 3.0) + 1.5 * math.cos(t + 3.0 * math.pi / 7.0),
        -2.4 * math.exp(math.cos(t + math.pi / 3.0) + 1.0) * math.sin(t),
    ])


def no_disturbance(t: float) -> Vector:
    return np.zeros(2)


@dataclass(frozen=True)
class RobotParams:
    m_R: float = 3.6
    I_R: float = 0.0405
    D1: float = 0.3
    D2: float = 0.04
    L: float = 0.2
    disturbance: Callable[[float], Vector] = field(default=default_disturbance)

    def __post_init__(self):
        for name in ("m_R", "I_R", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def upsilon(p: RobotParams, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s / p.L, c / p.L]])


def heading_rate(p: RobotParams, theta: float, x2) -> float:
    return (-math.sin(theta) * x2[0] + math.cos(theta) * x2[1]) / p.L


def upsilon_dot(p: RobotParams, theta: float, theta_dot: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return theta_dot * np.array([[-s, c], [-c / p.L, -s / p.L]])


def robot_matrices(p: RobotParams, t: float, x2, theta: float):
    """``(M, C, D, d)`` in hand coordinates."""
    U = upsilon(p, theta)
    Ud = upsilon_dot(p, theta, heading_rate(p, theta, x2))
    Mb = np.diag([p.m_R, p.I_R])
    Db = np.diag([p.D1, p.D2])
    return U.T @ Mb @ U, U.T @ Mb @ Ud, U.T @ Db @ U, U.T @ p.disturbance(t)


def _robot_inertia_inv(p: RobotParams, theta: float) -> np.ndarray:
    # M^{-1} = J Mb^{-1} J^T with J = Upsilon^{-1}
    c, s = math.cos(theta), math.sin(theta)
    a, b = 1.0 / p.m_R, p.L * p.L / p.I_R
    return np.array([[a * c * c + b * s * s, (a - b) * c * s],
                     [(a - b) * c * s, a * s * s + b * c * c]])


def _robot_drift(p: RobotParams, t: float, x2, theta: float) -> Vector:
    """``M^{-1}(d - (C + D) x2)`` in closed form.

    Since ``M^{-1} Upsilon^T = J Mb^{-1}``, the drift is
    ``J (Mb^{-1}(dbar - Db zeta) - Upsilon' x2)`` with ``zeta = Upsilon x2``.
    """
    c, s = math.cos(theta), math.sin(theta)
    L = p.L
    v = c * x2[0] + s * x2[1]
    w = (-s * x2[0] + c * x2[1]) / L
    db = p.disturbance(t)
    a1 = (db[0] - p.D1 * v) / p.m_R - L * w * w
    a2 = (db[1] - p.D2 * w) / p.I_R + v * w / L
    return np.array([c * a1 - L * s * a2, s * a1 + L * c * a2])


def robot_model(p: RobotParams) -> PlantModel:
    """Embedding with ``f1 = 0``, ``G1 = I``, ``f2 = M^{-1}(d - (C+D) x2)``, ``G2 = M^{-1}``."""
    f2 = lambda t, x, aux: _robot_drift(p, t, x[2:4], aux[0])
    G2 = lambda t, x, aux: _robot_inertia_inv(p, aux[0])
    th = lambda t, x, aux: np.array([heading_rate(p, aux[0], x[2:4])])
    return PlantModel(2, 2, (_zero(2), f2), (_eye(2), G2), aux_rhs=th,
                      aux_names=("theta",), name="robot")


def robot_rhs(p: RobotParams, t: float, state, u) -> Tuple[Vector, Vector, float]:
    """``(x1', x2', theta')`` for ``state = (x1, x2, theta)``."""
    x1, x2, theta = state
    x2 = np.asarray(x2, dtype=float)
    u = np.asarray(u, dtype=float)
    x2dot = _robot_drift(p, t, x2, theta) + _robot_inertia_inv(p, theta) @ u
    return x2.copy(), x2dot, heading_rate(p, theta, x2)
