"""Deterministic fixed-step closed-loop simulation.

The plant state, its auxiliary states and (for the adaptive policy) the
estimator state are stacked into one vector and advanced together by
classical RK4. The controller is re-evaluated at every stage. The estimator
block of the right-hand side depends only on itself, so the joint step is the
same as advancing the estimator first and feeding its stage values forward.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bounds import (AdaptiveBound, BoundPolicy, FiniteTimeBoundParams, adaptive_bound,
                     auto_rho0, auto_theta0, finite_time_bound)
from .constraints import Consolidation, alpha, alpha_bar
from .controller import (ConstraintTransformSingularity, ControllerConfig,
                         IntermediateFunnelSingularity, control_u)
from .estimator import estimator_terms
from .plant import PlantModel, aux_rhs, plant_rhs

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """A scenario is inconsistent or cannot be started."""


class InitialBoundViolation(ScenarioError):
    """The bound does not start strictly below ``alpha(0, x1(0))``."""


class PatchError(ScenarioError):
    """A sweep patch refers to an unknown parameter or has a bad value."""


@dataclass(frozen=True)
class IntegrationSettings:
    step: float = 1e-3
    horizon: float = 25.0
    record_stride: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ScenarioError(f"step must be positive, got {self.step}")
        if not self.horizon >= self.step:
            raise ScenarioError("horizon must be at least one step")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ScenarioError("record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one run.

    ``x0`` is the stacked state ``[x1, ..., xr]``; ``aux0`` the plant's
    auxiliary states; ``x_tilde0`` the estimator start (adaptive policy only,
    defaults to ``x1(0)``). ``source`` keeps the scenario document it was
    built from, when there is one.
    """

    name: str
    plant: PlantModel
    consolidation: Consolidation
    bound: BoundPolicy
    controller: ControllerConfig
    integration: IntegrationSettings
    x0: np.ndarray
    aux0: Tuple[float, ...] = ()
    x_tilde0: Optional[np.ndarray] = None
    source: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n, r = self.plant.n, self.plant.r
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "aux0", tuple(float(a) for a in self.aux0))
        if self.consolidation.set.n != n:
            raise ScenarioError(f"constraint set is over {self.consolidation.set.n} "
                                f"outputs but the plant has {n} channels")
        if (self.controller.n, self.controller.r) != (n, r):
            raise ScenarioError("controller and plant dimensions differ")
        if self.x0.shape != (n * r,):
            raise ScenarioError(f"initial state must have {n * r} entries")
        if len(self.aux0) != self.plant.aux_dim:
            raise ScenarioError(f"plant expects {self.plant.aux_dim} auxiliary states")
        if self.x_tilde0 is not None:
            xt = np.asarray(self.x_tilde0, dtype=float)
            if xt.shape != (n,):
                raise ScenarioError(f"x_tilde0 must have {n} entries")
            object.__setattr__(self, "x_tilde0", xt)

    @property
    def adaptive(self) -> bool:
        return isinstance(self.bound, AdaptiveBound)


@dataclass
class SimulationTrace:
    """Recorded run. ``data`` has one row per record and one column per name."""

    columns: List[str]
    data: np.ndarray
    row_events: List[str]
    events: List[Tuple[float, str, str]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def has(self, name: str) -> bool:
        return name in self.columns

    def group(self, prefix: str) -> np.ndarray:
        idx = [k for k, c in enumerate(self.columns) if c.startswith(prefix)]
        return self.data[:, idx]

    @property
    def times(self) -> np.ndarray:
        return self["t"]

    @property
    def aborted(self) -> bool:
        return self.metadata.get("status") == "aborted"


def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray], t: float, y, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# -- scenario resolution ------------------------------------------------------

def _nominal(bound: BoundPolicy) -> FiniteTimeBoundParams:
    return bound.nominal if isinstance(bound, AdaptiveBound) else bound.params


def _with_nominal(bound: BoundPolicy, p: FiniteTimeBoundParams) -> BoundPolicy:
    if isinstance(bound, AdaptiveBound):
        return replace(bound, nominal=p)
    return replace(bound, params=p)


def _bound_at(s: Scenario, t: float, alpha_hat: float = 0.0, alpha_hat_dot: float = 0.0):
    if isinstance(s.bound, AdaptiveBound):
        return adaptive_bound(s.bound, t, alpha_hat, alpha_hat_dot)
    return finite_time_bound(s.bound.params, t)


def resolve_auto(s: Scenario) -> Scenario:
    """Fill in ``rho0`` and unresolved funnel ``theta0`` from the initial state,
    check funnel widths and the initial bound. Choices go to ``metadata``."""
    meta = dict(s.metadata)
    cons = s.consolidation
    n, r = s.plant.n, s.plant.r
    x1 = s.x0[:n]
    a0 = alpha(cons, 0.0, x1)
    if not math.isfinite(a0):
        raise ScenarioError("alpha(0, x1(0)) is not finite")
    meta["alpha0"] = a0

    crossed = cons.set.check_funnels(s.integration.horizon)
    if crossed:
        msg = "; ".join(f"funnel {i} width {w:.3g} at t={t:.3g}" for i, t, w in crossed)
        if not s.adaptive:
            raise ScenarioError(f"funnel bounds cross under a static bound: {msg}")
        meta.setdefault("warnings", []).append(f"funnel bounds cross: {msg}")

    bound = s.bound
    nom = _nominal(bound)
    if nom.rho0 is None:
        rho0 = auto_rho0(a0)
        if rho0 > nom.rho_inf:
            raise ScenarioError(f"auto rho0={rho0:.6g} exceeds rho_inf={nom.rho_inf:.6g}")
        bound = _with_nominal(bound, replace(nom, rho0=rho0))
        meta["auto_rho0"] = rho0

    x_tilde0 = s.x_tilde0
    if s.adaptive and x_tilde0 is None:
        x_tilde0 = x1.copy()
    s = replace(s, bound=bound, x_tilde0=x_tilde0, metadata=meta)

    if s.adaptive:
        a_hat, a_hat_dot, _ = estimator_terms(cons, s.bound.estimator, 0.0, x_tilde0)
        rho, _ = adaptive_bound(s.bound, 0.0, a_hat, a_hat_dot)
    else:
        rho, _ = finite_time_bound(s.bound.params, 0.0)
    if not rho < a0:
        raise InitialBoundViolation(
            f"rho_alpha(0)={rho:.6g} is not below alpha(0, x1(0))={a0:.6g}")

    # funnels are resolved block by block since s_{i-1}(0) needs the earlier ones
    cfg = s.controller
    rows = [list(row) for row in cfg.funnels]
    auto_theta = {}
    for i in range(2, r + 1):
        partial = replace(cfg, r=i - 1, gains=cfg.gains[:i - 1],
                          funnels=tuple(tuple(rw) for rw in rows[:i - 2]))
        _, diag = control_u(cons, partial, (rho, 0.0), 0.0, s.x0[:(i - 1) * n])
        e = s.x0[(i - 1) * n:i * n] - diag.s[-1]
        for j, p in enumerate(rows[i - 2]):
            if p.theta0 is None:
                th0 = max(auto_theta0(e[j]), p.theta_inf)
                rows[i - 2][j] = replace(p, theta0=th0)
                auto_theta[f"theta0_{i}_{j + 1}"] = th0
            elif not abs(e[j]) < p.theta0:
                raise ScenarioError(f"|e_{i},{j + 1}(0)|={abs(e[j]):.6g} is not inside "
                                    f"theta0={p.theta0:.6g}")
    if auto_theta:
        meta["auto_theta0"] = auto_theta
    cfg = replace(cfg, funnels=tuple(tuple(rw) for rw in rows))
    return replace(s, controller=cfg, metadata=meta)


# -- closed loop --------------------------------------------------------------

def trace_columns(s: Scenario) -> List[str]:
    n, r = s.plant.n, s.plant.r
    cols = ["t"]
    cols += [f"x{i}_{j}" for i in range(1, r + 1) for j in range(1, n + 1)]
    cols += list(s.plant.aux_names)
    cols += [f"u_{j}" for j in range(1, n + 1)]
    cols += ["alpha", "alpha_bar", "rho_alpha"]
    if s.adaptive:
        cols += ["varrho", "alpha_hat"]
        cols += [f"x_tilde_{j}" for j in range(1, n + 1)]
    cols += ["e_alpha"]
    cols += [f"e_hat_{i}_{j}" for i in range(2, r + 1) for j in range(1, n + 1)]
    return cols


class _Loop:
    """Right-hand side of the stacked system with access to stage diagnostics."""

    def __init__(self, s: Scenario):
        self.s = s
        self.n, self.r = s.plant.n, s.plant.r
        self.nx = self.n * self.r
        self.na = s.plant.aux_dim
        self.last = None

    def split(self, y):
        nx, na = self.nx, self.na
        return y[:nx], y[nx:nx + na], y[nx + na:]

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        s = self.s
        x, aux, xt = self.split(y)
        if s.adaptive:
            a_hat, a_hat_dot, xt_dot = estimator_terms(s.consolidation, s.bound.estimator, t, xt)
            bound = adaptive_bound(s.bound, t, a_hat, a_hat_dot)
        else:
            a_hat, xt_dot = None, xt[:0]
            bound = finite_time_bound(s.bound.params, t)
        u, diag = control_u(s.consolidation, s.controller, bound, t, x)
        self.last = (bound, a_hat, u, diag)
        xdot = plant_rhs(s.plant, t, x, u, aux)
        if self.na:
            return np.concatenate((xdot, aux_rhs(s.plant, t, x, aux), xt_dot))
        return np.concatenate((xdot, xt_dot))

    def row(self, t, y, stage, abort=False):
        s = self.s
        x, aux, xt = self.split(y)
        n = self.n
        out = [t, *x, *aux]
        if stage is None:
            # abort row: the control is undefined but the bound still is
            out += [math.nan] * n
            a = alpha(s.consolidation, t, x[:n])
            if s.adaptive:
                a_hat, a_hat_dot, _ = estimator_terms(s.consolidation, s.bound.estimator, t, xt)
                bound = _bound_at(s, t, a_hat, a_hat_dot)
            else:
                a_hat, bound = None, _bound_at(s, t)
            e_hat = [math.nan] * (n * (self.r - 1))
            diag = None
        else:
            bound, a_hat, u, diag = stage
            out += list(u)
            a = diag.alpha
            e_hat = [v for block in diag.e_hat for v in block]
        out += [a, alpha_bar(s.consolidation.set, t, x[:n]), bound[0]]
        if s.adaptive:
            out += [finite_time_bound(s.bound.nominal, t)[0], a_hat, *xt]
        out += [diag.e_alpha if diag is not None else a - bound[0]]
        out += e_hat
        return out


def run_closed_loop(s: Scenario) -> SimulationTrace:
    """Integrate the closed loop to the horizon or the first singularity."""
    s = resolve_auto(s)
    loop = _Loop(s)
    cols = trace_columns(s)
    h = s.integration.step
    n_steps = s.integration.n_steps
    stride = int(s.integration.record_stride)
    y = np.concatenate((s.x0, np.array(s.aux0, dtype=float),
                        s.x_tilde0 if s.adaptive else np.empty(0)))
    rows, row_events, events = [], [], []
    status = "completed"
    for k in range(n_steps + 1):
        t = k * h
        try:
            k1 = loop(t, y)
            stage = loop.last
            if k % stride == 0 or k == n_steps:
                rows.append(loop.row(t, y, stage))
                row_events.append("")
            if k == n_steps:
                break
            k2 = loop(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = loop(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = loop(t + h, y + h * k3)
            y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y_next)):
                raise FloatingPointError(f"non-finite state after t={t:.6g}")
            y = y_next
        except (ConstraintTransformSingularity, IntermediateFunnelSingularity,
                FloatingPointError) as exc:
            kind = type(exc).__name__
            detail = str(exc)
            t_event = getattr(exc, "t", None)
            events.append((t if t_event is None else t_event, kind, detail))
            # drop a duplicate row for this time before writing the abort row
            if rows and rows[-1][0] == t:
                rows.pop()
                row_events.pop()
            rows.append(loop.row(t, y, None))
            row_events.append(kind)
            status = "aborted"
            log.warning("run %s aborted: %s", s.name, detail)
            break
    meta = dict(s.metadata)
    meta.update(scenario=s.name, status=status, step=h, horizon=s.integration.horizon,
                record_stride=stride, policy="adaptive" if s.adaptive else "static")
    nom = _nominal(s.bound)
    meta.update(rho0=nom.rho0, rho_inf=nom.rho_inf, T=nom.T, beta=nom.beta)
    if s.source is not None:
        meta["source"] = s.source
    data = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return SimulationTrace(cols, data, row_events, events, meta)


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepResult:
    patch: Dict[str, Any]
    trace: Optional[SimulationTrace]
    error: Optional[str] = None


def sweep(base: Scenario, patches: Sequence[Mapping[str, Any]]) -> List[SweepResult]:
    """Run one independent simulation per patch.

    Patches are validated up front (:class:`PatchError`); failures of
    individual runs are collected in the results.
    """
    from .scenario_io import apply_patch, build_scenario

    if not patches:
        return []
    if base.source is None:
        raise PatchError("sweeps need a scenario built from a scenario document")
    docs = [apply_patch(base.source, p) for p in patches]
    results = []
    for patch, doc in zip(patches, docs):
        try:
            trace = run_closed_loop(build_scenario(doc))
            results.append(SweepResult(dict(patch), trace,
                                       trace.events[-1][2] if trace.aborted else None))
        except ScenarioError as exc:
            results.append(SweepResult(dict(patch), None, str(exc)))
    return results
