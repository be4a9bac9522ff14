"""Brute-force ground truth and sampled diagnostics.

Nothing here is used by the controller. ``alpha_star_grid`` evaluates the
consolidated metric on a dense grid and polishes the best point by gradient
ascent; the other routines build violation reports, sampled coercivity checks,
critical-point scans and finite-difference audits on top of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constraints import (Consolidation, OutputChannel, alpha, alpha_bar_many, alpha_many,
                          dalpha_dt, grad_alpha, hessian_alpha)


@dataclass(frozen=True)
class GridSpec:
    box: Tuple[Tuple[float, float], ...]
    resolution: int = 201
    polish_steps: int = 50
    polish_rate: Optional[float] = None  # None means 0.1 / nu

    def __post_init__(self):
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))
        if any(not lo < hi for lo, hi in self.box):
            raise ValueError("grid box needs lo < hi in every dimension")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if self.polish_steps < 0:
            raise ValueError("polish_steps must be non-negative")

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, self.resolution) for lo, hi in self.box]

    def points(self) -> np.ndarray:
        """All grid points as an ``(n, N)`` array."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    def cell(self) -> np.ndarray:
        return np.array([(hi - lo) / (self.resolution - 1) for lo, hi in self.box])

    def refined(self) -> "GridSpec":
        """Nested grid with every cell halved (contains all current points)."""
        return GridSpec(self.box, 2 * self.resolution - 1, self.polish_steps, self.polish_rate)


@dataclass
class OracleResult:
    alpha_star: float
    argmax: np.ndarray
    on_boundary: bool
    alpha_bar_star: float
    grid_max: float

    def __iter__(self):
        yield self.alpha_star
        yield self.argmax


def polish(cons: Consolidation, t: float, x0, steps: int, rate: float) -> Tuple[float, np.ndarray]:
    """Monotone gradient ascent: a step is kept only if it raises alpha."""
    x = np.asarray(x0, dtype=float).copy()
    a = alpha(cons, t, x)
    for _ in range(steps):
        g = grad_alpha(cons, t, x)
        if not np.any(g):
            break
        y = x + rate * g
        b = alpha(cons, t, y)
        if b > a:
            x, a = y, b
            rate *= 1.5
        else:
            rate *= 0.5
    return a, x


def alpha_star_grid(cons: Consolidation, t: float, grid: GridSpec) -> OracleResult:
    """Maximum of alpha over the grid box, polished from the best grid point.

    ``on_boundary`` flags an argmax within one cell of the box edge, which
    suggests the box does not contain the maximizer.
    """
    if len(grid.box) != cons.set.n:
        raise ValueError(f"grid has {len(grid.box)} dimensions, set has {cons.set.n}")
    X = grid.points()
    vals = alpha_many(cons, t, X)
    k = int(np.argmax(vals))
    grid_max = float(vals[k])
    rate = grid.polish_rate if grid.polish_rate is not None else 0.1 / cons.nu
    a, x = polish(cons, t, X[:, k], grid.polish_steps, rate)
    if a < grid_max:
        a, x = grid_max, X[:, k].copy()
    lo = np.array([b[0] for b in grid.box])
    hi = np.array([b[1] for b in grid.box])
    cell = grid.cell()
    on_boundary = bool(np.any(x - lo < cell * (1 + 1e-9)) or np.any(hi - x < cell * (1 + 1e-9)))
    abar = float(alpha_bar_many(cons.set, t, X).max())
    return OracleResult(float(a), x, on_boundary, abar, grid_max)


def alpha_star_series(cons: Consolidation, times: Sequence[float], grid: GridSpec):
    """``(alpha_star, argmax, alpha_bar_star, on_boundary)`` arrays over ``times``."""
    res = [alpha_star_grid(cons, float(t), grid) for t in times]
    return (np.array([r.alpha_star for r in res]),
            np.array([r.argmax for r in res]).reshape(len(res), cons.set.n),
            np.array([r.alpha_bar_star for r in res]),
            np.array([r.on_boundary for r in res], dtype=bool))


# -- least-violation report ---------------------------------------------------

@dataclass
class ViolationReport:
    """Infeasibility windows and the least-violation gap along a trace.

    ``windows`` are maximal runs of compared times with grid ``alpha_bar* < 0``;
    ``certified`` marks those that also satisfy ``alpha* + ln(m+p)/nu < 0``.
    ``max_gap`` is taken over the windows (over all times when there are none).
    """

    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_star: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_bar_star: np.ndarray = field(default_factory=lambda: np.empty(0))
    windows: List[Tuple[float, float]] = field(default_factory=list)
    certified: List[bool] = field(default_factory=list)
    max_gap: float = math.nan
    estimation_error_max: Optional[float] = None
    bound: Optional[float] = None
    gap_ok: Optional[bool] = None


def _runs(mask: np.ndarray, times: np.ndarray) -> List[Tuple[int, int]]:
    out, start = [], None
    for k, m in enumerate(mask):
        if m and start is None:
            start = k
        if not m and start is not None:
            out.append((start, k - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def violation_report(trace, cons: Consolidation, grid: GridSpec, mu: Optional[float] = None,
                     every: int = 1, tol: float = 1e-3) -> ViolationReport:
    """Compare a trace against the oracle at every ``every``-th recorded row.

    The gap check is ``alpha* - alpha <= mu + max e_tilde + tol`` on the
    windows, with ``e_tilde = alpha* - alpha_hat`` maximized over the windows.
    """
    if len(trace) == 0:
        return ViolationReport()
    idx = np.arange(0, len(trace), every)
    times = trace.times[idx]
    a_star, _, abar_star, _ = alpha_star_series(cons, times, grid)
    a = trace["alpha"][idx]
    gap = a_star - a
    infeasible = abar_star < 0.0
    slack = math.log(cons.set.size) / cons.nu
    runs = _runs(infeasible, times)
    rep = ViolationReport(times, a_star, abar_star,
                          [(float(times[i]), float(times[j])) for i, j in runs],
                          [bool(np.all(a_star[i:j + 1] + slack < 0.0)) for i, j in runs])
    in_win = infeasible if runs else np.ones_like(infeasible)
    rep.max_gap = float(np.max(gap[in_win]))
    if trace.has("alpha_hat"):
        e_tilde = a_star - trace["alpha_hat"][idx]
        rep.estimation_error_max = float(np.max(e_tilde[in_win]))
        if runs and mu is not None:
            rep.bound = mu + rep.estimation_error_max + tol
            rep.gap_ok = bool(rep.max_gap <= rep.bound)
    return rep


# -- sampled coercivity -------------------------------------------------------

def sample_directions(n: int, count: int) -> np.ndarray:
    """Deterministic unit directions, ``(count, n)``. In 2-D they are evenly
    spaced and include the coordinate axes when ``count`` is a multiple of 4."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        d = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        d[np.abs(d) < 1e-15] = 0.0
        return d
    # Fibonacci lattice on the sphere, then axes
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    phi = np.pi * (1.0 + 5.0 ** 0.5) * k
    r = np.sqrt(1.0 - z * z)
    d = np.zeros((count, n))
    d[:, 0], d[:, 1], d[:, 2] = r * np.cos(phi), r * np.sin(phi), z
    axes = np.vstack([np.eye(n), -np.eye(n)])
    return np.vstack([d, axes])


@dataclass
class BoundednessReport:
    """Heuristic: ``-alpha`` sampled on spheres of growing radius."""

    radii: np.ndarray
    min_neg_alpha: np.ndarray
    flagged: List[np.ndarray]

    @property
    def likely_unbounded(self) -> bool:
        return bool(self.flagged)

    def summary(self) -> str:
        if not self.flagged:
            return "no sign of unboundedness found (sampled check)"
        dirs = ", ".join(np.array2string(d, precision=3) for d in self.flagged)
        return f"likely unbounded along {dirs} (sampled check)"


def check_boundedness_sampled(cons: Consolidation, t: float, radii: Sequence[float],
                              directions: int = 16, center=None) -> BoundednessReport:
    """Flag directions along which ``-alpha`` fails to grow from the smallest
    to the largest radius."""
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be an increasing list of at least two values")
    n = cons.set.n
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    D = sample_directions(n, directions)
    neg = np.empty((len(radii), len(D)))
    for k, rad in enumerate(radii):
        neg[k] = -alpha_many(cons, t, (c + rad * D).T)
    flagged = [D[j] for j in range(len(D)) if not neg[-1, j] > neg[0, j] + 1e-9]
    return BoundednessReport(radii, neg.min(axis=1), flagged)


# -- critical points ----------------------------------------------------------

@dataclass
class CriticalPoint:
    point: np.ndarray
    value: float
    grad_norm: float
    eigenvalues: np.ndarray
    kind: str  # maximum | minimum | saddle | degenerate
    is_global_max: bool

    @property
    def min_eigen_sign(self) -> int:
        return int(np.sign(self.eigenvalues.min()))


def critical_point_scan(cons: Consolidation, t: float, grid: GridSpec,
                        grad_tol: float = 1e-8, newton_steps: int = 50,
                        value_tol: float = 1e-6) -> List[CriticalPoint]:
    """Locate critical points of alpha and classify them.

    Candidates are discrete local minima of the grid gradient norm; each is
    refined by Newton iterations on the analytic gradient and Hessian. The
    scan is a heuristic: it can exhibit a bad critical point but cannot
    prove there is none.
    """
    n = cons.set.n
    axes = grid.axes()
    shape = tuple(len(a) for a in axes)
    A = alpha_many(cons, t, grid.points()).reshape(shape)
    G = np.gradient(A, *axes)
    G = [G] if n == 1 else G
    norm = np.sqrt(sum(g * g for g in G))
    # discrete local minima of |grad| (interior cells only)
    is_min = np.ones(shape, dtype=bool)
    for ax in range(n):
        is_min &= norm <= np.roll(norm, 1, axis=ax)
        is_min &= norm <= np.roll(norm, -1, axis=ax)
        edge = [slice(None)] * n
        edge[ax] = [0, -1]
        is_min[tuple(edge)] = False
    cand = np.argwhere(is_min)
    star = alpha_star_grid(cons, t, grid).alpha_star
    lo = np.array([b[0] for b in grid.box])
    hi = np.array([b[1] for b in grid.box])
    found: List[CriticalPoint] = []
    cell = grid.cell()
    for idx in cand:
        x = np.array([axes[d][idx[d]] for d in range(n)])
        for _ in range(newton_steps):
            g = grad_alpha(cons, t, x)
            if np.linalg.norm(g) < grad_tol:
                break
            H = hessian_alpha(cons, t, x)
            step = np.linalg.pinv(H, rcond=1e-10) @ g
            # keep Newton local to the seed cell neighbourhood
            lim = 2.0 * np.linalg.norm(cell)
            sn = np.linalg.norm(step)
            if sn > lim:
                step *= lim / sn
            x = x - step
        g = grad_alpha(cons, t, x)
        gn = float(np.linalg.norm(g))
        if gn >= grad_tol or np.any(x < lo) or np.any(x > hi):
            continue
        if any(np.linalg.norm(x - c.point) < np.linalg.norm(cell) for c in found):
            continue
        H = hessian_alpha(cons, t, x)
        ev = np.linalg.eigvalsh(H)
        scale = max(1.0, float(np.abs(ev).max()))
        if np.all(ev < -1e-8 * scale):
            kind = "maximum"
        elif np.all(ev > 1e-8 * scale):
            kind = "minimum"
        elif ev.min() < -1e-8 * scale and ev.max() > 1e-8 * scale:
            kind = "saddle"
        else:
            kind = "degenerate"
        val = alpha(cons, t, x)
        found.append(CriticalPoint(x, val, gn, ev, kind, bool(val >= star - value_tol)))
    return found


def non_maximum_critical_points(points: Sequence[CriticalPoint]) -> List[CriticalPoint]:
    """Critical points that are not global maximizers."""
    return [p for p in points if not p.is_global_max]


# -- finite-difference audit --------------------------------------------------

FD_STEP = 1e-3
REL_FLOOR = 1e-6


def _d1(f, x, h):
    """Five-point central derivative of a scalar or vector function."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def rel_err(a, b, floor: float = REL_FLOOR) -> float:
    a, b = np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float))
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def fd_gradient(f, x, h=FD_STEP):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.shape[0]):
        e = np.zeros_like(x)
        e[k] = 1.0
        cols.append(_d1(lambda s: np.asarray(f(x + s * e), dtype=float), 0.0, h))
    return np.stack(cols, axis=-1)


@dataclass
class FDReport:
    samples: int
    max_rel: Dict[str, float]
    tolerances: Dict[str, float]
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _sample(rng, box, t_range, count):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    X = lo + (hi - lo) * rng.random((count, len(box)))
    T = t_range[0] + (t_range[1] - t_range[0]) * rng.random(count)
    return T, X


def fd_validate(cons: Consolidation, box, t_range=(0.0, 1.0), samples: int = 1000,
                grad_tol: float = 1e-5, dt_tol: float = 1e-5, hess_tol: float = 1e-4,
                seed: int = 0, check_channels: bool = True) -> FDReport:
    """Compare analytic derivatives with five-point finite differences.

    Errors are relative to the finite-difference value with a floor of
    ``1e-6`` on its magnitude. With ``check_channels`` every output channel
    is audited separately so a wrong channel is named in ``failures``.
    """
    tol = {"grad": grad_tol, "dt": dt_tol, "hess": hess_tol}
    worst = {"grad": 0.0, "dt": 0.0, "hess": 0.0}
    failures: List[str] = []
    if cons.set.m == 0:
        return FDReport(0, worst, tol)
    rng = np.random.default_rng(seed)
    T, X = _sample(rng, box, t_range, samples)
    for t, x in zip(T, X):
        g = grad_alpha(cons, t, x)
        worst["grad"] = max(worst["grad"], rel_err(g, fd_gradient(lambda y: alpha(cons, t, y), x)))
        d = dalpha_dt(cons, t, x)
        worst["dt"] = max(worst["dt"], rel_err(d, _d1(lambda s: alpha(cons, s, x), t, FD_STEP)))
        H = hessian_alpha(cons, t, x)
        worst["hess"] = max(worst["hess"],
                            rel_err(H, fd_gradient(lambda y: grad_alpha(cons, t, y), x)))
    for key in worst:
        if not worst[key] <= tol[key]:
            failures.append(f"alpha:{key} max rel err {worst[key]:.3g} > {tol[key]:.1g}")
    if check_channels:
        for spec in cons.set.specs:
            failures += _channel_failures(spec.channel, T[:50], X[:50], tol)
    return FDReport(samples, worst, tol, failures)


def _channel_failures(ch: OutputChannel, T, X, tol) -> List[str]:
    out = []
    eg = et = eh = 0.0
    for t, x in zip(T, X):
        eg = max(eg, rel_err(ch.gradient(t, x), fd_gradient(lambda y: ch.value(t, y), x)))
        et = max(et, rel_err(ch.time_partial(t, x), _d1(lambda s: ch.value(s, x), t, FD_STEP)))
        eh = max(eh, rel_err(ch.hessian(t, x), fd_gradient(lambda y: ch.gradient(t, y), x)))
    for key, e in (("grad", eg), ("dt", et), ("hess", eh)):
        if not e <= tol[key]:
            out.append(f"{ch.name}:{key} max rel err {e:.3g} > {tol[key]:.1g}")
    return out
