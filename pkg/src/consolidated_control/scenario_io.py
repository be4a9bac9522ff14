"""Scenario documents (YAML) and trace files.

A scenario document is a mapping with the sections ``name``, ``plant``,
``params``, ``constraints``, ``consolidation``, ``bound``, ``controller``,
``integration``, ``initial`` and optionally ``oracle``. Loading goes through
:func:`canonicalize`, which fills defaults and checks types, so that
``canonicalize(load(dump(doc))) == canonicalize(doc)``.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import yaml

from .bounds import (AdaptiveBound, EstimatorParams, FiniteTimeBoundParams, PerfFunnelParams,
                     StaticBound)
from .constraints import (ConstraintSet, ConstraintSpec, Consolidation, ContractViolation,
                          Funnel, LowerBounded, UpperBounded)
from .controller import ControllerConfig
from .expressions import (ExpressionError, compile_channel, compile_psi_jet,
                          compile_time_function, parse_params)
from .plant import (RobotParams, default_disturbance, integrator_chain, no_disturbance,
                    robot_model)
from .sim import (IntegrationSettings, PatchError, Scenario, ScenarioError, SimulationTrace,
                  resolve_auto)

KINDS = ("funnel", "lower", "upper")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}

PATCH_ALIASES = {
    "nu": "consolidation.nu",
    "T": "bound.T",
    "beta": "bound.beta",
    "rho0": "bound.rho0",
    "rho_inf": "bound.rho_inf",
    "mu": "bound.mu",
    "k_alpha": "bound.estimator.k_alpha",
    "eps_g": "bound.estimator.eps_g",
    "mu_chi": "bound.estimator.mu_chi",
    "upsilon": "controller.upsilon",
    "gains": "controller.gains",
    "step": "integration.step",
    "horizon": "integration.horizon",
    "stride": "integration.stride",
}

ROBOT_DEFAULTS = {"m_R": 3.6, "I_R": 0.0405, "D1": 0.3, "D2": 0.04, "L": 0.2,
                  "disturbance": "default"}


class ScenarioFileError(ScenarioError):
    """Scenario document error located by YAML line or field path."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


# -- field helpers ------------------------------------------------------------

def _section(doc: Mapping, key: str, path: str, required: bool = True) -> Dict[str, Any]:
    val = doc.get(key)
    if val is None:
        if required:
            raise ScenarioFileError(f"{path}{key}", "missing section")
        return {}
    if not isinstance(val, Mapping):
        raise ScenarioFileError(f"{path}{key}", "expected a mapping")
    return dict(val)


def _number(sec: Mapping, key: str, path: str, default=None, positive=False,
            integer=False) -> Any:
    where = f"{path}.{key}"
    val = sec.get(key, default)
    if val is None:
        raise ScenarioFileError(where, "missing value")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioFileError(where, f"expected a number, got {val!r}")
    if not math.isfinite(val):
        raise ScenarioFileError(where, "must be finite")
    if integer:
        if int(val) != val:
            raise ScenarioFileError(where, f"expected an integer, got {val!r}")
        val = int(val)
    else:
        val = float(val)
    if positive and not val > 0:
        raise ScenarioFileError(where, f"must be positive, got {val!r}")
    return val


def _auto_or_number(sec: Mapping, key: str, path: str, default="auto"):
    val = sec.get(key, default)
    if val == "auto":
        return "auto"
    return _number({key: val}, key, path)


def _vector(val, where: str, length: Optional[int] = None) -> List[float]:
    if not isinstance(val, (list, tuple)):
        raise ScenarioFileError(where, "expected a list of numbers")
    out = []
    for k, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioFileError(f"{where}[{k}]", f"expected a finite number, got {v!r}")
        out.append(float(v))
    if length is not None and len(out) != length:
        raise ScenarioFileError(where, f"expected {length} entries, got {len(out)}")
    return out


def _expr(val, where: str):
    if isinstance(val, bool) or not isinstance(val, (str, int, float)):
        raise ScenarioFileError(where, f"expected an expression, got {val!r}")
    return float(val) if isinstance(val, (int, float)) else val


# -- canonical form -----------------------------------------------------------

def canonicalize(doc: Mapping[str, Any]) -> Dict[str, Any]:
    """Validated copy of ``doc`` with every default filled in."""
    if not isinstance(doc, Mapping):
        raise ScenarioFileError("<root>", "expected a mapping")
    known = {"name", "plant", "params", "constraints", "consolidation", "bound",
             "controller", "integration", "initial", "oracle"}
    for key in doc:
        if key not in known:
            raise ScenarioFileError(str(key), "unknown section")
    out: Dict[str, Any] = {}
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioFileError("name", "missing or not a string")
    out["name"] = name

    plant = _section(doc, "plant", "")
    model = plant.get("model")
    pparams = plant.get("params") or {}
    if not isinstance(pparams, Mapping):
        raise ScenarioFileError("plant.params", "expected a mapping")
    if model == "robot":
        rp = {}
        for key in ROBOT_DEFAULTS:
            if key == "disturbance":
                dist = pparams.get(key, ROBOT_DEFAULTS[key])
                if dist not in ("default", "none"):
                    if not (isinstance(dist, list) and len(dist) == 2):
                        raise ScenarioFileError("plant.params.disturbance",
                                                "expected 'default', 'none' or two expressions")
                    dist = [_expr(d, f"plant.params.disturbance[{k}]")
                            for k, d in enumerate(dist)]
                rp[key] = dist
            else:
                rp[key] = _number(pparams, key, "plant.params", ROBOT_DEFAULTS[key],
                                  positive=key in ("m_R", "I_R", "L"))
        for key in pparams:
            if key not in ROBOT_DEFAULTS:
                raise ScenarioFileError(f"plant.params.{key}", "unknown robot parameter")
        out["plant"] = {"model": "robot", "params": rp}
        n, r = 2, 2
    elif model == "integrator_chain":
        n = _number(pparams, "n", "plant.params", positive=True, integer=True)
        r = _number(pparams, "r", "plant.params", positive=True, integer=True)
        for key in pparams:
            if key not in ("n", "r"):
                raise ScenarioFileError(f"plant.params.{key}", "unknown parameter")
        out["plant"] = {"model": "integrator_chain", "params": {"n": n, "r": r}}
    else:
        raise ScenarioFileError("plant.model", f"expected 'robot' or 'integrator_chain', "
                                               f"got {model!r}")

    params = doc.get("params") or {}
    if not isinstance(params, Mapping):
        raise ScenarioFileError("params", "expected a mapping")
    out["params"] = {str(k): _expr(v, f"params.{k}") for k, v in params.items()}

    cons = doc.get("constraints")
    if not isinstance(cons, list) or not cons:
        raise ScenarioFileError("constraints", "expected a non-empty list")
    clist = []
    last = 0
    for k, c in enumerate(cons):
        where = f"constraints[{k}]"
        if not isinstance(c, Mapping):
            raise ScenarioFileError(where, "expected a mapping")
        kind = c.get("kind")
        if kind not in KINDS:
            raise ScenarioFileError(f"{where}.kind", f"expected one of {KINDS}, got {kind!r}")
        if _KIND_RANK[kind] < last:
            raise ScenarioFileError(f"{where}.kind",
                                    "constraints must list funnels, then lower, then upper")
        last = _KIND_RANK[kind]
        need = {"funnel": ("lower", "upper"), "lower": ("lower",), "upper": ("upper",)}[kind]
        for key in c:
            if key not in ("kind", "channel", "name") + need:
                raise ScenarioFileError(f"{where}.{key}", f"not allowed for kind {kind!r}")
        entry = {"kind": kind, "name": str(c.get("name", f"h{k + 1}")),
                 "channel": _expr(c.get("channel"), f"{where}.channel")}
        for key in need:
            if key not in c:
                raise ScenarioFileError(f"{where}.{key}", "missing bound")
            entry[key] = _expr(c[key], f"{where}.{key}")
        clist.append(entry)
    out["constraints"] = clist

    cs = _section(doc, "consolidation", "")
    out["consolidation"] = {"nu": _number(cs, "nu", "consolidation", positive=True)}

    b = _section(doc, "bound", "")
    policy = b.get("policy", "static")
    if policy not in ("static", "adaptive"):
        raise ScenarioFileError("bound.policy", f"expected 'static' or 'adaptive', got {policy!r}")
    bo = {"policy": policy,
          "T": _number(b, "T", "bound", positive=True),
          "beta": _number(b, "beta", "bound"),
          "rho_inf": _number(b, "rho_inf", "bound"),
          "rho0": _auto_or_number(b, "rho0", "bound")}
    allowed = {"policy", "T", "beta", "rho_inf", "rho0"}
    if policy == "adaptive":
        bo["mu"] = _number(b, "mu", "bound", positive=True)
        est = b.get("estimator") or {}
        if not isinstance(est, Mapping):
            raise ScenarioFileError("bound.estimator", "expected a mapping")
        bo["estimator"] = {
            "k_alpha": _number(est, "k_alpha", "bound.estimator", 2.0, positive=True),
            "eps_g": _number(est, "eps_g", "bound.estimator", 1.0, positive=True),
            "mu_chi": _number(est, "mu_chi", "bound.estimator", 0.1, positive=True),
        }
        for key in est:
            if key not in bo["estimator"]:
                raise ScenarioFileError(f"bound.estimator.{key}", "unknown parameter")
        allowed |= {"mu", "estimator"}
    for key in b:
        if key not in allowed:
            raise ScenarioFileError(f"bound.{key}", f"not allowed for policy {policy!r}")
    out["bound"] = bo

    ctl = _section(doc, "controller", "")
    if "gains" not in ctl:
        raise ScenarioFileError("controller.gains", "missing value")
    gains = _vector(ctl["gains"], "controller.gains", r)
    if any(not g > 0 for g in gains):
        raise ScenarioFileError("controller.gains", "gains must be positive")
    co = {"gains": gains, "upsilon": _number(ctl, "upsilon", "controller", positive=True)}
    fun = ctl.get("funnels", {})
    if r > 1:
        blocks = fun if isinstance(fun, list) else [fun] * (r - 1)
        if len(blocks) != r - 1:
            raise ScenarioFileError("controller.funnels", f"expected {r - 1} blocks")
        fo = []
        for i, blk in enumerate(blocks):
            where = f"controller.funnels[{i}]" if isinstance(fun, list) else "controller.funnels"
            if not isinstance(blk, Mapping):
                raise ScenarioFileError(where, "expected a mapping")
            th0 = blk.get("theta0", "auto")
            if th0 != "auto":
                th0 = _vector(th0, f"{where}.theta0", n) if isinstance(th0, list) \
                    else _number(blk, "theta0", where)
            fo.append({"theta0": th0,
                       "theta_inf": _number(blk, "theta_inf", where, positive=True),
                       "l": _number(blk, "l", where, positive=True)})
            for key in blk:
                if key not in ("theta0", "theta_inf", "l"):
                    raise ScenarioFileError(f"{where}.{key}", "unknown parameter")
        co["funnels"] = fo
    else:
        co["funnels"] = []
    out["controller"] = co

    it = _section(doc, "integration", "", required=False)
    out["integration"] = {
        "step": _number(it, "step", "integration", 1e-3, positive=True),
        "horizon": _number(it, "horizon", "integration", 25.0, positive=True),
        "stride": _number(it, "stride", "integration", 1, positive=True, integer=True),
    }

    ini = _section(doc, "initial", "")
    if "x0" not in ini:
        raise ScenarioFileError("initial.x0", "missing value")
    io_ = {"x0": _vector(ini["x0"], "initial.x0", n * r)}
    if model == "robot":
        io_["theta0"] = _number(ini, "theta0", "initial", 0.0)
    elif "theta0" in ini:
        raise ScenarioFileError("initial.theta0", "only the robot model has a heading")
    xt = ini.get("x_tilde0")
    io_["x_tilde0"] = None if xt is None else _vector(xt, "initial.x_tilde0", n)
    out["initial"] = io_

    orc = doc.get("oracle")
    if orc is not None:
        if not isinstance(orc, Mapping):
            raise ScenarioFileError("oracle", "expected a mapping")
        box = orc.get("box")
        if not isinstance(box, list) or len(box) != n:
            raise ScenarioFileError("oracle.box", f"expected {n} [lo, hi] pairs")
        bx = []
        for k, pair in enumerate(box):
            lo, hi = _vector(pair, f"oracle.box[{k}]", 2)
            if not lo < hi:
                raise ScenarioFileError(f"oracle.box[{k}]", "lo must be below hi")
            bx.append([lo, hi])
        out["oracle"] = {
            "box": bx,
            "resolution": _number(orc, "resolution", "oracle", 201, integer=True),
            "polish_steps": _number(orc, "polish_steps", "oracle", 50, integer=True),
        }
        if out["oracle"]["resolution"] < 2:
            raise ScenarioFileError("oracle.resolution", "must be at least 2")
    return out


# -- building -----------------------------------------------------------------

def build_constraints(doc: Mapping[str, Any], n: int, fused: bool = True) -> ConstraintSet:
    """Constraint set from the ``params`` and ``constraints`` sections.

    With ``fused`` the set also carries a single compiled first-order
    evaluator (see :func:`compile_psi_jet`).
    """
    try:
        params = parse_params(doc.get("params") or {})
    except ExpressionError as exc:
        raise ScenarioFileError("params", str(exc)) from None
    specs = []
    for k, c in enumerate(doc["constraints"]):
        where = f"constraints[{k}]"
        try:
            ch = compile_channel(c.get("name", f"h{k + 1}"), c["channel"], n, params)
        except ExpressionError as exc:
            raise ScenarioFileError(f"{where}.channel", str(exc)) from None
        tf = {}
        for key in ("lower", "upper"):
            if key in c:
                try:
                    tf[key] = compile_time_function(c[key], params, f"{where}.{key}")
                except ExpressionError as exc:
                    raise ScenarioFileError(f"{where}.{key}", str(exc)) from None
        kind = {"funnel": lambda: Funnel(tf["lower"], tf["upper"]),
                "lower": lambda: LowerBounded(tf["lower"]),
                "upper": lambda: UpperBounded(tf["upper"])}[c["kind"]]()
        specs.append(ConstraintSpec(ch, kind))
    entries = [(c["kind"], c["channel"], c.get("lower"), c.get("upper"))
               for c in doc["constraints"]]
    try:
        return ConstraintSet(tuple(specs), n, compile_psi_jet(entries, n, params) if fused else None)
    except ContractViolation as exc:
        raise ScenarioFileError("constraints", str(exc)) from None


def _disturbance(spec):
    if spec == "default":
        return default_disturbance
    if spec == "none":
        return no_disturbance
    fs = [compile_time_function(e, {}, "plant.params.disturbance") for e in spec]
    return lambda t: np.array([fs[0](t), fs[1](t)])


def build_scenario(doc: Mapping[str, Any]) -> Scenario:
    """Scenario from a document (not yet resolved; see :func:`resolve_auto`)."""
    d = canonicalize(doc)
    pl = d["plant"]
    if pl["model"] == "robot":
        p = dict(pl["params"])
        p["disturbance"] = _disturbance(p["disturbance"])
        plant = robot_model(RobotParams(**p))
        aux0 = (d["initial"]["theta0"],)
    else:
        plant = integrator_chain(pl["params"]["n"], pl["params"]["r"])
        aux0 = ()
    n, r = plant.n, plant.r
    cset = build_constraints(d, n)
    cons = Consolidation(cset, d["consolidation"]["nu"])

    b = d["bound"]
    try:
        ftb = FiniteTimeBoundParams(b["T"], b["beta"], b["rho_inf"],
                                    None if b["rho0"] == "auto" else b["rho0"])
        if b["policy"] == "adaptive":
            bound = AdaptiveBound(ftb, b["mu"], EstimatorParams(**b["estimator"]))
        else:
            bound = StaticBound(ftb)
    except ValueError as exc:
        raise ScenarioFileError("bound", str(exc)) from None

    c = d["controller"]
    rows = []
    try:
        for blk in c["funnels"]:
            th0 = blk["theta0"]
            th0 = [None] * n if th0 == "auto" else (th0 if isinstance(th0, list) else [th0] * n)
            rows.append(tuple(PerfFunnelParams(blk["theta_inf"], blk["l"], th0[j])
                              for j in range(n)))
        cfg = ControllerConfig(r, n, tuple(c["gains"]), c["upsilon"], tuple(rows))
    except ValueError as exc:
        raise ScenarioFileError("controller", str(exc)) from None

    it = d["integration"]
    settings = IntegrationSettings(it["step"], it["horizon"], it["stride"])
    xt0 = d["initial"]["x_tilde0"]
    return Scenario(d["name"], plant, cons, bound, cfg, settings,
                    np.array(d["initial"]["x0"]), aux0,
                    None if xt0 is None else np.array(xt0), source=d)


def load_document(path) -> Dict[str, Any]:
    text = Path(path).read_text()
    return loads_document(text)


def loads_document(text: str) -> Dict[str, Any]:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}" if mark is not None else "<yaml>"
        raise ScenarioFileError(where, exc.problem or str(exc)) from None
    except yaml.YAMLError as exc:
        raise ScenarioFileError("<yaml>", str(exc)) from None
    if not isinstance(doc, dict):
        raise ScenarioFileError("<root>", "expected a mapping")
    return doc


def parse_scenario(path) -> Scenario:
    """Load, validate and resolve a scenario file."""
    return resolve_auto(build_scenario(load_document(path)))


def dump_scenario(doc: Mapping[str, Any]) -> str:
    return yaml.safe_dump(canonicalize(doc), sort_keys=False, default_flow_style=None)


# -- patches ------------------------------------------------------------------

def apply_patch(doc: Mapping[str, Any], patch: Mapping[str, Any]) -> Dict[str, Any]:
    """Copy of the canonical document with dotted-path overrides applied.

    Keys are dotted paths (``bound.estimator.k_alpha``, ``initial.x0.1``) or
    one of the short aliases in :data:`PATCH_ALIASES`. The path must exist.
    """
    out = copy.deepcopy(canonicalize(doc))
    for key, value in patch.items():
        path = PATCH_ALIASES.get(key, key).split(".")
        node = out
        for k, part in enumerate(path):
            last = k == len(path) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise PatchError(f"unknown parameter {key!r}")
                part = int(part)
            elif not isinstance(node, dict) or part not in node:
                raise PatchError(f"unknown parameter {key!r}")
            if last:
                node[part] = value
            else:
                node = node[part]
    try:
        return canonicalize(out)
    except ScenarioFileError as exc:
        raise PatchError(f"invalid patch value: {exc}") from None


def parse_patch(text: str) -> Tuple[str, Any]:
    """``key=value`` with the value read as YAML (numbers, lists, 'auto')."""
    if "=" not in text:
        raise PatchError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise PatchError(f"cannot read value in {text!r}") from None
    return key.strip(), value


# -- traces -------------------------------------------------------------------

def fmt(v: float) -> str:
    return format(float(v), ".17g")


def trace_csv_text(trace: SimulationTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace.columns + ["event"])
    for row, ev in zip(trace.data, trace.row_events):
        w.writerow([fmt(v) for v in row] + [ev])
    return buf.getvalue()


def emit_trace(trace: SimulationTrace, out_dir) -> Dict[str, Path]:
    """Write ``trace.csv``, ``manifest.json`` and ``events.log``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / "trace.csv", "manifest": out / "manifest.json",
             "events": out / "events.log"}
    paths["trace"].write_text(trace_csv_text(trace))
    manifest = dict(trace.metadata)
    manifest.setdefault("status", "completed")
    manifest["columns"] = trace.columns
    manifest["rows"] = len(trace)
    manifest["events"] = [[fmt(t), kind, detail] for t, kind, detail in trace.events]
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                            default=_json_default) + "\n")
    paths["events"].write_text("".join(f"{fmt(t)}\t{kind}\t{detail}\n"
                                       for t, kind, detail in trace.events))
    return paths


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_trace(path) -> SimulationTrace:
    """Read ``trace.csv`` and, when present, the adjacent ``manifest.json``."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "event":
        raise ValueError(f"{path}: not a trace file")
    cols = rows[0][:-1]
    data = np.array([[float(v) for v in r[:-1]] for r in rows[1:]], dtype=float)
    data = data.reshape(len(rows) - 1, len(cols))
    events = [r[-1] for r in rows[1:]]
    meta: Dict[str, Any] = {}
    mpath = path.with_name("manifest.json")
    if mpath.exists():
        meta = json.loads(mpath.read_text())
    tev = [(float(t), k, d) for t, k, d in meta.pop("events", [])] if meta else []
    return SimulationTrace(cols, data, events, tev, meta)


def write_oracle_csv(path, times, alpha_star, argmax, alpha_bar_star=None) -> None:
    argmax = np.asarray(argmax, dtype=float)
    n = argmax.shape[1] if argmax.ndim == 2 else 0
    cols = ["t", "alpha_star"] + [f"argmax_{j}" for j in range(1, n + 1)]
    if alpha_bar_star is not None:
        cols.append("alpha_bar_star")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k, t in enumerate(times):
            row = [fmt(t), fmt(alpha_star[k])] + [fmt(v) for v in argmax[k]]
            if alpha_bar_star is not None:
                row.append(fmt(alpha_bar_star[k]))
            w.writerow(row)


def read_oracle_csv(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    data = data.reshape(len(rows) - 1, len(cols))
    return {c: data[:, k] for k, c in enumerate(cols)}
