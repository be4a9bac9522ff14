"""Small builders shared by the test modules."""
import numpy as np

from consolidated_control.bounds import TimeFunction
from consolidated_control.constraints import (ConstraintSet, ConstraintSpec, Consolidation,
                                              Funnel, OutputChannel)
from consolidated_control.scenario_io import build_constraints


def identity_channel():
    return OutputChannel("x", lambda t, x: float(x[0]), lambda t, x: np.array([1.0]),
                         lambda t, x: 0.0, lambda t, x: np.zeros((1, 1)))


def const(c):
    return TimeFunction.constant(c)


def funnel_1d(c, nu=10.0):
    cs = ConstraintSet([ConstraintSpec(identity_channel(), Funnel(const(-c), const(c)))], 1)
    return Consolidation(cs, nu)


def from_doc(constraints, n, params=None, nu=2.0, fused=True):
    cs = build_constraints({"params": params or {}, "constraints": constraints}, n, fused=fused)
    return Consolidation(cs, nu)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def report(label, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok
