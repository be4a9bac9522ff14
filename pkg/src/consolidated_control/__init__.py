"""Constraint-consolidating feedback control for high-order MIMO systems.

Many time-varying output constraints are merged into one smooth
log-sum-exp constraint, enforced by a low-complexity backstepping law and,
when the constraints become infeasible, relaxed through an online estimate
of the best attainable value.
"""
from .bounds import (AdaptiveBound, EstimatorParams, FiniteTimeBoundParams, PerfFunnelParams,
                     StaticBound, TimeFunction, adaptive_bound, chi_switch, finite_time_bound,
                     iota_switch, perf_funnel)
from .constraints import (Consolidation, ConstraintSet, ConstraintSpec, ContractViolation,
                          Funnel, LowerBounded, Membership, OutputChannel, UpperBounded, alpha,
                          alpha_bar, dalpha_dt, eval_psi, grad_alpha, hessian_alpha, membership)
from .controller import (ConstraintTransformSingularity, ControllerConfig,
                         IntermediateFunnelSingularity, control_u)
from .sim import (InitialBoundViolation, IntegrationSettings, Scenario, ScenarioError,
                  SimulationTrace, rk4_step, run_closed_loop, sweep)

__version__ = "0.1.0"
