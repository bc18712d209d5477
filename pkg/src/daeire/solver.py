"""Integration of regularized systems and the multi-component pipeline.

The regularized top block is solved for its leading jets at every state,
which turns the system into an explicit ODE for the state jets.  Each
recorded step is predicted with classical RK4 and then projected back onto
the constraints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConvergenceError, DaeError, IntegrationError,
                     NonPolynomialError, SingularMatrixError)
from .expr import Jet, Point
from .ire import IreResult, NumericSystem, ire_loop
from .model_io import DaeSystem, Trajectory, validate_square
from .numkernel import solve_linear
from .structural import ProlongedSystem, analyze
from .witness import PolySystem, WitnessSet, witness_points

log = logging.getLogger(__name__)


@dataclass
class SolveConfig:
    abstol: float = 1e-6
    reltol: float = 1e-3
    h: float = 1e-2
    max_iter: int = 25
    t0: float | None = None
    t_end: float | None = None
    max_halvings: int = 8

    def __post_init__(self):
        if self.abstol <= 0 or self.reltol <= 0 or self.h <= 0:
            raise ValueError("abstol, reltol and h must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.t0 is not None and self.t_end is not None and self.t0 >= self.t_end:
            raise ValueError(f"empty interval [{self.t0}, {self.t_end}]")


class _Flow:
    """Explicit right-hand side for the state jets of a regular system."""

    def __init__(self, ps: ProlongedSystem, max_iter: int = 25):
        self.num = num = NumericSystem(ps)
        self.max_iter = max_iter
        pos = {v: i for i, v in enumerate(num.slots)}
        missing = [v for v in num.state if v.shifted(1) not in pos]
        if missing:
            raise IntegrationError(f"no derivative slot for {missing[0]}", None)
        self.deriv = np.array([pos[v.shifted(1)] for v in num.state], dtype=int)
        self.lead = np.zeros(len(num.leading))

    def leading(self, t: float, z: np.ndarray) -> np.ndarray:
        """Newton on the top block with the state fixed; singular J raises."""
        num = self.num
        x = np.concatenate([z, self.lead])
        ns = num.ns
        for it in range(self.max_iter):
            F = num.top_residual(t, x)
            if not np.all(np.isfinite(F)):
                raise ConvergenceError("top block is not finite at this state")
            small = np.max(np.abs(F), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(x[ns:]), initial=0.0))
            if small and it > 0:
                break
            step = solve_linear(num.top_jacobian(t, x), -F)
            x[ns:] += step
            if small:
                break
        else:
            F = num.top_residual(t, x)
            if np.max(np.abs(F), initial=0.0) > 1e-8 * (1.0 + np.max(np.abs(x[ns:]), initial=0.0)):
                raise ConvergenceError("leading jets did not converge")
        self.lead = x[ns:].copy()
        return x

    def rhs(self, t: float, z: np.ndarray) -> np.ndarray:
        # trial stages may overflow exp(); the Newton check rejects them
        with np.errstate(over="ignore", invalid="ignore"):
            return self.leading(t, z)[self.deriv]

    def rk4(self, t, z, h):
        k1 = self.rhs(t, z)
        k2 = self.rhs(t + h / 2, z + h / 2 * k1)
        k3 = self.rhs(t + h / 2, z + h / 2 * k2)
        k4 = self.rhs(t + h, z + h * k3)
        return z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def project(self, t, z, abstol, max_iter):
        num = self.num
        if num.n_cons == 0:
            return z
        x = np.concatenate([z, self.lead])
        return num.project(t, x, abstol=abstol, max_iter=max_iter)[:num.ns]


def explicit_rhs(ps: ProlongedSystem, p: Point) -> np.ndarray:
    """Leading-jet values at p, ordered as ``ps.leading``."""
    flow = _Flow(ps)
    x = flow.num.vector(p)
    flow.lead = x[flow.num.ns:].copy()
    try:
        return flow.leading(p.t, x[:flow.num.ns])[flow.num.ns:]
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"top-block Jacobian is singular at t={p.t:g}: {exc}") from None


def integrate(ps: ProlongedSystem, p0: Point, cfg: SolveConfig,
              names=None, component: int = 0) -> Trajectory:
    """RK4 prediction plus projection onto the constraints, fixed output grid.

    Only the first ``len(names)`` variables are reported.  On failure an
    IntegrationError carries the failing time and the partial trajectory.
    """
    names = list(names if names is not None else ps.names)
    t0 = p0.t if cfg.t0 is None else cfg.t0
    t_end = cfg.t_end
    if t_end is None or t_end <= t0:
        raise ValueError(f"empty interval [{t0}, {t_end}]")
    flow = _Flow(ps, cfg.max_iter)
    num = flow.num
    pos = {v: i for i, v in enumerate(num.slots)}
    out = np.array([pos[Jet(j, 0)] for j in range(len(names))], dtype=int)

    x0 = num.vector(p0)
    z = x0[:num.ns].copy()
    flow.lead = x0[num.ns:].copy()
    steps = max(1, int(math.ceil((t_end - t0) / cfg.h - 1e-9)))
    h = (t_end - t0) / steps
    traj = Trajectory(names, [], [], component)

    def fail(msg, t):
        traj.status, traj.failure_time, traj.message = "failed", float(t), msg
        err = IntegrationError(msg, float(t))
        err.trajectory = traj
        return err

    def advance(t, z, h, depth):
        # step doubling; a stage that breaks down also counts as a rejection
        try:
            whole = flow.rk4(t, z, h)
            half = flow.rk4(t + h / 2, flow.rk4(t, z, h / 2), h / 2)
            ok = np.all(np.isfinite(half)) and np.max(np.abs(whole - half), initial=0.0) \
                <= cfg.abstol + cfg.reltol * np.max(np.abs(half), initial=0.0)
        except (SingularMatrixError, ConvergenceError):
            if depth >= cfg.max_halvings:
                raise
            ok, half = False, None
        if ok or depth >= cfg.max_halvings:
            return half
        mid = advance(t, z, h / 2, depth + 1)
        return advance(t + h / 2, mid, h / 2, depth + 1)

    t = t0
    for k in range(steps + 1):
        t = t0 + k * h
        try:
            z = flow.project(t, z, cfg.abstol, max(cfg.max_iter, 50))
            x = flow.leading(t, z)
        except (SingularMatrixError, ConvergenceError) as exc:
            raise fail(f"regularized system breaks down: {exc}", t) from None
        if not np.all(np.isfinite(x)):
            raise fail("state is not finite", t)
        traj.times.append(float(t))
        traj.states.append([float(v) for v in x[out]])
        if num.n_cons:
            traj.drift.append(float(np.max(np.abs(num.con_residual(t, x)))))
        else:
            traj.drift.append(0.0)
        if k == steps:
            break
        try:
            z = advance(t, z, h, 0)
        except (SingularMatrixError, ConvergenceError) as exc:
            raise fail(f"regularized system breaks down: {exc}", t) from None
    return traj


# ------------------------------------------------------------------ pipeline

@dataclass
class ComponentResult:
    label: int
    point: Point
    ire: IreResult | None = None
    trajectory: Trajectory | None = None
    status: str = "ok"
    error: str = ""
    stage: str = ""


@dataclass
class SolveResult:
    system: DaeSystem
    sigma: list
    sol: object
    ps: ProlongedSystem
    witness: WitnessSet | None
    components: list = field(default_factory=list)

    @property
    def trajectories(self) -> list:
        return [c.trajectory for c in self.components if c.trajectory is not None]

    @property
    def failed(self) -> list:
        return [c for c in self.components if c.status != "ok"]


def initial_points(sys: DaeSystem, ps: ProlongedSystem, t0: float, seed: int = 0,
                   abstol: float = 1e-6, beta: float = 1e5):
    """Witness points of the constraints at t0: (WitnessSet, [(label, Point)])."""
    try:
        f = PolySystem(ps.constraints, ps.state_jets(), t0)
    except NonPolynomialError as exc:
        raise NonPolynomialError(
            f"{exc}; supply an initial point for this model") from None
    ws = witness_points(f, seed=seed, abstol=abstol, beta=beta)
    return ws, [(ws.components[i], ws.as_point(i)) for i in ws.representatives()]


def global_solve(sys: DaeSystem, cfg: SolveConfig | None = None, seed: int = 0,
                 initial: Point | None = None, beta: float = 1e5,
                 max_passes: int = 10, integrate_components: bool = True) -> SolveResult:
    """Analyze, find a start point per component, regularize and integrate each."""
    cfg = cfg or SolveConfig()
    validate_square(sys)
    t0 = sys.t0 if cfg.t0 is None else cfg.t0
    t_end = sys.t_end if cfg.t_end is None else cfg.t_end
    run_cfg = SolveConfig(cfg.abstol, cfg.reltol, cfg.h, cfg.max_iter, t0, t_end,
                          cfg.max_halvings)
    sigma, sol, ps = analyze(sys.equations, sys.names)
    if initial is not None:
        ws, starts = None, [(0, Point(t0, dict(initial.values)))]
    else:
        ws, starts = initial_points(sys, ps, t0, seed, cfg.abstol, beta)
    result = SolveResult(sys, sigma, sol, ps, ws)
    for label, p in starts:
        comp = ComponentResult(label, p)
        result.components.append(comp)
        try:
            comp.stage = "reduce"
            comp.ire = ire_loop(sys.equations, sys.names, p, abstol=cfg.abstol,
                                seed=seed, max_passes=max_passes, sol=sol)
            if integrate_components:
                comp.stage = "solve"
                comp.trajectory = integrate(comp.ire.system, comp.ire.point, run_cfg,
                                            sys.names, label)
            comp.stage = ""
        except IntegrationError as exc:
            comp.status, comp.error = "failed", str(exc)
            comp.trajectory = getattr(exc, "trajectory", None)
            log.warning("component %d: %s", label, exc)
        except DaeError as exc:
            comp.status, comp.error = "failed", str(exc)
            log.warning("component %d: %s", label, exc)
    return result
