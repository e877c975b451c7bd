"""Zeroth-order limit: constrained Hamilton-Jacobi equation in ODE-PDE form.

    du/dt = (u_x)^2 + R(x, I(t)),   R(xbar, I) = 0,   xbar' = R_x(xbar, I) / (-u_xx(xbar))
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BlowUpError, DegeneracyError, DomainError, ValidationError
from .grid import Grid1D, GridField, d1, local_derivative, parabolic_vertex, write_columns
from .model import ROOT_TOL, carrying_intake, optimal_intake
from .eps_solver import CFL, RateOnGrid, stability_limit


@lru_cache(maxsize=64)
def _carrying(model):
    return carrying_intake(model)


def intake_from_constraint(model, xbar: float) -> float:
    I, _ = optimal_intake(model, xbar)
    try:
        I_M = _carrying(model)
    except TypeError:
        I_M = carrying_intake(model)
    if I > I_M + ROOT_TOL:
        raise DomainError(f"neutral intake {I} at {xbar} exceeds the carrying intake {I_M}")
    return I


@dataclass(frozen=True)
class LimitState:
    t: float
    u: GridField
    xbar: float
    I: float
    d2u_at_xbar: float
    d3u_at_xbar: float
    drift: float = 0.0
    argmax_gap: float = 0.0

    @classmethod
    def build(cls, t, u: GridField, xbar, I, drift=0.0, gap=0.0):
        g = u.grid
        return cls(t, u, xbar, I, local_derivative(u.values, g.x_min, g.h, xbar, 2),
                   local_derivative(u.values, g.x_min, g.h, xbar, 3), drift, gap)


def _velocity(model, u, grid, xbar, I):
    curv = -local_derivative(u, grid.x_min, grid.h, xbar, 2)
    if not curv > 0:
        raise DegeneracyError(f"u is not strictly concave at xbar={xbar:.6g} (u_xx={-curv:.6g})")
    return float(model.derivs(xbar, I, 1).R_x) / curv


def canonical_rhs(state: LimitState, model) -> float:
    """Trait velocity R_x(xbar, I)/(-u_xx(xbar))."""
    return _velocity(model, state.u.values, state.u.grid, state.xbar, state.I)


class _LimitStepper:
    def __init__(self, model, grid, intake_fn=None):
        self.model = model
        self.grid = grid
        self.rate = RateOnGrid(model, grid.x)
        self.intake = intake_fn or (lambda y: intake_from_constraint(model, y))

    def rhs(self, u, xbar):
        g = self.grid
        if not g.x_min < xbar < g.x_max:
            raise DomainError(f"dominant trait {xbar} left the grid")
        I = self.intake(xbar)
        ux = d1(u, g.h)
        return ux * ux + self.rate(I), _velocity(self.model, u, g, xbar, I), I

    def step(self, state: LimitState, dt: float) -> LimitState:
        g = self.grid
        u = state.u.values
        k1, v1, _ = self.rhs(u, state.xbar)
        k2, v2, _ = self.rhs(u + dt * k1, state.xbar + dt * v1)
        new = u + 0.5 * dt * (k1 + k2)
        xb = state.xbar + 0.5 * dt * (v1 + v2)
        t = state.t + dt
        if not np.all(np.isfinite(new)) or not math.isfinite(xb):
            raise BlowUpError(f"limit solver produced non-finite values at t={t:.6g}", t=t)
        x_arg, top = parabolic_vertex(new, g.x_min, g.h, t=t)
        new = new - top
        return LimitState.build(t, GridField(g, new), xb, self.intake(xb), top, abs(xb - x_arg))


def advance_limit(state: LimitState, dt: float, model, intake_fn=None) -> LimitState:
    """Heun step of (u, xbar); u is shifted afterwards so that max u = 0.

    The subtracted maximum is kept in the returned state's ``drift``.
    """
    return _LimitStepper(model, state.u.grid, intake_fn).step(state, dt)


def initial_limit_state(model, init, grid: Grid1D, intake_fn=None) -> LimitState:
    x0 = init.peak
    I0 = (intake_fn or (lambda y: intake_from_constraint(model, y)))(x0)
    return LimitState.build(0.0, GridField(grid, init.u0(grid.x)), x0, I0)


def limit_dt_bound(init, grid: Grid1D, cfl: float = CFL) -> float:
    """Transport bound cfl*h/(2 max|u0_x|) on the limit step.

    Heun with centered differences amplifies the odd-even mode by about 1 + z^4/8
    per step, z = 2|u_x| dt/h. Near fast outflow boundaries this reaches xbar
    within T = 1 once z is above roughly 0.5.
    """
    ux = d1(np.asarray(init.u0(grid.x), float), grid.h)
    return stability_limit(0.0, grid.h, float(np.abs(ux).max()), cfl)


# Steps right at the 0.4 bound still let roundoff through on wide grids with
# h = 2e-3 and |u_x| = 6, so the automatic choice keeps some margin.
AUTO_LIMIT_CFL = 0.3


def auto_limit_dt(init, grid: Grid1D, snapshot_dt: float, cfl: float = AUTO_LIMIT_CFL) -> float:
    """Largest snapshot_dt/k below the transport bound taken with ``cfl``."""
    k = max(1, math.ceil(snapshot_dt / limit_dt_bound(init, grid, cfl) - 1e-9))
    return snapshot_dt / k


def iter_limit(model, init, grid: Grid1D, T: float, dt: float, intake_fn=None):
    """Yield the limit state at t = 0, dt, 2 dt, ..., T."""
    steps = T / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ValidationError(f"limit dt={dt} does not divide T={T}")
    bound = limit_dt_bound(init, grid)
    if dt > bound * (1 + 1e-9):
        raise ValidationError(f"limit dt={dt:.6g} exceeds the transport bound {bound:.6g} "
                              f"(0.4 h / (2 max|u0_x|)) on this grid")
    stepper = _LimitStepper(model, grid, intake_fn)
    state = initial_limit_state(model, init, grid, intake_fn)
    yield state
    for k in range(1, int(round(steps)) + 1):
        state = stepper.step(state, dt)
        # keep times exact multiples of dt
        state = LimitState(k * dt, state.u, state.xbar, state.I, state.d2u_at_xbar,
                           state.d3u_at_xbar, state.drift, state.argmax_gap)
        yield state


@dataclass
class LimitTrajectory:
    grid: Grid1D
    dt: float
    t: np.ndarray
    xbar: np.ndarray
    I: np.ndarray
    d2u: np.ndarray
    d3u: np.ndarray
    drift: np.ndarray
    argmax_gap: np.ndarray
    snap_index: np.ndarray
    u_snapshots: np.ndarray

    @property
    def snap_times(self) -> np.ndarray:
        return self.t[self.snap_index]

    def state(self, j) -> LimitState:
        """Snapshot j as a LimitState."""
        k = self.snap_index[j]
        return LimitState(float(self.t[k]), GridField(self.grid, self.u_snapshots[j]), float(self.xbar[k]),
                          float(self.I[k]), float(self.d2u[k]), float(self.d3u[k]),
                          float(self.drift[k]), float(self.argmax_gap[k]))

    def to_csv(self, path):
        write_columns(path, ("t", "xbar", "I", "d2u", "d3u", "constraint_drift", "argmax_gap"),
                      [self.t, self.xbar, self.I, self.d2u, self.d3u, self.drift, self.argmax_gap])


class TrajectoryRecorder:
    def __init__(self, grid, dt, T, snapshot_dt):
        stride = snapshot_dt / dt
        if abs(stride - round(stride)) > 1e-6:
            raise ValidationError(f"limit dt={dt} does not divide the snapshot interval {snapshot_dt}")
        self.stride = int(round(stride))
        self.grid, self.dt = grid, dt
        n = int(round(T / dt)) + 1
        self.cols = {k: np.empty(n) for k in ("t", "xbar", "I", "d2u", "d3u", "drift", "argmax_gap")}
        self.snaps = []
        self.k = 0

    def push(self, s: LimitState):
        c, k = self.cols, self.k
        c["t"][k], c["xbar"][k], c["I"][k] = s.t, s.xbar, s.I
        c["d2u"][k], c["d3u"][k] = s.d2u_at_xbar, s.d3u_at_xbar
        c["drift"][k], c["argmax_gap"][k] = s.drift, s.argmax_gap
        if k % self.stride == 0:
            self.snaps.append(s.u.values)
        self.k += 1

    def finish(self) -> LimitTrajectory:
        c = self.cols
        idx = np.arange(0, self.k, self.stride)
        return LimitTrajectory(self.grid, self.dt, c["t"], c["xbar"], c["I"], c["d2u"], c["d3u"],
                               c["drift"], c["argmax_gap"], idx, np.array(self.snaps))


def run_limit(model, init, grid: Grid1D, T: float, dt: float, snapshot_dt: float | None = None,
              intake_fn=None) -> LimitTrajectory:
    rec = TrajectoryRecorder(grid, dt, T, snapshot_dt or dt)
    for s in iter_limit(model, init, grid, T, dt, intake_fn):
        rec.push(s)
    return rec.finish()


@dataclass
class OracleSeries:
    t: np.ndarray
    xbar: np.ndarray
    I: np.ndarray
    beta: np.ndarray


def quadratic_oracle(model, L1: float, x_c: float, T: float, t_eval=None) -> OracleSeries:
    """Reference (xbar, I, beta) for a pure quadratic rate and quadratic datum.

    u stays -beta (x - xbar)^2 with beta' = a - 4 beta^2 and xbar' = -a (xbar - theta)/beta.
    """
    if not model.is_pure_quadratic:
        raise ValidationError("the quadratic oracle needs a rate without perturbation")
    a, th = model.a, model.theta
    t = np.linspace(0.0, T, 1001) if t_eval is None else np.asarray(t_eval, float)
    if math.isclose(L1, math.sqrt(a) / 2.0, rel_tol=1e-15, abs_tol=0.0):
        beta = np.full_like(t, L1)
        xb = th + (x_c - th) * np.exp(-2.0 * math.sqrt(a) * t)
    else:
        sol = solve_ivp(lambda _, y: [a - 4.0 * y[0] ** 2, -a * (y[1] - th) / y[0]],
                        (0.0, float(t.max())), [L1, x_c], method="RK45", t_eval=t,
                        rtol=1e-12, atol=1e-14)
        if not sol.success:
            raise BlowUpError(f"oracle integration failed: {sol.message}")
        beta, xb = sol.y
    I = (model.r0 - a * (xb - th) ** 2) / model.b
    return OracleSeries(t, xb, I, beta)
