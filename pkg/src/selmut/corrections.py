"""First-order corrections K, (y, w) and J, and the assembled first-order predictions.

With A = -u_xx(xbar) > 0 and every rate derivative taken at (xbar, I):

    K  = -(1/R_I) * [ (psi'/psi R_x + R_xx/2)/A + u_xxx R_x/(2 A^2) + R_x^2/(A I R_I) ]
    J  = K + grad_I(xbar) y,               grad_I = -R_x/R_I
    y' = (u_xxx + R_Ix J + R_xx y)/A + R_x (w_xx(xbar) + u_xxx y)/A^2
    w_t = 2 u_x w_x + u_xx + R_I(x, I) J,  y(0) = 0, w(0, .) = 0
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, DegeneracyError, ValidationError
from .grid import Grid1D, GridField, d1, interp_cubic, local_derivative, write_columns
from .limit_solver import LimitState, LimitTrajectory, TrajectoryRecorder, iter_limit

DEGENERATE_RI = 1e-12


def _rate_at(model, x, I, order=2):
    d = model.derivs(x, I, order)
    R_I = float(np.asarray(d.R_I))
    if abs(R_I) < DEGENERATE_RI:
        raise DegeneracyError(f"|dR/dI| = {abs(R_I):.3g} is too small at x={x:.6g}")
    return d, R_I


def _curvature(limit: LimitState) -> float:
    A = -limit.d2u_at_xbar
    if not A > 0:
        raise DegeneracyError(f"limit potential is not concave at xbar (u_xx = {-A:.6g})")
    return A


def compute_K(limit: LimitState, model, psi) -> float:
    """Coefficient of eps in I_eps - I(x_eps), from limit data only."""
    x, I = limit.xbar, limit.I
    if not I > 0:
        raise DegeneracyError(f"limit intake must be positive, got {I}")
    d, R_I = _rate_at(model, x, I)
    A = _curvature(limit)
    R_x, R_xx = float(d.R_x), float(d.R_xx)
    ps, dps = (float(v) for v in psi.derivs(x, 1))
    f = (dps / ps * R_x + 0.5 * R_xx) / A + 0.5 * limit.d3u_at_xbar * R_x / A**2
    g = R_x * R_x / (A * I * R_I)
    return -(f + g) / R_I


def intake_gradient(model, x, I) -> float:
    d, R_I = _rate_at(model, x, I, 1)
    return -float(d.R_x) / R_I


@dataclass(frozen=True)
class CorrectionState:
    t: float
    y: float
    w: GridField
    K: float
    J: float
    dw_at_xbar: float
    d2w_at_xbar: float
    p: np.ndarray | None = None  # w_x from its own transport equation (optional)
    q: np.ndarray | None = None  # w_xx likewise


def intake_correction_J(state: CorrectionState, limit: LimitState, model) -> float:
    return state.K + intake_gradient(model, limit.xbar, limit.I) * state.y


class _Frame:
    """Everything the (y, w) right-hand side needs from one limit state."""

    def __init__(self, limit: LimitState, model, psi, derivative_route):
        g = limit.u.grid
        u = limit.u.values
        self.limit = limit
        self.A = _curvature(limit)
        self.ux = d1(u, g.h)
        # wide stencils (repeated centered first differences) are blind to the
        # undamped odd-even roundoff mode of the limit potential
        self.uxx = d1(self.ux, g.h)
        d, R_I = _rate_at(model, limit.xbar, limit.I)
        self.R_x, self.R_xx, self.R_I = float(d.R_x), float(d.R_xx), R_I
        self.R_Ix = float(np.asarray(d.R_Ix))
        self.K = compute_K(limit, model, psi)
        self.grad_I = -self.R_x / R_I
        dg = model.derivs(g.x, limit.I, 0)
        self.R_I_grid = np.broadcast_to(np.asarray(dg.R_I, float), (g.n,))
        if derivative_route:
            self.uxxx = d1(self.uxx, g.h)
            self.uxxxx = d1(self.uxxx, g.h)
            self.R_Ix_grid = np.broadcast_to(np.asarray(dg.R_Ix, float), (g.n,))
            self.R_Ixx_grid = np.broadcast_to(np.asarray(dg.R_Ixx, float), (g.n,))


class CorrectionStepper:
    def __init__(self, model, psi, grid: Grid1D, derivative_route=False):
        self.model, self.psi, self.grid = model, psi, grid
        self.derivative_route = derivative_route
        self._cache = (None, None)

    def frame(self, limit: LimitState) -> _Frame:
        if self._cache[0] is not limit:
            self._cache = (limit, _Frame(limit, self.model, self.psi, self.derivative_route))
        return self._cache[1]

    def initial(self, limit: LimitState) -> CorrectionState:
        n = self.grid.n
        fr = self.frame(limit)
        zero = np.zeros(n) if self.derivative_route else None
        return CorrectionState(limit.t, 0.0, GridField(self.grid, np.zeros(n)), fr.K, fr.K, 0.0, 0.0,
                               zero, None if zero is None else zero.copy())

    def _rhs(self, fr: _Frame, y, w, p, q):
        g = self.grid
        xb = fr.limit.xbar
        J = fr.K + fr.grad_I * y
        D3 = fr.limit.d3u_at_xbar
        w_xx = (interp_cubic(q, g.x_min, g.h, xb) if self.derivative_route
                else local_derivative(w, g.x_min, g.h, xb, 2))
        dy = (D3 + fr.R_Ix * J + fr.R_xx * y) / fr.A + fr.R_x * (w_xx + D3 * y) / fr.A**2
        dw = 2.0 * fr.ux * d1(w, g.h) + fr.uxx + fr.R_I_grid * J
        if not self.derivative_route:
            return dy, dw, None, None
        dp = fr.uxxx + 2.0 * fr.uxx * p + 2.0 * fr.ux * d1(p, g.h) + fr.R_Ix_grid * J
        dq = (fr.uxxxx + 2.0 * fr.uxxx * p + 4.0 * fr.uxx * q + 2.0 * fr.ux * d1(q, g.h)
              + fr.R_Ixx_grid * J)
        return dy, dw, dp, dq

    def step(self, state: CorrectionState, now: LimitState, nxt: LimitState, dt: float) -> CorrectionState:
        f0, f1 = self.frame(now), self.frame(nxt)
        w, p, q = state.w.values, state.p, state.q
        a = self._rhs(f0, state.y, w, p, q)
        y1 = state.y + dt * a[0]
        w1 = w + dt * a[1]
        p1 = None if p is None else p + dt * a[2]
        q1 = None if q is None else q + dt * a[3]
        b = self._rhs(f1, y1, w1, p1, q1)
        y = state.y + 0.5 * dt * (a[0] + b[0])
        w = w + 0.5 * dt * (a[1] + b[1])
        if p is not None:
            p = p + 0.5 * dt * (a[2] + b[2])
            q = q + 0.5 * dt * (a[3] + b[3])
        if not (math.isfinite(y) and np.all(np.isfinite(w))):
            raise BlowUpError(f"correction system blew up at t={nxt.t:.6g}", t=nxt.t)
        g = self.grid
        xb = nxt.xbar
        return CorrectionState(nxt.t, y, GridField(g, w), f1.K, f1.K + f1.grad_I * y,
                               local_derivative(w, g.x_min, g.h, xb, 1),
                               local_derivative(w, g.x_min, g.h, xb, 2), p, q)


def advance_yw(state: CorrectionState, limit_now: LimitState, limit_next: LimitState, dt: float,
               model, psi) -> CorrectionState:
    """One Heun step of the (y, w) system between two consecutive limit states."""
    if abs(state.t - limit_now.t) > 1e-9 * max(1.0, abs(state.t)):
        raise ValidationError(f"correction state at t={state.t} is not aligned with limit t={limit_now.t}")
    route = state.p is not None
    return CorrectionStepper(model, psi, limit_now.u.grid, route).step(state, limit_now, limit_next, dt)


@dataclass
class CorrectionTrajectory:
    t: np.ndarray
    K: np.ndarray
    y: np.ndarray
    J: np.ndarray
    w_at_xbar: np.ndarray
    dw_at_xbar: np.ndarray
    d2w_at_xbar: np.ndarray
    snap_index: np.ndarray
    w_snapshots: np.ndarray
    q_at_xbar: np.ndarray | None = None

    def to_csv(self, path):
        write_columns(path, ("t", "K", "y", "J", "w_at_xbar", "dw_at_xbar", "d2w_at_xbar"),
                      [self.t, self.K, self.y, self.J, self.w_at_xbar, self.dw_at_xbar, self.d2w_at_xbar])

    def state(self, j, grid) -> CorrectionState:
        k = self.snap_index[j]
        return CorrectionState(float(self.t[k]), float(self.y[k]), GridField(grid, self.w_snapshots[j]),
                               float(self.K[k]), float(self.J[k]), float(self.dw_at_xbar[k]),
                               float(self.d2w_at_xbar[k]))


def solve_first_order(model, psi, init, grid: Grid1D, T: float, dt: float, snapshot_dt=None,
                      derivative_route=False, intake_fn=None):
    """Limit trajectory and first-order corrections integrated in lockstep."""
    rec = TrajectoryRecorder(grid, dt, T, snapshot_dt or dt)
    stepper = CorrectionStepper(model, psi, grid, derivative_route)
    n = int(round(T / dt)) + 1
    cols = {k: np.empty(n) for k in ("t", "K", "y", "J", "w", "dw", "d2w", "q")}
    wsnaps = []
    prev = corr = None
    for k, lim in enumerate(iter_limit(model, init, grid, T, dt, intake_fn)):
        rec.push(lim)
        corr = stepper.initial(lim) if prev is None else stepper.step(corr, prev, lim, dt)
        prev = lim
        xb = lim.xbar
        cols["t"][k], cols["K"][k], cols["y"][k], cols["J"][k] = corr.t, corr.K, corr.y, corr.J
        cols["w"][k] = interp_cubic(corr.w.values, grid.x_min, grid.h, xb)
        cols["dw"][k], cols["d2w"][k] = corr.dw_at_xbar, corr.d2w_at_xbar
        cols["q"][k] = interp_cubic(corr.q, grid.x_min, grid.h, xb) if derivative_route else math.nan
        if k % rec.stride == 0:
            wsnaps.append(corr.w.values)
    limit = rec.finish()
    corr_traj = CorrectionTrajectory(cols["t"], cols["K"], cols["y"], cols["J"], cols["w"], cols["dw"],
                                     cols["d2w"], limit.snap_index.copy(), np.array(wsnaps),
                                     cols["q"] if derivative_route else None)
    return limit, corr_traj


@dataclass
class Predictions:
    times: np.ndarray
    I0: np.ndarray
    x0: np.ndarray
    I1: np.ndarray
    x1: np.ndarray
    offset: float
    u0: np.ndarray  # u + eps log(r/sqrt(eps)) on each snapshot
    u1: np.ndarray  # u0 + eps w


def assemble_first_order(limit: LimitTrajectory, corr: CorrectionTrajectory, eps: float, r: float) -> Predictions:
    idx = limit.snap_index
    if not np.array_equal(idx, corr.snap_index):
        raise ValidationError("limit and correction trajectories use different snapshots")
    off = eps * math.log(r / math.sqrt(eps)) if eps > 0 else 0.0
    u0 = limit.u_snapshots + off
    return Predictions(limit.t[idx], limit.I[idx], limit.xbar[idx], limit.I[idx] + eps * corr.J[idx],
                       limit.xbar[idx] + eps * corr.y[idx], off, u0, u0 + eps * corr.w_snapshots)
