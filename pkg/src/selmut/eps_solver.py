"""Explicit solver for the eps-scaled problem written for u = eps*log(n).

    du/dt = eps*u_xx + (u_x)^2 + R(x, I),    I = int psi*exp(u/eps) dx
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, BoundaryContactError, ValidationError
from .grid import (Grid1D, GridField, d1, d2, d3, log_integral_exp, parabolic_vertex,
                   trapezoid_weights, write_columns)
from .model import InitialData, carrying_intake, envelope_rates, init_curvature_constants, curvature_constants

CFL = 0.4
FLUXES = ("central", "llf")


def stability_limit(eps: float, h: float, max_grad: float, cfl: float = CFL) -> float:
    """Largest admissible explicit step: cfl*min(h^2/(2 eps), h/(2 max|u_x|))."""
    lim = h * h / (2.0 * eps) if eps > 0 else math.inf
    if max_grad > 0:
        lim = min(lim, h / (2.0 * max_grad))
    return cfl * lim


def boundary_depth(eps: float) -> float:
    """How far below its maximum u must stay at the grid ends."""
    return 20.0 * eps * max(math.log(1.0 / eps), 1.0)


@dataclass(frozen=True)
class EpsConfig:
    eps: float
    T: float
    dt: float
    grid: Grid1D
    snapshot_stride: int = 1
    flux: str = "central"

    def __post_init__(self):
        bad = []
        if not self.eps > 0:
            bad.append(f"eps must be positive, got {self.eps}")
        if not self.T > 0:
            bad.append(f"T must be positive, got {self.T}")
        if not self.dt > 0:
            bad.append(f"dt must be positive, got {self.dt}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            bad.append(f"snapshot_stride must be a positive integer, got {self.snapshot_stride}")
        if self.flux not in FLUXES:
            bad.append(f"flux must be one of {FLUXES}, got {self.flux!r}")
        if not bad:
            steps = self.T / self.dt
            if abs(steps - round(steps)) > 1e-6 or round(steps) % self.snapshot_stride:
                bad.append("T must be a whole number of snapshot intervals of dt*snapshot_stride")
        if bad:
            raise ValidationError("; ".join(bad), bad)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def snapshot_dt(self) -> float:
        return self.dt * self.snapshot_stride


def step_size(limit: float, snapshot_dt: float) -> tuple[float, int]:
    """Largest dt <= limit dividing snapshot_dt, and the matching stride."""
    stride = max(1, math.ceil(snapshot_dt / limit - 1e-12))
    return snapshot_dt / stride, stride


def make_eps_config(eps, T, grid, u0_values, snapshot_dt, dt=None, cfl=CFL, flux="central") -> EpsConfig:
    """Pick (or check) the time step against the explicit stability rule."""
    G = float(np.abs(d1(np.asarray(u0_values, float), grid.h)).max())
    lim = stability_limit(eps, grid.h, G, cfl)
    if dt is None:
        dt, stride = step_size(lim, snapshot_dt)
    else:
        if dt > lim * (1 + 1e-12):
            raise ValidationError(
                f"dt={dt:.6g} exceeds the stability limit {lim:.6g} for eps={eps}, h={grid.h:.6g}")
        stride = snapshot_dt / dt
        if abs(stride - round(stride)) > 1e-9:
            raise ValidationError(f"dt={dt} does not divide the snapshot interval {snapshot_dt}")
        stride = int(round(stride))
    return EpsConfig(eps, T, dt, grid, stride, flux)


def initial_potential(init: InitialData, eps: float, grid: Grid1D, r: float | None = None) -> GridField:
    r = init.r if r is None else r
    return GridField(grid, init.u0(grid.x) + eps * math.log(r / math.sqrt(eps)))


def _log_weights(psi, grid: Grid1D) -> np.ndarray:
    ps = np.broadcast_to(np.asarray(psi(grid.x) if callable(psi) else psi, float), (grid.n,))
    return np.log(ps * trapezoid_weights(grid.n, grid.h))


def compute_intake(u: GridField, psi, eps: float) -> float:
    return math.exp(log_integral_exp(u.values, _log_weights(psi, u.grid), eps))


class RateOnGrid:
    """R(x_i, I) on fixed nodes; linear-in-I models are evaluated as R0 + I*R1."""

    def __init__(self, model, x):
        self.model = model
        self.x = x
        r0 = np.asarray(model.rate(x, 0.0), float) * np.ones_like(x)
        r1 = np.asarray(model.rate(x, 1.0), float) * np.ones_like(x) - r0
        r2 = np.asarray(model.rate(x, 2.0), float) * np.ones_like(x)
        scale = max(1.0, float(np.abs(r2).max()))
        self.linear = bool(np.abs(r0 + 2.0 * r1 - r2).max() <= 1e-13 * scale)
        self.r0, self.r1 = r0, r1

    def __call__(self, I):
        if self.linear:
            return self.r0 + I * self.r1
        return np.asarray(self.model.rate(self.x, I), float) * np.ones_like(self.x)


class _Kernel:
    def __init__(self, grid, model, psi, eps, flux="central"):
        self.h = grid.h
        self.eps = eps
        self.flux = flux
        self.logw = _log_weights(psi, grid)
        self.rate = RateOnGrid(model, grid.x)

    def intake(self, u):
        return math.exp(log_integral_exp(u, self.logw, self.eps))

    def hamiltonian(self, u):
        if self.flux == "central":
            ux = d1(u, self.h)
            return ux * ux
        h = self.h
        back = np.empty_like(u)
        fwd = np.empty_like(u)
        back[1:] = (u[1:] - u[:-1]) / h
        fwd[:-1] = back[1:]
        ux = d1(u, h)
        back[0], fwd[-1] = ux[0], ux[-1]
        alpha = 2.0 * np.maximum(np.abs(back), np.abs(fwd))
        # u_t = u_x^2 is u_t + H(u_x) = 0 with H = -p^2, so the viscosity enters with a plus sign
        return (0.5 * (back + fwd)) ** 2 + 0.5 * alpha * (fwd - back)

    def rhs(self, u):
        I = self.intake(u)
        return self.eps * d2(u, self.h) + self.hamiltonian(u) + self.rate(I), I

    def step(self, u, dt, n=None):
        k1, I1 = self.rhs(u)
        k2, I2 = self.rhs(u + dt * k1)
        if not (math.isfinite(I1) and math.isfinite(I2)):
            raise BlowUpError(f"non-finite intake at step {n}", step=n)
        return u + 0.5 * dt * (k1 + k2), I1


def advance_eps(u: GridField, t: float, cfg: EpsConfig, model, psi) -> GridField:
    """One Heun step of length cfg.dt starting from time t."""
    ker = _Kernel(cfg.grid, model, psi, cfg.eps, cfg.flux)
    new, _ = ker.step(u.values, cfg.dt)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite values after the step from t={t}", t=t)
    return GridField(cfg.grid, new)


@dataclass
class EpsTrajectory:
    eps: float
    grid: Grid1D
    dt: float
    r: float
    times: np.ndarray
    I_series: np.ndarray
    x_series: np.ndarray
    max_u: np.ndarray
    u_snapshots: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def field(self, j) -> GridField:
        return GridField(self.grid, self.u_snapshots[j])

    def to_csv(self, path):
        write_columns(path, ("t", "I_eps", "x_eps", "max_u"),
                      [self.times, self.I_series, self.x_series, self.max_u])


def run_eps(cfg: EpsConfig, model, psi, init: InitialData, r: float | None = None,
            u0: GridField | None = None) -> EpsTrajectory:
    """Integrate to cfg.T storing every snapshot_stride-th state."""
    g = cfg.grid
    r = init.r if r is None else r
    u = (u0 if u0 is not None else initial_potential(init, cfg.eps, g, r)).values.copy()
    G0 = float(np.abs(d1(u, g.h)).max())
    lim = stability_limit(cfg.eps, g.h, G0)
    if cfg.dt > lim * (1 + 1e-12):
        raise ValidationError(f"dt={cfg.dt:.6g} exceeds the stability limit {lim:.6g}")
    ker = _Kernel(g, model, psi, cfg.eps, cfg.flux)
    depth = boundary_depth(cfg.eps)

    n_snap = cfg.n_steps // cfg.snapshot_stride + 1
    times = np.arange(n_snap) * cfg.snapshot_dt
    I_s = np.empty(n_snap)
    x_s = np.empty(n_snap)
    m_s = np.empty(n_snap)
    U = np.empty((n_snap, g.n))
    courant = 0.0

    def record(j, u):
        t = times[j]
        if not np.all(np.isfinite(u)):
            raise BlowUpError(f"non-finite potential at t={t:.6g}", t=t)
        xs, ms = parabolic_vertex(u, g.x_min, g.h, t=t)
        if max(u[0], u[-1]) > ms - depth:
            raise BoundaryContactError(
                f"u at the grid boundary is within {depth:.3g} of its maximum at t={t:.6g}", t=t)
        U[j] = u
        I_s[j] = ker.intake(u)
        x_s[j] = xs
        m_s[j] = ms
        return float(np.abs(d1(u, g.h)).max())

    courant = max(courant, record(0, u))
    step = 0
    for j in range(1, n_snap):
        for _ in range(cfg.snapshot_stride):
            u, _ = ker.step(u, cfg.dt, step)
            step += 1
        courant = max(courant, record(j, u))
    diag = {"max_grad": courant, "courant": 2.0 * courant * cfg.dt / g.h,
            "diffusion_number": cfg.eps * cfg.dt / g.h**2, "steps": step}
    return EpsTrajectory(cfg.eps, g, cfg.dt, r, times, I_s, x_s, m_s, U, diag)


@dataclass
class DiagnosticsReport:
    rows: list = field(default_factory=list)

    def add(self, check, violations, worst, bound):
        self.rows.append((check, int(violations), float(worst), float(bound)))

    @property
    def violations(self) -> int:
        return sum(v for _, v, _, _ in self.rows)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def get(self, check):
        for row in self.rows:
            if row[0] == check:
                return row
        raise KeyError(check)

    def to_csv(self, path):
        write_columns(path, ("check", "violations", "worst", "bound"), list(zip(*self.rows)))


def check_bounds(traj: EpsTrajectory, model, init: InitialData, trust_window: float = 1.0,
                 intake_tol: float = 0.01, curvature_tol: float = 0.05) -> DiagnosticsReport:
    """A-priori bounds checked on every snapshot of a finished run.

    Concavity and third-derivative checks are restricted to |x - x_eps| <= trust_window.
    """
    g = traj.grid
    x = g.x
    rep = DiagnosticsReport()
    I = traj.I_series
    rep.add("intake_positive", np.sum(I <= 0), I.min(), 0.0)
    I_M = carrying_intake(model)
    rep.add("intake_upper", np.sum(I > I_M + intake_tol), I.max(), I_M + intake_tol)

    M_lo, M_up = envelope_rates(model, init, g)
    K1_lo, K1_up = curvature_constants(model, g)
    L1_lo, L1_up = init_curvature_constants(init, g)
    lower_c, upper_c = -2.0 * M_lo - curvature_tol, -2.0 * M_up + curvature_tol
    bad_lo = bad_hi = 0
    worst_lo, worst_hi, d3max = math.inf, -math.inf, 0.0
    for j in range(traj.times.size):
        u = traj.u_snapshots[j]
        win = np.abs(x - traj.x_series[j]) <= trust_window
        c = d2(u, g.h)[win]
        bad_lo += int(c.min() < lower_c)
        bad_hi += int(c.max() > upper_c)
        worst_lo = min(worst_lo, float(c.min()))
        worst_hi = max(worst_hi, float(c.max()))
        d3max = max(d3max, float(np.abs(d3(u, g.h)[win]).max()))
    rep.add("concavity_lower", bad_lo, worst_lo, lower_c)
    rep.add("concavity_upper", bad_hi, worst_hi, upper_c)
    rep.add("third_derivative_finite", int(not math.isfinite(d3max)), d3max, math.inf)

    # quadratic envelope, constants read off the initial potential on the grid
    theta = getattr(model, "theta", 0.0)
    s2 = (x - theta) ** 2
    u0 = traj.u_snapshots[0]
    L0_lo = max(float(np.max(-u0 - L1_lo * s2)), 0.0)
    L0_up = float(np.max(u0 + L1_up * s2))
    K0 = float(np.max(np.asarray(model.rate(x, 0.0)) + K1_up * s2))
    tol = 1e-9
    lo_v = hi_v = 0
    lo_w, hi_w = math.inf, math.inf
    for j, t in enumerate(traj.times):
        u = traj.u_snapshots[j]
        low = -L0_lo - M_lo * s2 - 2.0 * traj.eps * M_lo * t
        up = L0_up - M_up * s2 + K0 * t
        lo_v += int(np.any(u < low - tol))
        hi_v += int(np.any(u > up + tol))
        lo_w = min(lo_w, float(np.min(u - low)))
        hi_w = min(hi_w, float(np.min(up - u)))
    rep.add("envelope_lower", lo_v, lo_w, 0.0)
    rep.add("envelope_upper", hi_v, hi_w, 0.0)
    return rep
