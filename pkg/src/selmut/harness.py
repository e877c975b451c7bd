"""eps-sweeps: error norms against the limit expansion and fitted convergence orders."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corrections import assemble_first_order, solve_first_order
from .eps_solver import check_bounds, initial_potential, make_eps_config, run_eps, CFL
from .errors import SelmutError, ValidationError
from .grid import Grid1D, d1, d2, write_columns
from .limit_solver import auto_limit_dt
from .model import InitialData, eps_initial_intake, optimal_intake
from .moments import moment_errors

ABS_FLOOR = 1e-8
REFINE_CHANGE = 0.25

ZEROTH = ("I_zeroth", "x_zeroth", "u_zeroth", "Ix_zeroth")
FIRST = ("I_first", "x_first", "u_first", "Ix_first")


def prepared_prefactor(init: InitialData, psi, grid: Grid1D, eps: float, I0: float, K0: float) -> float:
    """Prefactor whose initial intake equals I0 + eps*K0 on this grid."""
    target = I0 + eps * K0
    if not target > 0:
        raise ValidationError(f"first-order initial intake {target:.6g} is not positive at eps={eps}")
    return init.r * target / eps_initial_intake(init, psi, grid, eps)


def effective_prefactor(init, psi, grid, eps, limit, corr) -> float:
    """Prefactor actually used for an eps-run, given the solved limit data."""
    if init.prepare == "first_order":
        return prepared_prefactor(init, psi, grid, eps, float(limit.I[0]), float(corr.K[0]))
    return init.r


def window_mask(x, center, half_width):
    return np.abs(x - center) <= half_width


def error_norms(eps_traj, limit_traj, corr_traj, eps: float, trust_window: float, model,
                k_max: int = 5, moments: bool = True) -> dict:
    """Sup-in-time errors of the zeroth- and first-order expansions."""
    t_lim = limit_traj.snap_times
    if t_lim.shape != eps_traj.times.shape or not np.allclose(t_lim, eps_traj.times, rtol=0, atol=1e-9):
        raise ValidationError("eps-run and limit snapshots are not aligned in time")
    g = limit_traj.grid
    if eps_traj.grid != g:
        raise ValidationError("eps-run and limit trajectory live on different grids")
    P = assemble_first_order(limit_traj, corr_traj, eps, eps_traj.r)
    idx = limit_traj.snap_index
    Ie, xe = eps_traj.I_series, eps_traj.x_series
    Ix = np.array([optimal_intake(model, float(x))[0] for x in xe])
    K = corr_traj.K[idx]
    out = {
        "I_zeroth": np.abs(Ie - P.I0).max(),
        "I_first": np.abs(Ie - P.I1).max(),
        "x_zeroth": np.abs(xe - P.x0).max(),
        "x_first": np.abs(xe - P.x1).max(),
        "Ix_zeroth": np.abs(Ie - Ix).max(),
        "Ix_first": np.abs(Ie - Ix - eps * K).max(),
    }
    u0 = u1 = u1x = u1xx = 0.0
    for j in range(t_lim.size):
        win = window_mask(g.x, P.x0[j], trust_window)
        if win[0] or win[-1]:
            raise ValidationError("trust window reaches the grid boundary")
        ue = eps_traj.u_snapshots[j]
        e0 = ue - P.u0[j]
        e1 = ue - P.u1[j]
        u0 = max(u0, np.abs(e0[win]).max())
        u1 = max(u1, np.abs(e1[win]).max())
        u1x = max(u1x, np.abs(d1(e1, g.h)[win]).max())
        u1xx = max(u1xx, np.abs(d2(e1, g.h)[win]).max())
    out.update({"u_zeroth": u0, "u_first": u1 + u1x + u1xx, "u_first_value": u1,
                "u_first_d1": u1x, "u_first_d2": u1xx})
    if moments:
        out.update(moment_errors(eps_traj, limit_traj, corr_traj, eps, k_max).errors)
    return {k: float(v) for k, v in out.items()}


@dataclass
class FitResult:
    order: float
    intercept: float
    r2: float
    n_used: int
    flags: tuple = ()


def fit_order(points, floor: float = ABS_FLOOR, exclude=None) -> FitResult:
    """Least-squares slope of log(err) against log(eps).

    Points with err <= 0 are dropped ('nonpositive'), points below ``floor`` or
    marked in ``exclude`` are not used ('floor'). With fewer than three usable
    points the slope over all positive points is still returned but flagged
    'no_fit'.
    """
    pts = [(float(e), float(v)) for e, v in points]
    exclude = list(exclude) if exclude is not None else [False] * len(pts)
    flags = set()
    pos = [(e, v, x) for (e, v), x in zip(pts, exclude) if v > 0 and math.isfinite(v)]
    if len(pos) < len(pts):
        flags.add("nonpositive")
    usable = [(e, v) for e, v, x in pos if v > floor and not x]
    if len(usable) < len(pos):
        flags.add("floor")
    if len(usable) < 3:
        flags.add("no_fit")
        usable = [(e, v) for e, v, _ in pos]
    if len(usable) < 2:
        return FitResult(math.nan, math.nan, math.nan, len(usable), tuple(sorted(flags)))
    lx = np.log([e for e, _ in usable])
    ly = np.log([v for _, v in usable])
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return FitResult(float(slope), float(icpt), r2, len(usable), tuple(sorted(flags)))


@dataclass(frozen=True)
class SweepConfig:
    model: object
    psi: object
    init: InitialData
    grid: Grid1D
    T: float
    eps_list: tuple
    trust_window: float = 1.0
    refine_check: bool = False
    snapshot_dt: float = 0.01
    limit_dt: float | None = None  # None: largest stable divisor of snapshot_dt per grid
    cfl: float = CFL
    k_max: int = 5
    workers: int = 1
    flux: str = "central"
    floor: float = ABS_FLOOR
    config_hash: str = ""

    def __post_init__(self):
        bad = []
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if len(eps) == 0 or any(not e > 0 for e in eps):
            bad.append("eps_list must contain positive values")
        elif any(b >= a for a, b in zip(eps, eps[1:])):
            bad.append("eps_list must be strictly decreasing")
        elif self.grid.h > 0.2 * math.sqrt(min(eps)) + 1e-15:
            bad.append(f"grid spacing {self.grid.h:.4g} does not resolve sqrt(min eps): need h <= "
                       f"{0.2 * math.sqrt(min(eps)):.4g}")
        if not self.trust_window > 0:
            bad.append("trust_window must be positive")
        if bad:
            raise ValidationError("; ".join(bad), bad)

    @property
    def moments(self) -> bool:
        return getattr(self.psi, "is_one", False)


@dataclass
class EpsOutcome:
    eps: float
    h: float
    errors: dict | None
    diagnostics: list | None
    summary: tuple | None = None  # (times, I, x, max_u)
    failure: str | None = None


@dataclass
class ConvergenceReport:
    quantities: list
    eps_list: tuple
    rows: list  # (quantity, eps, error, h, floor_flag)
    fits: dict  # quantity -> FitResult
    outcomes: list
    metadata: dict = field(default_factory=dict)

    def error(self, quantity, eps, h=None):
        for q, e, v, hh, _ in self.rows:
            if q == quantity and e == eps and (h is None or hh == h):
                return v
        raise KeyError((quantity, eps, h))

    def order(self, quantity) -> float:
        return self.fits[quantity].order

    def floor_flagged(self, quantity) -> bool:
        return bool({"floor", "no_fit", "nonpositive"} & set(self.fits[quantity].flags))

    @property
    def failures(self):
        return [(o.eps, o.h, o.failure) for o in self.outcomes if o.failure]

    def write(self, outdir, tag):
        """Write the error table, the order summary and per-run diagnostics."""
        import pathlib
        out = pathlib.Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_columns(out / f"sweep_{tag}_errors.csv", ("quantity", "eps", "error", "h", "floor_flag"),
                      list(zip(*self.rows)))
        q = self.quantities
        f = [self.fits[k] for k in q]
        write_columns(out / f"sweep_{tag}_orders.csv",
                      ("quantity", "fitted_order", "intercept", "r2", "n_used", "floor_flag", "flags"),
                      [q, [x.order if "no_fit" not in x.flags else math.nan for x in f],
                       [x.intercept for x in f], [x.r2 for x in f], [x.n_used for x in f],
                       [self.floor_flagged(k) for k in q], [";".join(x.flags) or "-" for x in f]])
        drows = []
        for o in self.outcomes:
            for check, v, worst, bound in (o.diagnostics or []):
                drows.append((o.eps, o.h, check, v, worst, bound))
        if drows:
            write_columns(out / f"sweep_{tag}_diagnostics.csv",
                          ("eps", "h", "check", "violations", "worst", "bound"), list(zip(*drows)))
        fails = [(e, h, m) for e, h, m in self.failures]
        write_columns(out / f"sweep_{tag}_meta.csv", ("key", "value"),
                      [["config_hash", "trust_window", "refine_check", "failed_runs"],
                       [self.metadata.get("config_hash", ""), self.metadata.get("trust_window", ""),
                        self.metadata.get("refine_check", ""),
                        "; ".join(f"eps={e} h={h}: {m}" for e, h, m in fails) or "none"]])


def _first_order_for(cfg: SweepConfig, grid):
    dt = cfg.limit_dt or auto_limit_dt(cfg.init, grid, cfg.snapshot_dt)
    return solve_first_order(cfg.model, cfg.psi, cfg.init, grid, cfg.T, dt, cfg.snapshot_dt)


def _eps_job(args):
    cfg, grid, eps, limit, corr = args
    try:
        r = effective_prefactor(cfg.init, cfg.psi, grid, eps, limit, corr)
        u0 = initial_potential(cfg.init, eps, grid, r)
        ecfg = make_eps_config(eps, cfg.T, grid, u0.values, cfg.snapshot_dt, cfl=cfg.cfl, flux=cfg.flux)
        traj = run_eps(ecfg, cfg.model, cfg.psi, cfg.init, r)
        errs = error_norms(traj, limit, corr, eps, cfg.trust_window, cfg.model, cfg.k_max, cfg.moments)
        diag = check_bounds(traj, cfg.model, cfg.init, cfg.trust_window)
        return EpsOutcome(eps, grid.h, errs, diag.rows, (traj.times, traj.I_series, traj.x_series, traj.max_u))
    except SelmutError as exc:
        return EpsOutcome(eps, grid.h, None, None, None, f"{type(exc).__name__}: {exc}")


def run_sweep(cfg: SweepConfig) -> ConvergenceReport:
    t0 = time.perf_counter()
    grids = [cfg.grid] + ([cfg.grid.refined()] if cfg.refine_check else [])
    firsts = {g: _first_order_for(cfg, g) for g in grids}
    jobs = [(cfg, g, eps) + firsts[g] for eps in cfg.eps_list for g in grids]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            outcomes = list(ex.map(_eps_job, jobs))
    else:
        outcomes = [_eps_job(j) for j in jobs]

    by_key = {(o.eps, o.h): o for o in outcomes}
    fine = grids[-1]
    quantities = []
    for o in outcomes:
        for k in (o.errors or {}):
            if k not in quantities:
                quantities.append(k)
    rows, fits = [], {}
    for q in quantities:
        pts, excl = [], []
        for eps in cfg.eps_list:
            o = by_key[(eps, fine.h)]
            if o.errors is None:
                continue
            v = o.errors[q]
            flag = v <= cfg.floor
            if cfg.refine_check:
                oc = by_key[(eps, cfg.grid.h)]
                if oc.errors is not None:
                    vc = oc.errors[q]
                    flag = flag or abs(vc - v) > REFINE_CHANGE * abs(v)
                    rows.append((q, eps, vc, cfg.grid.h, flag))
            rows.append((q, eps, v, fine.h, flag))
            pts.append((eps, v))
            excl.append(flag)
        fits[q] = fit_order(pts, cfg.floor, excl)
    meta = {"config_hash": cfg.config_hash, "wall_time": time.perf_counter() - t0,
            "trust_window": cfg.trust_window, "refine_check": cfg.refine_check}
    return ConvergenceReport(quantities, cfg.eps_list, rows, fits, outcomes, meta)


def initial_expansion(model, psi, init, grid):
    """(I(0), K(0)) of the limit problem started from ``init``."""
    from .corrections import compute_K
    from .limit_solver import initial_limit_state
    s = initial_limit_state(model, init, grid)
    return s.I, compute_K(s, model, psi)


def prefactor_for(init, model, psi, grid, eps) -> float:
    if init.prepare != "first_order":
        return init.r
    I0, K0 = initial_expansion(model, psi, init, grid)
    return prepared_prefactor(init, psi, grid, eps, I0, K0)
