"""Command line entry point: ``selmut <command> <config> [--set key=value ...]``."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .config import PRESETS, RunConfig, parse_config
from .corrections import solve_first_order
from .eps_solver import check_bounds, initial_potential, make_eps_config, run_eps
from .errors import SelmutError, ValidationError
from .grid import fmt, write_columns
from .limit_solver import quadratic_oracle, run_limit
from .model import validate_assumptions
from .moments import moment_errors
from .plotting import order_plot

COMMANDS = ("validate", "run-eps", "run-limit", "run-corrections", "moments", "sweep")


def _say(msg):
    print(msg, flush=True)


class Context:
    def __init__(self, cfg: RunConfig, outdir):
        self.cfg = cfg
        self.model = cfg.model()
        self.psi = cfg.psi()
        self.init = cfg.init()
        self.grid = cfg.grid()
        self.out = Path(outdir if outdir is not None else cfg["output.dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.tag = cfg.hash
        self.limit_dt = cfg.limit_dt(self.init, self.grid)
        (self.out / f"config_{self.tag}.cfg").write_text(cfg.to_text(), encoding="utf-8")

    def path(self, stem):
        return self.out / f"{stem}_{self.tag}.csv"

    def eps_run(self, eps):
        c = self.cfg
        r = harness.prefactor_for(self.init, self.model, self.psi, self.grid, eps)
        u0 = initial_potential(self.init, eps, self.grid, r)
        dt = None if c["time.dt"] == "auto" else c["time.dt"]
        ecfg = make_eps_config(eps, c["time.T"], self.grid, u0.values, c["time.snapshot_dt"], dt=dt,
                               cfl=c["time.cfl"], flux=c["time.flux"])
        return run_eps(ecfg, self.model, self.psi, self.init, r)

    def first_order(self, route=False):
        c = self.cfg
        return solve_first_order(self.model, self.psi, self.init, self.grid, c["time.T"], self.limit_dt,
                                 c["time.snapshot_dt"], derivative_route=route)


def cmd_validate(ctx: Context) -> int:
    eps = ctx.cfg["run.eps"]
    r = harness.prefactor_for(ctx.init, ctx.model, ctx.psi, ctx.grid, eps)
    rep = validate_assumptions(ctx.model, ctx.psi, ctx.init, ctx.grid, eps=eps, r_eps=r)
    write_columns(ctx.path("validation"), ("assumption", "pass", "constant", "value"), list(zip(*rep.rows)))
    for a, ok, c, v in rep.rows:
        _say(f"{a:14s} {'pass' if ok else 'FAIL'}  {c} = {fmt(v)}")
    if not rep.ok:
        raise ValidationError(f"assumptions violated: {', '.join(rep.failures())}")
    return 0


def _eps_outputs(ctx, traj):
    e = f"{traj.eps:g}"
    traj.to_csv(ctx.out / f"eps_{e}_{ctx.tag}.csv")
    diag = check_bounds(traj, ctx.model, ctx.init, ctx.cfg["sweep.trust_window"])
    diag.to_csv(ctx.out / f"eps_{e}_{ctx.tag}_diagnostics.csv")
    snap_dir = ctx.out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    every = ctx.cfg["output.snapshot_every"]
    for j in range(0, traj.times.size, every):
        write_columns(snap_dir / f"eps_{e}_{ctx.tag}_t{traj.times[j]:.4f}.csv", ("x", "u_eps"),
                      [ctx.grid.x, traj.u_snapshots[j]])
    return diag


def cmd_run_eps(ctx: Context) -> int:
    traj = ctx.eps_run(ctx.cfg["run.eps"])
    diag = _eps_outputs(ctx, traj)
    _say(f"eps={traj.eps:g} steps={traj.diagnostics['steps']} dt={traj.dt:.6g} prefactor={traj.r:.12g}")
    _say(f"I_eps(T) = {fmt(traj.I_series[-1])}   x_eps(T) = {fmt(traj.x_series[-1])}")
    _say(f"I_eps range [{fmt(traj.I_series.min())}, {fmt(traj.I_series.max())}]")
    for check, v, worst, bound in diag.rows:
        _say(f"{check:24s} violations={v} worst={fmt(worst)} bound={fmt(bound)}")
    return 0


def cmd_run_limit(ctx: Context) -> int:
    c = ctx.cfg
    lim = run_limit(ctx.model, ctx.init, ctx.grid, c["time.T"], ctx.limit_dt, c["time.snapshot_dt"])
    lim.to_csv(ctx.path("limit"))
    _say(f"limit dt = {ctx.limit_dt:.6g}   xbar(T) = {fmt(lim.xbar[-1])}   I(T) = {fmt(lim.I[-1])}")
    _say(f"max |constraint drift| = {fmt(np.abs(lim.drift).max())}   max argmax gap = {fmt(lim.argmax_gap.max())}")
    if ctx.model.is_pure_quadratic and ctx.init.perturbation is None:
        o = quadratic_oracle(ctx.model, ctx.init.L1, ctx.init.x_c, c["time.T"], lim.t)
        ex, eI = np.abs(lim.xbar - o.xbar), np.abs(lim.I - o.I)
        write_columns(ctx.path("limit_oracle"), ("t", "xbar_oracle", "I_oracle", "err_xbar", "err_I"),
                      [o.t, o.xbar, o.I, ex, eI])
        _say(f"oracle: sup|xbar - xbar_ref| = {fmt(ex.max())}   sup|I - I_ref| = {fmt(eI.max())}")
    return 0


def cmd_run_corrections(ctx: Context) -> int:
    lim, corr = ctx.first_order(ctx.cfg["run.derivative_route"])
    lim.to_csv(ctx.path("limit"))
    corr.to_csv(ctx.path("corrections"))
    _say(f"K(0) = {fmt(corr.K[0])}   K(T) = {fmt(corr.K[-1])}")
    _say(f"y(T) = {fmt(corr.y[-1])}   J(T) = {fmt(corr.J[-1])}")
    if corr.q_at_xbar is not None:
        _say(f"max |w_xx(xbar) stencil - derivative route| = {fmt(np.abs(corr.d2w_at_xbar - corr.q_at_xbar).max())}")
    return 0


def cmd_moments(ctx: Context) -> int:
    if not ctx.psi.is_one:
        raise ValidationError("the moments command needs psi.kind = one")
    eps = ctx.cfg["run.eps"]
    lim, corr = ctx.first_order()
    traj = ctx.eps_run(eps)
    ms = moment_errors(traj, lim, corr, eps, ctx.cfg["sweep.k_max"])
    ms.to_csv(ctx.out / f"moments_{eps:g}_{ctx.tag}.csv")
    for k, v in ms.errors.items():
        _say(f"{k:6s} sup error = {fmt(v)}")
    return 0


def sweep_config(ctx: Context) -> harness.SweepConfig:
    c = ctx.cfg
    return harness.SweepConfig(ctx.model, ctx.psi, ctx.init, ctx.grid, c["time.T"], c["sweep.eps_list"],
                               trust_window=c["sweep.trust_window"], refine_check=c["sweep.refine_check"],
                               snapshot_dt=c["time.snapshot_dt"], limit_dt=None if c["time.limit_dt"] == "auto" else c["time.limit_dt"],
                               cfl=c["time.cfl"], k_max=c["sweep.k_max"], workers=c["sweep.workers"],
                               flux=c["time.flux"], floor=c["sweep.floor"], config_hash=ctx.tag)


def cmd_sweep(ctx: Context) -> int:
    rep = harness.run_sweep(sweep_config(ctx))
    rep.write(ctx.out, ctx.tag)
    fine = min(o.h for o in rep.outcomes)
    for q in rep.quantities:
        f = rep.fits[q]
        _say(f"{q:14s} order {f.order:7.3f}  r2 {f.r2:.4f}  floor_flag {rep.floor_flagged(q)}")
        if ctx.cfg["output.emit_svg"]:
            pts = [(e, v) for qq, e, v, h, _ in rep.rows if qq == q and h == fine]
            if pts:
                order_plot(pts, f, ctx.out / f"sweep_{ctx.tag}_{q}.svg", q)
    _say(f"wall time {rep.metadata['wall_time']:.1f} s, trust window {rep.metadata['trust_window']}")
    for e, h, msg in rep.failures:
        _say(f"run eps={e:g} h={h:g} failed: {msg}")
    return 1 if rep.failures else 0


HANDLERS = {"validate": cmd_validate, "run-eps": cmd_run_eps, "run-limit": cmd_run_limit,
            "run-corrections": cmd_run_corrections, "moments": cmd_moments, "sweep": cmd_sweep}


def dispatch(command: str, cfg: RunConfig, outdir=None) -> int:
    if command not in HANDLERS:
        raise ValidationError(f"unknown command {command!r}")
    return HANDLERS[command](Context(cfg, outdir))


def build_parser():
    p = argparse.ArgumentParser(prog="selmut", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help=f"config file or preset name ({', '.join(PRESETS)})")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, may be repeated")
    p.add_argument("--out", default=None, help="output directory (default: output.dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = parse_config(args.config, args.overrides)
        code = dispatch(args.command, cfg, args.out)
    except SelmutError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    _say(f"{args.command} finished in {time.perf_counter() - t0:.1f} s")
    return code


if __name__ == "__main__":
    sys.exit(main())
