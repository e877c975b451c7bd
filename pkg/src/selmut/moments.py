"""Phenotypic moments: quadrature on eps-runs and first-order predictions from limit data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, ValidationError
from .grid import GridField, parabolic_vertex, trapezoid_weights, write_columns


def _density(u: GridField, eps):
    g = u.grid
    v = u.values
    parabolic_vertex(v, g.x_min, g.h)  # boundary-contact guard
    w = np.exp((v - v.max()) / eps) * trapezoid_weights(g.n, g.h)
    return w / w.sum()


def numeric_moments(u: GridField, eps: float, k_max: int = 5, psi=None):
    """Mean and central moments 2..k_max of the density proportional to exp(u/eps).

    Only defined for the unit weight; any other ``psi`` is rejected.
    """
    if psi is not None and not getattr(psi, "is_one", False):
        raise ValidationError("moments are defined for the unit weight psi = 1 only")
    if not eps > 0:
        raise ValueError("eps must be positive")
    q = _density(u, eps)
    x = u.grid.x
    m1 = float(q @ x)
    dx = x - m1
    mc = {}
    p = dx * dx
    for k in range(2, k_max + 1):
        mc[k] = float(q @ p)
        p = p * dx
    return m1, mc


def double_factorial_ratio(k: int) -> float:
    """(2k)!/(2^k k!), the k-th even moment of a unit Gaussian."""
    return math.factorial(2 * k) / (2**k * math.factorial(k))


def gaussian_gamma(k: int, M2: float) -> float:
    if not M2 > 0 or k < 0:
        raise ValueError("need M2 > 0 and k >= 0")
    return math.sqrt(2.0 * math.pi) * double_factorial_ratio(k) * M2 ** (k + 0.5)


def asymptotic_moments(limit, corr, k_max: int = 5) -> dict:
    """Moment coefficients M1, M2, ..., M_kmax at one time.

    Even central moments scale like eps^(k/2) M_k, odd ones like eps^((k+1)/2) M_k.
    """
    A = -limit.d2u_at_xbar
    if not A > 0:
        raise DegeneracyError(f"u_xx(xbar) = {-A:.6g} is not negative")
    D3 = limit.d3u_at_xbar
    M2 = 1.0 / A
    out = {1: 0.5 * D3 / A**2 + corr.dw_at_xbar / A, 2: M2}
    for j in range(3, k_max + 1):
        k = j // 2
        if j % 2 == 0:
            out[j] = double_factorial_ratio(k) * M2**k
        else:
            out[j] = k / 3.0 * double_factorial_ratio(k + 1) * D3 * M2 ** (k + 2)
    return out


def moment_order(j: int) -> int:
    """Power of eps multiplying the j-th predicted central moment."""
    return (j + 1) // 2


@dataclass
class MomentSeries:
    times: np.ndarray
    M1_eps: np.ndarray
    Mc_eps: dict
    M1_pred: np.ndarray
    Mc_pred: dict
    gamma: dict
    errors: dict = field(default_factory=dict)

    def to_csv(self, path):
        ks = sorted(self.Mc_eps)
        header = ["t", "M1_eps"] + [f"Mc{k}_eps" for k in ks] + ["M1_pred"] + [f"Mc{k}_pred" for k in ks]
        header += ["err_m1"] + [f"err_m{k}" for k in ks]
        cols = [self.times, self.M1_eps] + [self.Mc_eps[k] for k in ks] + [self.M1_pred]
        cols += [self.Mc_pred[k] for k in ks]
        cols += [np.abs(self.M1_eps - self.M1_pred)] + [np.abs(self.Mc_eps[k] - self.Mc_pred[k]) for k in ks]
        write_columns(path, header, cols)


def moment_errors(eps_traj, limit_traj, corr_traj, eps: float, k_max: int = 5) -> MomentSeries:
    t_lim = limit_traj.snap_times
    if t_lim.shape != eps_traj.times.shape or not np.allclose(t_lim, eps_traj.times, rtol=0, atol=1e-9):
        raise ValidationError("eps-run and limit snapshots are not aligned in time")
    grid = limit_traj.grid
    n = t_lim.size
    M1e = np.empty(n)
    Mce = {k: np.empty(n) for k in range(2, k_max + 1)}
    M1p = np.empty(n)
    Mcp = {k: np.empty(n) for k in range(2, k_max + 1)}
    gam = {k: np.empty(n) for k in range(0, k_max // 2 + 1)}
    for j in range(n):
        m1, mc = numeric_moments(eps_traj.field(j), eps, k_max)
        M1e[j] = m1
        lim = limit_traj.state(j)
        pred = asymptotic_moments(lim, corr_traj.state(j, grid), k_max)
        M1p[j] = lim.xbar + eps * pred[1]
        for k in mc:
            Mce[k][j] = mc[k]
            Mcp[k][j] = eps ** moment_order(k) * pred[k]
        for k in gam:
            gam[k][j] = gaussian_gamma(k, pred[2])
    errs = {"M1": float(np.abs(M1e - M1p).max())}
    errs.update({f"Mc{k}": float(np.abs(Mce[k] - Mcp[k]).max()) for k in Mce})
    return MomentSeries(t_lim.copy(), M1e, Mce, M1p, Mcp, gam, errs)
