"""Growth-rate families, weight functions, initial data and the neutral-intake map."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, ValidationError
from .grid import Grid1D, log_integral_exp, trapezoid_weights

ROOT_TOL = 1e-12


@dataclass(frozen=True)
class Bump:
    """Gaussian bump A*exp(-((x - center)/width)**2)."""

    amplitude: float
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError(f"bump width must be positive, got {self.width}")

    def derivs(self, x, order=3):
        """Values of p, p', ..., p^(order) at x (order <= 4)."""
        w = self.width
        z = (np.asarray(x, dtype=float) - self.center) / w
        g = self.amplitude * np.exp(-z * z)
        out = [g]
        if order >= 1:
            out.append(-2.0 * z * g / w)
        if order >= 2:
            out.append((4.0 * z * z - 2.0) * g / w**2)
        if order >= 3:
            out.append((12.0 * z - 8.0 * z**3) * g / w**3)
        if order >= 4:
            out.append((16.0 * z**4 - 48.0 * z * z + 12.0) * g / w**4)
        return out

    def __call__(self, x):
        return self.derivs(x, 0)[0]


@dataclass(frozen=True)
class GrowthDerivs:
    R: np.ndarray
    R_x: np.ndarray | None = None
    R_xx: np.ndarray | None = None
    R_xxx: np.ndarray | None = None
    R_I: np.ndarray | float = 0.0
    R_Ix: np.ndarray | float = 0.0
    R_Ixx: np.ndarray | float = 0.0


@dataclass(frozen=True)
class GrowthModel:
    """R(x, I) = r0 - a (x - theta)^2 + p(x) - b I."""

    r0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    theta: float = 0.0
    perturbation: Bump | None = None

    def rate(self, x, I):
        x = np.asarray(x, dtype=float)
        R = self.r0 - self.a * (x - self.theta) ** 2 - self.b * I
        if self.perturbation is not None:
            R = R + self.perturbation(x)
        return R

    def derivs(self, x, I, order=3) -> GrowthDerivs:
        if np.any(np.asarray(I) < 0):
            raise DomainError(f"intake must be nonnegative, got {I}")
        x = np.asarray(x, dtype=float)
        s = x - self.theta
        vals = [self.r0 - self.a * s * s - self.b * I, -2.0 * self.a * s,
                np.full_like(s, -2.0 * self.a), np.zeros_like(s)]
        if self.perturbation is not None:
            for k, pk in enumerate(self.perturbation.derivs(x, min(order, 3))):
                vals[k] = vals[k] + pk
        vals = vals[: order + 1] + [None] * (3 - order)
        return GrowthDerivs(*vals, R_I=-self.b, R_Ix=0.0, R_Ixx=0.0)

    @property
    def is_pure_quadratic(self) -> bool:
        return self.perturbation is None or self.perturbation.amplitude == 0.0


def eval_growth(model, x, I, order: int = 3) -> GrowthDerivs:
    if not 0 <= order <= 3:
        raise ValueError("order must be between 0 and 3")
    return model.derivs(x, I, order)


def _intake_bracket(model, y):
    r_zero = float(model.rate(y, 0.0))
    if not r_zero > 0:
        raise DomainError(f"trait {y} is not viable: R({y}, 0) = {r_zero:.6g} <= 0")
    hi = 1.0
    while float(model.rate(y, hi)) >= 0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"R({y}, I) does not become negative as I grows")
    return hi


def optimal_intake(model, y: float) -> tuple[float, float]:
    """Neutral intake I* with R(y, I*) = 0 and its gradient -R_x/R_I."""
    hi = _intake_bracket(model, y)
    I_star = optimize.brentq(lambda I: float(model.rate(y, I)), 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    d = model.derivs(y, I_star, 1)
    return float(I_star), float(-d.R_x / d.R_I)


def _max_rate(model, I, span=None):
    theta = getattr(model, "theta", 0.0)
    span = span or 10.0 / math.sqrt(getattr(model, "a", 1.0))
    res = optimize.minimize_scalar(lambda x: -float(model.rate(x, I)),
                                   bracket=(theta - 0.5, theta + 0.5), method="golden",
                                   tol=1e-12)
    x_star = float(res.x)
    if abs(x_star - theta) > span:
        raise DomainError("maximum of R drifted out of the search interval")
    return x_star, float(model.rate(x_star, I))


def carrying_intake(model) -> float:
    """I_M with max_x R(x, I_M) = 0."""
    _, top0 = _max_rate(model, 0.0)
    if top0 <= 0:
        raise DomainError("R(., 0) is nowhere positive")
    hi = 1.0
    while _max_rate(model, hi)[1] >= 0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError("max_x R(x, I) does not become negative as I grows")
    return float(optimize.brentq(lambda I: _max_rate(model, I)[1], 0.0, hi,
                                 xtol=1e-15, rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True)
class WeightFunction:
    """psi = c0 + c1*tanh((x - c2)/c3), or identically one."""

    kind: str = "one"
    c0: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 1.0

    def __post_init__(self):
        if self.kind not in ("one", "smooth"):
            raise ValidationError(f"unknown weight kind {self.kind!r}")
        if self.kind == "smooth" and not self.c3 > 0:
            raise ValidationError("psi.c3 must be positive")

    @property
    def is_one(self) -> bool:
        return self.kind == "one"

    def derivs(self, x, order=3):
        x = np.asarray(x, dtype=float)
        if self.is_one:
            return [np.ones_like(x)] + [np.zeros_like(x)] * order
        s = np.tanh((x - self.c2) / self.c3)
        s1 = 1.0 - s * s
        out = [self.c0 + self.c1 * s, self.c1 * s1 / self.c3,
               self.c1 * (-2.0 * s * s1) / self.c3**2,
               self.c1 * (6.0 * s * s - 2.0) * s1 / self.c3**3]
        return out[: order + 1]

    def __call__(self, x):
        return self.derivs(x, 0)[0]


@dataclass(frozen=True)
class InitialData:
    """u0(x) = -L1 (x - x_c)^2 + q(x), shifted so its maximum equals ``level``.

    ``r`` is the mass prefactor. ``prepare`` selects how the prefactor is used
    for an eps-run: ``none`` takes it literally, ``first_order`` rescales it so
    the initial intake matches its first-order expansion.
    """

    L1: float = 0.5
    x_c: float = 0.0
    r: float = 1.0 / math.sqrt(2.0 * math.pi)
    perturbation: Bump | None = None
    prepare: str = "none"
    level: float = 0.0
    _peak: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.prepare not in ("none", "first_order"):
            raise ValidationError(f"unknown init.prepare value {self.prepare!r}")
        object.__setattr__(self, "_peak", self._locate_peak())

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        v = -self.L1 * (x - self.x_c) ** 2
        if self.perturbation is not None:
            v = v + self.perturbation(x)
        return v

    def _locate_peak(self):
        if self.perturbation is None or self.perturbation.amplitude == 0.0:
            return float(self.x_c), 0.0
        if not self.L1 > 0:
            return float(self.x_c), 0.0
        res = optimize.minimize_scalar(lambda x: -float(self._raw(x)),
                                       bracket=(self.x_c - 0.25, self.x_c + 0.25),
                                       method="golden", tol=1e-12)
        return float(res.x), float(-res.fun)

    @property
    def peak(self) -> float:
        """Location of the maximum of u0 (the initial dominant trait)."""
        return self._peak[0]

    def u0(self, x):
        return self._raw(x) - self._peak[1] + self.level

    def derivs(self, x, order=3):
        x = np.asarray(x, dtype=float)
        s = x - self.x_c
        out = [self.u0(x), -2.0 * self.L1 * s, np.full_like(s, -2.0 * self.L1),
               np.zeros_like(s), np.zeros_like(s)]
        if self.perturbation is not None:
            for k, qk in enumerate(self.perturbation.derivs(x, 4)[1:], start=1):
                out[k] = out[k] + qk
        return out[: order + 1]

    def with_prefactor(self, r: float) -> "InitialData":
        return InitialData(self.L1, self.x_c, r, self.perturbation, self.prepare, self.level)


def limit_initial_intake(init: InitialData, psi: WeightFunction) -> float:
    """Laplace limit of the initial intake, r*sqrt(2*pi/|D2u0|)*psi at the peak."""
    x0 = init.peak
    curv = -float(init.derivs(x0, 2)[2])
    return init.r * math.sqrt(2.0 * math.pi / curv) * float(psi(x0))


def eps_initial_intake(init: InitialData, psi: WeightFunction, grid: Grid1D, eps: float, r=None) -> float:
    r = init.r if r is None else r
    u = init.u0(grid.x) + eps * math.log(r / math.sqrt(eps))
    return math.exp(log_integral_exp(u, np.log(psi(grid.x) * trapezoid_weights(grid.n, grid.h)), eps))


@dataclass
class ValidationReport:
    rows: list = field(default_factory=list)

    def add(self, assumption, passed, constant="", value=float("nan")):
        self.rows.append((assumption, bool(passed), constant, float(value)))

    @property
    def ok(self) -> bool:
        return all(p for _, p, _, _ in self.rows)

    def failures(self):
        return sorted({a for a, p, _, _ in self.rows if not p})

    def constants(self) -> dict:
        return {c: v for _, _, c, v in self.rows if c}

    def passed(self, assumption) -> bool:
        return all(p for a, p, _, _ in self.rows if a == assumption)


def curvature_constants(model, grid: Grid1D, I=0.0):
    """(K1_lower, K1_upper) with -2*K1_lower <= D2R <= -2*K1_upper on the grid."""
    R_xx = np.broadcast_to(model.derivs(grid.x, I, 2).R_xx, grid.x.shape)
    return float(-R_xx.min() / 2.0), float(-R_xx.max() / 2.0)


def init_curvature_constants(init: InitialData, grid: Grid1D):
    u_xx = init.derivs(grid.x, 2)[2]
    return float(-u_xx.min() / 2.0), float(-u_xx.max() / 2.0)


def envelope_rates(model, init, grid):
    """(M1_lower, M1_upper) of the a-priori concavity bounds."""
    K1_lo, K1_up = curvature_constants(model, grid)
    L1_lo, L1_up = init_curvature_constants(init, grid)
    return max(L1_lo, math.sqrt(max(K1_lo, 0.0)) / 2.0), min(L1_up, math.sqrt(max(K1_up, 0.0)) / 2.0)


def validate_assumptions(model: GrowthModel, psi: WeightFunction, init: InitialData, grid: Grid1D,
                         eps=None, r_eps=None, rel_tol=1e-6) -> ValidationReport:
    """Check the standing assumptions on the grid.

    With ``eps`` given, the initial intake and the survival deficit are
    evaluated for that scale, using the prefactor ``r_eps`` when supplied.
    """
    rep = ValidationReport()
    x = grid.x

    ps = psi(x)
    rep.add("aspsi", ps.min() > 0, "psi_m", ps.min())
    rep.add("aspsi", np.isfinite(ps.max()), "psi_M", ps.max())

    rep.add("model_params", model.r0 > 0 and model.a > 0, "r0", model.r0)
    try:
        I_M = carrying_intake(model)
        rep.add("asrmax", I_M > 0, "I_M", I_M)
    except (DomainError, ValueError):
        I_M = float("nan")
        rep.add("asrmax", False, "I_M", I_M)

    K1_lo, K1_up = curvature_constants(model, grid)
    rep.add("asrD2", K1_up > 0, "K1_upper", K1_up)
    rep.add("asrD2", K1_lo >= K1_up, "K1_lower", K1_lo)
    rep.add("asrDi", model.b > 0, "K2", model.b)

    L1_lo, L1_up = init_curvature_constants(init, grid)
    rep.add("asuD2", L1_up > 0, "L1_upper", L1_up)
    rep.add("asuD2", L1_lo >= L1_up, "L1_lower", L1_lo)
    top = float(init.u0(init.peak))
    rep.add("asu_max", abs(top) <= 1e-12, "max_u0", top)

    x0 = init.peak
    rep.add("peak_in_grid", grid.x_min < x0 < grid.x_max, "x0", x0)
    viable = float(model.rate(x0, 0.0)) > 0
    rep.add("x0_viable", viable, "R_x0_0", float(model.rate(x0, 0.0)))

    I0 = limit_initial_intake(init, psi)
    try:
        target = optimal_intake(model, x0)[0]
        rep.add("asuIni", abs(I0 - target) <= rel_tol * max(target, 1.0), "I0", I0)
    except DomainError:
        rep.add("asuIni", False, "I0", I0)

    if eps is not None:
        r_used = init.r if r_eps is None else r_eps
        I_e = eps_initial_intake(init, psi, grid, eps, r_used)
        rep.add("asI", 0 < I_e < I_M, "I_eps0", I_e)
        u = init.u0(x) + eps * math.log(r_used / math.sqrt(eps))
        surv = float(np.trapezoid(ps * model.rate(x, I_e) * np.exp(u / eps), dx=grid.h))
        deficit = max(-surv, 0.0) / eps
        rep.add("extinct", deficit <= math.sqrt(eps), "survival_deficit", deficit)
    else:
        rep.add("asI", 0 < I0 < I_M or math.isclose(I0, I_M, rel_tol=rel_tol), "I_eps0", I0)
    return rep
