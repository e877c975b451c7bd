"""Uniform 1-D grids, finite differences, quadrature and sub-grid localization."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BoundaryContactError, DomainError, ValidationError

MIN_POINTS = 9


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_POINTS:
            raise ValidationError(f"grid needs at least {MIN_POINTS} points, got n={self.n}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)) or self.x_max <= self.x_min:
            raise ValidationError(f"empty grid interval [{self.x_min}, {self.x_max}]")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n)
        x.flags.writeable = False
        return x

    def refined(self) -> "Grid1D":
        """Same interval with the spacing halved."""
        return Grid1D(self.x_min, self.x_max, 2 * (self.n - 1) + 1)

    def contains(self, x) -> bool:
        return self.x_min <= x <= self.x_max


@dataclass(frozen=True)
class GridField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValidationError(f"field has shape {v.shape}, grid has {self.grid.n} points")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid1D, f) -> "GridField":
        return cls(grid, np.broadcast_to(np.asarray(f(grid.x), dtype=float), (grid.n,)).copy())

    def __add__(self, other):
        if isinstance(other, GridField):
            return GridField(self.grid, self.values + other.values)
        return GridField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridField):
            return GridField(self.grid, self.values - other.values)
        return GridField(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridField):
            return GridField(self.grid, self.values * other.values)
        return GridField(self.grid, self.values * other)

    __radd__ = __add__
    __rmul__ = __mul__

    def to_csv(self, path, header=("x", "value")):
        write_columns(path, header, [self.grid.x, self.values])


# -- stencils on raw arrays ------------------------------------------------
# The solvers call these directly in their inner loops.

def d1(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return out


def d2(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    h2 = h * h
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return out


_FWD3 = np.array([-5.0, 18.0, -24.0, 14.0, -3.0]) / 2.0


def d3(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    h3 = h ** 3
    out[2:-2] = (v[4:] - 2.0 * v[3:-1] + 2.0 * v[1:-3] - v[:-4]) / (2.0 * h3)
    for i in (0, 1):
        out[i] = _FWD3 @ v[i:i + 5] / h3
        j = v.size - 1 - i
        out[j] = -(_FWD3 @ v[j - 4:j + 1][::-1]) / h3
    return out


def d4(v: np.ndarray, h: float) -> np.ndarray:
    """Fourth derivative, centered 5-point inside, one-sided 6-point at the ends."""
    out = np.empty_like(v)
    h4 = h ** 4
    out[2:-2] = (v[4:] - 4.0 * v[3:-1] + 6.0 * v[2:-2] - 4.0 * v[1:-3] + v[:-4]) / h4
    fwd = np.array([3.0, -14.0, 26.0, -24.0, 11.0, -2.0])
    for i in (0, 1):
        out[i] = fwd @ v[i:i + 6] / h4
        j = v.size - 1 - i
        out[j] = fwd @ v[j - 5:j + 1][::-1] / h4
    return out


_DIFF = {1: d1, 2: d2, 3: d3, 4: d4}


def diff(field: GridField, order: int) -> GridField:
    if order not in _DIFF:
        raise ValueError(f"derivative order must be 1..4, got {order}")
    return GridField(field.grid, _DIFF[order](field.values, field.grid.h))


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def trapezoid(field: GridField) -> float:
    return float(np.trapezoid(field.values, dx=field.grid.h))


def log_integral_exp(u: np.ndarray, log_psi_w: np.ndarray, eps: float) -> float:
    """log sum_i exp(u_i/eps + log_psi_w_i), shifted by the grid max of u."""
    m = u.max()
    return m / eps + float(np.log(np.exp((u - m) / eps + log_psi_w).sum()))


def logsumexp_integral(u: GridField, psi, eps: float) -> float:
    """log of the trapezoid approximation of int psi exp(u/eps) dx.

    ``psi`` may be a GridField, an array of grid samples or a positive scalar.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = u.grid
    psi_v = psi.values if isinstance(psi, GridField) else np.broadcast_to(np.asarray(psi, float), (g.n,))
    if np.any(psi_v <= 0):
        raise ValueError("weight must be positive")
    return log_integral_exp(u.values, np.log(psi_v * trapezoid_weights(g.n, g.h)), eps)


def parabolic_vertex(v: np.ndarray, x_min: float, h: float, t=None) -> tuple[float, float]:
    i = int(np.argmax(v))
    if i == 0 or i == v.size - 1:
        raise BoundaryContactError(f"maximum sits on the grid boundary (index {i})", t=t)
    a, b, c = v[i - 1], v[i], v[i + 1]
    curv = a - 2.0 * b + c
    if curv >= 0.0:
        return x_min + i * h, float(b)
    s = 0.5 * (a - c) / curv
    return x_min + (i + s) * h, float(b - 0.125 * (a - c) ** 2 / curv)


def argmax_parabolic(field: GridField) -> tuple[float, float]:
    g = field.grid
    return parabolic_vertex(field.values, g.x_min, g.h)


def _cubic_nodes(x_min, h, n, x):
    s = (x - x_min) / h
    i = min(max(int(np.floor(s)) - 1, 0), n - 4)
    t = s - i
    # Lagrange basis on nodes 0, 1, 2, 3 at offset t
    w = np.array([
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ])
    return i, w


def interp_cubic(v: np.ndarray, x_min: float, h: float, x: float) -> float:
    n = v.size
    tol = 1e-9 * h
    if not (x_min - tol <= x <= x_min + (n - 1) * h + tol):
        raise DomainError(f"x={x} lies outside the grid")
    i, w = _cubic_nodes(x_min, h, n, x)
    return float(w @ v[i:i + 4])


def sample_at(field: GridField, x: float) -> float:
    g = field.grid
    return interp_cubic(field.values, g.x_min, g.h, x)


def local_derivative(v: np.ndarray, x_min: float, h: float, x: float, order: int) -> float:
    """Stencil derivative interpolated to x, touching only nearby nodes."""
    n = v.size
    s = (x - x_min) / h
    i = min(max(int(np.floor(s)) - 1, 0), n - 4)
    lo, hi = max(i - 3, 0), min(i + 7, n)
    dv = _DIFF[order](v[lo:hi], h)
    return interp_cubic(dv, x_min + lo * h, h, x)


def write_columns(path, header, columns):
    """CSV with a header row and 17 significant digits."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in zip(*cols):
            wr.writerow([fmt(v) for v in row])


def fmt(v) -> str:
    if isinstance(v, (str, bool, np.bool_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")
