"""Flat ``section.key = value`` run configuration with full-error validation."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .grid import Grid1D
from .limit_solver import auto_limit_dt
from .model import Bump, GrowthModel, InitialData, WeightFunction, optimal_intake

PRESETS = ("p0_stationary", "p0_transient", "p0_perturbed")


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (type, default, check, requirement text); default None means required
SCHEMA = {
    "model.r0": ("float", None, _pos, "> 0"),
    "model.a": ("float", None, _pos, "> 0 (asrD2)"),
    "model.b": ("float", None, _pos, "> 0 (asrDi)"),
    "model.theta": ("float", 0.0, None, ""),
    "model.p_amplitude": ("float", 0.0, None, ""),
    "model.p_center": ("float", 0.0, None, ""),
    "model.p_width": ("float", 1.0, _pos, "> 0"),
    "psi.kind": ("choice:one,smooth", "one", None, ""),
    "psi.c0": ("float", 1.0, None, ""),
    "psi.c1": ("float", 0.0, None, ""),
    "psi.c2": ("float", 0.0, None, ""),
    "psi.c3": ("float", 1.0, _pos, "> 0"),
    "init.L1": ("float", None, _pos, "> 0 (asuD2)"),
    "init.x_c": ("float", None, None, ""),
    "init.r": ("float_or_auto", "auto", _pos, "> 0"),
    "init.q_amplitude": ("float", 0.0, None, ""),
    "init.q_center": ("float", 0.0, None, ""),
    "init.q_width": ("float", 1.0, _pos, "> 0"),
    "init.prepare": ("choice:none,first_order", "none", None, ""),
    "grid.x_min": ("float", None, None, ""),
    "grid.x_max": ("float", None, None, ""),
    "grid.n": ("int", None, lambda v: v >= 9, ">= 9"),
    "time.T": ("float", None, _pos, "> 0"),
    "time.dt": ("float_or_auto", "auto", _pos, "> 0"),
    "time.cfl": ("float", 0.4, lambda v: 0 < v <= 0.4, "in (0, 0.4]"),
    "time.limit_dt": ("float_or_auto", "auto", _pos, "> 0"),
    "time.snapshot_dt": ("float", 0.01, _pos, "> 0"),
    "time.flux": ("choice:central,llf", "central", None, ""),
    "run.eps": ("float", 0.05, _pos, "> 0"),
    "run.derivative_route": ("bool", False, None, ""),
    "sweep.eps_list": ("floatlist", (0.08, 0.04, 0.02, 0.01), None, ""),
    "sweep.trust_window": ("float", 1.0, _pos, "> 0"),
    "sweep.refine_check": ("bool", False, None, ""),
    "sweep.workers": ("int", 1, lambda v: v >= 1, ">= 1"),
    "sweep.k_max": ("int", 5, lambda v: 2 <= v <= 8, "in [2, 8]"),
    "sweep.floor": ("float", 1e-8, _nonneg, ">= 0"),
    "output.dir": ("str", "out", None, ""),
    "output.emit_svg": ("bool", False, None, ""),
    "output.snapshot_every": ("int", 10, lambda v: v >= 1, ">= 1"),
}


def _convert(kind, text):
    text = text.strip()
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    if kind == "int":
        return int(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError("expected true/false")
    if kind == "str":
        return text
    if kind == "float_or_auto":
        return "auto" if text.lower() == "auto" else _convert("float", text)
    if kind == "floatlist":
        return tuple(_convert("float", p) for p in text.split(",") if p.strip())
    if kind.startswith("choice:"):
        opts = kind.split(":", 1)[1].split(",")
        if text not in opts:
            raise ValueError(f"expected one of {opts}")
        return text
    raise AssertionError(kind)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


@dataclass
class RunConfig:
    values: dict
    source: str = "<text>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(self.values[k])}\n" for k in sorted(self.values))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    # -- builders -----------------------------------------------------------
    def model(self) -> GrowthModel:
        v = self.values
        p = Bump(v["model.p_amplitude"], v["model.p_center"], v["model.p_width"]) if v["model.p_amplitude"] else None
        return GrowthModel(v["model.r0"], v["model.a"], v["model.b"], v["model.theta"], p)

    def psi(self) -> WeightFunction:
        v = self.values
        return WeightFunction(v["psi.kind"], v["psi.c0"], v["psi.c1"], v["psi.c2"], v["psi.c3"])

    def init(self) -> InitialData:
        v = self.values
        q = Bump(v["init.q_amplitude"], v["init.q_center"], v["init.q_width"]) if v["init.q_amplitude"] else None
        init = InitialData(v["init.L1"], v["init.x_c"], 1.0, q, v["init.prepare"])
        r = v["init.r"]
        if r == "auto":
            r = consistent_prefactor(self.model(), self.psi(), init)
        return init.with_prefactor(r)

    def grid(self) -> Grid1D:
        v = self.values
        return Grid1D(v["grid.x_min"], v["grid.x_max"], v["grid.n"])

    def limit_dt(self, init=None, grid=None) -> float:
        v = self.values
        if v["time.limit_dt"] != "auto":
            return v["time.limit_dt"]
        return auto_limit_dt(init or self.init(), grid or self.grid(), v["time.snapshot_dt"])


def consistent_prefactor(model, psi, init) -> float:
    """Prefactor r whose Laplace-limit intake equals the neutral intake at the peak of u0."""
    x0 = init.peak
    curv = -float(init.derivs(x0, 2)[2])
    I0 = optimal_intake(model, x0)[0]
    return I0 / (math.sqrt(2.0 * math.pi / curv) * float(psi(x0)))


def _cross_checks(v, problems, where):
    if v["grid.x_max"] <= v["grid.x_min"]:
        problems.append(f"{where('grid.x_max')}: grid.x_max must exceed grid.x_min")
    eps = v["sweep.eps_list"]
    if not eps:
        problems.append(f"{where('sweep.eps_list')}: sweep.eps_list is empty")
    elif any(not e > 0 for e in eps):
        problems.append(f"{where('sweep.eps_list')}: sweep.eps_list entries must be > 0")
    elif any(b >= a for a, b in zip(eps, eps[1:])):
        problems.append(f"{where('sweep.eps_list')}: sweep.eps_list must be strictly decreasing")
    if v["psi.kind"] == "smooth" and not v["psi.c0"] - abs(v["psi.c1"]) > 0:
        problems.append(f"{where('psi.c0')}: psi.c0 - |psi.c1| must be > 0 (aspsi)")
    T, sdt = v["time.T"], v["time.snapshot_dt"]
    if T > 0 and sdt > 0 and abs(T / sdt - round(T / sdt)) > 1e-9:
        problems.append(f"{where('time.snapshot_dt')}: time.snapshot_dt must divide time.T")
    ldt = v["time.limit_dt"]
    if ldt != "auto" and sdt > 0 and ldt > 0 and abs(sdt / ldt - round(sdt / ldt)) > 1e-9:
        problems.append(f"{where('time.limit_dt')}: time.limit_dt must divide time.snapshot_dt")


def parse_text(text: str, source="<text>", overrides=()) -> RunConfig:
    problems = []
    raw, lines = {}, {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(f"{source}:{no}: expected 'section.key = value', got {body!r}")
            continue
        key, val = (s.strip() for s in body.split("=", 1))
        if key in raw:
            problems.append(f"{source}:{no}: duplicate key {key}")
        raw[key], lines[key] = val, f"{source}:{no}"
    for item in overrides:
        if "=" not in item:
            problems.append(f"--set {item!r}: expected key=value")
            continue
        key, val = (s.strip() for s in item.split("=", 1))
        raw[key], lines[key] = val, f"--set {key}"

    def where(k):
        return lines.get(k, source)

    values = {}
    for key, val in raw.items():
        if key not in SCHEMA:
            problems.append(f"{where(key)}: unknown key {key}")
            continue
        kind, _, check, need = SCHEMA[key]
        try:
            v = _convert(kind, val)
        except ValueError as exc:
            problems.append(f"{where(key)}: {key} = {val!r} has the wrong type ({kind}): {exc}")
            continue
        if check is not None and v != "auto" and not isinstance(v, tuple) and not check(v):
            problems.append(f"{where(key)}: {key} = {val} is out of range, must be {need}")
            continue
        values[key] = v
    for key, (kind, default, _, _) in SCHEMA.items():
        if key in values or key in raw:
            continue
        if default is None:
            problems.append(f"{source}: missing required key {key}")
        else:
            values[key] = default
    if not problems:
        _cross_checks(values, problems, where)
    if problems:
        raise ValidationError(f"{len(problems)} configuration problem(s):\n  " + "\n  ".join(problems), problems)
    return RunConfig(values, source, lines)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")
    return resources.files("selmut").joinpath("presets", f"{name}.cfg").read_text(encoding="utf-8")


def parse_config(path, overrides=()) -> RunConfig:
    """Read a config file, or a bundled preset when ``path`` is a preset name."""
    p = Path(path)
    if p.exists():
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read {p}: {exc}") from exc
        return parse_text(text, str(p), overrides)
    if str(path) in PRESETS:
        return parse_text(preset_text(str(path)), f"preset:{path}", overrides)
    raise ValidationError(f"no such config file or preset: {path}")
