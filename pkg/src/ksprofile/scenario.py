"""Scenario documents: flat ``key = value`` lines.

Blank lines and ``#`` comments are ignored.  Model keys sit at the top
level, everything else under a dotted section prefix::

    n = 3
    m = 1
    q = 1
    grid.N = 512
    solver.t_end = 0.5
    analysis.alpha = 6.5, 7
    mode = plain

Unknown and duplicate keys are errors.  :data:`KEYS` lists every key with
its default; ``None`` defaults are resolved from other keys (see
:func:`parse_scenario`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import DegenerateDenominator, ParseError, ValidationError
from .exponents import ModelParams, critical_alpha
from .solver import SolverConfig

# key -> (type, default, help)
KEYS: dict[str, tuple[str, object, str]] = {
    "n": ("int", 3, "spatial dimension"),
    "R": ("float", 1.0, "ball radius"),
    "m": ("float", 1.0, "diffusion exponent"),
    "q": ("float", 1.0, "sensitivity exponent"),
    "eta": ("float", 1.0, "diffusivity floor (used when kinetics.eta_floor is true)"),
    "p_mass": ("float", 1.0, "exponent of the conserved norm"),
    "theta": ("float", None, "gradient integrability exponent; default 4n"),
    "beta": ("float", None, "gradient weight exponent; default n - 1/2"),
    "M": ("float", None, "mass bound; default: reduced initial mass"),
    "L": ("float", 1.0, "initial-data bound"),
    "kinetics": ("str", "prototype", "prototype | table"),
    "kinetics.table": ("str", "", "CSV with columns u,D,S (kinetics = table)"),
    "kinetics.eta_floor": ("bool", False, "floor D at eta"),
    "init.mass": ("float", 10.0, "reduced mass of the initial bump"),
    "init.width": ("float", 0.5, "Gaussian width of the initial bump (absolute)"),
    "init.v0": ("float", 0.0, "constant initial signal level"),
    "grid.N": ("int", 512, "number of cells"),
    "grid.grading": ("float", 1.01, "ratio of adjacent cell widths"),
    "analysis.alpha": ("floats", None, "weights for weighted_sup; default critical_alpha + 0.5"),
    "analysis.theta": ("float", None, "theta of the gradient monitor; default model theta"),
    "analysis.beta": ("float", None, "beta of the gradient monitor; default model beta"),
    "analysis.r_in": ("float", None, "inner fitting radius; default 0.05 R"),
    "analysis.r_out": ("float", None, "outer fitting radius; default 0.3 R"),
    "analysis.r_cut": ("float", None, "Cauchy-check radius; default 0.2 R"),
    "analysis.profile_tol": ("float", 1e-3, "Cauchy-check tolerance (relative)"),
    "analysis.margin": ("float", 0.5, "exponent margin of the bound flags"),
    "analysis.check_bounds": ("bool", False, "require alphas above critical_alpha"),
    "mode": ("str", "plain", "plain | regularized | twin | sweep"),
    "mode.epsilon": ("float", None, "truncation parameter for regularized mode; default 1/(2 max sup) of the paired plain run"),
    "mode.delta": ("float", 1e-6, "L2 size of the twin perturbation"),
    "mode.perturb": ("str", "u", "twin perturbation target: u | v"),
    "sweep.mass": ("floats", None, "sweep values of init.mass"),
    "sweep.width": ("floats", None, "sweep values of init.width"),
    "sweep.m": ("floats", None, "sweep values of m"),
    "sweep.q": ("floats", None, "sweep values of q"),
}
for _f in fields(SolverConfig):
    KEYS[f"solver.{_f.name}"] = (
        "int" if isinstance(_f.default, int) else "float",
        _f.default,
        "solver control",
    )

MODES = ("plain", "regularized", "twin", "sweep")


def _convert(kind, raw, key, line):
    try:
        if kind == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ParseError(f"cannot read {raw!r} as {kind}", line=line, key=key) from None


def parse_document(text: str) -> dict:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ParseError("unknown key", line=lineno, key=key)
        if key in values:
            raise ParseError("duplicate key", line=lineno, key=key)
        if not raw:
            raise ParseError("missing value", line=lineno, key=key)
        values[key] = _convert(KEYS[key][0], raw, key, lineno)
    return values


@dataclass(frozen=True)
class Scenario:
    params: ModelParams
    values: dict = field(compare=False)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def mode(self) -> str:
        return self.values["mode"]

    def solver_config(self) -> SolverConfig:
        kw = {f.name: self.values[f"solver.{f.name}"] for f in fields(SolverConfig)}
        return SolverConfig(**kw)

    def with_values(self, **updates) -> "Scenario":
        """Copy with some keys replaced (keys use ``__`` for dots)."""
        values = dict(self.values)
        resolved = {k.replace("__", "."): v for k, v in updates.items()}
        for key in resolved:
            if key not in KEYS:
                raise ValidationError(f"unknown key {key!r}")
        explicit = {k: v for k, v in values.items() if k in self.values.get("_explicit", ())}
        explicit.update(resolved)
        return build_scenario(explicit)

    def items(self):
        """Resolved (key, value) pairs in declaration order."""
        return [(k, self.values[k]) for k in KEYS]


def build_scenario(values: dict) -> Scenario:
    explicit = tuple(k for k in values if k in KEYS)
    v = {k: values.get(k, spec[1]) for k, spec in KEYS.items()}
    mode = v["mode"]
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if v["kinetics"] not in ("prototype", "table"):
        raise ValidationError(f"kinetics must be prototype or table, got {v['kinetics']!r}")
    if v["kinetics"] == "table" and not v["kinetics.table"]:
        raise ValidationError("kinetics = table requires kinetics.table")
    if v["M"] is None:
        v["M"] = v["init.mass"]
    params = ModelParams(n=v["n"], R=v["R"], m=v["m"], q=v["q"], eta=v["eta"],
                         p_mass=v["p_mass"], theta=v["theta"], beta=v["beta"],
                         M=v["M"], L=v["L"])
    v["theta"] = params.theta
    v["beta"] = params.beta
    R = params.R
    for key, frac in (("analysis.r_in", 0.05), ("analysis.r_out", 0.3), ("analysis.r_cut", 0.2)):
        if v[key] is None:
            v[key] = frac * R
    if v["analysis.theta"] is None:
        v["analysis.theta"] = float(params.theta)
    if v["analysis.beta"] is None:
        v["analysis.beta"] = float(params.beta)
    try:
        crit = critical_alpha(params)
    except DegenerateDenominator:
        crit = None
    if v["analysis.alpha"] is None:
        v["analysis.alpha"] = () if crit is None else (crit + 0.5,)
    if v["analysis.check_bounds"]:
        if crit is None:
            raise ValidationError("analysis.check_bounds needs a finite critical_alpha")
        low = [a for a in v["analysis.alpha"] if not a > crit]
        if low:
            raise ValidationError(
                f"analysis.alpha values {low} must exceed critical_alpha = {crit!r}"
            )
    if any(a < 0 for a in v["analysis.alpha"]):
        raise ValidationError("analysis.alpha values must be >= 0")
    if not 0 < v["analysis.r_in"] < v["analysis.r_out"] <= R:
        raise ValidationError("need 0 < analysis.r_in < analysis.r_out <= R")
    if mode == "regularized" and v["mode.epsilon"] is not None and not 0 < v["mode.epsilon"] < 1:
        raise ValidationError("regularized mode requires mode.epsilon in (0, 1)")
    if mode == "twin":
        if not v["mode.delta"] >= 0:
            raise ValidationError("mode.delta must be >= 0")
        if v["mode.perturb"] not in ("u", "v"):
            raise ValidationError("mode.perturb must be u or v")
    if mode == "sweep" and not any(v[k] for k in ("sweep.mass", "sweep.width", "sweep.m", "sweep.q")):
        raise ValidationError("sweep mode needs at least one sweep.* range")
    if not v["init.mass"] > 0 or not v["init.width"] > 0 or v["init.v0"] < 0:
        raise ValidationError("need init.mass > 0, init.width > 0, init.v0 >= 0")
    if not v["grid.N"] >= 8 or not 1.0 <= v["grid.grading"] <= 1.2:
        raise ValidationError("need grid.N >= 8 and grid.grading in [1, 1.2]")
    v["_explicit"] = explicit
    scenario = Scenario(params=params, values=v)
    scenario.solver_config().validate()
    if not math.isfinite(v["solver.t_end"]):
        raise ValidationError("solver.t_end must be finite")
    return scenario


def parse_scenario(text: str) -> Scenario:
    return build_scenario(parse_document(text))


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())
