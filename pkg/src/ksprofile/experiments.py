"""Experiment orchestration behind the CLI subcommands."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import profile
from .errors import KSError, NotCauchy
from .grid import RadialGrid, build_graded_grid
from .report import RunReport, Verdict
from .scenario import Scenario
from .solver import (
    FieldState,
    MonitorSpec,
    RegularizationParams,
    prototype_kinetics,
    replay,
    run,
    tabulated_kinetics,
)

logger = logging.getLogger(__name__)


def fmt(value) -> str:
    """Shortest round-trip text for report values."""
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if value.is_integer() and abs(value) < 2**53:
            return str(int(value))
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(fmt(x) for x in value)
    return str(value)


def write_kv(path: Path, items) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in items:
            fh.write(f"{key}={fmt(value)}\n")


def write_columns(path: Path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([fmt(x) for x in row])


def build_grid(scenario: Scenario) -> RadialGrid:
    return build_graded_grid(scenario.params.R, scenario["grid.N"], scenario["grid.grading"],
                             scenario.params.n)


def build_kinetics(scenario: Scenario):
    p = scenario.params
    eta = p.eta if scenario["kinetics.eta_floor"] else None
    if scenario["kinetics"] == "prototype":
        return prototype_kinetics(p.m, p.q, eta)
    data = np.genfromtxt(scenario["kinetics.table"], delimiter=",", names=True)
    return tabulated_kinetics(data["u"], data["D"], data["S"], m=p.m, q=p.q,
                              K_D1=float(np.min(data["D"])), K_D2=float(np.max(data["D"])),
                              K_S=float(np.max(np.abs(data["S"]) / np.maximum(data["u"], 1.0) ** p.q)))


def initial_state(scenario: Scenario, grid: RadialGrid) -> FieldState:
    """Gaussian bump exp(-(r/width)^2) scaled to the requested reduced mass."""
    bump = np.exp(-((grid.centers / scenario["init.width"]) ** 2))
    u0 = bump * (scenario["init.mass"] / grid.mass(bump))
    v0 = np.full(grid.N, float(scenario["init.v0"]))
    return FieldState(u0, v0)


def monitor_spec(scenario: Scenario) -> MonitorSpec:
    return MonitorSpec(alphas=tuple(scenario["analysis.alpha"]),
                       theta=scenario["analysis.theta"], beta=scenario["analysis.beta"])


@dataclass
class SimulationResult:
    scenario: Scenario
    report: RunReport
    profile_ok: bool | None = None
    profile_error: str = ""
    cauchy: dict = field(default_factory=dict)
    bounds: profile.BoundsVerdict | None = None
    agreement: dict | None = None


def analyse(scenario: Scenario, report: RunReport) -> SimulationResult:
    result = SimulationResult(scenario, report)
    if report.verdict is not Verdict.BLOWN_UP:
        return result
    grid = report.grid
    if len(report.snapshots) >= 2:
        result.cauchy = profile.snapshot_distance(grid, report.snapshots[-2], report.snapshots[-1],
                                                  scenario["analysis.r_cut"])
    try:
        U, V, t_prof = profile.extract_profile(report, r_cut=scenario["analysis.r_cut"],
                                               profile_tol=scenario["analysis.profile_tol"])
        result.profile_ok = True
    except NotCauchy as exc:
        result.profile_ok = False
        result.profile_error = str(exc)
        U = report.final.u
    alphas = scenario["analysis.alpha"]
    try:
        fit = profile.fit_decay_exponent(grid, U, (scenario["analysis.r_in"], scenario["analysis.r_out"]),
                                         alpha=alphas[0] if alphas else None)
        report.fit = fit
        result.bounds = profile.check_profile_bounds(fit, scenario.params, scenario["analysis.margin"])
    except KSError as exc:
        result.profile_error = (result.profile_error + "; " if result.profile_error else "") + str(exc)
    return result


def simulate(scenario: Scenario, reg: RegularizationParams | None = None, observer=None) -> SimulationResult:
    grid = build_grid(scenario)
    report = run(grid, build_kinetics(scenario), reg, initial_state(scenario, grid),
                 scenario.solver_config(), monitor_spec(scenario), observer=observer)
    if scenario.params.m < 1 and not scenario["kinetics.eta_floor"]:
        report.notes.append("m < 1 without a diffusivity floor: D >= eta > 0 fails, so the "
                            "nondegeneracy needed for profile existence is not met")
    return analyse(scenario, report)


def regularized_agreement(scenario: Scenario, epsilon: float | None = None):
    """Paired plain and regularized runs compared step by step.

    Without ``epsilon`` the truncation level is 1/eps = 2 x (max sup-norm of
    the plain run).  Returns ``(plain, regularized, summary)``.
    """
    plain_states = []
    plain = simulate(scenario, observer=lambda s, dt: plain_states.append((s.t, s.u.copy(), s.v.copy())))
    max_sup = plain.report.stats["max_sup"]
    if epsilon is None:
        epsilon = min(0.5, 1.0 / (2.0 * max_sup))
    reg = RegularizationParams(epsilon)
    reg_states = []
    regd = simulate(scenario, reg, observer=lambda s, dt: reg_states.append((s.t, s.u.copy(), s.v.copy())))
    n = min(len(plain_states), len(reg_states))
    dev = 0.0
    t_dev = 0.0
    for (tp, up, vp), (tr, ur, vr) in zip(plain_states[:n], reg_states[:n]):
        d = max(np.abs(up - ur).max(), np.abs(vp - vr).max(), abs(tp - tr))
        if d > dev:
            dev, t_dev = d, tp
    summary = {
        "epsilon": epsilon,
        "cutoff": 1.0 / epsilon,
        "plain_max_sup": max_sup,
        "plain_steps": len(plain_states),
        "regularized_steps": len(reg_states),
        "common_horizon": plain_states[n - 1][0] if n else 0.0,
        "max_deviation": dev,
        "t_max_deviation": t_dev,
        "lockstep": len(plain_states) == len(reg_states),
    }
    regd.agreement = summary
    return plain, regd, summary


def _unit_bump(grid: RadialGrid, center: float, width: float) -> np.ndarray:
    phi = np.exp(-(((grid.centers - center) / width) ** 2))
    return phi / math.sqrt(grid.mass(phi**2))


def l2_norm(grid: RadialGrid, field) -> float:
    return math.sqrt(grid.mass(np.asarray(field) ** 2))


@dataclass
class TwinResult:
    delta: float
    times: np.ndarray
    diff: np.ndarray
    diff_u: np.ndarray
    diff_half: np.ndarray
    C_hat: float
    C_hat_half: float
    envelope: float
    verdict: Verdict


def _growth_rate(times, diff, delta):
    mask = diff > 0
    if delta <= 0 or mask.sum() < 2:
        return math.nan
    return float(np.polyfit(times[mask], np.log(diff[mask] / delta), 1)[0])


def twin(scenario: Scenario, delta: float, perturb: str = "u", *, samples: int = 200) -> TwinResult:
    """Base run plus replays from data perturbed by ``delta`` and ``delta/2``.

    The perturbation is a Gaussian bump of unit reduced L2 norm centred at
    R/2, added to u0 or v0.  Replays reuse the base run's step sizes, so all
    three trajectories share one time grid.  Differences are L2 norms of
    the combined (u, v) difference.  Prototype kinetics always get the
    diffusivity floor ``eta`` here, since the Gronwall argument needs D >= eta.
    """
    if scenario["kinetics"] == "prototype" and not scenario["kinetics.eta_floor"]:
        scenario = scenario.with_values(kinetics__eta_floor=True)
    grid = build_grid(scenario)
    kin = build_kinetics(scenario)
    base0 = initial_state(scenario, grid)
    dts = []
    report = run(grid, kin, None, base0, scenario.solver_config(), monitor_spec(scenario),
                 observer=lambda s, dt: dts.append(dt))
    phi = _unit_bump(grid, 0.5 * grid.R, 0.1 * grid.R)
    stride = max(1, len(dts) // samples)

    def trajectory(d):
        start = base0.copy()
        if perturb == "u":
            start.u = start.u + d * phi
        else:
            start.v = start.v + d * phi
        out = [(start.t, start.u.copy(), start.v.copy())]

        def keep(state, dt):
            if state.step_count % stride == 0 or state.step_count == len(dts):
                out.append((state.t, state.u.copy(), state.v.copy()))
        replay(grid, kin, None, start, dts, observer=keep)
        return out

    base = trajectory(0.0)
    full = trajectory(delta)
    half = trajectory(0.5 * delta)
    times = np.array([s[0] for s in base])

    def distances(other):
        both = np.array([math.hypot(l2_norm(grid, a[1] - b[1]), l2_norm(grid, a[2] - b[2]))
                         for a, b in zip(base, other)])
        only_u = np.array([l2_norm(grid, a[1] - b[1]) for a, b in zip(base, other)])
        return both, only_u

    diff, diff_u = distances(full)
    diff_half, _ = distances(half)
    C = _growth_rate(times, diff, delta)
    C_half = _growth_rate(times, diff_half, 0.5 * delta)
    if delta > 0 and math.isfinite(C):
        envelope = float(np.max(diff / (delta * np.exp(C * times))))
    else:
        envelope = math.nan
    return TwinResult(delta=delta, times=times, diff=diff, diff_u=diff_u, diff_half=diff_half,
                      C_hat=C, C_hat_half=C_half, envelope=envelope, verdict=report.verdict)


def sweep_cells(scenario: Scenario):
    """Cartesian product over the sweep ranges in (mass, width, m, q) order."""
    axes = []
    for key, target in (("sweep.mass", "init.mass"), ("sweep.width", "init.width"),
                        ("sweep.m", "m"), ("sweep.q", "q")):
        values = scenario[key] or (scenario[target],)
        axes.append([(target, v) for v in values])
    return [dict(combo) for combo in itertools.product(*axes)]


def sweep_row(scenario: Scenario, cell: dict, index: int, out_dir: Path | None = None) -> dict:
    row = {"cell": index, **{k: cell[k] for k in ("init.mass", "init.width", "m", "q")}}
    try:
        sub = scenario.with_values(mode="plain", **{k.replace(".", "__"): v for k, v in cell.items()})
        result = simulate(sub)
        rep = result.report
        row.update(verdict=str(rep.verdict), t_final=rep.t_final,
                   t_low=rep.bracket[0] if rep.bracket else None,
                   t_high=rep.bracket[1] if rep.bracket else None,
                   max_sup=rep.stats["max_sup"],
                   p_star=rep.fit.slope if rep.fit else None,
                   lower_ok=result.bounds.lower_consistent if result.bounds else None,
                   upper_ok=result.bounds.upper_consistent if result.bounds else None,
                   error="")
        if out_dir is not None:
            write_simulation(result, out_dir / f"cell_{index:04d}")
    except KSError as exc:
        row.update(verdict=str(Verdict.FAILED), t_final=None, t_low=None, t_high=None,
                   max_sup=None, p_star=None, lower_ok=None, upper_ok=None,
                   error=str(exc).replace(",", ";"))
    return row


SWEEP_COLUMNS = ["cell", "init.mass", "init.width", "m", "q", "verdict", "t_final", "t_low",
                 "t_high", "max_sup", "p_star", "lower_ok", "upper_ok", "error"]


def _sweep_job(args):
    return sweep_row(*args)


def sweep(scenario: Scenario, jobs: int = 1, out_dir: Path | None = None):
    """Yield one result row per sweep cell, in cell order."""
    cells = sweep_cells(scenario)
    tasks = [(scenario, cell, i, out_dir) for i, cell in enumerate(cells)]
    if jobs <= 1:
        for task in tasks:
            yield _sweep_job(task)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_sweep_job, tasks)


def report_items(result: SimulationResult):
    """Flat key/value content of ``report.txt``."""
    rep = result.report
    items = [(f"scenario.{k}", v) for k, v in result.scenario.items()]
    items += [
        ("verdict", str(rep.verdict)),
        ("reason", rep.reason),
        ("t_final", rep.t_final),
        ("grid.h_min", float(rep.grid.widths[0])),
        ("grid.h_max", float(rep.grid.widths[-1])),
    ]
    for key in sorted(rep.stats):
        items.append((f"stats.{key}", rep.stats[key]))
    items.append(("snapshots", len(rep.snapshots)))
    if rep.bracket is not None:
        items += [("blowup.t_low", rep.bracket[0]), ("blowup.t_high", rep.bracket[1])]
    series = rep.series
    for key in series:
        if key.startswith("wsup_") or key in ("grad_norm", "v_grad_sup", "sup_u"):
            col = np.asarray(series[key], dtype=float)
            items += [(f"series.{key}.max", float(col.max())), (f"series.{key}.final", float(col[-1]))]
    if result.cauchy:
        for key in sorted(result.cauchy):
            items.append((f"cauchy.{key}", result.cauchy[key]))
    if result.profile_ok is not None:
        items.append(("profile.cauchy_passed", result.profile_ok))
    if result.profile_error:
        items.append(("profile.error", result.profile_error))
    if rep.fit is not None:
        items += fit_items(rep.fit)
    if result.bounds is not None:
        b = result.bounds
        items += [("bounds.critical_alpha", b.critical_alpha), ("bounds.lower_bound_alpha", b.lower_bound_alpha),
                  ("bounds.margin", b.margin), ("bounds.upper_consistent", b.upper_consistent),
                  ("bounds.lower_consistent", b.lower_consistent)]
    if result.agreement is not None:
        items += [(f"agreement.{k}", v) for k, v in result.agreement.items()]
    items += [(f"note.{i}", note) for i, note in enumerate(rep.notes)]
    return items


def fit_items(fit: profile.ProfileFit):
    return [("fit.r_in", fit.annulus[0]), ("fit.r_out", fit.annulus[1]), ("fit.cells", fit.cells),
            ("fit.p_star", fit.slope), ("fit.intercept", fit.intercept), ("fit.residual", fit.residual),
            ("fit.alpha", fit.alpha), ("fit.C_alpha", fit.C_alpha)]


def write_simulation(result: SimulationResult, out_dir) -> list[Path]:
    """Emit report.txt, series.csv, snapshots/ and, for blow-up runs,
    profile.csv and fit.txt."""
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    rep = result.report
    grid = rep.grid
    written = [out / "report.txt", out / "series.csv"]
    write_kv(out / "report.txt", report_items(result))
    write_columns(out / "series.csv", list(rep.series), list(rep.series.values()))
    index_rows = []
    for snap in rep.snapshots:
        path = out / "snapshots" / f"snapshot_{snap.index:04d}.csv"
        write_columns(path, ["r", "u", "v"], [grid.centers, snap.u, snap.v])
        index_rows.append((snap.index, snap.t, snap.sup, path.name))
        written.append(path)
    write_columns(out / "snapshots" / "index.csv", ["index", "t", "sup_u", "file"],
                  list(zip(*index_rows)))
    if rep.verdict is Verdict.BLOWN_UP:
        last = rep.final
        write_columns(out / "profile.csv", ["r", "U", "V"], [grid.centers, last.u, last.v])
        written.append(out / "profile.csv")
        if rep.fit is not None:
            write_kv(out / "fit.txt", fit_items(rep.fit))
            written.append(out / "fit.txt")
    return written
