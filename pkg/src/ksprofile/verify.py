"""The acceptance suite: ten numbered checks, each returning pass/fail with
the measured quantities.

Criteria 7, 8 and 10 share one canonical blow-up run (n=3, m=q=1,
N=512, graded mesh, Gaussian bump of reduced mass 10 and width 0.5),
computed once per :class:`Suite`.  Randomised criteria draw from one
seeded generator, so a suite is fully determined by its seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from .exponents import (
    ModelParams,
    admissible_scalar,
    critical_alpha,
    ehrling_exponent,
    iteration_exponents,
    lower_bound_alpha,
    moser_schedule,
    scalar_alpha_threshold,
    sobolev_exponent,
)
from .grid import build_graded_grid, radial_laplacian
from .report import Verdict
from .scenario import parse_scenario
from .solver import FieldState, KineticFunctions, replay

CANONICAL_BLOWUP = """\
n = 3
m = 1
q = 1
grid.N = 512
grid.grading = 1.01
init.mass = 10
init.width = 0.5
analysis.alpha = 6.5
"""

BOUNDED_TWIN = """\
n = 3
m = 2
q = 1
eta = 0.5
kinetics.eta_floor = true
grid.N = 256
grid.grading = 1
init.mass = 2
init.width = 0.3
solver.t_end = 1
solver.dt_init = 1e-5
solver.record_every = 0.01
mode = twin
mode.delta = 1e-6
"""


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} {self.name}: {'PASS' if self.passed else 'FAIL'}"


class Suite:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._blowup = None

    def blowup(self):
        """Canonical blow-up run, with every accepted state checked for sign."""
        if self._blowup is None:
            scenario = parse_scenario(CANONICAL_BLOWUP)
            mins = [math.inf, math.inf]

            def watch(state, dt):
                mins[0] = min(mins[0], float(state.u.min()))
                mins[1] = min(mins[1], float(state.v.min()))
            result = ex.simulate(scenario, observer=watch)
            self._blowup = (scenario, result, tuple(mins))
        return self._blowup

    # 1
    def exponent_reproduction(self):
        d = {"n3_m1_q1": critical_alpha(ModelParams(n=3, m=1, q=1))}
        ok = d["n3_m1_q1"] == 6
        for n in range(2, 7):
            val = critical_alpha(ModelParams(n=n, m=1, q=1))
            d[f"n{n}_equal"] = val
            ok &= val == n * (n - 1)
            # m - q = (n-2)/n with q = 1
            edge = critical_alpha(ModelParams(n=n, m=1 + (n - 2) / n, q=1))
            d[f"n{n}_edge"] = edge
            ok &= edge == n
        return ok, d

    def _random_admissible(self):
        rng = self.rng
        while True:
            n = int(rng.integers(2, 6))
            p = float(rng.uniform(1, 3))
            theta = float(rng.uniform(n, 50))
            if theta <= n:
                continue
            beta = float(rng.uniform(0.05, 3 * n))
            lo = p / theta - p / n
            hi = p / theta + (beta * p - p) / n
            if hi <= lo:
                continue
            d = float(rng.uniform(lo, hi))
            m = max((n - 2 * p) / n, 0.0) + float(rng.uniform(1e-3, 3))
            params = ModelParams(n=n, m=m, q=m - d, p_mass=p, theta=theta, beta=beta)
            if admissible_scalar(params):
                return params

    # 2
    def iteration_bounds(self, samples: int = 10_000):
        violations = 0
        worst_gap = math.inf
        for _ in range(samples):
            params = self._random_admissible()
            alpha = scalar_alpha_threshold(params) * float(self.rng.uniform(1.001, 10))
            it = iteration_exponents(params, alpha)
            sob = sobolev_exponent(params.n)
            for lam, kappa in zip(it.lam, it.kappa):
                if not 1 < lam < math.inf:
                    violations += 1
                    continue
                lhs = 2 * kappa * lam / (lam - 1)
                if not lhs < sob:
                    violations += 1
                elif math.isfinite(sob):
                    worst_gap = min(worst_gap, sob - lhs)
        return violations == 0, {"samples": samples, "violations": violations,
                                 "min_sobolev_gap": worst_gap}

    # 3
    def moser(self):
        violations = 0
        for m, s in ((1, 0.5), (2, 0.5), (3, 0.25), (0.5, 0.5)):
            sch = moser_schedule(m, s, J=40)
            p = sch.p_seq
            for j in range(1, len(p)):
                if p[j] != (p[j - 1] + 1 - (m - 1) * s) / s:
                    violations += 1
            for j, (lo, val, hi) in enumerate(zip(sch.lower_bounds(), p, sch.upper_bounds())):
                if not lo <= val <= hi:
                    violations += 1
        return violations == 0, {"violations": violations}

    # 4
    def ehrling(self, samples: int = 1000):
        bad = 0
        for _ in range(samples):
            n = int(self.rng.integers(2, 8))
            sob = sobolev_exponent(n)
            top = sob if math.isfinite(sob) else 50.0
            s = float(self.rng.uniform(0.01, top * 0.99))
            r = float(self.rng.uniform(s, top))
            if not s < r < sob:
                continue
            a = ehrling_exponent(n, s, r)
            bad += not 0 < a < 1
        exact_val = ehrling_exponent(2, 1, 2)
        return bad == 0 and exact_val == 0.5, {"violations": bad, "a_2_1_2": exact_val}

    # 5
    def discretization_order(self):
        errors = []
        for N in (64, 128, 256, 512):
            grid = build_graded_grid(1.0, N, 1.0, 3)
            r = grid.centers
            exact_lap = -np.pi**2 * np.cos(np.pi * r) - 2 * np.pi * np.sin(np.pi * r) / r
            errors.append(float(np.abs(radial_laplacian(grid, np.cos(np.pi * r)) - exact_lap).max()))
        orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
        return min(orders) >= 1.9, {"errors": errors, "orders": orders}

    # 6
    def decoupled_oracle(self, c: float = 2.0, vbar: float = 0.5, dt: float = 1e-4, N: int = 128):
        grid = build_graded_grid(1.0, N, 1.0, 3)
        kin = KineticFunctions(D=lambda u, v: np.ones_like(u), S=lambda u, v: np.zeros_like(u),
                               g=lambda u: u, m=1.0, q=1.0, K_D1=1.0, K_D2=1.0, K_S=0.0, K_g=1.0,
                               label="decoupled")
        worst = [0.0]

        def check(state, _dt):
            ref = c + (vbar - c) * math.exp(-state.t)
            worst[0] = max(worst[0], float(np.abs(state.v - ref).max()))
        replay(grid, kin, None, FieldState(np.full(N, c), np.full(N, vbar)),
               [dt] * int(round(1.0 / dt)), observer=check)
        return worst[0] < 1e-6, {"max_error": worst[0]}

    # 7
    def conservation(self):
        _, result, mins = self.blowup()
        stats = result.report.stats
        clipped = stats["clipped_u"]
        d = {"verdict": str(result.report.verdict), "steps": stats["steps"],
             "max_mass_drift": stats["max_mass_drift"], "min_u": mins[0], "min_v": mins[1],
             "min_u_unclipped": stats["min_u"], "min_v_unclipped": stats["min_v"],
             "clipped_u": clipped, "initial_mass": stats["initial_mass"]}
        ok = (result.report.verdict is Verdict.BLOWN_UP and stats["max_mass_drift"] < 1e-10
              and mins[0] >= 0 and mins[1] >= 0 and clipped < 1e-8 * stats["initial_mass"])
        return ok, d

    # 8
    def regularization_agreement(self):
        scenario, _, _ = self.blowup()
        _, _, summary = ex.regularized_agreement(scenario)
        ok = summary["max_deviation"] < 1e-8 and summary["cutoff"] >= 2 * summary["plain_max_sup"] * (1 - 1e-12)
        return ok, summary

    # 9
    def uniqueness(self):
        scenario = parse_scenario(BOUNDED_TWIN)
        res = ex.twin(scenario, scenario["mode.delta"])
        ratios = res.diff_half / res.diff
        rel = abs(res.C_hat_half - res.C_hat) / abs(res.C_hat)
        ok = (res.verdict is Verdict.COMPLETED and rel <= 0.2
              and bool(np.all((ratios >= 0.4) & (ratios <= 0.6))))
        return ok, {"verdict": str(res.verdict), "C_hat": res.C_hat, "C_hat_half": res.C_hat_half,
                    "relative_gap": rel, "ratio_min": float(ratios.min()),
                    "ratio_max": float(ratios.max()), "samples": len(ratios)}

    # 10
    def profile_bounds(self):
        scenario, result, _ = self.blowup()
        rep = result.report
        wsup = rep.column("wsup_6.5")
        sup = rep.column("sup_u")
        w_ratio = float(wsup[-1] / np.median(wsup))
        s_ratio = float(sup[-1] / np.median(sup))
        p_star = rep.fit.slope if rep.fit is not None else math.nan
        floor = lower_bound_alpha(1, 1) - 0.5
        ok = (rep.verdict is Verdict.BLOWN_UP and w_ratio < 1e2 and s_ratio > 1e6
              and bool(result.profile_ok) and p_star >= floor)
        return ok, {"weighted_ratio": w_ratio, "sup_ratio": s_ratio,
                    "cauchy_passed": bool(result.profile_ok), "cauchy_worst": max(result.cauchy.values()),
                    "p_star": p_star, "p_star_floor": floor, "t_low": rep.bracket[0],
                    "t_high": rep.bracket[1]}

    CRITERIA = (
        (1, "exponent_reproduction"),
        (2, "iteration_bounds"),
        (3, "moser"),
        (4, "ehrling"),
        (5, "discretization_order"),
        (6, "decoupled_oracle"),
        (7, "conservation"),
        (8, "regularization_agreement"),
        (9, "uniqueness"),
        (10, "profile_bounds"),
    )

    def run_one(self, number: int) -> CriterionResult:
        name = dict(self.CRITERIA)[number]
        start = time.perf_counter()
        passed, details = getattr(self, name)()
        return CriterionResult(number, name, bool(passed), details, time.perf_counter() - start)

    def run_all(self, on_result=None) -> list[CriterionResult]:
        results = []
        for number, _ in self.CRITERIA:
            res = self.run_one(number)
            results.append(res)
            if on_result is not None:
                on_result(res)
        return results


def report_items(results, seed):
    """Deterministic report content: no timings, no timestamps."""
    items = [("seed", seed)]
    for res in results:
        prefix = f"criterion.{res.number}"
        items.append((f"{prefix}.name", res.name))
        items.append((f"{prefix}.passed", res.passed))
        items += [(f"{prefix}.{k}", v) for k, v in res.details.items()]
    items.append(("all_passed", all(r.passed for r in results)))
    return items


def write_report(results, seed, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.txt"
    ex.write_kv(path, report_items(results, seed))
    return path
