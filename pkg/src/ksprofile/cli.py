"""``ksprofile`` command line: exponents, simulate, twin, sweep, verify.

Exit status: 0 success, 1 inadmissible parameters (exponents) or a failed
acceptance criterion (verify), 2 usage error, 3 parse error, 4 validation
error, 5 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import experiments as ex
from .errors import KSError, ParseError, ValidationError
from .exponents import derive_exponents
from .report import Verdict
from .scenario import KEYS, load_scenario

EXIT_OK = 0
EXIT_INADMISSIBLE = 1
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_SOLVER = 5


def _scenario(args):
    if args.config is None:
        raise ParseError("--config is required for this subcommand")
    try:
        return load_scenario(args.config)
    except OSError as exc:
        raise ParseError(f"cannot read {args.config}: {exc.strerror}") from None


def cmd_exponents(args) -> int:
    scenario = _scenario(args)
    derived = derive_exponents(scenario.params)
    lines = [f"{k}={ex.fmt(v)}" for k, v in derived.items()]
    lines += [f"note.{i}={note}" for i, note in enumerate(derived.notes)]
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "exponents.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if derived.admissible_ks else EXIT_INADMISSIBLE


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    if scenario.mode not in ("plain", "regularized"):
        raise ValidationError(f"simulate needs mode plain or regularized, got {scenario.mode!r}")
    if scenario.mode == "regularized":
        _, result, _ = ex.regularized_agreement(scenario, scenario["mode.epsilon"])
    else:
        result = ex.simulate(scenario)
    rep = result.report
    ex.write_simulation(result, args.out)
    print(f"verdict={rep.verdict}")
    print(f"t_final={ex.fmt(rep.t_final)}")
    if rep.bracket is not None:
        print(f"blowup.t_low={ex.fmt(rep.bracket[0])}")
        print(f"blowup.t_high={ex.fmt(rep.bracket[1])}")
    if rep.fit is not None:
        print(f"fit.p_star={ex.fmt(rep.fit.slope)}")
    if result.agreement is not None:
        print(f"agreement.max_deviation={ex.fmt(result.agreement['max_deviation'])}")
    print(f"output={args.out}")
    return EXIT_SOLVER if rep.verdict is Verdict.FAILED else EXIT_OK


def cmd_twin(args) -> int:
    scenario = _scenario(args)
    delta = scenario["mode.delta"]
    res = ex.twin(scenario, delta, scenario["mode.perturb"])
    stability = res.C_hat_half / res.C_hat if res.C_hat else math.nan
    items = [(f"scenario.{k}", v) for k, v in scenario.items()]
    items += [("verdict", str(res.verdict)), ("delta", delta), ("perturb", scenario["mode.perturb"]),
              ("samples", len(res.times)), ("C_hat", res.C_hat), ("C_hat_half", res.C_hat_half),
              ("halving_stability", stability), ("envelope", res.envelope),
              ("diff_max", float(res.diff.max())), ("diff_u_max", float(res.diff_u.max()))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_kv(out / "report.txt", items)
    with_ratio = [d_half / d if d > 0 else math.nan for d, d_half in zip(res.diff, res.diff_half)]
    ex.write_columns(out / "twin.csv", ["t", "diff", "diff_half", "diff_u", "half_ratio"],
                     [res.times, res.diff, res.diff_half, res.diff_u, with_ratio])
    for key, value in items[len(KEYS):]:
        print(f"{key}={ex.fmt(value)}")
    return EXIT_SOLVER if res.verdict is Verdict.FAILED else EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _scenario(args)
    if scenario.mode != "sweep":
        raise ValidationError(f"sweep needs mode = sweep, got {scenario.mode!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(",".join(ex.SWEEP_COLUMNS))
    with open(out / "sweep.csv", "w", newline="\n") as fh:
        fh.write(",".join(ex.SWEEP_COLUMNS) + "\n")
        for row in ex.sweep(scenario, args.jobs, out):
            line = ",".join(ex.fmt(row[c]) for c in ex.SWEEP_COLUMNS)
            fh.write(line + "\n")
            fh.flush()
            print(line, flush=True)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import Suite, write_report

    suite = Suite(args.seed)

    def show(res):
        print(f"{res.line()} ({res.seconds:.2f} s)", flush=True)
    results = suite.run_all(show)
    path = write_report(results, args.seed, args.out)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed; report: {path}")
    return EXIT_OK if passed == len(results) else EXIT_INADMISSIBLE


COMMANDS = {
    "exponents": (cmd_exponents, "print every derived exponent and the admissibility verdicts"),
    "simulate": (cmd_simulate, "run one scenario (plain or regularized) and write its reports"),
    "twin": (cmd_twin, "paired perturbed runs measuring the L2 growth rate"),
    "sweep": (cmd_sweep, "run the Cartesian sweep over mass, width, m and q"),
    "verify": (cmd_verify, "run the acceptance suite"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value lines)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep cells (default 1)")
    common.add_argument("--seed", type=int, default=0, help="seed of the randomised checks (verify)")
    common.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    parser = argparse.ArgumentParser(prog="ksprofile", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    if args.out is None and args.command != "exponents":
        args.out = f"{args.command}_out"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KSError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
