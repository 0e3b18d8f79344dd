"""Command-line interface.

Subcommands: ``run`` (simulate a scenario and export its log), ``train``
(online attack synthesis, saving the generator artifact), ``attack``
(frozen rollout of a saved generator), ``calibrate`` (detector threshold
for a false-alarm target) and ``sweep`` (success-rate table over seeds).
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..attack import TrainingError, load_generator, save_generator
from ..detection import chi2_quantile
from ..estimation import SingularityError
from .export import export_csv, export_plots
from .runner import evaluate_success, rollout_frozen, run_scenario
from .scenario import ScenarioError, load_scenario

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # spec'd exit code for usage errors is 1, argparse defaults to 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="cpsvuln", description=__doc__.split("\n\n")[1])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", type=Path, help="scenario file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
        p.add_argument("--format", choices=["csv"], default="csv", help="export format")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_run = sub.add_parser("run", help="simulate a scenario and export the log")
    common(p_run)

    p_train = sub.add_parser("train", help="train an attack generator online")
    common(p_train)
    p_train.add_argument("--out", type=Path, required=True, help="generator artifact path")

    p_attack = sub.add_parser("attack", help="roll out a saved generator frozen")
    common(p_attack)
    p_attack.add_argument("--model", type=Path, required=True, help="generator artifact path")

    p_cal = sub.add_parser("calibrate", help="print the detection threshold")
    p_cal.add_argument("--eps", type=float, required=True, help="false-alarm probability")
    p_cal.add_argument("--dof", type=int, required=True, help="degrees of freedom")

    p_sweep = sub.add_parser("sweep", help="success-rate table over seeds")
    common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=20, help="number of seeds")
    return parser


def _say(args, *msg):
    if not getattr(args, "quiet", False):
        print(*msg)


def _report_lines(rep) -> list[str]:
    return [
        f"max estimation error : {rep.max_error:.4f} (target alpha {rep.alpha})",
        f"first crossing step  : {rep.first_crossing}",
        f"alarm rate           : {rep.alarm_rate:.4f} (epsilon {rep.epsilon}, allowance {rep.stealth_threshold:.4f})",
        f"success              : {rep.success}",
    ]


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    result = run_scenario(sc, seed=args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    export_plots(result.record, args.out_dir)
    _say(args, f"wrote {args.out_dir / 'run.csv'} ({len(result.record)} rows)")
    if result.record.escaped:
        _say(args, "warning: run terminated early (state escaped); partial record exported")
    if sc.attack_kind != "none" and len(result.record):
        for line in _report_lines(result.report()):
            _say(args, line)
    return 0


def _cmd_train(args) -> int:
    sc = load_scenario(args.scenario)
    if sc.attack_kind not in ("fnn", "dfnn"):
        raise ScenarioError("train requires attack.kind = fnn or dfnn")
    result = run_scenario(sc, seed=args.seed)
    save_generator(result.generator, args.out, model_id=sc.model_type, training_config={
        "delta": sc.delta, "lambda": sc.lam, "beta": sc.beta, "T": sc.horizon_T,
        "inner_max": sc.inner_max, "inner_tol": sc.inner_tol, "eps_smooth": sc.eps_smooth,
    })
    _say(args, f"trained {sc.attack_kind} generator over {sc.horizon_T} steps; saved to {args.out}")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    export_csv(result.record, args.out_dir / "train_run.csv")
    return 0


def _cmd_attack(args) -> int:
    sc = load_scenario(args.scenario)
    gen, _model_id, _cfg = load_generator(args.model)
    result = rollout_frozen(sc, gen, seed=args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    export_plots(result.record, args.out_dir)
    _say(args, f"wrote {args.out_dir / 'run.csv'} ({len(result.record)} rows)")
    for line in _report_lines(result.report()):
        _say(args, line)
    return 0


def _cmd_calibrate(args) -> int:
    eta = chi2_quantile(1.0 - args.eps, args.dof)
    print(f"eta = {eta:.10g}")
    return 0


def _cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    base = sc.seed if args.seed is None else args.seed
    successes = 0
    rows = []
    for i in range(args.seeds):
        seed = base + i
        result = run_scenario(sc, seed=seed)
        if sc.attack_kind in ("fnn", "dfnn"):
            from .runner import EVAL_SEED_OFFSET

            result = rollout_frozen(sc, result.generator, seed=seed + EVAL_SEED_OFFSET)
        rep = evaluate_success(result.record, sc.alpha, sc.epsilon)
        successes += rep.success
        rows.append((seed, rep))
    print(f"{'seed':>6} {'success':>8} {'max_err':>10} {'alarm_rate':>11} {'first_cross':>12}")
    for seed, rep in rows:
        print(f"{seed:>6} {str(rep.success):>8} {rep.max_error:>10.4f} {rep.alarm_rate:>11.4f} {str(rep.first_crossing):>12}")
    print(f"success rate: {successes}/{args.seeds}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "calibrate": _cmd_calibrate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, SingularityError, OSError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
