"""Command-line entry point.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
requested work itself fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config, parse_overrides

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vcrd", description="Validity-calibrated distillation on toy reasoning tasks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    _common(sub.add_parser("gen-data", help="write train/eval datasets"))
    _common(sub.add_parser("train-teacher", help="fit the teacher on gold trajectories"))
    _common(sub.add_parser("sft-student", help="fit the student initialisation on gold trajectories"))
    _common(sub.add_parser("distill", help="run validity-calibrated distillation"))
    p = sub.add_parser("eval", help="final-answer accuracy of a checkpoint")
    _common(p)
    p.add_argument("--ckpt", required=True, help="policy checkpoint to evaluate")
    p = sub.add_parser("analyze-ratios", help="histogram of r_s / r_t over rollouts")
    _common(p)
    p.add_argument("--student", help="student checkpoint (default: config student)")
    p = sub.add_parser("trust-region", help="solve one KL trust-region instance")
    _common(p)
    p.add_argument("--pi", type=_floats)
    p.add_argument("--r", type=_floats)
    p.add_argument("--delta", type=float)
    p.add_argument("--payload", help='JSON file with {"pi": [...], "r": [...], "delta": x}')
    p = sub.add_parser("ablate", help="run the ablation grid over seeds")
    _common(p)
    p.add_argument("--variants", help="comma-separated subset of variants")
    return parser


def _config(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_gen_data(cfg: RunConfig, args):
    from .experiment import datasets
    from .tasks import write_dataset
    spec = cfg.task_spec()
    train, ev = datasets(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.txt").write_text(write_dataset(spec, train))
    (out / "eval.txt").write_text(write_dataset(spec, ev))
    _emit({"train": len(train), "eval": len(ev), "out_dir": str(out)})


def _fit_and_save(cfg: RunConfig, window: int, epochs: int, lr: float, seed: int, name: str):
    from .experiment import datasets
    from .policy import save_checkpoint
    from .tasks import final_answer_accuracy, fit_teacher
    spec = cfg.task_spec()
    train, ev = datasets(cfg)
    policy, train_acc = fit_teacher(spec, train, epochs, lr, window, seed=seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(save_checkpoint(policy))
    _emit({"checkpoint": str(out / name), "train_acc": train_acc,
           "eval_acc": final_answer_accuracy(policy, ev, spec.horizon) if ev else None})


def _cmd_distill(cfg: RunConfig, args):
    from .experiment import run_distill
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    res = run_distill(cfg)
    _emit({k: res[k] for k in ("run_id", "final_eval_acc", "teacher_eval_acc",
                               "sft_reference_acc", "student_init_eval_acc")})


def _cmd_eval(cfg: RunConfig, args):
    from .experiment import datasets, load_policy
    from .tasks import final_answer_accuracy
    policy = load_policy(args.ckpt)
    spec = cfg.task_spec()
    if policy.vocab != spec.build_vocab():
        raise ValueError("checkpoint vocabulary does not match the configured task")
    _, ev = datasets(cfg)
    _emit({"checkpoint": args.ckpt, "eval_acc": final_answer_accuracy(policy, ev, spec.horizon),
           "n_eval": len(ev)})


def _cmd_analyze(cfg: RunConfig, args):
    from .experiment import load_policy, run_analyze
    student = load_policy(args.student) if args.student else None
    _emit(run_analyze(cfg, out_dir=cfg.out_dir, student=student))


def _cmd_trust_region(cfg: RunConfig, args):
    from .trust_region import solve_trust_region
    if args.payload:
        try:
            data = json.loads(Path(args.payload).read_text())
            pi, r, delta = data["pi"], data["r"], data["delta"]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"bad trust-region payload {args.payload}: {exc}") from None
    else:
        if args.pi is None or args.r is None or args.delta is None:
            raise UsageError("trust-region needs --pi, --r and --delta, or --payload")
        pi, r, delta = args.pi, args.r, args.delta
    sol = solve_trust_region(pi, r, delta)
    _emit({"eta": sol.eta, "tilted": sol.tilted.tolist(), "achieved_kl": sol.achieved_kl,
           "expected_reward": sol.expected_reward, "active": sol.active})


def _cmd_ablate(cfg: RunConfig, args):
    from .experiment import ablate, format_table
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else None
    report = ablate(cfg, variants, out_dir=cfg.out_dir)
    print(format_table(report))


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-teacher": lambda cfg, a: _fit_and_save(cfg, cfg.teacher_window, cfg.teacher_epochs,
                                                  cfg.teacher_lr, cfg.seed, "teacher.ckpt"),
    "sft-student": lambda cfg, a: _fit_and_save(cfg, cfg.student_window, cfg.sft_epochs,
                                                cfg.sft_lr, cfg.seed + 1, "student_sft.ckpt"),
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "analyze-ratios": _cmd_analyze,
    "trust-region": _cmd_trust_region,
    "ablate": _cmd_ablate,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"vcrd: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"vcrd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"vcrd: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(cli())
