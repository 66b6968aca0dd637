"""Command line entry point: run, sweep, oracle-verify, validate-config, ledger-audit."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, SimConfig, load_config, tiny_config, validate_config
from .harness import AXES, POLICIES, SweepSpec, run, run_sweep, write_run
from .ledger import audit_records


def _config(args) -> SimConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return SimConfig()


def _values(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--values expects comma-separated numbers, got {text!r}")


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg, args.policy, args.seed, train_episodes=args.episodes, keep_transitions=True)
    out = write_run(result, cfg, args.out)
    s = result.summary
    print(f"{args.policy} seed={args.seed}: throughput={s['mean_throughput']:.6g} "
          f"queue={s['mean_queue']:.6g} interference={s['mean_interference']:.6g} "
          f"overhead={s['mean_overhead']:.6g} profit={s['mean_profit']:.6g}")
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    spec = SweepSpec(args.axis, args.values, args.repeats)
    rows = run_sweep(spec, cfg, args.policy, args.seed, args.out, workers=args.workers,
                     train_episodes=args.episodes)
    for r in rows:
        print(f"{args.axis}={r['axis_value']:g} seed={r['seed']}: throughput={r['mean_throughput']:.6g} "
              f"queue={r['mean_queue']:.6g} profit={r['mean_profit']:.6g}")
    print(f"wrote {Path(args.out) / 'summary.csv'}")
    return 0


def cmd_oracle_verify(args) -> int:
    from .oracle import verify_trace

    cfg = load_config(args.config) if args.config else tiny_config()
    result = run(cfg, args.policy, args.seed, train_episodes=args.episodes)
    report = verify_trace(cfg, result.eval_trace)
    print(f"slots={report.slots} checks={report.checks} failures={len(report.failures)} "
          f"oracle_mean={report.oracle_mean:.6g} policy_mean={report.policy_mean:.6g} "
          f"ratio={report.ratio:.4f}")
    for t, n, m, val, chosen, brute in report.failures[:10]:
        print(f"  slot {t} follower ({n},{m}): oracle {val:.17g} chosen {chosen:.17g} best {brute:.17g}")
    return 0 if report.ok else 1


def cmd_validate_config(args) -> int:
    resolved = args.resolved or str(Path(args.path).with_suffix(".resolved.cfg"))
    try:
        validate_config(args.path, resolved)
    except ConfigError as exc:
        for line, key, msg in exc.problems:
            where = f"line {line}: " if line else ""
            print(f"{args.path}: {where}{key}: {msg}", file=sys.stderr)
        return 2
    except FileNotFoundError:
        print(f"{args.path}: no such file", file=sys.stderr)
        return 2
    print(f"ok; resolved config written to {resolved}")
    return 0


def cmd_ledger_audit(args) -> int:
    try:
        with open(args.path, encoding="utf-8") as fh:
            problems = audit_records(fh)
    except FileNotFoundError:
        print(f"{args.path}: no such file", file=sys.stderr)
        return 2
    for p in problems:
        print(f"{args.path}: {p}")
    if not problems:
        print("ok")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdtn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--policy", choices=POLICIES, default="madfrl")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--episodes", type=int, default=None, help="training episodes (default from config)")
        if out:
            p.add_argument("--out", metavar="DIR", default="out")

    p = sub.add_parser("run", help="train and evaluate one policy")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one parameter over several seeds")
    common(p)
    p.add_argument("--axis", choices=sorted(AXES), required=True)
    p.add_argument("--values", type=_values, required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-verify", help="certify the grid oracle on an evaluation trace")
    common(p, out=False)
    p.set_defaults(func=cmd_oracle_verify)

    p = sub.add_parser("validate-config", help="check a config file and write the resolved config")
    p.add_argument("path")
    p.add_argument("--resolved", metavar="PATH")
    p.set_defaults(func=cmd_validate_config)

    p = sub.add_parser("ledger-audit", help="check an exported ledger")
    p.add_argument("path")
    p.set_defaults(func=cmd_ledger_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line, key, msg in exc.problems:
            print(f"{key}: {msg}" + (f" (line {line})" if line else ""), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
