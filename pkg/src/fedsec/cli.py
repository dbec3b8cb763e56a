"""Command line entry point.

Exit codes: 0 success, 1 unexpected fedsec error, 2 configuration, 3 shape,
4 validation, 5 numerical, 6 file format, 7 consistency, 8 schema mismatch,
9 I/O (missing or unreadable file), 64 bad command line usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import FedsecError

EXIT_IO = 9
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _cmd_run(args) -> int:
    from .harness import run_config_file
    result = run_config_file(args.config, seed=args.seed, out_dir=args.out,
                             workers=args.workers)
    for row in result.task_rows:
        print(f"task {row['task']}: final accuracy {row['final_accuracy']:.4f}, "
              f"mean utility {row['mean_utility']:.4f}")
    print(f"wrote {result.out_dir}")
    return 0


def _cmd_summarize(args) -> int:
    from .harness import format_summary, summarize, write_series
    rows, series = summarize(args.dirs)
    text = format_summary(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(text, encoding="utf-8")
        write_series(series, out / "reward_moving_average.csv")
    sys.stdout.write(text)
    return 0


def _cmd_validate(args) -> int:
    from .config import load_config
    cfg = load_config(args.config)
    print(f"{args.config}: ok (M={cfg.topology.ed_count}, K={cfg.topology.select_count}, "
          f"defense={cfg.defense.strategy}, policy={cfg.selection.policy})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedsec", description="Federated-learning security simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    r.add_argument("--workers", type=int, default=None,
                   help="local-training threads (capped by FEDSEC_MAX_WORKERS)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="compare completed run directories")
    s.add_argument("dirs", nargs="+")
    s.add_argument("--out", default=None, help="also write summary.csv and moving averages here")
    s.set_defaults(func=_cmd_summarize)

    v = sub.add_parser("validate", help="check a config file and report every problem")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedsecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
