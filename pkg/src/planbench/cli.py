"""``planbench`` command line.

Exit codes: 0 success, 1 some records could not be evaluated, 2 bad
configuration or unreadable input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .harness import EXIT_CONFIG, ConfigError, build_config, emit, read_config_file, run


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in _csv(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planbench", description="Embodied planning evaluation toolkit.")
    parser.add_argument("--version", action="version", version=f"planbench {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="line-delimited JSON records")
    common.add_argument("--config", help="JSON config file; CLI flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="directory for report.json, report.tsv and report.meta.json")
    common.add_argument("--action-set", dest="action_set", help="action vocabulary file")
    common.add_argument("--judge-stub", dest="judge_stub",
                        help="offline judge: equality, exact-match, fixed:TEXT, grm:SCORE, auto[:SCORE]")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("parse", parents=[common], help="strict-parse structured outputs {id, text}")
    p.add_argument("--mode", choices=("strict", "lenient"))

    p = sub.add_parser("eval-plan", parents=[common], help="match-quantity and match-order P/R/F1")
    p.add_argument("--pred", help="predictions {id, text}")
    p.add_argument("--gt", help="ground truth {id, text}")
    p.add_argument("--matcher", choices=("rule", "judge"))
    p.add_argument("--mode", choices=("strict", "lenient"))

    p = sub.add_parser("simulate", parents=[common], help="execute plans in the household simulator")
    p.add_argument("--tasks", help="JSON list of task specs (default: bundled suite)")
    p.add_argument("--scenes", help="directory of <scene>.json files overriding bundled scenes")
    p.add_argument("--predictions", help="predicted plans {id, prediction}")
    p.add_argument("--continue-on-error", dest="continue_on_error", action="store_const", const=True)

    p = sub.add_parser("reward", parents=[common], help="training rewards per sample")
    p.add_argument("--kinds", type=_csv, help="comma list of format,grm,perception,spatial,instruction")
    p.add_argument("--w-rule", dest="w_rule", type=float)
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float)

    p = sub.add_parser("difficulty", parents=[common], help="masking profiles and difficulty buckets")
    p.add_argument("--predictor", help="stub:NAME (correct, wrong, threshold:C, stochastic) or endpoint")
    p.add_argument("--lambdas", type=_floats, help="comma list of masking ratios")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--fill", choices=("zero", "mean", "noise"))
    return parser


_NOT_CONFIG = {"command", "config", "verbose"}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cli_values = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    try:
        cfg = build_config(args.command, read_config_file(args.config), cli_values)
        logging.getLogger("planbench").info("seed %d, config %s", cfg.seed, cfg.fingerprint()[:12])
        report = run(cfg)
        emit(report, cfg.out)
    except ConfigError as exc:
        print(f"planbench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        agg = report.aggregates
        print(f"{args.command}: {len(report.records)} record(s), {report.failures} failure(s); "
              f"report in {Path(cfg.out) / 'report.json'}", file=sys.stderr)
        logging.getLogger("planbench").info("aggregates: %s", agg)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
