"""``hamrater`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness.demo import cmd_mock_demo
from .harness.evaluation import cmd_evaluate
from .harness.rating import cmd_rate
from .harness.reporting import FORMATS, cmd_report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamrater", description="Rate Hamilton-scale interviews with item-level agents and evaluate them.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rate", help="rate a directory of transcripts")
    r.add_argument("--config", required=True)
    r.add_argument("--transcripts", required=True)
    r.add_argument("--out", default=None, help="output directory (default: config output_dir)")

    e = sub.add_parser("evaluate", help="score ratings against ground truth")
    e.add_argument("--ratings", required=True, help="ratings file or directory")
    e.add_argument("--truth", required=True)
    e.add_argument("--q", type=float, default=0.05, help="BH false discovery rate")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--families", default=None, help="JSON file declaring BH families")
    e.add_argument("--allow-mixed-digests", action="store_true")
    e.add_argument("--out", required=True)

    rp = sub.add_parser("report", help="render tables from an evaluation document")
    rp.add_argument("--eval", required=True, dest="eval_path")
    rp.add_argument("--format", required=True, choices=FORMATS)
    rp.add_argument("--out", default=None, help="also write table files here")

    d = sub.add_parser("mock-demo", help="offline end-to-end demonstration")
    d.add_argument("--out", default=None, help="directory for artifacts (default: a temp dir)")
    d.add_argument("--parallelism", type=int, default=4)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rate":
            outcome = cmd_rate(args.config, args.transcripts, args.out)
            c = outcome.manifest["counts"]
            print(f"rated {c['rated']}/{c['transcripts']} interviews into {outcome.out_dir} ({c['failed']} failed)")
            return outcome.exit_code
        if args.command == "evaluate":
            path = cmd_evaluate(args.ratings, args.truth, args.out, args.q, args.alpha, args.families, args.allow_mixed_digests)
            print(f"wrote {path}")
            return 0
        if args.command == "report":
            tables = cmd_report(args.eval_path, args.format, args.out)
            sys.stdout.write(tables["full_scale"] + "\n" + tables["item_level"])
            return 0
        res = cmd_mock_demo(args.out, parallelism_cap=args.parallelism)
        print(f"demo artifacts in {res.root}")
        print(f"totals: {res.observed_totals} (scripted: {res.expected_totals})")
        for f in res.table_files:
            print(f"\n{f.read_text(encoding='utf-8')}")
        return 0
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
