"""Command-line entry point: ``stabaudit {audit,demo,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .formats import error_manifest, exit_code_for, load_config, load_report, summary_csv, summary_text
from .pipeline import ERROR_FILE, SCENARIOS, demo, run_audit

log = logging.getLogger("stabaudit")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabaudit", description="Stability audits for score-producing systems")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="audit control/treatment runs described by a config file")
    a.add_argument("--config", required=True, help="YAML (or JSON) audit config")
    a.add_argument("--out", default=None, help="output directory (overrides the config's output_dir)")

    d = sub.add_parser("demo", help="simulate a synthetic scorer and audit it")
    d.add_argument("--scenario", required=True, help=f"one of: {', '.join(sorted(SCENARIOS))}")
    d.add_argument("--seed", type=int, default=7)
    d.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("report", help="render a machine report as CSV or text")
    r.add_argument("--in", dest="path", required=True, help="report.json written by audit or demo")
    r.add_argument("--format", choices=("csv", "text"), default="text")
    return p


def _fail(exc: Exception, out_dir: Path | None) -> int:
    code = exit_code_for(exc)
    if code == 4:
        log.exception("internal error")
    else:
        log.error("%s", exc)
    print(f"error: {exc}", file=sys.stderr)
    if out_dir is not None and not (out_dir / ERROR_FILE).exists():
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / ERROR_FILE).write_text(error_manifest(exc), encoding="utf-8")
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "report":
        try:
            data = load_report(args.path)
            sys.stdout.write(summary_csv(data) if args.format == "csv" else summary_text(data))
        except Exception as exc:
            return _fail(exc, None)
        return 0

    if args.command == "demo":
        out = Path(args.out)
        try:
            bundle = demo(args.seed, args.scenario, out)
        except Exception as exc:
            return _fail(exc, out)
        print(f"wrote {len(bundle.files())} file(s) to {out}")
        return 0

    out = Path(args.out) if args.out else None
    try:
        config = load_config(args.config)
    except Exception as exc:
        return _fail(exc, out)
    out = out or config.output_dir
    try:
        bundle = run_audit(config, out)
    except Exception as exc:
        return _fail(exc, out)
    print(f"wrote {len(bundle.files())} file(s) to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
