"""Command-line entry point.

Subcommands:
  run <config>        execute a campaign and write its datasets
  validate <config>   parse a config, printing every violation
  presets list        show the bundled figure-reproduction configs
  qe-analytic         print the strong-blockade analytic error probability

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .config import validate_config
from .inference import qe_analytic_large_mu
from .runner import run_experiment


def _load_config(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        return None, [f"cannot read config file: {exc}"]
    return validate_config(text)


def _cmd_run(args) -> int:
    cfg, errors = _load_config(args.config)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    if args.out:
        cfg.out_dir = args.out
    try:
        summary = run_experiment(cfg)
    except Exception as exc:  # propagate as runtime failure, exit code 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(summary['files'])} files to {summary['out_dir']}")
    return 0


def _cmd_validate(args) -> int:
    _, errors = _load_config(args.config)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    print("OK")
    return 0


def _cmd_presets(args) -> int:
    if args.action != "list":
        print("usage: qreadout presets list", file=sys.stderr)
        return 1
    root = resources.files("qreadout") / "presets"
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".cfg"):
            first = entry.read_text().splitlines()[0].lstrip("# ")
            print(f"{entry.name:12s} {first}  [{entry}]")
    return 0


def _cmd_qe_analytic(args) -> int:
    ts = [float(v) for v in args.t.split(",")]
    for t in ts:
        val = qe_analytic_large_mu(t, args.omega, args.gamma, args.prior1)
        print(f"{t!r},{val!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qreadout", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run an experiment campaign")
    runp.add_argument("config")
    runp.add_argument("--out", default=None, help="override the config's out_dir")
    runp.set_defaults(fn=_cmd_run)

    val = sub.add_parser("validate", help="validate a config file")
    val.add_argument("config")
    val.set_defaults(fn=_cmd_validate)

    pre = sub.add_parser("presets", help="list bundled presets")
    pre.add_argument("action", choices=["list"])
    pre.set_defaults(fn=_cmd_presets)

    qe = sub.add_parser("qe-analytic", help="strong-blockade analytic error probability")
    qe.add_argument("--omega", type=float, required=True)
    qe.add_argument("--gamma", type=float, default=1.0)
    qe.add_argument("--t", required=True, help="comma-separated times")
    qe.add_argument("--prior1", type=float, default=0.5)
    qe.set_defaults(fn=_cmd_qe_analytic)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
