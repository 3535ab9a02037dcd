#!/usr/bin/env python3
"""
RicciLab - numerical Ricci flow laboratory
Command-line entry point
"""

import argparse
import json
import sys
from typing import List, Optional

from controllers import (
    VERSION,
    RunService,
    SettingsManager,
    StudyManager,
    check_file,
    load_scenario,
)
from controllers.settings_manager import ROTSYM_PRESETS, TORUS_PRESETS, apply_overrides
from models import Domain, StudyKind
from utils import (
    ThreadPoolManager,
    classify_exit_code,
    get_logger,
    info,
    log_exception_structured,
    set_debug_mode,
    set_quiet_mode,
)
from utils.exceptions import RicciLabException


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riccilab", description="Numerical Ricci flow laboratory")
    parser.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    parser.add_argument("--debug", action="store_true", help="print debug messages")
    commands = parser.add_subparsers(dest="command", required=True)

    def scenario_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, metavar="PATH", help="JSON scenario file")
        sub.add_argument("--out", metavar="DIR", help="output root (overrides the scenario)")
        sub.add_argument("--seed", type=int, help="random seed (overrides the scenario)")
        sub.add_argument("--resolution-override", type=int, metavar="N", help="grid resolution")

    run = commands.add_parser("run", help="run one scenario")
    scenario_options(run)

    study = commands.add_parser("study", help="run an experiment sweep")
    scenario_options(study)
    study.add_argument("--kind", choices=[k.value for k in StudyKind], help="study kind (overrides the scenario)")

    check = commands.add_parser("check", help="report the curvature margins of a metric file")
    check.add_argument("path", help="metric or warped file")
    check.add_argument("--seed", type=int, help="seed of the isotropic-cone frames")
    check.add_argument("--json", action="store_true", help="print the report as JSON")

    commands.add_parser("info", help="print version, presets and settings")
    return parser


def _scenario(args):
    config = load_scenario(args.config)
    return apply_overrides(config, seed=args.seed, resolution=args.resolution_override, output_dir=args.out)


def cmd_run(args, settings: SettingsManager) -> int:
    result = RunService().run(_scenario(args))
    info(f"diagnostics written to {result.csv_path}")
    return 0


def cmd_study(args, settings: SettingsManager) -> int:
    config = _scenario(args)
    result = StudyManager().run(config, kind=args.kind)
    print(result.table.to_string(index=False))
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0


def cmd_check(args, settings: SettingsManager) -> int:
    seed = args.seed if args.seed is not None else int(settings.get("seed", 0))
    report = check_file(args.path, pic_sample=int(settings.get("pic_sample", 64)), seed=seed)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, default=float))
    else:
        print("\n".join(report.lines()))
    return 0


def cmd_info(args, settings: SettingsManager) -> int:
    lines = [
        f"riccilab {VERSION}",
        f"domains: {', '.join(d.value for d in Domain)}",
        f"torus presets: {', '.join(TORUS_PRESETS)}",
        f"rotsym presets: {', '.join(ROTSYM_PRESETS)}",
        f"study kinds: {', '.join(k.value for k in StudyKind)}",
        f"settings: {settings.config_path}",
        f"log file: {get_logger().get_log_file_path()}",
    ]
    print("\n".join(lines))
    return 0


COMMANDS = {"run": cmd_run, "study": cmd_study, "check": cmd_check, "info": cmd_info}


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    settings = SettingsManager()
    set_debug_mode(args.debug or bool(settings.get("debug", False)))
    set_quiet_mode(args.quiet)
    try:
        return COMMANDS[args.command](args, settings)
    except RicciLabException as e:
        log_exception_structured(e, {"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return classify_exit_code(e)
    except Exception as e:
        log_exception_structured(e, {"command": args.command})
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return classify_exit_code(e)
    finally:
        ThreadPoolManager().shutdown(timeout=10)


if __name__ == "__main__":
    sys.exit(main())
