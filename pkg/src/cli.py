"""
src/cli.py

urllc-tools <command> --scenario scenario.json [options]

Commands: dimension, capacity, optimize-harq, blocking, simulate, validate, sweep.
Exit codes: 0 ok, 2 invalid input, 3 infeasible, 4 state space too large.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__, settings
from .errors import ToolkitError
from .io_utils import (
    CSV_FLOAT_FORMAT,
    Scenario,
    frame_to_records,
    load_scenario,
    parse_sweep,
    save_csv,
    save_json,
    scenario_digest,
)
from .pipeline import (
    BuildOptions,
    CommandResult,
    cmd_blocking,
    cmd_capacity,
    cmd_dimension,
    cmd_optimize_harq,
    cmd_simulate,
    cmd_sweep,
    cmd_validate,
)

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = Path("data/default_scenario.json")
LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


@dataclass(frozen=True)
class ReportEnvelope:
    tool_version: str
    scenario_digest: str
    command: str
    timestamp: str
    payload: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, default=DEFAULT_SCENARIO, help="scenario JSON file")
    common.add_argument("--out", type=Path, help="output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=_positive_int, default=None, help="maximum worker processes")
    common.add_argument("--log-term", action="store_true", help="keep the 0.5*log2(r) term of the normal approximation")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--seed", type=_u64, default=None)
    sim.add_argument("--horizon", type=float, default=None, help="simulated seconds")
    sim.add_argument("--warmup", type=float, default=None, help="discarded seconds")
    sim.add_argument("--replications", type=_positive_int, default=None)

    parser = argparse.ArgumentParser(
        prog="urllc-tools",
        description="URLLC bandwidth dimensioning, HARQ optimisation and loss-system validation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dimension", parents=[common], help="required bandwidth (square-root staffing)")
    p.add_argument("--delta", type=float, default=None, help="target blocking probability (default: strictest class)")
    p.add_argument("--m-max", type=_positive_int, default=settings.DEFAULT_M_MAX)

    p = sub.add_parser("capacity", parents=[common], help="single-class capacity and scaling curves")
    p.add_argument("--sweep", default=None, help="var:start:stop:steps[:log] with var in W, sinr, d, delta")

    p = sub.add_parser("optimize-harq", parents=[common], help="best homogeneous repetition scheme per class")
    p.add_argument("--regime", choices=("mean", "variance"), required=True)
    p.add_argument("--m-max", type=_positive_int, default=settings.DEFAULT_M_MAX)
    p.add_argument("--final-term", action="store_true", help="sum m+1 terms in the objective")

    p = sub.add_parser("blocking", parents=[common], help="exact per-class blocking")
    p.add_argument("--split", type=_positive_int, default=None, help="compare with class bandwidth/q held q times longer")
    p.add_argument("--split-class", type=int, default=0)

    p = sub.add_parser("simulate", parents=[common, sim], help="discrete-event simulation")
    p.add_argument("--trace", action="store_true", help="also write per-stage packet records")

    p = sub.add_parser("validate", parents=[common, sim], help="simulated against exact blocking")
    p.add_argument("--k-sigma", type=float, default=3.0)

    p = sub.add_parser("sweep", parents=[common], help="best stage count over a parameter grid")
    p.add_argument("--regime", choices=("mean", "variance"), required=True)
    p.add_argument("--sweep", default=None, help="var:start:stop:steps[:log] with var in sinr, d, delta")
    p.add_argument("--m-max", type=_positive_int, default=settings.DEFAULT_M_MAX)
    return parser


def _load(args: argparse.Namespace) -> Scenario:
    # `sweep` without --sweep evaluates a fixed grid; the scenario only supplies kappa
    if args.command == "sweep" and args.sweep is None and not args.scenario.exists():
        return Scenario(math.inf, settings.default_kappa(), (), ())
    return load_scenario(args.scenario)


def _run(args: argparse.Namespace, scenario: Scenario) -> CommandResult:
    workers = args.threads or settings.default_threads()
    opts = BuildOptions(include_log_term=args.log_term, m_max=getattr(args, "m_max", settings.DEFAULT_M_MAX))
    sim_opts = BuildOptions(include_log_term=args.log_term, integer_blocklength=True)

    if args.command == "dimension":
        return cmd_dimension(scenario, opts, args.delta)
    if args.command == "capacity":
        sweep = parse_sweep(args.sweep) if args.sweep else None
        return cmd_capacity(scenario, sweep)
    if args.command == "optimize-harq":
        return cmd_optimize_harq(scenario, args.regime, args.m_max, args.final_term, args.log_term)
    if args.command == "blocking":
        return cmd_blocking(scenario, args.split, args.split_class, workers=workers, opts=sim_opts)
    if args.command == "simulate":
        return cmd_simulate(
            scenario, args.seed, args.horizon, args.warmup, args.replications, args.trace, workers, sim_opts
        )
    if args.command == "validate":
        return cmd_validate(
            scenario,
            args.k_sigma,
            args.seed,
            args.horizon,
            args.warmup,
            args.replications,
            workers=workers,
            opts=sim_opts,
        )
    sweep = parse_sweep(args.sweep) if args.sweep else None
    return cmd_sweep(scenario, args.regime, sweep, args.m_max)


def _resolve_out(out: Path) -> Path:
    # a bare file name lands in the configured output directory
    if out.parent == Path("."):
        out = settings.output_dir() / out
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args: argparse.Namespace, result: CommandResult, digest: str) -> None:
    out = _resolve_out(args.out) if args.out else None
    if args.format == "json":
        payload: Dict[str, Any] = {"summary": result.summary, "rows": frame_to_records(result.table)}
        for name, frame in result.extra.items():
            payload[name] = frame_to_records(frame)
        envelope = ReportEnvelope(
            tool_version=__version__,
            scenario_digest=digest,
            command=args.command,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            payload=payload,
        )
        if out:
            save_json(envelope.to_dict(), out)
        else:
            sys.stdout.write(json.dumps(envelope.to_dict(), indent=2, sort_keys=True) + "\n")
        return

    if out:
        save_csv(result.table, out)
        for name, frame in result.extra.items():
            save_csv(frame, out.with_name(f"{out.stem}_{name}{out.suffix or '.csv'}"))
    else:
        result.table.to_csv(sys.stdout, index=False, float_format=CSV_FLOAT_FORMAT)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level()).upper(),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
    try:
        scenario = _load(args)
        result = _run(args, scenario)
        _emit(args, result, scenario_digest(scenario))
    except ToolkitError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    if result.summary:
        logger.info("%s: %s", args.command, result.summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
