"""
src/pipeline.py

Command layer behind the CLI. Every cmd_* takes a parsed Scenario and returns
a CommandResult (a pandas table plus a small summary dict):

1) build the per-class HARQ schemes the scenario asks for
2) run the analytic / exact / simulated computation
3) return rows ready for CSV or JSON emission (nothing is written here)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import settings
from .channel import blocklength_for_reliability, failure_probability, linear_to_db
from .dimensioning import harq_staffing, scaling_curves
from .errors import InfeasibleError, ValidationError
from .exact_queue import blocking_report, compare_tall_wide
from .harq_optimizer import homogeneous_scheme, optimize, regime_grid, sweep_frame
from .io_utils import Scenario, SchemeSpec
from .models import HarqScheme, StagePlan, SystemConfig, TrafficClass, one_shot_scheme
from .simulator import (
    SimConfig,
    default_horizon,
    default_warmup,
    loss_classes_of,
    simulate,
    validate_against_exact,
)

logger = logging.getLogger(__name__)

# Parameter box of the regime checks when `sweep` runs without --sweep
DEFAULT_REGIME_BOX: Dict[str, List[float]] = {
    "payload_bits": [64, 256, 1000, 2000],
    "deadlines": [0.5e-3, 1e-3, 2e-3],
    "deltas": [1e-3, 1e-5, 1e-7],
    "sinr_db": [0.0, 5.0, 10.0, 15.0, 20.0],
    "feedback_delays": [0.1e-3, 0.125e-3, 0.25e-3],
}


@dataclass
class CommandResult:
    table: pd.DataFrame
    summary: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, pd.DataFrame] = field(default_factory=dict)


@dataclass(frozen=True)
class BuildOptions:
    include_log_term: bool = False
    m_max: int = settings.DEFAULT_M_MAX
    integer_blocklength: bool = False


# ------------------------------
# Scheme materialisation
# ------------------------------
def _explicit_scheme(cls: TrafficClass, spec: SchemeSpec, kappa: float, opts: BuildOptions) -> HarqScheme:
    plans = []
    for stage in spec.explicit_stages():
        s = stage["duration"]
        r = stage["blocklength"] if "blocklength" in stage else kappa * stage["bandwidth"] * s
        h = stage["bandwidth"] if "bandwidth" in stage else r / (kappa * s)
        p = stage.get("failure_prob")
        if p is None:
            p = failure_probability(r, cls.link, opts.include_log_term)
        plans.append(StagePlan(r, s, h, p))
    return HarqScheme(tuple(plans))


def build_scheme(
    cls: TrafficClass,
    spec: SchemeSpec,
    bandwidth: float,
    kappa: float,
    opts: BuildOptions = BuildOptions(),
) -> HarqScheme:
    if spec.kind == "explicit":
        return _explicit_scheme(cls, spec, kappa, opts)
    if spec.kind == "optimize":
        result = optimize(
            cls,
            spec.regime,
            bandwidth=bandwidth,
            kappa=kappa,
            m_max=opts.m_max,
            include_log_term=opts.include_log_term,
        )
        return result.best_scheme
    if spec.kind == "stages":
        scheme, reason = homogeneous_scheme(cls, spec.stages, kappa, opts.include_log_term)
        if scheme is None:
            raise InfeasibleError(f"{cls.name}: {spec.stages} stages: {reason}", {spec.stages: reason})
        return scheme
    r = blocklength_for_reliability(cls.link, cls.reliability_eps, opts.include_log_term)
    if opts.integer_blocklength:
        r = float(math.ceil(r))
    return one_shot_scheme(cls, r, kappa)


def build_system(
    scenario: Scenario,
    opts: BuildOptions = BuildOptions(),
    bandwidth: Optional[float] = None,
) -> SystemConfig:
    w = scenario.bandwidth if bandwidth is None else bandwidth
    schemes = [
        build_scheme(cls, spec, w, scenario.kappa, opts)
        for cls, spec in zip(scenario.classes, scenario.schemes)
    ]
    return SystemConfig(w, scenario.kappa, scenario.classes, tuple(schemes))


def _require_classes(scenario: Scenario, command: str) -> None:
    if not scenario.classes:
        raise ValidationError(f"{command}: the scenario has no traffic classes")


def _require_bandwidth(scenario: Scenario, command: str) -> None:
    if not math.isfinite(scenario.bandwidth):
        raise ValidationError(f"{command}: the scenario needs a finite system.bandwidth")


# ------------------------------
# Commands
# ------------------------------
def cmd_dimension(
    scenario: Scenario,
    opts: BuildOptions = BuildOptions(),
    delta: Optional[float] = None,
) -> CommandResult:
    """Required bandwidth by square-root staffing, per class and in total."""
    _require_classes(scenario, "dimension")
    target = min(c.reliability_eps for c in scenario.classes) if delta is None else delta
    # W is the output here; schemes are built without a bandwidth cap
    system = build_system(scenario, opts, bandwidth=math.inf)

    rows = []
    for name, (cls, scheme) in zip(system.class_names(), system):
        alone = harq_staffing(SystemConfig(math.inf, system.kappa, (cls,), (scheme,)), target)
        rows.append(
            {
                "class": name,
                "stages": scheme.num_stages,
                "blocklength": scheme.stages[0].blocklength,
                "stage_bandwidth": scheme.stages[0].bandwidth,
                "mean_utilization": alone.mean_utilization,
                "utilization_variance": alone.utilization_variance,
                "required_bandwidth": alone.required_bandwidth,
            }
        )
    total = harq_staffing(system, target)
    rows.append(
        {
            "class": "total",
            "stages": max(s.num_stages for s in system.schemes),
            "blocklength": float("nan"),
            "stage_bandwidth": max(s.stages[0].bandwidth for s in system.schemes),
            "mean_utilization": total.mean_utilization,
            "utilization_variance": total.utilization_variance,
            "required_bandwidth": total.required_bandwidth,
        }
    )
    summary = {
        "delta": target,
        "safety_coefficient": total.safety_coefficient,
        "required_bandwidth": total.required_bandwidth,
    }
    return CommandResult(pd.DataFrame(rows), summary)


def cmd_capacity(
    scenario: Scenario,
    sweep: Optional[Tuple[str, Sequence[float]]] = None,
) -> CommandResult:
    """Single-class capacity curve lambda*(x); one point at the scenario W without a sweep."""
    _require_classes(scenario, "capacity")
    if len(scenario.classes) != 1:
        raise InfeasibleError(
            f"capacity is defined for a single traffic class; the scenario has {len(scenario.classes)}"
        )
    cls = scenario.classes[0]
    if sweep is None:
        _require_bandwidth(scenario, "capacity")
        variable, grid = "bandwidth", [scenario.bandwidth]
    else:
        variable, grid = sweep
        if variable != "bandwidth":
            _require_bandwidth(scenario, "capacity")
    table = scaling_curves(cls, variable, list(grid), scenario.bandwidth, scenario.kappa)
    summary = {"points": len(table), "lambda_star_max": float(table["lambda_star"].max())}
    return CommandResult(table, summary)


def cmd_optimize_harq(
    scenario: Scenario,
    regime: str,
    m_max: int = settings.DEFAULT_M_MAX,
    include_final_term: bool = False,
    include_log_term: bool = False,
) -> CommandResult:
    """Per-class objective against m with the chosen stage count flagged."""
    _require_classes(scenario, "optimize-harq")
    frames = []
    best: Dict[str, int] = {}
    for cls in scenario.classes:
        result = optimize(
            cls,
            regime,
            bandwidth=scenario.bandwidth,
            kappa=scenario.kappa,
            m_max=m_max,
            include_final_term=include_final_term,
            include_log_term=include_log_term,
        )
        frame = sweep_frame(result.per_m_table)
        frame.insert(0, "class", cls.name)
        frame["best"] = frame["m"] == result.best_m
        frames.append(frame)
        best[cls.name] = result.best_m
    return CommandResult(pd.concat(frames, ignore_index=True), {"best_m": best, "regime": str(regime)})


def _exact_columns(split: Optional[int]) -> List[str]:
    cols = ["class", "arrival_rate", "bandwidth", "duration", "load", "blocking"]
    if split is not None:
        cols += ["blocking_after_split", "wide_not_worse"]
    return cols


def cmd_blocking(
    scenario: Scenario,
    split: Optional[int] = None,
    split_class: int = 0,
    cap: Optional[int] = None,
    workers: int = 1,
    opts: BuildOptions = BuildOptions(integer_blocklength=True),
) -> CommandResult:
    """Exact per-class blocking; with `split`, also the system where one class
    uses bandwidth/q for q times longer."""
    if not scenario.classes:
        return CommandResult(pd.DataFrame(columns=_exact_columns(split)), {"state_count": 0})
    _require_bandwidth(scenario, "blocking")
    system = build_system(scenario, opts)
    classes = loss_classes_of(system)
    rows = [
        {
            "class": name,
            "arrival_rate": lc.arrival_rate,
            "bandwidth": lc.bandwidth,
            "duration": lc.duration,
            "load": lc.load,
        }
        for name, lc in zip(system.class_names(), classes)
    ]
    if split is None:
        report = blocking_report(classes, system.bandwidth, cap, workers)
        for row, b in zip(rows, report.per_class_blocking):
            row["blocking"] = b
        summary: Dict[str, Any] = {"state_count": report.state_count}
    else:
        cmp = compare_tall_wide(classes, system.bandwidth, split_class, split, cap, workers)
        for row, b, a in zip(rows, cmp.before, cmp.after):
            row["blocking"] = b
            row["blocking_after_split"] = a
            row["wide_not_worse"] = a <= b
        summary = {
            "split_class": split_class,
            "factor": split,
            "load_below_one": cmp.load_below_one,
            "wide_not_worse": cmp.wide_not_worse,
        }
    return CommandResult(pd.DataFrame(rows, columns=_exact_columns(split)), summary)


def sim_config(
    scenario: Scenario,
    system: SystemConfig,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    warmup: Optional[float] = None,
    replications: Optional[int] = None,
    trace: bool = False,
) -> SimConfig:
    """Command-line overrides first, then the scenario's sim block, then defaults."""
    warm = warmup if warmup is not None else scenario.sim.warmup
    if warm is None:
        warm = default_warmup(system)
    span = horizon if horizon is not None else scenario.sim.horizon
    if span is None:
        rarest = min((c.reliability_eps for c in system.classes), default=0.5)
        span = warm + default_horizon(system, rarest)
    return SimConfig(
        system=system,
        horizon=span,
        warmup=warm,
        seed=scenario.sim.seed if seed is None else seed,
        replications=scenario.sim.replications if replications is None else replications,
        trace=trace,
    )


def cmd_simulate(
    scenario: Scenario,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    warmup: Optional[float] = None,
    replications: Optional[int] = None,
    trace: bool = False,
    workers: int = 1,
    opts: BuildOptions = BuildOptions(integer_blocklength=True),
) -> CommandResult:
    system = build_system(scenario, opts)
    config = sim_config(scenario, system, seed, horizon, warmup, replications, trace)
    report = simulate(config, workers)
    summary = {
        "occupancy_mean": report.occupancy_mean,
        "occupancy_variance": report.occupancy_variance,
        "occupancy_mean_hw": report.occupancy_mean_hw,
        "replications": report.replications,
        "horizon": report.horizon,
        "warmup": report.warmup,
        "seed": report.seed,
    }
    extra = {}
    if trace:
        extra["trace"] = pd.DataFrame(
            list(report.trace),
            columns=["replication", "class", "stage", "start", "end", "outcome"],
        )
    return CommandResult(report.to_frame(), summary, extra)


def cmd_validate(
    scenario: Scenario,
    k_sigma: float = 3.0,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    warmup: Optional[float] = None,
    replications: Optional[int] = None,
    cap: Optional[int] = None,
    workers: int = 1,
    opts: BuildOptions = BuildOptions(integer_blocklength=True),
) -> CommandResult:
    """Simulated against exact blocking, class by class."""
    columns = ["class", "exact", "simulated", "half_width", "deviation_hw", "passed"]
    if not scenario.classes:
        return CommandResult(pd.DataFrame(columns=columns), {"passed": True, "k_sigma": k_sigma})
    _require_bandwidth(scenario, "validate")
    system = build_system(scenario, opts)
    config = sim_config(scenario, system, seed, horizon, warmup, replications)
    comparison = validate_against_exact(config, k_sigma, cap, workers)
    if not comparison.passed:
        logger.warning("simulated blocking is outside %.3g half-widths of the exact value", k_sigma)
    return CommandResult(comparison.table, {"passed": comparison.passed, "k_sigma": k_sigma})


def cmd_sweep(
    scenario: Scenario,
    regime: str,
    sweep: Optional[Tuple[str, Sequence[float]]] = None,
    m_max: int = settings.DEFAULT_M_MAX,
) -> CommandResult:
    """Best stage count over a parameter grid.

    Without a sweep the built-in regime box is evaluated; with one, each
    scenario class is varied along that variable (sinr, d or delta).
    """
    if sweep is None:
        table = regime_grid(regime, m_max=m_max, kappa=scenario.kappa, **DEFAULT_REGIME_BOX)
    else:
        _require_classes(scenario, "sweep")
        variable, grid = sweep
        if variable == "bandwidth":
            raise ValidationError("sweep: the stage-count optimum does not depend on W; sweep sinr, d or delta")
        frames = []
        for cls in scenario.classes:
            box = {
                "payload_bits": [cls.payload_bits],
                "deadlines": [cls.deadline],
                "deltas": [cls.reliability_eps],
                "sinr_db": [linear_to_db(cls.sinr_linear)],
                "feedback_delays": [cls.feedback_delay],
            }
            key = {"sinr": "sinr_db", "deadline": "deadlines", "delta": "deltas"}[variable]
            values = [float(x) for x in grid]
            box[key] = [linear_to_db(x) for x in values] if variable == "sinr" else values
            frame = regime_grid(
                regime, m_max=m_max, kappa=scenario.kappa, arrival_rate=cls.arrival_rate or 1.0, **box
            )
            frame.insert(0, "class", cls.name)
            frames.append(frame)
        table = pd.concat(frames, ignore_index=True)
    feasible = table["best_m"] > 0
    summary = {
        "cells": len(table),
        "infeasible_cells": int((~feasible).sum()),
        "best_m_values": sorted(int(m) for m in np.unique(table.loc[feasible, "best_m"])),
    }
    return CommandResult(table, summary)


__all__ = [
    "CommandResult",
    "BuildOptions",
    "DEFAULT_REGIME_BOX",
    "build_scheme",
    "build_system",
    "sim_config",
    "cmd_dimension",
    "cmd_capacity",
    "cmd_optimize_harq",
    "cmd_blocking",
    "cmd_simulate",
    "cmd_validate",
    "cmd_sweep",
]
