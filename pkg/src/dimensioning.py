"""
src/dimensioning.py

Square-root staffing for URLLC bandwidth:
- one-shot rule      W >= zeta_mean + c(delta) * sqrt(zeta_var)
- HARQ rule          W >= eta_mean + c(delta) * sqrt(eta_var)
- single-class capacity: the largest arrival rate a bandwidth W carries
- scaling curves of that capacity against W, SINR, deadline and delta

The inequalities are returned at equality ("required bandwidth").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .channel import blocklength_for_reliability, q_inverse
from .errors import ValidationError, require
from .models import SystemConfig, TrafficClass


@dataclass(frozen=True)
class ClassLoad:
    """Per-class input of the one-shot rule: lambda, r channel uses, s seconds."""

    arrival_rate: float
    blocklength: float
    duration: float

    def __post_init__(self) -> None:
        require(self.arrival_rate >= 0, "arrival_rate must be >= 0")
        require(self.blocklength > 0, "blocklength must be > 0")
        require(self.duration > 0, "duration must be > 0")


@dataclass(frozen=True)
class StaffingResult:
    mean_utilization: float
    utilization_variance: float
    required_bandwidth: float
    safety_coefficient: float


# Both rules go through these two helpers so the one-stage HARQ case
# reproduces the one-shot numbers bit for bit.
def _mean_term(arrival_rate: float, expected_blocklength: float, kappa: float) -> float:
    return arrival_rate * expected_blocklength / kappa


def _variance_term(arrival_rate: float, expected_r2_over_s: float, kappa: float) -> float:
    return arrival_rate * expected_r2_over_s / kappa**2


def _staffing(mean: float, variance: float, delta: float) -> StaffingResult:
    c = q_inverse(delta)
    required = max(0.0, mean + c * math.sqrt(variance))
    return StaffingResult(mean, variance, required, c)


def one_shot_staffing(
    loads: Sequence[ClassLoad],
    delta: float,
    kappa: float = 1.0,
) -> StaffingResult:
    require(kappa > 0, "kappa must be > 0")
    mean = 0.0
    variance = 0.0
    for load in loads:
        mean += _mean_term(load.arrival_rate, load.blocklength, kappa)
        variance += _variance_term(load.arrival_rate, load.blocklength**2 / load.duration, kappa)
    return _staffing(mean, variance, delta)


def harq_staffing(system: SystemConfig, delta: float) -> StaffingResult:
    """Square-root staffing with retransmissions.

    Stage m of class c is requested with probability prod_{k<m} p_{c,k};
    the mean and variance terms weight r_{c,m} and r_{c,m}^2 / s_{c,m} by it.
    """
    mean = 0.0
    variance = 0.0
    for cls, scheme in system:
        scheme.check_deadline(cls)
        first = scheme.stages[0]
        expected_r = first.blocklength
        expected_r2s = first.blocklength**2 / first.duration
        for reach, stage in zip(scheme.reach_probabilities()[1:], scheme.stages[1:]):
            expected_r += reach * stage.blocklength
            expected_r2s += reach * stage.blocklength**2 / stage.duration
        mean += _mean_term(cls.arrival_rate, expected_r, system.kappa)
        variance += _variance_term(cls.arrival_rate, expected_r2s, system.kappa)
    return _staffing(mean, variance, delta)


# ------------------------------
# Single-class capacity
# ------------------------------
@dataclass(frozen=True)
class CapacityResult:
    arrival_rate: float
    blocklength: float
    feasible: bool


def capacity_for_blocklength(
    bandwidth: float,
    blocklength: float,
    deadline: float,
    delta: float,
    kappa: float = 1.0,
) -> CapacityResult:
    """Largest lambda with kappa*W = lambda*r + c*r*sqrt(lambda/d).

    Writing t = 2*sqrt(lambda*d):  t = -c + sqrt(c^2 + a),  a = 4*kappa*W*d/r,
    so lambda = kappa*W/r + (c^2/(2d)) * (1 - sqrt(1 + a/c^2)) for c > 0.
    """
    require(bandwidth >= 0, "bandwidth must be >= 0")
    require(deadline > 0, "deadline must be > 0")
    require(kappa > 0, "kappa must be > 0")
    r = float(blocklength)
    if kappa * bandwidth * deadline < r:
        return CapacityResult(0.0, r, False)
    c = q_inverse(delta)
    a = 4.0 * kappa * bandwidth * deadline / r
    root = math.sqrt(c * c + a)
    # rationalised when c > 0 to avoid cancellation
    t = a / (c + root) if c >= 0 else root - c
    return CapacityResult(t * t / (4.0 * deadline), r, True)


def single_class_capacity(
    bandwidth: float,
    cls: TrafficClass,
    kappa: float = 1.0,
    integer_blocklength: bool = False,
) -> CapacityResult:
    """Capacity of a one-shot class with s = d and per-packet failure delta."""
    r = blocklength_for_reliability(cls.link, cls.reliability_eps)
    if integer_blocklength:
        r = float(math.ceil(r))
    return capacity_for_blocklength(bandwidth, r, cls.deadline, cls.reliability_eps, kappa)


def capacity_from_traffic(cls: TrafficClass, bandwidth: float, kappa: float = 1.0) -> float:
    """lambda* in packets per second, 0.0 when W cannot carry a single packet."""
    return single_class_capacity(bandwidth, cls, kappa).arrival_rate


# ------------------------------
# Scaling curves
# ------------------------------
SWEEP_ALIASES: Dict[str, str] = {
    "w": "bandwidth",
    "bandwidth": "bandwidth",
    "sinr": "sinr",
    "sinr_linear": "sinr",
    "d": "deadline",
    "deadline": "deadline",
    "delta": "delta",
    "reliability_eps": "delta",
}


def normalize_sweep_variable(name: str) -> str:
    key = name.strip().lower()
    if key not in SWEEP_ALIASES:
        raise ValidationError(
            f"unknown sweep variable {name!r}; expected one of W, sinr, d, delta"
        )
    return SWEEP_ALIASES[key]


def _diagnostic(variable: str, x: float, result: CapacityResult, bandwidth: float, kappa: float) -> float:
    lam = result.arrival_rate
    if variable == "bandwidth":
        return lam / x
    if variable == "sinr":
        return lam / math.log2(x)
    if variable == "deadline":
        # lambda*(d) saturates at kappa*W/r as d grows
        return lam / (kappa * bandwidth / result.blocklength)
    return lam * -math.log2(x)


def scaling_curves(
    template: TrafficClass,
    variable: str,
    grid: Sequence[float],
    bandwidth: float,
    kappa: float = 1.0,
) -> pd.DataFrame:
    """lambda*(x) over a strictly increasing grid, with a per-point diagnostic ratio.

    Diagnostic per variable: W -> lambda*/W, sinr -> lambda*/log2(sinr),
    d -> lambda*/(kappa*W/r), delta -> lambda* * (-log2 delta).
    """
    var = normalize_sweep_variable(variable)
    xs = [float(x) for x in grid]
    require(len(xs) >= 1, "sweep grid is empty")
    require(all(b > a for a, b in zip(xs, xs[1:])), "sweep grid must be strictly increasing")

    rows: List[dict] = []
    for x in xs:
        w = bandwidth
        cls = template
        if var == "bandwidth":
            w = x
        elif var == "sinr":
            cls = _replace_class(template, sinr_linear=x)
        elif var == "deadline":
            cls = _replace_class(template, deadline=x)
        else:
            cls = _replace_class(template, reliability_eps=x)
        result = single_class_capacity(w, cls, kappa)
        if not result.feasible:
            raise ValidationError(
                f"{var}={x:.6g} is outside the feasible region: one packet needs "
                f"{result.blocklength:.6g} channel uses but kappa*W*d = {kappa * w * cls.deadline:.6g}"
            )
        rows.append(
            {
                "sweep_var": var,
                "x": x,
                "lambda_star": result.arrival_rate,
                "blocklength": result.blocklength,
                "diagnostic_ratio": _diagnostic(var, x, result, w, kappa),
            }
        )
    return pd.DataFrame(rows)


def _replace_class(cls: TrafficClass, **changes) -> TrafficClass:
    # capacity ignores feedback; keep the record valid when sweeping short deadlines
    if cls.feedback_delay >= changes.get("deadline", cls.deadline):
        changes["feedback_delay"] = 0.0
    return replace(cls, **changes)


def curve_diagnostics(table: pd.DataFrame) -> Dict[str, float]:
    lam = table["lambda_star"].to_numpy(dtype=float)
    x = table["x"].to_numpy(dtype=float)
    diag = table["diagnostic_ratio"].to_numpy(dtype=float)
    out: Dict[str, float] = {
        "band_ratio": float(diag.max() / diag.min()) if diag.min() > 0 else math.inf,
        "monotone_increasing": float(bool(np.all(np.diff(lam) > 0))),
    }
    if len(lam) >= 2:
        out["last_successive_ratio"] = float(lam[-1] / lam[-2])
    if len(lam) >= 3:
        slopes = np.diff(lam) / np.diff(x)
        # concave <=> slopes never increase
        out["max_slope_increase"] = float(np.max(np.diff(slopes)))
    return out


__all__ = [
    "ClassLoad",
    "StaffingResult",
    "CapacityResult",
    "one_shot_staffing",
    "harq_staffing",
    "capacity_for_blocklength",
    "single_class_capacity",
    "capacity_from_traffic",
    "normalize_sweep_variable",
    "scaling_curves",
    "curve_diagnostics",
]
