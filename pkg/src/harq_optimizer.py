"""
src/harq_optimizer.py

Repetition-coding HARQ with homogeneous stages: for every stage count m the
stage duration is fixed by the deadline split m * (s + f) = d and the
per-stage target p <= delta^(1/m) bounds the blocklength from below. Within
that bound the optimizer scans integer blocklengths for the regime objective,
then evaluates m = 1..m_max exhaustively and keeps the smallest objective
(ties go to the smaller m).

Two objectives, one per load regime (per unit of arrival rate):
    variance dominated: (lambda / kappa^2) * (r^2 / s) * sum_{k<m} p^k
    mean dominated:     (lambda / kappa)   *  r        * sum_{k<m} p^k
With include_final_term=True the sums run to k = m (m + 1 terms).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from . import settings
from .channel import (
    LinkSpec,
    blocklength_for_reliability,
    db_to_linear,
    failure_probabilities,
    failure_probability,
)
from .errors import InfeasibleError, ValidationError, require, require_probability
from .models import HarqScheme, TrafficClass

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["m", "r", "s", "h", "p_stage", "objective", "feasible"]


class Regime(str, Enum):
    VARIANCE = "variance_dominated"
    MEAN = "mean_dominated"

    @classmethod
    def parse(cls, value: Union[str, "Regime"]) -> "Regime":
        if isinstance(value, Regime):
            return value
        key = str(value).strip().lower()
        for regime in cls:
            if key in (regime.value, regime.value.split("_")[0]):
                return regime
        raise ValidationError(f"unknown regime {value!r}; expected 'mean' or 'variance'")


@dataclass(frozen=True)
class RegimeObjective:
    regime: Regime
    value: float


@dataclass(frozen=True)
class SweepRow:
    m: int
    blocklength: float
    duration: float
    bandwidth: float
    stage_failure_prob: float
    objective: float
    feasible: bool
    reason: str = ""


@dataclass(frozen=True)
class OptimizationResult:
    best_scheme: HarqScheme
    objective: RegimeObjective
    per_m_table: Tuple[SweepRow, ...]

    @property
    def best_m(self) -> int:
        return self.best_scheme.num_stages

    def to_frame(self) -> pd.DataFrame:
        return sweep_frame(self.per_m_table)


# ------------------------------
# Building blocks
# ------------------------------
def minimal_blocklength_for_stage_target(
    link: Union[LinkSpec, TrafficClass],
    per_stage_p: float,
    include_log_term: bool = False,
) -> int:
    """Smallest integer r with failure_probability(r) <= per_stage_p."""
    if isinstance(link, TrafficClass):
        link = link.link
    p = require_probability(per_stage_p, "per_stage_p")
    r = max(1, math.ceil(blocklength_for_reliability(link, p, include_log_term)))
    while failure_probability(r, link, include_log_term) > p:
        r += 1
    while r > 1 and failure_probability(r - 1, link, include_log_term) <= p:
        r -= 1
    return r


def _expected_transmissions(p: float, stages: int, include_final_term: bool) -> float:
    terms = stages + 1 if include_final_term else stages
    return sum(p**k for k in range(terms))


def _regime_factor(regime: Regime, arrival_rate: float, kappa: float, duration: float) -> Tuple[float, int]:
    """(factor, power) with objective = factor * r**power * sum p^k."""
    if regime is Regime.VARIANCE:
        return arrival_rate / (kappa**2 * duration), 2
    return arrival_rate / kappa, 1


def objective_for_scheme(
    scheme: HarqScheme,
    regime: Union[str, Regime],
    arrival_rate: float,
    kappa: float = 1.0,
    include_final_term: bool = False,
) -> RegimeObjective:
    regime = Regime.parse(regime)
    require(scheme.is_homogeneous, "regime objectives are defined for homogeneous schemes")
    require(kappa > 0, "kappa must be > 0")
    weight = _expected_transmissions(
        scheme.stage_failure_prob, scheme.num_stages, include_final_term
    )
    factor, power = _regime_factor(regime, arrival_rate, kappa, scheme.duration)
    return RegimeObjective(regime, factor * scheme.blocklength**power * weight)


def best_blocklength(
    cls: TrafficClass,
    stages: int,
    duration: float,
    regime: Union[str, Regime],
    max_blocklength: float = math.inf,
    include_final_term: bool = False,
    include_log_term: bool = False,
) -> int:
    """Integer r >= r_min minimizing r**power * sum_k p(r)^k for one stage count.

    r_min meets the per-stage target delta^(1/m); a longer r can still win
    because it lowers the retransmission weight. Candidates stop where
    r**power alone (weight 1) reaches the value at r_min, so the scan is exact.
    Ties go to the shorter blocklength. r_min is returned as is when it
    already exceeds max_blocklength.
    """
    regime = Regime.parse(regime)
    link = cls.link
    r_min = minimal_blocklength_for_stage_target(link, cls.reliability_eps ** (1.0 / stages), include_log_term)
    _, power = _regime_factor(regime, 1.0, 1.0, duration)
    weight_min = _expected_transmissions(
        failure_probability(r_min, link, include_log_term), stages, include_final_term
    )
    r_hi = math.floor(r_min * weight_min ** (1.0 / power))
    if math.isfinite(max_blocklength):
        r_hi = min(r_hi, math.floor(max_blocklength))
    if r_hi <= r_min:
        return r_min
    candidates = np.arange(r_min, r_hi + 1, dtype=float)
    p = failure_probabilities(candidates, link, include_log_term)
    terms = stages + 1 if include_final_term else stages
    weights = np.power.outer(p, np.arange(terms)).sum(axis=1)
    return int(candidates[int(np.argmin(candidates**power * weights))])


def homogeneous_scheme(
    cls: TrafficClass,
    stages: int,
    kappa: float = 1.0,
    include_log_term: bool = False,
    regime: Optional[Union[str, Regime]] = None,
    bandwidth: float = math.inf,
    include_final_term: bool = False,
) -> Tuple[Optional[HarqScheme], str]:
    """Scheme with m(s + f) = d and p_stage <= delta^(1/m), or (None, reason).

    Without a regime r is the smallest integer meeting the per-stage target;
    with one, r is the best_blocklength for that regime within `bandwidth`.
    """
    duration = cls.deadline / stages - cls.feedback_delay
    if duration <= 0:
        return None, f"stage duration d/m - f = {duration:.6g} s is not positive"
    if regime is None:
        r = minimal_blocklength_for_stage_target(cls.link, cls.reliability_eps ** (1.0 / stages), include_log_term)
    else:
        r = best_blocklength(
            cls,
            stages,
            duration,
            regime,
            max_blocklength=kappa * duration * bandwidth,
            include_final_term=include_final_term,
            include_log_term=include_log_term,
        )
    p = failure_probability(r, cls.link, include_log_term)
    return HarqScheme.homogeneous(stages, float(r), duration, kappa, p), ""


def _evaluate(
    cls: TrafficClass,
    regime: Regime,
    arrival_rate: float,
    bandwidth: float,
    kappa: float,
    m_max: int,
    include_final_term: bool,
    include_log_term: bool,
) -> List[Tuple[SweepRow, Optional[HarqScheme]]]:
    require(int(m_max) == m_max and m_max >= 1, "m_max must be a positive integer")
    out = []
    nan = float("nan")
    for m in range(1, int(m_max) + 1):
        scheme, reason = homogeneous_scheme(
            cls, m, kappa, include_log_term, regime, bandwidth, include_final_term
        )
        if scheme is None:
            logger.debug("m=%d infeasible: %s", m, reason)
            out.append((SweepRow(m, nan, cls.deadline / m - cls.feedback_delay, nan, nan, nan, False, reason), None))
            continue
        value = objective_for_scheme(scheme, regime, arrival_rate, kappa, include_final_term).value
        feasible = scheme.stage_bandwidth <= bandwidth
        if not feasible:
            reason = f"stage bandwidth {scheme.stage_bandwidth:.6g} Hz exceeds W = {bandwidth:.6g} Hz"
            logger.debug("m=%d infeasible: %s", m, reason)
        row = SweepRow(
            m,
            scheme.blocklength,
            scheme.duration,
            scheme.stage_bandwidth,
            scheme.stage_failure_prob,
            value,
            feasible,
            reason,
        )
        out.append((row, scheme if feasible else None))
    return out


def sweep_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    data = [
        {
            "m": row.m,
            "r": row.blocklength,
            "s": row.duration,
            "h": row.bandwidth,
            "p_stage": row.stage_failure_prob,
            "objective": row.objective,
            "feasible": row.feasible,
        }
        for row in rows
    ]
    return pd.DataFrame(data, columns=SWEEP_COLUMNS)


# ------------------------------
# Optimizer and sweeps
# ------------------------------
def optimize(
    cls: TrafficClass,
    regime: Union[str, Regime],
    bandwidth: float = math.inf,
    kappa: float = 1.0,
    m_max: int = settings.DEFAULT_M_MAX,
    arrival_rate: Optional[float] = None,
    include_final_term: bool = False,
    include_log_term: bool = False,
) -> OptimizationResult:
    regime = Regime.parse(regime)
    lam = cls.arrival_rate if arrival_rate is None else float(arrival_rate)
    evaluated = _evaluate(
        cls, regime, lam, bandwidth, kappa, m_max, include_final_term, include_log_term
    )
    best: Optional[Tuple[SweepRow, HarqScheme]] = None
    for row, scheme in evaluated:
        if scheme is None:
            continue
        # strict comparison keeps the smaller m on ties
        if best is None or row.objective < best[0].objective:
            best = (row, scheme)
    rows = tuple(row for row, _ in evaluated)
    if best is None:
        reasons = {row.m: row.reason for row in rows}
        label = cls.name or "traffic class"
        raise InfeasibleError(
            f"{label}: no feasible stage count in 1..{m_max}: "
            + "; ".join(f"m={m}: {why}" for m, why in reasons.items()),
            reasons,
        )
    return OptimizationResult(best[1], RegimeObjective(regime, best[0].objective), rows)


def sweep_table(
    cls: TrafficClass,
    regime: Union[str, Regime],
    arrival_rate: Optional[float] = None,
    m_max: int = settings.DEFAULT_M_MAX,
    kappa: float = 1.0,
    bandwidth: float = math.inf,
    include_final_term: bool = False,
) -> pd.DataFrame:
    """Objective per stage count, the quantity plotted against m."""
    result = optimize(
        cls,
        regime,
        bandwidth=bandwidth,
        kappa=kappa,
        m_max=m_max,
        arrival_rate=arrival_rate,
        include_final_term=include_final_term,
    )
    return result.to_frame()


def regime_grid(
    regime: Union[str, Regime],
    payload_bits: Iterable[int],
    deadlines: Iterable[float],
    deltas: Iterable[float],
    sinr_db: Iterable[float],
    feedback_delays: Iterable[float],
    m_max: int = settings.DEFAULT_M_MAX,
    kappa: float = 1.0,
    arrival_rate: float = 1.0,
) -> pd.DataFrame:
    """Best stage count over a parameter box, one row per grid cell.

    Cells where no stage count is feasible get best_m = 0.
    """
    regime = Regime.parse(regime)
    rows = []
    for bits, d, delta, f, snr in itertools.product(
        list(payload_bits), list(deadlines), list(deltas), list(feedback_delays), list(sinr_db)
    ):
        cls = TrafficClass(arrival_rate, int(bits), db_to_linear(snr), d, delta, f)
        try:
            result = optimize(cls, regime, kappa=kappa, m_max=m_max)
            best_m, value = result.best_m, result.objective.value
            multi_stage_feasible = any(r.feasible for r in result.per_m_table if r.m >= 2)
        except InfeasibleError:
            best_m, value, multi_stage_feasible = 0, float("nan"), False
        rows.append(
            {
                "payload_bits": int(bits),
                "deadline": d,
                "delta": delta,
                "feedback_delay": f,
                "sinr_db": snr,
                "best_m": best_m,
                "objective": value,
                "multi_stage_feasible": multi_stage_feasible,
            }
        )
    return pd.DataFrame(rows)


__all__ = [
    "Regime",
    "RegimeObjective",
    "SweepRow",
    "OptimizationResult",
    "SWEEP_COLUMNS",
    "minimal_blocklength_for_stage_target",
    "best_blocklength",
    "objective_for_scheme",
    "homogeneous_scheme",
    "optimize",
    "sweep_frame",
    "sweep_table",
    "regime_grid",
]
