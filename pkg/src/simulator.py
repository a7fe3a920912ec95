"""
src/simulator.py

Discrete-event simulation of the URLLC downlink with HARQ:

    arrival -> [stage m: h_{c,m} Hz for s_{c,m} s] -> [feedback f_c s]
            -> decoded (delivered) | failed -> stage m+1 or decode_exhausted

A request (first transmission or retransmission) is admitted only if the
free bandwidth covers h_{c,m}; otherwise the packet is dropped for good.
Events at the same instant run releases first, then in scheduling order.

One replication is single-threaded. Replications use independent random
substreams and are merged in replication order, so a (config, seed) pair
always produces the same report.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm, t as student_t

from .errors import ValidationError, require
from .exact_queue import LossClass, bandwidth_grid, blocking_report
from .models import SystemConfig

logger = logging.getLogger(__name__)

# event kinds; releases sort ahead of everything else at equal times
_STAGE_END = 0
_ARRIVAL = 1
_FEEDBACK = 1

_ARRIVALS_STREAM = 0
_DECODING_STREAM = 1
_BATCH = 1024

DELIVERED = "delivered"
BLOCKED_DROPPED = "blocked_dropped"
DECODE_EXHAUSTED = "decode_exhausted"
IN_FLIGHT = "in_flight"

RARE_EVENT_WARNING = 1e-4
# delivery exactly at the deadline is on time despite float rounding
_DEADLINE_SLACK = 1e-9


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    horizon: float
    warmup: float = 0.0
    seed: int = 0
    replications: int = 1
    trace: bool = False

    def __post_init__(self) -> None:
        require(self.warmup >= 0, f"warmup must be >= 0, got {self.warmup!r}")
        require(
            self.horizon > self.warmup,
            f"horizon ({self.horizon}) must exceed warmup ({self.warmup})",
        )
        require(
            int(self.replications) == self.replications and self.replications >= 1,
            "replications must be a positive integer",
        )
        require(0 <= int(self.seed) < 2**64, "seed must be a 64-bit unsigned integer")


@dataclass
class StageOutcome:
    start: float
    end: Optional[float] = None
    blocked: bool = False
    decoded: Optional[bool] = None


@dataclass
class PacketRecord:
    class_index: int
    arrival_time: float
    stages: List[StageOutcome] = field(default_factory=list)
    final_status: str = IN_FLIGHT
    total_delay: Optional[float] = None


@dataclass(frozen=True)
class ClassReport:
    name: str
    arrivals: int
    delivered: int
    blocked_dropped: int
    decode_exhausted: int
    in_flight: int
    blocking: float
    blocking_hw: float
    stage_blocking: Tuple[float, ...]
    stage_blocking_hw: Tuple[float, ...]
    decode_failure: float
    decode_failure_hw: float
    qos_violation: float
    qos_violation_hw: float
    delay_mean: float
    delay_p99: float
    delay_p999: float
    occupancy_mean: float
    occupancy_variance: float
    stage_mean_counts: Tuple[float, ...]
    full_fraction: float
    full_fraction_hw: float


@dataclass(frozen=True)
class SimReport:
    classes: Tuple[ClassReport, ...]
    occupancy_mean: float
    occupancy_variance: float
    occupancy_mean_hw: float
    replications: int
    horizon: float
    warmup: float
    seed: int
    trace: Tuple[dict, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cr in self.classes:
            row = asdict(cr)
            for m, (b, hw) in enumerate(zip(cr.stage_blocking, cr.stage_blocking_hw), start=1):
                row[f"stage{m}_blocking"] = b
                row[f"stage{m}_blocking_hw"] = hw
            for m, n in enumerate(cr.stage_mean_counts, start=1):
                row[f"stage{m}_mean_count"] = n
            for key in ("stage_blocking", "stage_blocking_hw", "stage_mean_counts"):
                row.pop(key)
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trace"] = list(self.trace)
        return out


# ------------------------------
# Random substreams
# ------------------------------
class _Stream:
    """Batched draws from one (replication, class, purpose) substream."""

    def __init__(self, seed: int, replication: int, class_index: int, purpose: int):
        seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(replication, class_index, purpose))
        self._rng = np.random.default_rng(seq)
        self._buf = np.empty(0)
        self._pos = 0

    def _next(self, draw) -> float:
        if self._pos >= self._buf.size:
            self._buf = draw(self._rng)
            self._pos = 0
        value = float(self._buf[self._pos])
        self._pos += 1
        return value

    def exponential(self, mean: float) -> float:
        return self._next(lambda g: g.exponential(mean, _BATCH))

    def uniform(self) -> float:
        return self._next(lambda g: g.random(_BATCH))


# ------------------------------
# One replication
# ------------------------------
@dataclass
class _ReplicationStats:
    window: float
    arrivals: List[int]
    delivered: List[int]
    blocked: List[int]
    exhausted: List[int]
    in_flight: List[int]
    late: List[int]
    stage_attempts: List[List[int]]
    stage_blocked: List[List[int]]
    delays: List[np.ndarray]
    occ_integral: float
    occ_sq_integral: float
    class_occ_integral: List[float]
    class_occ_sq_integral: List[float]
    count_integral: List[List[float]]
    full_time: List[float]
    trace: List[dict]


class _Engine:
    def __init__(self, config: SimConfig, replication: int):
        self.config = config
        system = config.system
        self.system = system
        self.replication = replication
        self.k = len(system)

        stage_bw = [[st.bandwidth for st in sch.stages] for sch in system.schemes]
        flat = [h for row in stage_bw for h in row]
        self.unlimited = math.isinf(system.bandwidth)
        if not flat:
            # no stages: a finite unit keeps the occupancy integrals at 0
            total = 1.0 if self.unlimited else system.bandwidth
            units, w_units = [], 1
        else:
            total = max(flat) if self.unlimited else system.bandwidth
            units, w_units = bandwidth_grid(flat, total)
        self.hz_per_unit = total / w_units
        it = iter(units)
        self.units = [[next(it) for _ in row] for row in stage_bw]
        self.w_units = w_units

        self.occupied = 0
        self.counts = [[0] * sch.num_stages for sch in system.schemes]
        self.class_units = [0] * self.k

        self.events: List[tuple] = []
        self.seq = 0
        self.now = 0.0
        self.packets: Dict[int, PacketRecord] = {}
        self.counted: Dict[int, bool] = {}
        self.next_id = 0

        seed = config.seed
        self.arrival_streams = [_Stream(seed, replication, c, _ARRIVALS_STREAM) for c in range(self.k)]
        self.decode_streams = [_Stream(seed, replication, c, _DECODING_STREAM) for c in range(self.k)]

        m_counts = [sch.num_stages for sch in system.schemes]
        self.stats = _ReplicationStats(
            window=config.horizon - config.warmup,
            arrivals=[0] * self.k,
            delivered=[0] * self.k,
            blocked=[0] * self.k,
            exhausted=[0] * self.k,
            in_flight=[0] * self.k,
            late=[0] * self.k,
            stage_attempts=[[0] * m for m in m_counts],
            stage_blocked=[[0] * m for m in m_counts],
            delays=[],
            occ_integral=0.0,
            occ_sq_integral=0.0,
            class_occ_integral=[0.0] * self.k,
            class_occ_sq_integral=[0.0] * self.k,
            count_integral=[[0.0] * m for m in m_counts],
            full_time=[0.0] * self.k,
            trace=[],
        )
        self._delays: List[List[float]] = [[] for _ in range(self.k)]
        self.keep_trace = config.trace and replication == 0

    # -- scheduling
    def _push(self, time: float, priority: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self.events, (time, priority, self.seq, kind, payload))
        self.seq += 1

    def _schedule_arrival(self, c: int) -> None:
        lam = self.system.classes[c].arrival_rate
        if lam > 0:
            self._push(self.now + self.arrival_streams[c].exponential(1.0 / lam), _ARRIVAL, "arrival", (c,))

    # -- time integrals over [warmup, horizon]
    def _advance(self, t: float) -> None:
        lo = max(self.now, self.config.warmup)
        hi = min(t, self.config.horizon)
        if hi > lo:
            dt = hi - lo
            b = self.occupied * self.hz_per_unit
            st = self.stats
            st.occ_integral += b * dt
            st.occ_sq_integral += b * b * dt
            for c in range(self.k):
                bc = self.class_units[c] * self.hz_per_unit
                st.class_occ_integral[c] += bc * dt
                st.class_occ_sq_integral[c] += bc * bc * dt
                for m, n in enumerate(self.counts[c]):
                    if n:
                        st.count_integral[c][m] += n * dt
                if not self.unlimited and self.w_units - self.occupied < self.units[c][0]:
                    st.full_time[c] += dt
        self.now = t

    # -- packet life cycle
    def _finish(self, pid: int, status: str) -> None:
        rec = self.packets.pop(pid)
        counted = self.counted.pop(pid)
        rec.final_status = status
        c = rec.class_index
        if status == DELIVERED:
            rec.total_delay = self.now - rec.arrival_time
        if self.keep_trace:
            self._emit_trace(rec)
        if not counted:
            return
        st = self.stats
        deadline = self.system.classes[c].deadline
        if status == DELIVERED:
            st.delivered[c] += 1
            self._delays[c].append(rec.total_delay)
            if rec.total_delay > deadline * (1.0 + _DEADLINE_SLACK):
                st.late[c] += 1
        elif status == BLOCKED_DROPPED:
            st.blocked[c] += 1
        else:
            st.exhausted[c] += 1

    def _emit_trace(self, rec: PacketRecord) -> None:
        for m, stage in enumerate(rec.stages, start=1):
            if stage.blocked:
                outcome = "blocked"
            elif stage.decoded is None:
                outcome = IN_FLIGHT
            else:
                outcome = "decoded" if stage.decoded else "failed"
            self.stats.trace.append(
                {
                    "replication": self.replication,
                    "class": rec.class_index,
                    "stage": m,
                    "start": stage.start,
                    "end": stage.end,
                    "outcome": outcome,
                }
            )

    def _request(self, pid: int, c: int, m: int) -> None:
        rec = self.packets[pid]
        scheme = self.system.schemes[c]
        if m >= scheme.num_stages or len(rec.stages) != m:
            raise RuntimeError(f"packet {pid} requested stage {m + 1} out of order")
        counted = self.counted[pid]
        if counted:
            self.stats.stage_attempts[c][m] += 1
        need = self.units[c][m]
        if not self.unlimited and self.occupied + need > self.w_units:
            rec.stages.append(StageOutcome(self.now, self.now, blocked=True))
            if counted:
                self.stats.stage_blocked[c][m] += 1
            self._finish(pid, BLOCKED_DROPPED)
            return
        self.occupied += need
        self.class_units[c] += need
        self.counts[c][m] += 1
        if not self.unlimited and self.occupied > self.w_units:
            raise RuntimeError("occupied bandwidth exceeds the system bandwidth")
        stage = scheme.stages[m]
        rec.stages.append(StageOutcome(self.now, self.now + stage.duration))
        self._push(self.now + stage.duration, _STAGE_END, "stage_end", (pid, c, m))

    def _on_arrival(self, c: int) -> None:
        pid = self.next_id
        self.next_id += 1
        self.packets[pid] = PacketRecord(c, self.now)
        counted = self.config.warmup <= self.now < self.config.horizon
        self.counted[pid] = counted
        if counted:
            self.stats.arrivals[c] += 1
        self._schedule_arrival(c)
        self._request(pid, c, 0)

    def _on_stage_end(self, pid: int, c: int, m: int) -> None:
        need = self.units[c][m]
        self.occupied -= need
        self.class_units[c] -= need
        self.counts[c][m] -= 1
        feedback = self.system.classes[c].feedback_delay
        self._push(self.now + feedback, _FEEDBACK, "feedback", (pid, c, m))

    def _on_feedback(self, pid: int, c: int, m: int) -> None:
        stage = self.system.schemes[c].stages[m]
        failed = self.decode_streams[c].uniform() < stage.failure_prob
        self.packets[pid].stages[m].decoded = not failed
        if not failed:
            self._finish(pid, DELIVERED)
        elif m + 1 < self.system.schemes[c].num_stages:
            self._request(pid, c, m + 1)
        else:
            self._finish(pid, DECODE_EXHAUSTED)

    def run(self) -> _ReplicationStats:
        for c in range(self.k):
            self._schedule_arrival(c)
        horizon = self.config.horizon
        while self.events and self.events[0][0] <= horizon:
            time, _, _, kind, payload = heapq.heappop(self.events)
            self._advance(time)
            if kind == "arrival":
                self._on_arrival(*payload)
            elif kind == "stage_end":
                self._on_stage_end(*payload)
            else:
                self._on_feedback(*payload)
        self._advance(horizon)

        for pid, rec in self.packets.items():
            if self.counted[pid]:
                self.stats.in_flight[rec.class_index] += 1
            if self.keep_trace:
                self._emit_trace(rec)
        self.stats.delays = [np.asarray(d, dtype=float) for d in self._delays]
        return self.stats


def _run_replication(args: Tuple[SimConfig, int]) -> _ReplicationStats:
    config, replication = args
    stats = _Engine(config, replication).run()
    logger.debug("replication %d finished: %s arrivals", replication, sum(stats.arrivals))
    return stats


# ------------------------------
# Aggregation
# ------------------------------
def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _half_width(samples: Sequence[float], successes: float = 0.0, trials: float = 0.0) -> float:
    """95% half-width: Student t across replications, binomial for a single one."""
    n = len(samples)
    if n >= 2:
        sd = float(np.std(samples, ddof=1))
        return float(student_t.ppf(0.975, n - 1)) * sd / math.sqrt(n)
    if trials > 0:
        p = successes / trials
        return float(norm.ppf(0.975)) * math.sqrt(p * (1.0 - p) / trials)
    return 0.0


def _summarise(config: SimConfig, runs: List[_ReplicationStats]) -> SimReport:
    system = config.system
    total_window = sum(r.window for r in runs)
    classes: List[ClassReport] = []
    names = system.class_names()
    for c, (cls, scheme) in enumerate(system):
        arrivals = sum(r.arrivals[c] for r in runs)
        delivered = sum(r.delivered[c] for r in runs)
        blocked = sum(r.blocked[c] for r in runs)
        exhausted = sum(r.exhausted[c] for r in runs)
        in_flight = sum(r.in_flight[c] for r in runs)
        late = sum(r.late[c] for r in runs)
        finished = [r.arrivals[c] - r.in_flight[c] for r in runs]

        per_block = [_ratio(r.blocked[c], r.arrivals[c]) for r in runs]
        per_fail = [_ratio(r.exhausted[c], r.arrivals[c]) for r in runs]
        per_viol = [
            _ratio(r.blocked[c] + r.exhausted[c] + r.late[c], f) for r, f in zip(runs, finished)
        ]
        per_full = [_ratio(r.full_time[c], r.window) for r in runs]

        stage_b, stage_hw = [], []
        for m in range(scheme.num_stages):
            attempts = sum(r.stage_attempts[c][m] for r in runs)
            blocked_m = sum(r.stage_blocked[c][m] for r in runs)
            samples = [_ratio(r.stage_blocked[c][m], r.stage_attempts[c][m]) for r in runs]
            stage_b.append(float(np.mean(samples)))
            stage_hw.append(_half_width(samples, blocked_m, attempts))

        delays = np.concatenate([r.delays[c] for r in runs]) if runs else np.empty(0)
        if delays.size:
            d_mean = float(delays.mean())
            d99, d999 = (float(v) for v in np.percentile(delays, [99.0, 99.9]))
        else:
            d_mean = d99 = d999 = 0.0

        occ_mean = _ratio(sum(r.class_occ_integral[c] for r in runs), total_window)
        occ_sq = _ratio(sum(r.class_occ_sq_integral[c] for r in runs), total_window)
        counts = tuple(
            _ratio(sum(r.count_integral[c][m] for r in runs), total_window)
            for m in range(scheme.num_stages)
        )
        classes.append(
            ClassReport(
                name=names[c],
                arrivals=arrivals,
                delivered=delivered,
                blocked_dropped=blocked,
                decode_exhausted=exhausted,
                in_flight=in_flight,
                blocking=float(np.mean(per_block)),
                blocking_hw=_half_width(per_block, blocked, arrivals),
                stage_blocking=tuple(stage_b),
                stage_blocking_hw=tuple(stage_hw),
                decode_failure=float(np.mean(per_fail)),
                decode_failure_hw=_half_width(per_fail, exhausted, arrivals),
                qos_violation=float(np.mean(per_viol)),
                qos_violation_hw=_half_width(per_viol, blocked + exhausted + late, sum(finished)),
                delay_mean=d_mean,
                delay_p99=d99,
                delay_p999=d999,
                occupancy_mean=occ_mean,
                occupancy_variance=max(0.0, occ_sq - occ_mean**2),
                stage_mean_counts=counts,
                full_fraction=float(np.mean(per_full)),
                full_fraction_hw=_half_width(per_full),
            )
        )

    occ_mean = _ratio(sum(r.occ_integral for r in runs), total_window)
    occ_sq = _ratio(sum(r.occ_sq_integral for r in runs), total_window)
    per_rep_means = [_ratio(r.occ_integral, r.window) for r in runs]
    trace = tuple(row for r in runs for row in r.trace)
    return SimReport(
        classes=tuple(classes),
        occupancy_mean=occ_mean,
        occupancy_variance=max(0.0, occ_sq - occ_mean**2),
        occupancy_mean_hw=_half_width(per_rep_means),
        replications=len(runs),
        horizon=config.horizon,
        warmup=config.warmup,
        seed=int(config.seed),
        trace=trace,
    )


# ------------------------------
# Public API
# ------------------------------
def default_warmup(system: SystemConfig) -> float:
    return 10.0 * max((c.deadline for c in system.classes), default=0.0)


def default_horizon(system: SystemConfig, rare_probability: float, target_events: int = 100) -> float:
    """Measured window long enough to expect target_events occurrences of an
    event of probability rare_probability in the least loaded active class."""
    rates = [c.arrival_rate for c in system.classes if c.arrival_rate > 0]
    require(0 < rare_probability <= 1, "rare_probability must lie in (0, 1]")
    if not rates:
        return 1.0
    if rare_probability < RARE_EVENT_WARNING:
        logger.warning(
            "estimating a probability near %.1e by plain simulation needs about %.1e arrivals",
            rare_probability,
            target_events / rare_probability,
        )
    return target_events / (min(rates) * rare_probability)


def simulate(config: SimConfig, workers: int = 1) -> SimReport:
    system = config.system
    for cls, scheme in system:
        scheme.check_deadline(cls)
        expected = cls.arrival_rate * (config.horizon - config.warmup) * config.replications
        if cls.reliability_eps < RARE_EVENT_WARNING and expected * cls.reliability_eps < 100:
            logger.warning(
                "%s: about %.3g decode failures expected at delta=%.1e; rates near delta are not resolved",
                cls.name or "traffic class",
                expected * cls.reliability_eps,
                cls.reliability_eps,
            )
    jobs = [(config, rep) for rep in range(int(config.replications))]
    workers = max(1, int(workers))
    if workers == 1 or len(jobs) == 1:
        runs = [_run_replication(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            runs = list(pool.map(_run_replication, jobs))
    return _summarise(config, runs)


def occupancy_moments(
    source: Union[SimReport, Sequence[Tuple[float, float]]],
) -> Tuple[float, float]:
    """Time-averaged mean and variance of the occupied bandwidth (Hz, Hz^2).

    `source` is a SimReport or a step trace [(t0, b0), (t1, b1), ..., (tn, _)]
    where b_i holds on [t_i, t_{i+1}).
    """
    if isinstance(source, SimReport):
        return source.occupancy_mean, source.occupancy_variance
    points = [(float(t), float(b)) for t, b in source]
    require(len(points) >= 2, "a step trace needs at least two points")
    times = np.array([p[0] for p in points])
    values = np.array([p[1] for p in points[:-1]])
    dt = np.diff(times)
    require(bool(np.all(dt >= 0)), "trace times must be non-decreasing")
    span = float(dt.sum())
    require(span > 0, "trace covers no time")
    mean = float((values * dt).sum() / span)
    var = float(((values - mean) ** 2 * dt).sum() / span)
    return mean, var


@dataclass
class ExactComparison:
    table: pd.DataFrame
    passed: bool
    report: SimReport


def loss_classes_of(system: SystemConfig) -> List[LossClass]:
    if not system.is_one_shot:
        raise ValidationError("exact blocking is available for one-shot (single stage) schemes only")
    return [
        LossClass(cls.arrival_rate, scheme.stage_bandwidth, scheme.duration)
        for cls, scheme in system
    ]


def validate_against_exact(
    config: SimConfig,
    k_sigma: float = 3.0,
    cap: Optional[int] = None,
    workers: int = 1,
) -> ExactComparison:
    """Simulated vs. exact per-class blocking; passes when every class is
    within k_sigma confidence half-widths of the exact value."""
    classes = loss_classes_of(config.system)
    exact = blocking_report(classes, config.system.bandwidth, cap).per_class_blocking
    report = simulate(config, workers)
    rows = []
    for c, (value, cr) in enumerate(zip(exact, report.classes)):
        diff = abs(cr.blocking - value)
        ok = diff <= k_sigma * cr.blocking_hw if cr.blocking_hw > 0 else diff == 0.0
        rows.append(
            {
                "class": cr.name,
                "exact": value,
                "simulated": cr.blocking,
                "half_width": cr.blocking_hw,
                "deviation_hw": diff / cr.blocking_hw if cr.blocking_hw > 0 else (0.0 if diff == 0 else math.inf),
                "passed": ok,
            }
        )
    table = pd.DataFrame(rows)
    return ExactComparison(table, bool(table["passed"].all()) if len(table) else True, report)


__all__ = [
    "SimConfig",
    "StageOutcome",
    "PacketRecord",
    "ClassReport",
    "SimReport",
    "ExactComparison",
    "DELIVERED",
    "BLOCKED_DROPPED",
    "DECODE_EXHAUSTED",
    "default_warmup",
    "default_horizon",
    "simulate",
    "occupancy_moments",
    "loss_classes_of",
    "validate_against_exact",
]
