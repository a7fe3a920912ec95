"""
src/exact_queue.py

Exact stationary analysis of the finite-bandwidth multi-class loss system
(one-shot transmissions, immediate scheduling):

1) infinite-bandwidth product form: independent Poisson(rho_c) occupancies
2) enumeration of the feasible state set S = {n : h.n <= W} and of the
   per-class blocking frontiers S_c = {n in S : n + e_c not in S}
3) per-class blocking by PASTA: mass(S_c) / mass(S) under the truncated
   product form
4) the "tall vs. wide" comparison: class i with (h_i, s_i) replaced by
   (h_i / q, q * s_i)

Bandwidths are snapped to an exact integer grid before any feasibility test.
Weights are kept in log space and summed with a running max shift.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from . import settings
from .errors import StateSpaceCapacityError, ValidationError, require

logger = logging.getLogger(__name__)

# rationals with denominators up to this are recovered exactly from floats
GRID_MAX_DENOMINATOR = 10**9
_NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class LossClass:
    arrival_rate: float
    bandwidth: float
    duration: float

    def __post_init__(self) -> None:
        require(self.arrival_rate >= 0, f"arrival_rate must be >= 0, got {self.arrival_rate!r}")
        require(self.bandwidth > 0, f"bandwidth must be > 0, got {self.bandwidth!r}")
        require(self.duration > 0, f"duration must be > 0, got {self.duration!r}")
        require(math.isfinite(self.load), "load arrival_rate * duration must be finite")

    @property
    def load(self) -> float:
        return self.arrival_rate * self.duration

    def split(self, q: int) -> "LossClass":
        """Wide version: bandwidth / q held q times longer (load becomes q * rho)."""
        return LossClass(self.arrival_rate, self.bandwidth / q, self.duration * q)


@dataclass(frozen=True)
class OccupancyState:
    counts: Tuple[int, ...]

    def is_feasible(self, classes: Sequence[LossClass], bandwidth: float) -> bool:
        grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
        return sum(h * n for h, n in zip(grid, self.counts)) <= w

    def blocks(self, class_index: int, classes: Sequence[LossClass], bandwidth: float) -> bool:
        """True when this state is feasible and an extra class_index request is not."""
        grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
        used = sum(h * n for h, n in zip(grid, self.counts))
        return used <= w < used + grid[class_index]


@dataclass(frozen=True)
class BlockingReport:
    per_class_blocking: Tuple[float, ...]
    log_normalizing_constant: float
    state_count: int

    @property
    def normalizing_constant(self) -> float:
        """G, the product-form mass of S (may overflow to inf for huge loads)."""
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_normalizing_constant))


@dataclass
class StateSpace:
    states: List[OccupancyState]
    frontiers: List[List[OccupancyState]]
    bandwidth_units: Tuple[int, ...]
    capacity_units: int

    def __len__(self) -> int:
        return len(self.states)


# ------------------------------
# Integer bandwidth grid
# ------------------------------
def _as_fraction(value: float) -> Fraction:
    return Fraction(value).limit_denominator(GRID_MAX_DENOMINATOR)


def bandwidth_grid(bandwidths: Sequence[float], total: float) -> Tuple[List[int], int]:
    """Scale bandwidths and the total to a common integer grid."""
    if not math.isfinite(total):
        raise ValidationError("exact analysis needs a finite system bandwidth")
    fracs = [_as_fraction(h) for h in bandwidths]
    w = _as_fraction(total)
    scale = math.lcm(*(f.denominator for f in fracs), w.denominator)
    return [int(f * scale) for f in fracs], int(w * scale)


def state_bound(classes: Sequence[LossClass], bandwidth: float) -> int:
    """Upper bound prod(floor(W / h_c) + 1) on |S|."""
    grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
    return math.prod(w // h + 1 for h in grid)


def _check_cap(classes: Sequence[LossClass], bandwidth: float, cap: Optional[int]) -> int:
    limit = settings.state_cap() if cap is None else int(cap)
    bound = state_bound(classes, bandwidth)
    if bound > limit:
        logger.error("state space bound %d exceeds cap %d", bound, limit)
        raise StateSpaceCapacityError(bound, limit)
    logger.debug("enumerating up to %d states for %d classes", bound, len(classes))
    return bound


# ------------------------------
# Infinite bandwidth
# ------------------------------
class ProductFormDistribution:
    """Stationary law of the M/GI/inf system: independent Poisson occupancies."""

    def __init__(self, classes: Sequence[LossClass]):
        self.classes = tuple(classes)
        self.loads = np.array([c.load for c in self.classes], dtype=float)
        self.bandwidths = np.array([c.bandwidth for c in self.classes], dtype=float)

    def marginal(self, class_index: int):
        return poisson(self.loads[class_index])

    def pmf(self, counts: Sequence[int]) -> float:
        return float(np.prod([poisson.pmf(n, rho) for n, rho in zip(counts, self.loads)]))

    def mean_utilization(self) -> float:
        """E[h.N] = h.rho"""
        return float(self.bandwidths @ self.loads)

    def utilization_variance(self) -> float:
        return float((self.bandwidths**2) @ self.loads)


def infinite_bw_distribution(classes: Sequence[LossClass]) -> ProductFormDistribution:
    return ProductFormDistribution(classes)


# ------------------------------
# Enumeration of S and S_c
# ------------------------------
def iter_feasible_states(
    classes: Sequence[LossClass], bandwidth: float
) -> Iterator[Tuple[Tuple[int, ...], Tuple[bool, ...]]]:
    """Yield (counts, blocked flags per class) for every n in S, lexicographically."""
    grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
    k = len(grid)
    counts = [0] * k

    def walk(idx: int, used: int):
        if idx == k:
            free = w - used
            yield tuple(counts), tuple(free < h for h in grid)
            return
        for n in range((w - used) // grid[idx] + 1):
            counts[idx] = n
            yield from walk(idx + 1, used + n * grid[idx])
        counts[idx] = 0

    yield from walk(0, 0)


def enumerate_feasible_states(
    classes: Sequence[LossClass],
    bandwidth: float,
    cap: Optional[int] = None,
) -> StateSpace:
    """Materialise S and the blocking frontiers S_1..S_C."""
    require(len(classes) >= 1, "at least one class is required")
    _check_cap(classes, bandwidth, cap)
    grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
    states: List[OccupancyState] = []
    frontiers: List[List[OccupancyState]] = [[] for _ in classes]
    for counts, blocked in iter_feasible_states(classes, bandwidth):
        state = OccupancyState(counts)
        states.append(state)
        for c, flag in enumerate(blocked):
            if flag:
                frontiers[c].append(state)
    return StateSpace(states, frontiers, tuple(grid), w)


# ------------------------------
# Streaming log-space accumulation
# ------------------------------
@dataclass
class _LogSum:
    shift: float = -math.inf
    scaled: float = 0.0

    def add(self, log_value: float) -> None:
        if log_value == -math.inf:
            return
        if log_value > self.shift:
            self.scaled = self.scaled * math.exp(self.shift - log_value) + 1.0
            self.shift = log_value
        else:
            self.scaled += math.exp(log_value - self.shift)

    def merge(self, other: "_LogSum") -> None:
        if other.shift == -math.inf:
            return
        if other.shift > self.shift:
            self.scaled = self.scaled * math.exp(self.shift - other.shift) + other.scaled
            self.shift = other.shift
        else:
            self.scaled += other.scaled * math.exp(other.shift - self.shift)

    @property
    def value(self) -> float:
        if self.scaled == 0.0:
            return -math.inf
        return self.shift + math.log(self.scaled)


@dataclass
class _Partial:
    total: _LogSum = field(default_factory=_LogSum)
    blocked: List[_LogSum] = field(default_factory=list)
    count: int = 0


def _log_weights(load: float, nmax: int) -> np.ndarray:
    n = np.arange(nmax + 1, dtype=float)
    if load == 0.0:
        out = np.full(nmax + 1, -np.inf)
        out[0] = 0.0
        return out
    return n * math.log(load) - gammaln(n + 1.0)


def _partial_for_prefix(
    first: int,
    tables: Sequence[np.ndarray],
    grid: Sequence[int],
    w: int,
) -> _Partial:
    """Mass of all states whose first-class count equals `first`."""
    k = len(grid)
    part = _Partial(blocked=[_LogSum() for _ in range(k)])
    h_last = grid[-1]
    w_last = tables[-1]

    def close(used: int, prefix: float) -> None:
        free = w - used
        nmax = free // h_last
        seg = w_last[: nmax + 1] + prefix
        with np.errstate(divide="ignore"):
            part.total.add(float(logsumexp(seg)))
            for c in range(k):
                # n_last from n0 on leaves less than grid[c] free
                n0 = 0 if free < grid[c] else (free - grid[c]) // h_last + 1
                if n0 <= nmax:
                    part.blocked[c].add(float(logsumexp(seg[n0:])))
        part.count += nmax + 1

    def walk(idx: int, used: int, prefix: float) -> None:
        if idx == k - 1:
            close(used, prefix)
            return
        table = tables[idx]
        for n in range((w - used) // grid[idx] + 1):
            walk(idx + 1, used + n * grid[idx], prefix + float(table[n]))

    if k == 1:
        close(0, 0.0)
    else:
        walk(1, first * grid[0], float(tables[0][first]))
    return part


def _partials_chunk(args) -> List[_Partial]:
    firsts, loads, grid, w = args
    tables = [_log_weights(load, w // h) for load, h in zip(loads, grid)]
    return [_partial_for_prefix(f, tables, grid, w) for f in firsts]


def _exact_blocking(
    classes: Sequence[LossClass],
    bandwidth: float,
    cap: Optional[int],
    workers: int,
) -> BlockingReport:
    require(len(classes) >= 1, "at least one class is required")
    _check_cap(classes, bandwidth, cap)
    grid, w = bandwidth_grid([c.bandwidth for c in classes], bandwidth)
    loads = [c.load for c in classes]

    firsts = [0] if len(grid) == 1 else list(range(w // grid[0] + 1))
    workers = max(1, int(workers))
    if workers == 1 or len(firsts) < 2 * workers:
        partials = _partials_chunk((firsts, loads, grid, w))
    else:
        size = math.ceil(len(firsts) / workers)
        chunks = [firsts[i : i + size] for i in range(0, len(firsts), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            partials = [
                p
                for chunk_result in pool.map(
                    _partials_chunk, [(ch, loads, grid, w) for ch in chunks]
                )
                for p in chunk_result
            ]

    # merge in first-class order so the result does not depend on `workers`
    total = _LogSum()
    blocked = [_LogSum() for _ in grid]
    count = 0
    for part in partials:
        total.merge(part.total)
        for acc, other in zip(blocked, part.blocked):
            acc.merge(other)
        count += part.count

    log_g = total.value
    mass = sum(math.exp(p.total.value - log_g) for p in partials if p.total.scaled > 0)
    if abs(mass - 1.0) > _NORMALIZATION_TOL * len(partials):
        raise ArithmeticError(f"product-form masses sum to {mass!r} after normalisation")

    probs = tuple(min(1.0, max(0.0, math.exp(b.value - log_g))) for b in blocked)
    return BlockingReport(probs, log_g, count)


def blocking_report(
    classes: Sequence[LossClass],
    bandwidth: float,
    cap: Optional[int] = None,
    workers: int = 1,
) -> BlockingReport:
    """Blocking probability of every class in one enumeration pass."""
    return _exact_blocking(classes, bandwidth, cap, workers)


def blocking_probability(
    class_index: int,
    classes: Sequence[LossClass],
    bandwidth: float,
    cap: Optional[int] = None,
    workers: int = 1,
) -> float:
    require(0 <= class_index < len(classes), f"class index {class_index} out of range")
    return blocking_report(classes, bandwidth, cap, workers).per_class_blocking[class_index]


def erlang_b(servers: int, load: float) -> float:
    """Erlang-B by the recursion B(k) = rho*B(k-1) / (k + rho*B(k-1)), B(0) = 1."""
    require(int(servers) == servers and servers >= 0, "servers must be a non-negative integer")
    require(load >= 0, "load must be >= 0")
    b = 1.0
    for k in range(1, int(servers) + 1):
        b = load * b / (k + load * b)
    return b


# ------------------------------
# Tall vs. wide
# ------------------------------
@dataclass(frozen=True)
class TallWideComparison:
    before: Tuple[float, ...]
    after: Tuple[float, ...]
    split_class: int
    factor: int
    load_below_one: bool

    @property
    def wide_not_worse(self) -> bool:
        return all(a <= b for a, b in zip(self.after, self.before))


def split_classes(classes: Sequence[LossClass], split_class: int, factor: int) -> List[LossClass]:
    require(int(factor) == factor and factor >= 1, "split factor q must be a positive integer")
    require(0 <= split_class < len(classes), f"split class {split_class} out of range")
    out = list(classes)
    out[split_class] = classes[split_class].split(int(factor))
    return out


def compare_tall_wide(
    classes: Sequence[LossClass],
    bandwidth: float,
    split_class: int,
    factor: int,
    cap: Optional[int] = None,
    workers: int = 1,
) -> TallWideComparison:
    wide = split_classes(classes, split_class, factor)
    in_regime = classes[split_class].load < 1.0
    if not in_regime:
        logger.warning(
            "class %d has load %.4g >= 1; the wide-is-better guarantee does not apply",
            split_class,
            classes[split_class].load,
        )
    before = blocking_report(classes, bandwidth, cap, workers).per_class_blocking
    after = blocking_report(wide, bandwidth, cap, workers).per_class_blocking
    return TallWideComparison(before, after, split_class, int(factor), in_regime)


@dataclass
class ThresholdScan:
    table: pd.DataFrame
    threshold: Optional[float]


def scan_wide_threshold(
    classes: Sequence[LossClass],
    bandwidth_grid_values: Sequence[float],
    split_class: int,
    factor: int,
    cap: Optional[int] = None,
) -> ThresholdScan:
    """Smallest grid W from which the wide system is never worse, for every class.

    This is the threshold observed on the grid, not a bound derived from theory.
    """
    grid_values = [float(w) for w in bandwidth_grid_values]
    require(
        all(b > a for a, b in zip(grid_values, grid_values[1:])),
        "bandwidth grid must be strictly increasing",
    )
    rows = []
    for w in grid_values:
        cmp = compare_tall_wide(classes, w, split_class, factor, cap)
        row = {"bandwidth": w, "holds": cmp.wide_not_worse}
        for c, (b, a) in enumerate(zip(cmp.before, cmp.after)):
            row[f"before_{c}"] = b
            row[f"after_{c}"] = a
        rows.append(row)
    table = pd.DataFrame(rows)

    threshold: Optional[float] = None
    for w, holds in zip(reversed(grid_values), reversed(table["holds"].tolist())):
        if not holds:
            break
        threshold = w
    return ThresholdScan(table, threshold)


__all__ = [
    "LossClass",
    "OccupancyState",
    "BlockingReport",
    "StateSpace",
    "ProductFormDistribution",
    "TallWideComparison",
    "ThresholdScan",
    "bandwidth_grid",
    "state_bound",
    "infinite_bw_distribution",
    "iter_feasible_states",
    "enumerate_feasible_states",
    "blocking_report",
    "blocking_probability",
    "erlang_b",
    "split_classes",
    "compare_tall_wide",
    "scan_wide_threshold",
]
