# test_exact_queue.py
import logging
import math

import pytest

from src.errors import StateSpaceCapacityError, ValidationError
from src.exact_queue import (
    LossClass,
    OccupancyState,
    blocking_probability,
    blocking_report,
    compare_tall_wide,
    enumerate_feasible_states,
    erlang_b,
    infinite_bw_distribution,
    scan_wide_threshold,
    state_bound,
)

W = 1.0


def single(load: float, servers: int) -> LossClass:
    return LossClass(arrival_rate=load, bandwidth=W / servers, duration=1.0)


def test_infinite_bandwidth_distribution():
    empty = infinite_bw_distribution([LossClass(0.0, 1.0, 1.0)])
    assert empty.marginal(0).pmf(0) == pytest.approx(1.0)

    one = infinite_bw_distribution([LossClass(1.0, 1.0, 1.0)])
    assert one.marginal(0).pmf(0) == pytest.approx(math.exp(-1.0))

    h1, h2 = 3.0, 5.0
    two = infinite_bw_distribution([LossClass(1.0, h1, 1.0), LossClass(4.0, h2, 0.5)])
    assert two.mean_utilization() == pytest.approx(h1 + 2 * h2)
    assert two.utilization_variance() == pytest.approx(h1**2 + 2 * h2**2)
    assert two.pmf((0, 0)) == pytest.approx(math.exp(-3.0))


def test_enumeration_examples():
    space = enumerate_feasible_states([LossClass(1.0, W, 1.0)], W)
    assert [s.counts for s in space.states] == [(0,), (1,)]
    assert [s.counts for s in space.frontiers[0]] == [(1,)]

    assert len(enumerate_feasible_states([LossClass(1.0, W / 3, 1.0)], W)) == 4

    space = enumerate_feasible_states([LossClass(1.0, W / 2, 1.0), LossClass(1.0, W / 2, 1.0)], W)
    assert {s.counts for s in space.states} == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)}
    assert {s.counts for s in space.frontiers[0]} == {(2, 0), (1, 1), (0, 2)}


def test_frontier_is_exact_blocking_set():
    classes = [LossClass(1.0, 0.3, 1.0), LossClass(1.0, 0.45, 1.0)]
    space = enumerate_feasible_states(classes, W)
    for c, frontier in enumerate(space.frontiers):
        members = {s.counts for s in frontier}
        for state in space.states:
            assert state.is_feasible(classes, W)
            assert (state.counts in members) == state.blocks(c, classes, W)
    # 0.3 * 2 + 0.45 = 1.05 > 1 must not be feasible despite float sums
    assert not OccupancyState((2, 1)).is_feasible(classes, W)
    assert OccupancyState((0, 2)).is_feasible(classes, W)


def test_blocking_examples():
    assert blocking_probability(0, [single(1.0, 1)], W) == pytest.approx(0.5, abs=1e-12)
    assert blocking_probability(0, [single(1e-9, 1)], W) < 1e-8
    assert blocking_probability(0, [single(0.0, 1)], W) == 0.0
    assert blocking_probability(0, [single(5.0, 10)], W) == pytest.approx(0.0184, abs=1e-4)


@pytest.mark.parametrize("servers", [1, 2, 5, 10, 20, 35, 50])
@pytest.mark.parametrize("load", [0.1, 0.5, 1.0, 2.0, 5.0])
def test_single_class_matches_erlang_b(servers, load):
    exact = blocking_probability(0, [single(load, servers)], W)
    assert exact == pytest.approx(erlang_b(servers, load), abs=1e-12)


def test_erlang_b_recursion():
    assert erlang_b(0, 3.0) == 1.0
    assert erlang_b(1, 1.0) == pytest.approx(0.5)
    assert erlang_b(2, 1.0) == pytest.approx(0.2)
    with pytest.raises(ValidationError):
        erlang_b(-1, 1.0)


def test_insensitivity_to_rate_and_duration():
    a = [LossClass(2.0, 0.25, 0.5), LossClass(3.0, 0.5, 1.0)]
    b = [LossClass(1.0, 0.25, 1.0), LossClass(6.0, 0.5, 0.5)]
    assert blocking_report(a, W).per_class_blocking == blocking_report(b, W).per_class_blocking


def test_report_fields_and_normalisation():
    classes = [LossClass(1.0, 0.5, 1.0), LossClass(2.0, 0.25, 1.0)]
    report = blocking_report(classes, W)
    assert report.state_count == len(enumerate_feasible_states(classes, W))
    assert report.normalizing_constant > 1.0
    assert all(0.0 <= p <= 1.0 for p in report.per_class_blocking)
    # the wider class can never be blocked less often
    assert report.per_class_blocking[0] >= report.per_class_blocking[1]


def test_partitioned_enumeration_is_deterministic():
    classes = [LossClass(3.0, 1.0, 1.0), LossClass(2.0, 2.0, 1.0), LossClass(1.0, 3.0, 1.0)]
    serial = blocking_report(classes, 40.0, workers=1)
    parallel = blocking_report(classes, 40.0, workers=3)
    assert serial == parallel


def test_blocking_non_increasing_in_bandwidth():
    classes = [LossClass(2.0, 1.0, 1.0), LossClass(1.0, 2.0, 1.0)]
    previous = None
    for w in range(2, 16):
        current = blocking_report(classes, float(w)).per_class_blocking
        if previous is not None:
            assert all(c <= p + 1e-12 for c, p in zip(current, previous))
        previous = current


def test_state_cap():
    classes = [LossClass(1.0, 0.01, 1.0), LossClass(1.0, 0.01, 1.0)]
    assert state_bound(classes, W) == 101 * 101
    with pytest.raises(StateSpaceCapacityError) as err:
        blocking_report(classes, W, cap=100)
    assert err.value.exit_code == 4
    assert "simulator" in str(err.value)


def test_infinite_bandwidth_rejected_by_exact_analysis():
    with pytest.raises(ValidationError):
        blocking_report([single(1.0, 1)], math.inf)


def test_tall_wide_identity_and_single_class():
    classes = [LossClass(0.5, W / 2, 1.0)]
    same = compare_tall_wide(classes, W, 0, 1)
    assert same.before == same.after

    cmp = compare_tall_wide(classes, W, 0, 2)
    assert cmp.load_below_one
    assert cmp.after[0] <= cmp.before[0]
    assert cmp.before[0] == pytest.approx(erlang_b(2, 0.5), abs=1e-12)
    assert cmp.after[0] == pytest.approx(erlang_b(4, 1.0), abs=1e-12)


def test_tall_wide_outside_regime_is_flagged(caplog):
    with caplog.at_level(logging.WARNING, logger="src.exact_queue"):
        cmp = compare_tall_wide([LossClass(2.0, W / 2, 1.0)], W, 0, 2)
    assert not cmp.load_below_one
    assert any("does not apply" in rec.message for rec in caplog.records)


@pytest.mark.parametrize("factor", [2, 4])
@pytest.mark.parametrize(
    "classes",
    [
        [LossClass(0.5, 1.0, 1.0), LossClass(2.0, 1.0, 1.0)],
        [LossClass(0.5, 2.0, 1.0), LossClass(1.0, 1.0, 1.0)],
        [LossClass(0.25, 1.0, 2.0), LossClass(3.0, 1.0, 1.0)],
        [LossClass(0.9, 1.0, 1.0), LossClass(0.5, 2.0, 1.0)],
        [LossClass(0.3, 2.0, 1.0), LossClass(1.5, 1.0, 1.0)],
    ],
)
def test_wide_threshold_exists(classes, factor):
    scan = scan_wide_threshold(classes, [float(w) for w in range(4, 25, 2)], 0, factor)
    assert list(scan.table.columns[:2]) == ["bandwidth", "holds"]
    assert scan.threshold is not None
    assert scan.table.loc[scan.table["bandwidth"] >= scan.threshold, "holds"].all()
