# test_simulator.py
import logging
import math

import pytest

from src.dimensioning import ClassLoad, one_shot_staffing
from src.errors import ValidationError
from src.exact_queue import LossClass, blocking_report, compare_tall_wide, split_classes
from src.models import HarqScheme, SystemConfig, TrafficClass
from src.simulator import (
    SimConfig,
    default_horizon,
    default_warmup,
    occupancy_moments,
    simulate,
    validate_against_exact,
)


def make_class(rate, deadline=1e-3, feedback=0.0, eps=1e-3, name=""):
    return TrafficClass(rate, 256, 10.0, deadline, eps, feedback, name)


def one_shot_system(bandwidth, classes, blocklength=100.0, duration=1e-3, failure=0.0):
    schemes = [HarqScheme.homogeneous(1, blocklength, duration, 1.0, failure) for _ in classes]
    return SystemConfig(bandwidth, 1.0, classes, schemes)


def test_zero_load_gives_zeros():
    system = one_shot_system(1e5, [make_class(0.0)])
    report = simulate(SimConfig(system, horizon=1.0, replications=2))
    cr = report.classes[0]
    assert cr.arrivals == 0
    assert cr.blocking == 0.0
    assert cr.qos_violation == 0.0
    assert report.occupancy_mean == 0.0
    assert report.occupancy_variance == 0.0


def test_single_server_blocking_matches_erlang():
    # h = W and rho = lambda * s = 1
    system = one_shot_system(1e5, [make_class(1000.0)])
    report = simulate(SimConfig(system, horizon=20.0, warmup=0.01, seed=11, replications=5))
    cr = report.classes[0]
    assert cr.blocking_hw > 0
    assert abs(cr.blocking - 0.5) <= 3 * cr.blocking_hw
    # time-average and arrival-average fullness agree for Poisson arrivals
    assert abs(cr.blocking - cr.full_fraction) <= 3 * (cr.blocking_hw + cr.full_fraction_hw)


def test_same_seed_same_report():
    system = one_shot_system(2e5, [make_class(1500.0, name="a"), make_class(800.0, name="b")])
    config = SimConfig(system, horizon=2.0, warmup=0.01, seed=99, replications=3)
    first = simulate(config)
    assert first.to_dict() == simulate(config).to_dict()
    assert first.to_dict() == simulate(config, workers=2).to_dict()
    other = simulate(SimConfig(system, horizon=2.0, warmup=0.01, seed=100, replications=3))
    assert other.to_dict() != first.to_dict()


def test_packet_conservation():
    cls = make_class(3000.0, deadline=1e-3, feedback=1e-4)
    scheme = HarqScheme.homogeneous(2, 60.0, 4e-4, 1.0, 0.3)
    system = SystemConfig(3e5, 1.0, [cls], [scheme])
    report = simulate(SimConfig(system, horizon=3.0, warmup=0.01, seed=5, replications=2))
    cr = report.classes[0]
    assert cr.arrivals > 0
    assert cr.arrivals == cr.delivered + cr.blocked_dropped + cr.decode_exhausted + cr.in_flight
    assert len(cr.stage_blocking) == 2


def test_trace_records_stages_in_order():
    cls = make_class(500.0, deadline=1e-3, feedback=1e-4)
    scheme = HarqScheme.homogeneous(2, 60.0, 4e-4, 1.0, 0.5)
    system = SystemConfig(2e5, 1.0, [cls], [scheme])
    report = simulate(SimConfig(system, horizon=0.5, seed=3, replications=2, trace=True))
    assert report.trace
    assert {row["replication"] for row in report.trace} == {0}
    assert all(1 <= row["stage"] <= 2 for row in report.trace)
    assert {row["outcome"] for row in report.trace} <= {"blocked", "decoded", "failed", "in_flight"}
    assert all(row["end"] is None or row["end"] >= row["start"] for row in report.trace)


def test_unlimited_bandwidth_violations_are_decode_failures():
    system = one_shot_system(math.inf, [make_class(1000.0, feedback=1e-4)], duration=9e-4, failure=0.05)
    report = simulate(SimConfig(system, horizon=10.0, warmup=0.01, seed=2, replications=2))
    cr = report.classes[0]
    assert cr.blocked_dropped == 0
    assert cr.blocking == 0.0
    assert cr.qos_violation == pytest.approx(0.05, abs=0.01)
    assert cr.delay_p999 == pytest.approx(1e-3)


def test_occupancy_moments_at_unlimited_bandwidth():
    system = one_shot_system(math.inf, [make_class(2000.0)])
    report = simulate(SimConfig(system, horizon=20.0, warmup=0.01, seed=8, replications=2))
    h = 1e5
    mean, variance = occupancy_moments(report)
    assert mean == pytest.approx(2000.0 * 1e-3 * h, rel=0.05)
    assert variance == pytest.approx(2000.0 * 1e-3 * h**2, rel=0.1)


def test_stage_counts_follow_littles_law():
    lam, s, p = 2000.0, 3e-4, 0.2
    cls = make_class(lam, deadline=1e-3, feedback=1e-4)
    scheme = HarqScheme.homogeneous(2, 60.0, s, 1.0, p)
    system = SystemConfig(math.inf, 1.0, [cls], [scheme])
    report = simulate(SimConfig(system, horizon=20.0, warmup=0.01, seed=4, replications=2))
    first, second = report.classes[0].stage_mean_counts
    assert first == pytest.approx(lam * s, rel=0.05)
    assert second == pytest.approx(lam * p * s, rel=0.1)


def test_step_trace_moments():
    assert occupancy_moments([(0.0, 0.0), (1.0, 2.0), (3.0, 0.0), (4.0, 0.0)]) == pytest.approx((1.0, 1.0))
    with pytest.raises(ValidationError):
        occupancy_moments([(0.0, 1.0)])


def test_matches_exact_blocking_for_two_classes():
    wide = make_class(500.0, name="wide")
    narrow = make_class(1000.0, name="narrow")
    schemes = [
        HarqScheme.homogeneous(1, 500.0, 1e-3, 1.0, 0.0),
        HarqScheme.homogeneous(1, 250.0, 1e-3, 1.0, 0.0),
    ]
    system = SystemConfig(1e6, 1.0, [wide, narrow], schemes)
    result = validate_against_exact(SimConfig(system, horizon=20.0, warmup=0.01, seed=7, replications=5))
    assert list(result.table.columns) == ["class", "exact", "simulated", "half_width", "deviation_hw", "passed"]
    assert result.passed
    assert result.table["exact"].iloc[0] >= result.table["exact"].iloc[1]


def test_validation_at_zero_load_passes():
    system = one_shot_system(1e5, [make_class(0.0)])
    assert validate_against_exact(SimConfig(system, horizon=1.0)).passed


def test_validation_needs_one_shot_schemes():
    cls = make_class(100.0, feedback=1e-4)
    system = SystemConfig(1e6, 1.0, [cls], [HarqScheme.homogeneous(2, 60.0, 4e-4, 1.0, 0.1)])
    with pytest.raises(ValidationError):
        validate_against_exact(SimConfig(system, horizon=1.0))


def test_invalid_configs():
    system = one_shot_system(1e5, [make_class(10.0)])
    with pytest.raises(ValidationError):
        SimConfig(system, horizon=1.0, warmup=2.0)
    with pytest.raises(ValidationError):
        SimConfig(system, horizon=1.0, replications=0)
    with pytest.raises(ValidationError):
        SimConfig(system, horizon=1.0, seed=-1)


def test_horizon_and_warmup_defaults(caplog):
    system = one_shot_system(1e5, [make_class(10.0, deadline=2e-3), make_class(100.0)], duration=1e-3)
    assert default_warmup(system) == pytest.approx(2e-2)
    assert default_horizon(system, 1e-2) == pytest.approx(100 / (10.0 * 1e-2))
    with caplog.at_level(logging.WARNING, logger="src.simulator"):
        default_horizon(system, 1e-6)
    assert any("plain simulation" in rec.message for rec in caplog.records)


def test_rare_reliability_target_warns(caplog):
    system = one_shot_system(1e5, [make_class(100.0, eps=1e-6)])
    with caplog.at_level(logging.WARNING, logger="src.simulator"):
        simulate(SimConfig(system, horizon=0.1))
    assert any("not resolved" in rec.message for rec in caplog.records)


def loss_system(bandwidth, specs):
    """One-shot system from (arrival_rate, stage bandwidth, duration) triples."""
    classes, schemes = [], []
    for i, (rate, h, s) in enumerate(specs):
        classes.append(TrafficClass(rate, 256, 10.0, s, 1e-3, 0.0, f"c{i}"))
        schemes.append(HarqScheme.homogeneous(1, h * s, s, 1.0, 0.0))
    return SystemConfig(bandwidth, 1.0, classes, schemes)


@pytest.mark.parametrize(
    "bandwidth, specs, seed",
    [
        (4e5, [(1000.0, 1e5, 1e-3), (1000.0, 2e5, 1e-3)], 21),
        (5e5, [(800.0, 1e5, 1e-3), (1500.0, 1e5, 5e-4), (300.0, 3e5, 2e-3)], 22),
        (6e5, [(2000.0, 2e5, 1e-3), (4000.0, 1e5, 2.5e-4)], 23),
        (3e5, [(500.0, 1e5, 2e-3), (500.0, 1.5e5, 1e-3)], 24),
        (1e6, [(1500.0, 2.5e5, 1e-3), (2000.0, 1e5, 1e-3), (1000.0, 5e4, 2e-3)], 25),
    ],
)
def test_matches_exact_blocking_for_multiclass_systems(bandwidth, specs, seed):
    system = loss_system(bandwidth, specs)
    result = validate_against_exact(SimConfig(system, horizon=4.0, warmup=0.05, seed=seed, replications=4))
    assert len(result.table) == len(specs)
    assert (result.table["exact"] > 0.005).all()
    assert result.passed, result.table.to_string()


@pytest.mark.parametrize("delta", [1e-2, 1e-3])
def test_staffed_bandwidth_keeps_blocking_below_target(delta):
    # rho = 100 servers' worth of load at h = 1e5 Hz
    lam, r, s = 1e5, 100.0, 1e-3
    bandwidth = one_shot_staffing([ClassLoad(lam, r, s)], delta).required_bandwidth
    system = one_shot_system(bandwidth, [make_class(lam)], blocklength=r, duration=s)
    report = simulate(SimConfig(system, horizon=0.3, warmup=0.01, seed=31, replications=2))
    cr = report.classes[0]
    assert cr.arrivals > 50_000
    assert cr.blocking <= 1.5 * delta


def test_staffed_bandwidth_at_rare_target_checked_exactly():
    delta = 1e-6
    bandwidth = one_shot_staffing([ClassLoad(1e5, 100.0, 1e-3)], delta).required_bandwidth
    blocking = blocking_report([LossClass(1e5, 1e5, 1e-3)], bandwidth).per_class_blocking[0]
    assert 0.0 < blocking <= 1.5 * delta


def test_blocking_half_width_shrinks_with_horizon():
    system = one_shot_system(1e5, [make_class(1000.0)])
    widths = []
    for horizon in (10.0, 20.0):
        report = simulate(SimConfig(system, horizon=horizon, warmup=0.01, seed=41, replications=1))
        widths.append(report.classes[0].blocking_hw)
    assert widths[1] > 0
    assert 1.2 <= widths[0] / widths[1] <= 1.7


def test_split_system_ordering_matches_exact():
    specs = [(400.0, 2e5, 1e-3), (1000.0, 1e5, 1e-3), (200.0, 3e5, 1e-3)]
    bandwidth = 5e5
    tall = [LossClass(rate, h, s) for rate, h, s in specs]
    exact_after = compare_tall_wide(tall, bandwidth, split_class=2, factor=2).after

    wide = split_classes(tall, 2, 2)
    system = loss_system(bandwidth, [(c.arrival_rate, c.bandwidth, c.duration) for c in wide])
    result = validate_against_exact(SimConfig(system, horizon=10.0, warmup=0.05, seed=51, replications=4))
    assert result.table["exact"].tolist() == pytest.approx(list(exact_after), rel=1e-9)
    assert result.passed, result.table.to_string()

    # wider stages block more: h = 2e5 > 1.5e5 > 1e5
    exact_order = result.table["exact"].sort_values().index.tolist()
    simulated_order = result.table["simulated"].sort_values().index.tolist()
    assert exact_order == [1, 2, 0]
    assert simulated_order == exact_order


def test_empty_system_at_unlimited_bandwidth_reports_zeros():
    system = SystemConfig(math.inf, 1.0, [], [])
    report = simulate(SimConfig(system, horizon=1.0, replications=2))
    assert report.classes == ()
    assert report.occupancy_mean == 0.0
    assert report.occupancy_variance == 0.0
    assert report.occupancy_mean_hw == 0.0
