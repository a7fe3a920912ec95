# test_channel.py
import math

import numpy as np
import pytest

from src.channel import (
    LinkSpec,
    blocklength_for_reliability,
    channel_dispersion,
    coding_point,
    db_to_linear,
    failure_probabilities,
    failure_probability,
    linear_to_db,
    normal_approximation_table,
    q_function,
    q_inverse,
    shannon_capacity,
)
from src.errors import DomainError

LOG2E_SQ = math.log2(math.e) ** 2


def test_capacity_values():
    assert shannon_capacity(1.0) == 1.0
    assert shannon_capacity(10.0) == pytest.approx(3.4594, abs=1e-4)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_capacity_rejects_non_positive_sinr(bad):
    with pytest.raises(DomainError):
        shannon_capacity(bad)
    with pytest.raises(DomainError):
        channel_dispersion(bad)


def test_dispersion_values_and_shape():
    assert channel_dispersion(1.0) == pytest.approx(0.75 * LOG2E_SQ, rel=1e-12)
    assert channel_dispersion(1.0) == pytest.approx(1.5612, rel=1e-3)
    assert channel_dispersion(10.0) == pytest.approx(2.0642, abs=1e-3)
    assert channel_dispersion(1e-9) < 1e-8
    grid = np.logspace(-3, 4, 50)
    values = [channel_dispersion(s) for s in grid]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert max(values) < LOG2E_SQ


def test_q_function_basics():
    assert q_function(0.0) == 0.5
    assert q_inverse(0.5) == pytest.approx(0.0, abs=1e-12)
    assert q_inverse(1e-6) == pytest.approx(4.7534, abs=1e-4)


def test_q_inverse_round_trip():
    for d in np.logspace(-9, math.log10(0.5), 60):
        assert abs(q_function(q_inverse(d)) - d) <= 1e-10 * max(d, 1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_q_inverse_domain(bad):
    with pytest.raises(DomainError):
        q_inverse(bad)


def test_blocklength_at_one_half_is_l_over_c():
    link = LinkSpec(10.0, 256)
    assert blocklength_for_reliability(link, 0.5) == pytest.approx(256 / math.log2(11), rel=1e-12)
    assert blocklength_for_reliability(link, 0.5) == pytest.approx(74.00, abs=0.01)


def test_blocklength_reference_point():
    link = LinkSpec(10.0, 256)
    r = blocklength_for_reliability(link, 1e-6)
    assert r == pytest.approx(93.0, abs=0.2)
    assert failure_probability(r, link) == pytest.approx(1e-6, rel=1e-6)


def test_failure_probability_shape():
    link = LinkSpec(10.0, 256)
    assert failure_probability(256 / math.log2(11), link) == pytest.approx(0.5, abs=1e-12)
    rs = np.linspace(60, 400, 80)
    ps = [failure_probability(r, link) for r in rs]
    # the tail underflows to 0.0 at the long end of the grid
    assert ps[-1] == 0.0
    assert all(b <= a for a, b in zip(ps, ps[1:]))
    positive = [p for p in ps if p > 0.0]
    assert len(positive) > 40
    assert all(b < a for a, b in zip(positive, positive[1:]))
    assert failure_probability(1e5, link) == 0.0
    with pytest.raises(DomainError):
        failure_probability(0.0, link)


def test_failure_probabilities_match_scalar():
    link = LinkSpec(db_to_linear(5.0), 1000)
    rs = np.arange(450, 700, 7, dtype=float)
    vector = failure_probabilities(rs, link, include_log_term=True)
    scalar = [failure_probability(r, link, include_log_term=True) for r in rs]
    assert vector == pytest.approx(scalar, rel=1e-12, abs=1e-300)
    with pytest.raises(DomainError):
        failure_probabilities([10.0, 0.0], link)


def test_inverse_pair_over_parameter_box():
    for bits in (64, 256, 1000, 2000):
        for snr_db in (0.0, 5.0, 10.0, 15.0, 20.0):
            link = LinkSpec(db_to_linear(snr_db), bits)
            for p in (1e-7, 1e-6, 1e-5, 1e-4, 1e-3):
                r = blocklength_for_reliability(link, p)
                assert abs(failure_probability(r, link) - p) / p <= 1e-6


def test_truncated_rate_equation_recovers_payload():
    for bits in (256, 1000):
        for sinr in (1.0, 10.0, 100.0):
            link = LinkSpec(sinr, bits)
            for p in (1e-7, 1e-4, 1e-2):
                r = blocklength_for_reliability(link, p)
                recovered = r * link.capacity - q_inverse(p) * math.sqrt(r * link.dispersion)
                assert recovered == pytest.approx(bits, rel=1e-6)


def test_blocklength_monotonicity():
    sinrs = [1.0, 2.0, 5.0, 10.0, 50.0, 100.0]
    rs = [blocklength_for_reliability(LinkSpec(s, 256), 1e-5) for s in sinrs]
    assert all(b < a for a, b in zip(rs, rs[1:]))

    targets = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3]
    rs = [blocklength_for_reliability(LinkSpec(10.0, 256), p) for p in targets]
    assert all(b < a for a, b in zip(rs, rs[1:]))

    payloads = [64, 128, 256, 512, 1000, 2000]
    rs = [blocklength_for_reliability(LinkSpec(10.0, L), 1e-5) for L in payloads]
    assert all(b > a for a, b in zip(rs, rs[1:]))


def test_target_above_one_half_gives_shorter_block():
    link = LinkSpec(10.0, 256)
    r = blocklength_for_reliability(link, 0.9)
    assert r < 256 / math.log2(11)
    assert failure_probability(r, link) == pytest.approx(0.9, rel=1e-9)


def test_log_term_variant():
    link = LinkSpec(10.0, 256)
    r_log = blocklength_for_reliability(link, 1e-6, include_log_term=True)
    assert r_log < blocklength_for_reliability(link, 1e-6)
    assert failure_probability(r_log, link, include_log_term=True) == pytest.approx(1e-6, rel=1e-6)


def test_normal_approximation_table():
    table = normal_approximation_table([256, 1000], [1.0, 10.0], [1e-6, 1e-3])
    assert list(table.columns) == [
        "payload_bits",
        "sinr_linear",
        "sinr_db",
        "target_p",
        "r_truncated",
        "r_log_term",
        "relative_gap",
    ]
    assert len(table) == 8
    assert (table["relative_gap"] > 0).all()
    assert table.loc[table["sinr_linear"] == 10.0, "sinr_db"].iloc[0] == pytest.approx(10.0)


def test_db_helpers_and_coding_point():
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert linear_to_db(100.0) == pytest.approx(20.0)
    with pytest.raises(DomainError):
        linear_to_db(0.0)
    point = coding_point(LinkSpec(10.0, 256), 1e-6)
    assert point.failure_prob == 1e-6
    assert point.blocklength == pytest.approx(93.0, abs=0.2)


def test_link_spec_validation():
    with pytest.raises(DomainError):
        LinkSpec(10.0, 0)
    with pytest.raises(DomainError):
        LinkSpec(0.0, 256)
