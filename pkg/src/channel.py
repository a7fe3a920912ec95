"""
src/channel.py

Finite-blocklength AWGN channel model:
- Shannon capacity C(SINR) and channel dispersion V(SINR)
- Gaussian Q-function and its inverse
- blocklength needed for a target decoding-failure probability, and the
  failure probability achieved by a given blocklength

The normal approximation is used in its truncated form
    L = r*C - Qinv(p)*sqrt(r*V)
unless `include_log_term=True`, which adds the 0.5*log2(r) term.
SINR is always linear here; dB conversion belongs to scenario ingestion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import erfc, erfcinv

from .errors import DomainError, require_probability

LOG2_E = math.log2(math.e)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LinkSpec:
    sinr_linear: float
    payload_bits: int

    def __post_init__(self) -> None:
        if not self.sinr_linear > 0:
            raise DomainError(f"sinr_linear must be > 0, got {self.sinr_linear!r}")
        if int(self.payload_bits) != self.payload_bits or self.payload_bits < 1:
            raise DomainError(f"payload_bits must be a positive integer, got {self.payload_bits!r}")

    @property
    def capacity(self) -> float:
        return shannon_capacity(self.sinr_linear)

    @property
    def dispersion(self) -> float:
        return channel_dispersion(self.sinr_linear)


@dataclass(frozen=True)
class CodingPoint:
    blocklength: float
    failure_prob: float

    def __post_init__(self) -> None:
        if not self.blocklength > 0:
            raise DomainError(f"blocklength must be > 0, got {self.blocklength!r}")
        require_probability(self.failure_prob, "failure_prob")


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (float(value_db) / 10.0)


def linear_to_db(value_linear: float) -> float:
    if not value_linear > 0:
        raise DomainError(f"cannot convert non-positive ratio {value_linear!r} to dB")
    return 10.0 * math.log10(value_linear)


def _check_sinr(sinr_linear: float) -> float:
    s = float(sinr_linear)
    if not s > 0 or math.isinf(s):
        raise DomainError(f"SINR must be a finite positive ratio, got {sinr_linear!r}")
    return s


def shannon_capacity(sinr_linear: float) -> float:
    """C = log2(1 + SINR), bits per channel use."""
    return math.log2(1.0 + _check_sinr(sinr_linear))


def channel_dispersion(sinr_linear: float) -> float:
    """V = (log2 e)^2 * (1 - (1 + SINR)^-2), squared bits per channel use."""
    s = _check_sinr(sinr_linear)
    return LOG2_E**2 * (1.0 - 1.0 / (1.0 + s) ** 2)


# ------------------------------
# Q-function
# ------------------------------
def q_function(x: float) -> float:
    """Standard normal tail probability P(Z > x)."""
    return float(0.5 * erfc(float(x) / _SQRT2))


def q_inverse(delta: float) -> float:
    """Inverse of q_function on (0, 1).

    Starts from erfcinv and polishes with Newton steps on Q(x) - delta.
    """
    d = require_probability(delta, "delta")
    x = float(_SQRT2 * erfcinv(2.0 * d))
    for _ in range(3):
        residual = q_function(x) - d
        if residual == 0.0 or abs(residual) <= 1e-12 * d:
            break
        density = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        if density == 0.0:
            break
        x += residual / density
    return x


# ------------------------------
# Blocklength <-> failure probability
# ------------------------------
def _log_term(blocklength: float) -> float:
    return 0.5 * math.log2(blocklength)


def failure_probability(
    blocklength: float,
    link: LinkSpec,
    include_log_term: bool = False,
) -> float:
    """p = Q((r*C - L) / sqrt(r*V)); exactly 0.5 at r = L/C."""
    r = float(blocklength)
    if not r > 0:
        raise DomainError(f"blocklength must be > 0, got {blocklength!r}")
    c, v = link.capacity, link.dispersion
    numerator = r * c - link.payload_bits
    if include_log_term:
        numerator += _log_term(r)
    return q_function(numerator / math.sqrt(r * v))


def failure_probabilities(
    blocklengths: Iterable[float],
    link: LinkSpec,
    include_log_term: bool = False,
) -> np.ndarray:
    """failure_probability over an array of blocklengths."""
    r = np.asarray(blocklengths, dtype=float)
    if r.size and not np.all(r > 0):
        raise DomainError("blocklengths must be > 0")
    numerator = r * link.capacity - link.payload_bits
    if include_log_term:
        numerator = numerator + 0.5 * np.log2(r)
    return 0.5 * erfc(numerator / np.sqrt(r * link.dispersion) / _SQRT2)


def _truncated_blocklength(link: LinkSpec, q: float) -> float:
    c, v = link.capacity, link.dispersion
    base = link.payload_bits / c
    if q == 0.0:
        return base
    spread = q * q * v / (2.0 * c * c)
    root = math.sqrt(1.0 + 4.0 * link.payload_bits * c / (v * q * q))
    # q < 0 (target above one half) takes the other branch of the quadratic
    return base + spread * (1.0 + math.copysign(root, q))


def blocklength_for_reliability(
    link: LinkSpec,
    target_p: float,
    include_log_term: bool = False,
) -> float:
    """Real-valued blocklength r whose failure probability equals target_p."""
    p = require_probability(target_p, "target_p")
    q = q_inverse(p)
    r0 = _truncated_blocklength(link, q)
    if not include_log_term:
        return r0

    c, v, payload = link.capacity, link.dispersion, link.payload_bits

    def gap(r: float) -> float:
        return r * c - payload + _log_term(r) - q * math.sqrt(r * v)

    lo, hi = r0, r0
    for _ in range(200):
        if gap(lo) < 0:
            break
        lo *= 0.5
    for _ in range(200):
        if gap(hi) > 0:
            break
        hi *= 2.0
    if not (gap(lo) < 0 < gap(hi)):
        raise DomainError(
            f"could not bracket the log-term blocklength for L={payload}, p={p}"
        )
    return float(brentq(gap, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=500))


def coding_point(link: LinkSpec, target_p: float) -> CodingPoint:
    return CodingPoint(blocklength_for_reliability(link, target_p), float(target_p))


def normal_approximation_table(
    payload_bits: Iterable[int],
    sinr_linear: Iterable[float],
    target_p: Iterable[float],
) -> pd.DataFrame:
    """Truncated vs. log-term blocklength over a parameter grid."""
    rows: List[dict] = []
    sinrs = list(sinr_linear)
    targets = list(target_p)
    for bits in payload_bits:
        for sinr in sinrs:
            link = LinkSpec(float(sinr), int(bits))
            for p in targets:
                r_trunc = blocklength_for_reliability(link, p)
                r_log = blocklength_for_reliability(link, p, include_log_term=True)
                rows.append(
                    {
                        "payload_bits": int(bits),
                        "sinr_linear": float(sinr),
                        "sinr_db": linear_to_db(sinr),
                        "target_p": float(p),
                        "r_truncated": r_trunc,
                        "r_log_term": r_log,
                        "relative_gap": (r_trunc - r_log) / r_trunc,
                    }
                )
    return pd.DataFrame(rows)


__all__ = [
    "LinkSpec",
    "CodingPoint",
    "db_to_linear",
    "linear_to_db",
    "shannon_capacity",
    "channel_dispersion",
    "q_function",
    "q_inverse",
    "failure_probability",
    "failure_probabilities",
    "blocklength_for_reliability",
    "coding_point",
    "normal_approximation_table",
]
