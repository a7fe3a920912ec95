# ------------------------------
# src/models.py
# Shared records: traffic classes, per-stage transmission plans (HARQ
# schemes) and the system they run in.
# ------------------------------

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence, Tuple

from .channel import LinkSpec, failure_probability
from .errors import ValidationError, require, require_probability

# relative slack for floating-point deadline and bandwidth checks
_TOL = 1e-9


@dataclass(frozen=True)
class TrafficClass:
    """One SINR class of URLLC traffic. Times in seconds, rates per second."""

    arrival_rate: float
    payload_bits: int
    sinr_linear: float
    deadline: float
    reliability_eps: float
    feedback_delay: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        label = self.name or "traffic class"
        require(self.arrival_rate >= 0, f"{label}: arrival_rate must be >= 0")
        require(self.feedback_delay >= 0, f"{label}: feedback_delay must be >= 0")
        require(
            self.deadline > self.feedback_delay,
            f"{label}: deadline ({self.deadline}) must exceed feedback_delay ({self.feedback_delay})",
        )
        require_probability(self.reliability_eps, f"{label}: reliability_eps")
        # validates payload and SINR
        LinkSpec(self.sinr_linear, self.payload_bits)

    @property
    def link(self) -> LinkSpec:
        return LinkSpec(self.sinr_linear, self.payload_bits)


@dataclass(frozen=True)
class StagePlan:
    """Resources of one transmission attempt: r = kappa * h * s."""

    blocklength: float
    duration: float
    bandwidth: float
    failure_prob: float

    def __post_init__(self) -> None:
        require(self.blocklength > 0, "stage blocklength must be > 0")
        require(self.duration > 0, "stage duration must be > 0")
        require(self.bandwidth > 0, "stage bandwidth must be > 0")
        require(
            0.0 <= self.failure_prob < 1.0,
            f"stage failure probability must lie in [0, 1), got {self.failure_prob!r}",
        )


@dataclass(frozen=True)
class HarqScheme:
    stages: Tuple[StagePlan, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        require(len(self.stages) >= 1, "a HARQ scheme needs at least one stage")

    @classmethod
    def homogeneous(
        cls,
        stages: int,
        blocklength: float,
        duration: float,
        kappa: float,
        failure_prob: float,
    ) -> "HarqScheme":
        require(int(stages) == stages and stages >= 1, "stage count must be a positive integer")
        bandwidth = blocklength / (kappa * duration)
        plan = StagePlan(blocklength, duration, bandwidth, failure_prob)
        return cls((plan,) * int(stages))

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def is_homogeneous(self) -> bool:
        return all(s == self.stages[0] for s in self.stages)

    # Homogeneous accessors (first stage)
    @property
    def blocklength(self) -> float:
        return self.stages[0].blocklength

    @property
    def duration(self) -> float:
        return self.stages[0].duration

    @property
    def stage_bandwidth(self) -> float:
        return self.stages[0].bandwidth

    @property
    def stage_failure_prob(self) -> float:
        return self.stages[0].failure_prob

    def reach_probabilities(self) -> Tuple[float, ...]:
        """P(stage m is requested) = product of failures of stages before m."""
        out = []
        reach = 1.0
        for stage in self.stages:
            out.append(reach)
            reach *= stage.failure_prob
        return tuple(out)

    def total_time(self, feedback_delay: float) -> float:
        return sum(s.duration for s in self.stages) + self.num_stages * feedback_delay

    def check_deadline(self, cls: TrafficClass) -> None:
        used = self.total_time(cls.feedback_delay)
        if used > cls.deadline * (1.0 + _TOL):
            label = cls.name or "traffic class"
            raise ValidationError(
                f"{label}: {self.num_stages} stage(s) need {used:.6g} s of transmission "
                f"and feedback time, above the deadline of {cls.deadline:.6g} s"
            )


def one_shot_scheme(cls: TrafficClass, blocklength: float, kappa: float) -> HarqScheme:
    """Single transmission stretched over s = d - f."""
    duration = cls.deadline - cls.feedback_delay
    p = failure_probability(blocklength, cls.link)
    return HarqScheme.homogeneous(1, blocklength, duration, kappa, p)


@dataclass(frozen=True)
class SystemConfig:
    bandwidth: float
    kappa: float
    classes: Tuple[TrafficClass, ...]
    schemes: Tuple[HarqScheme, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        require(self.bandwidth > 0, f"system bandwidth must be > 0, got {self.bandwidth!r}")
        require(self.kappa > 0, f"kappa must be > 0, got {self.kappa!r}")
        require(
            len(self.schemes) == len(self.classes),
            f"{len(self.classes)} classes but {len(self.schemes)} schemes",
        )
        for cls, scheme in zip(self.classes, self.schemes):
            for m, stage in enumerate(scheme.stages, start=1):
                if stage.bandwidth > self.bandwidth * (1.0 + _TOL):
                    raise ValidationError(
                        f"{cls.name or 'traffic class'}: stage {m} needs {stage.bandwidth:.6g} Hz, "
                        f"more than the system bandwidth {self.bandwidth:.6g} Hz"
                    )

    def __iter__(self) -> Iterator[Tuple[TrafficClass, HarqScheme]]:
        return iter(zip(self.classes, self.schemes))

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def is_one_shot(self) -> bool:
        return all(s.num_stages == 1 for s in self.schemes)

    def class_names(self) -> Sequence[str]:
        return [c.name or f"class{i}" for i, c in enumerate(self.classes)]


__all__ = [
    "TrafficClass",
    "StagePlan",
    "HarqScheme",
    "SystemConfig",
    "one_shot_scheme",
]
