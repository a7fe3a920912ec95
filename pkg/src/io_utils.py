import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from . import settings
from .channel import db_to_linear
from .dimensioning import normalize_sweep_variable
from .errors import ValidationError
from .models import TrafficClass

SCHEMA_VERSION = 1
CSV_FLOAT_FORMAT = "%.12g"

#---------------------
# Key aliases for scenario files
# Canonicalised to the names expected by models/pipeline
# -> 'arrival_rate', 'payload_bits', 'sinr_db', ...
CLASS_KEY_ALIASES: Dict[str, List[str]] = {
    "name": ["name", "label", "id"],
    "arrival_rate": ["arrival_rate", "lambda", "rate", "lam", "arrivals"],
    "payload_bits": ["payload_bits", "bits", "payload", "l"],
    "payload_bytes": ["payload_bytes", "bytes"],
    "sinr_db": ["sinr_db", "snr_db", "sinr_dB"],
    "sinr_linear": ["sinr_linear", "sinr", "snr", "snr_linear"],
    "deadline": ["deadline", "d", "latency"],
    "reliability_eps": ["reliability_eps", "delta", "eps", "epsilon"],
    "feedback_delay": ["feedback_delay", "f", "feedback"],
    "scheme": ["scheme", "harq"],
}

SYSTEM_KEY_ALIASES: Dict[str, List[str]] = {
    "bandwidth": ["bandwidth", "w", "bandwidth_hz"],
    "kappa": ["kappa", "channel_use_density", "density"],
}

SIM_KEY_ALIASES: Dict[str, List[str]] = {
    "seed": ["seed"],
    "horizon": ["horizon", "duration"],
    "warmup": ["warmup", "warm_up"],
    "replications": ["replications", "reps", "runs"],
}


#---------------------
# Token cleanup -> "Arrival Rate" becomes "arrivalrate"
def _norm_token(s: str) -> str:
    s = s.strip().lower()
    return re.sub(r"[^a-z0-9]+", "", s)


def normalize_keys(raw: Mapping[str, Any], aliases: Dict[str, List[str]], where: str) -> Dict[str, Any]:
    """Rename keys to their canonical names; unknown or duplicated keys are errors."""
    norm_aliases = {k: {_norm_token(a) for a in v} for k, v in aliases.items()}
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        n = _norm_token(str(key))
        target = next((t for t, names in norm_aliases.items() if n in names), None)
        if target is None:
            raise ValidationError(f"{where}: unknown key {key!r}")
        if target in out:
            raise ValidationError(f"{where}: {key!r} duplicates {target!r}")
        out[target] = value
    return out


#---------------------
# Scenario records
@dataclass(frozen=True)
class SchemeSpec:
    """How a class's HARQ scheme is obtained.

    kind: 'one_shot' | 'optimize' | 'stages' | 'explicit'
    """

    kind: str = "one_shot"
    regime: Optional[str] = None
    stages: Optional[int] = None
    explicit: Tuple[Tuple[Tuple[str, float], ...], ...] = ()

    def explicit_stages(self) -> List[Dict[str, float]]:
        return [dict(items) for items in self.explicit]


@dataclass(frozen=True)
class SimSettings:
    seed: int = 0
    horizon: Optional[float] = None
    warmup: Optional[float] = None
    replications: int = 1


@dataclass(frozen=True)
class Scenario:
    bandwidth: float
    kappa: float
    classes: Tuple[TrafficClass, ...]
    schemes: Tuple[SchemeSpec, ...]
    sim: SimSettings = field(default_factory=SimSettings)

    def __post_init__(self) -> None:
        if len(self.schemes) != len(self.classes):
            raise ValidationError("one scheme entry per class is required")


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_scheme(raw: Any, where: str) -> SchemeSpec:
    if raw is None:
        return SchemeSpec()
    if isinstance(raw, str):
        text = raw.strip().lower()
        if text in ("one-shot", "one_shot", "oneshot"):
            return SchemeSpec()
        if text.startswith("optimize:"):
            # validated again by Regime.parse when the scheme is built
            regime = text.split(":", 1)[1]
            if regime not in ("mean", "variance", "mean_dominated", "variance_dominated"):
                raise ValidationError(f"{where}: unknown regime in {raw!r}")
            return SchemeSpec("optimize", regime=regime.split("_")[0])
        raise ValidationError(f"{where}: unknown scheme {raw!r}")
    if isinstance(raw, Mapping):
        stages = raw.get("stages", raw.get("m"))
        if isinstance(stages, int) and not isinstance(stages, bool):
            if stages < 1:
                raise ValidationError(f"{where}: stage count must be >= 1")
            return SchemeSpec("stages", stages=stages)
        if isinstance(stages, list) and stages:
            plans = []
            for i, stage in enumerate(stages, start=1):
                if not isinstance(stage, Mapping):
                    raise ValidationError(f"{where}: stage {i} must be an object")
                allowed = {"blocklength", "duration", "bandwidth", "failure_prob"}
                extra = set(stage) - allowed
                if extra:
                    raise ValidationError(f"{where}: stage {i} has unknown keys {sorted(extra)}")
                if "duration" not in stage or ("blocklength" in stage) == ("bandwidth" in stage):
                    raise ValidationError(
                        f"{where}: stage {i} needs duration and exactly one of blocklength/bandwidth"
                    )
                plans.append(tuple(sorted((k, _number(v, f"{where}.stage{i}.{k}")) for k, v in stage.items())))
            return SchemeSpec("explicit", explicit=tuple(plans))
    raise ValidationError(f"{where}: scheme must be 'one-shot', 'optimize:<regime>' or {{'stages': ...}}")


def _parse_class(raw: Any, index: int) -> Tuple[TrafficClass, SchemeSpec]:
    where = f"classes[{index}]"
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{where}: expected an object")
    data = normalize_keys(raw, CLASS_KEY_ALIASES, where)

    if ("sinr_db" in data) == ("sinr_linear" in data):
        raise ValidationError(f"{where}: give exactly one of sinr_dB / sinr_linear")
    if "sinr_db" in data:
        sinr = db_to_linear(_number(data["sinr_db"], f"{where}.sinr_dB"))
    else:
        sinr = _number(data["sinr_linear"], f"{where}.sinr_linear")

    if ("payload_bits" in data) == ("payload_bytes" in data):
        raise ValidationError(f"{where}: give exactly one of payload_bits / payload_bytes")
    if "payload_bytes" in data:
        bits = _number(data["payload_bytes"], f"{where}.payload_bytes") * 8
    else:
        bits = _number(data["payload_bits"], f"{where}.payload_bits")
    if bits != int(bits):
        raise ValidationError(f"{where}: payload must be a whole number of bits")

    for key in ("arrival_rate", "deadline", "reliability_eps"):
        if key not in data:
            raise ValidationError(f"{where}: missing {key!r}")

    cls = TrafficClass(
        arrival_rate=_number(data["arrival_rate"], f"{where}.arrival_rate"),
        payload_bits=int(bits),
        sinr_linear=sinr,
        deadline=_number(data["deadline"], f"{where}.deadline"),
        reliability_eps=_number(data["reliability_eps"], f"{where}.reliability_eps"),
        feedback_delay=_number(data.get("feedback_delay", 0.0), f"{where}.feedback_delay"),
        name=str(data.get("name", "") or f"class{index}"),
    )
    return cls, _parse_scheme(data.get("scheme"), f"{where}.scheme")


#---------------------
# Parse / serialize
def parse_scenario(data: Mapping[str, Any]) -> Scenario:
    if not isinstance(data, Mapping):
        raise ValidationError("scenario must be a JSON object")
    schema = data.get("schema")
    if schema != SCHEMA_VERSION:
        raise ValidationError(f"unsupported scenario schema {schema!r}; expected {SCHEMA_VERSION}")
    extra = set(data) - {"schema", "system", "classes", "sim"}
    if extra:
        raise ValidationError(f"unknown top-level keys {sorted(extra)}")

    system = normalize_keys(data.get("system") or {}, SYSTEM_KEY_ALIASES, "system")
    bandwidth = system.get("bandwidth")
    bandwidth = math.inf if bandwidth is None else _number(bandwidth, "system.bandwidth")
    if not bandwidth > 0:
        raise ValidationError(f"system.bandwidth must be > 0, got {bandwidth!r}")
    kappa = settings.resolve_kappa(system.get("kappa"))
    if not (math.isfinite(kappa) and kappa > 0):
        raise ValidationError(f"system.kappa must be a positive number, got {kappa!r}")

    raw_classes = data.get("classes", [])
    if not isinstance(raw_classes, list):
        raise ValidationError("classes must be a list")
    parsed = [_parse_class(raw, i) for i, raw in enumerate(raw_classes)]

    sim_raw = normalize_keys(data.get("sim") or {}, SIM_KEY_ALIASES, "sim")
    seed = sim_raw.get("seed", 0)
    reps = sim_raw.get("replications", 1)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ValidationError(f"sim.seed must be a 64-bit unsigned integer, got {seed!r}")
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise ValidationError(f"sim.replications must be a positive integer, got {reps!r}")
    sim = SimSettings(
        seed=seed,
        horizon=_number(sim_raw["horizon"], "sim.horizon") if "horizon" in sim_raw else None,
        warmup=_number(sim_raw["warmup"], "sim.warmup") if "warmup" in sim_raw else None,
        replications=reps,
    )
    return Scenario(
        bandwidth=bandwidth,
        kappa=kappa,
        classes=tuple(c for c, _ in parsed),
        schemes=tuple(s for _, s in parsed),
        sim=sim,
    )


def _serialize_scheme(spec: SchemeSpec) -> Union[str, Dict[str, Any]]:
    if spec.kind == "optimize":
        return f"optimize:{spec.regime}"
    if spec.kind == "stages":
        return {"stages": spec.stages}
    if spec.kind == "explicit":
        return {"stages": spec.explicit_stages()}
    return "one-shot"


def serialize_scenario(scenario: Scenario) -> Dict[str, Any]:
    """Canonical form: canonical keys, linear SINR, seconds and bits."""
    system: Dict[str, Any] = {"kappa": scenario.kappa}
    if math.isfinite(scenario.bandwidth):
        system["bandwidth"] = scenario.bandwidth
    sim: Dict[str, Any] = {"seed": scenario.sim.seed, "replications": scenario.sim.replications}
    if scenario.sim.horizon is not None:
        sim["horizon"] = scenario.sim.horizon
    if scenario.sim.warmup is not None:
        sim["warmup"] = scenario.sim.warmup
    return {
        "schema": SCHEMA_VERSION,
        "system": system,
        "classes": [
            {
                "name": c.name,
                "arrival_rate": c.arrival_rate,
                "payload_bits": c.payload_bits,
                "sinr_linear": c.sinr_linear,
                "deadline": c.deadline,
                "reliability_eps": c.reliability_eps,
                "feedback_delay": c.feedback_delay,
                "scheme": _serialize_scheme(s),
            }
            for c, s in zip(scenario.classes, scenario.schemes)
        ],
        "sim": sim,
    }


def scenario_digest(scenario: Scenario) -> str:
    canonical = json.dumps(serialize_scenario(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(payload)


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(serialize_scenario(scenario), indent=2), encoding="utf-8")


#---------------------
# Sweep specs: var:start:stop:steps[:log]
def parse_sweep(text: str) -> Tuple[str, np.ndarray]:
    parts = text.split(":")
    if len(parts) not in (4, 5) or (len(parts) == 5 and parts[4].strip().lower() != "log"):
        raise ValidationError(f"sweep {text!r} must look like var:start:stop:steps[:log]")
    var = normalize_sweep_variable(parts[0])
    try:
        start, stop = float(parts[1]), float(parts[2])
        steps = int(parts[3])
    except ValueError as exc:
        raise ValidationError(f"sweep {text!r}: {exc}") from exc
    if steps < 1:
        raise ValidationError("sweep steps must be >= 1")
    if steps > 1 and not stop > start:
        raise ValidationError("sweep stop must exceed start")
    if len(parts) == 5:
        if start <= 0:
            raise ValidationError("log sweeps need a positive start")
        grid = np.geomspace(start, stop, steps) if steps > 1 else np.array([start])
    else:
        grid = np.linspace(start, stop, steps) if steps > 1 else np.array([start])
    return var, grid


#---------------------
# Output
def save_csv(df: pd.DataFrame, path: Union[str, Path]) -> None:
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def frame_to_records(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """JSON-safe rows; NaN and infinities become None."""
    records = []
    for row in df.to_dict(orient="records"):
        clean = {}
        for key, value in row.items():
            if isinstance(value, np.generic):
                value = value.item()
            if isinstance(value, float) and not math.isfinite(value):
                value = None
            clean[str(key)] = value
        records.append(clean)
    return records


def save_json(payload: Any, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


__all__ = [
    "SCHEMA_VERSION",
    "SchemeSpec",
    "SimSettings",
    "Scenario",
    "normalize_keys",
    "parse_scenario",
    "serialize_scenario",
    "scenario_digest",
    "load_scenario",
    "save_scenario",
    "parse_sweep",
    "save_csv",
    "frame_to_records",
    "save_json",
]
