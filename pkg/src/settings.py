# ------------------------------
# src/settings.py
# Runtime configuration. Values come from the environment (a local .env
# file is loaded first) and fall back to built-in defaults.
# ------------------------------

import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

from .errors import ValidationError

# Load environment variables from a local .env
load_dotenv()

DEFAULT_STATE_CAP = 10_000_000
DEFAULT_KAPPA = 1.0
DEFAULT_M_MAX = 8

# 12 subcarriers x 14 symbols in a 180 kHz x 1 ms resource block
KAPPA_PRESETS: Dict[str, float] = {
    "default": DEFAULT_KAPPA,
    "nr-numerology-0": 12 * 14 / (180e3 * 1e-3),
}


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        return default


def state_cap() -> int:
    return max(1, _env_int("URLLC_STATE_CAP", DEFAULT_STATE_CAP))


def default_threads() -> int:
    return max(1, _env_int("URLLC_THREADS", os.cpu_count() or 1))


def default_kappa() -> float:
    return _env_float("URLLC_KAPPA", DEFAULT_KAPPA)


def output_dir() -> Path:
    return Path(os.getenv("URLLC_OUTPUT_DIR", "data/outputs"))


def log_level() -> str:
    return os.getenv("URLLC_LOG_LEVEL", "WARNING").upper()


def resolve_kappa(value: Optional[object]) -> float:
    """Accept a number, a preset name, or None (environment default)."""
    if value is None:
        return default_kappa()
    if isinstance(value, str):
        key = value.strip().lower()
        if key in KAPPA_PRESETS:
            return KAPPA_PRESETS[key]
        try:
            return float(value)
        except ValueError:
            raise ValidationError(
                f"unknown kappa preset {value!r}; known: {sorted(KAPPA_PRESETS)}"
            ) from None
    return float(value)  # type: ignore[arg-type]


__all__ = [
    "DEFAULT_STATE_CAP",
    "DEFAULT_KAPPA",
    "DEFAULT_M_MAX",
    "KAPPA_PRESETS",
    "state_cap",
    "default_threads",
    "default_kappa",
    "output_dir",
    "log_level",
    "resolve_kappa",
]
