"""Centralized configuration loaded from environment variables."""

import os


def _env_int(name: str, default: int | None) -> int | None:
    """Read an integer env var, falling back to ``default`` when unset or empty."""
    raw: str = os.getenv(name, "")
    if not raw.strip():
        return default
    return int(raw)


def _env_choice(name: str, default: str, choices: frozenset[str]) -> str:
    """Read a lower-cased env var restricted to ``choices``; unknown values fall back."""
    value: str = os.getenv(name, default).strip().lower()
    return value if value in choices else default


APP_VERSION: str = "1.0.0"

LOG_LEVEL: str = os.getenv("CROSSFIT_LOG_LEVEL", "WARNING")

# "json" for machine-parsed runs (batch clusters), "console" for a terminal.
LOG_FORMAT: str = _env_choice("CROSSFIT_LOG_FORMAT", "json", frozenset({"json", "console"}))

# Seed used when neither the experiment config nor the caller supplies one.
DEFAULT_SEED: int | None = _env_int("CROSSFIT_SEED", None)

CACHE_POLICIES: frozenset[str] = frozenset({"selective", "all", "none"})
CACHE_POLICY: str = _env_choice("CROSSFIT_CACHE_POLICY", "selective", CACHE_POLICIES)


def resolve_seed(seed: int | None) -> int:
    """Return ``seed`` if given, else the ``CROSSFIT_SEED`` override, else ``0``."""
    if seed is not None:
        return seed
    if DEFAULT_SEED is not None:
        return DEFAULT_SEED
    return 0
