"""Plain ``key = value`` experiment configs.

One assignment per line, ``#`` starts a comment, lists are comma separated.
Values are kept as strings until an experiment asks for them with a type, so
that every error message can name the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .environment import EnvironmentLaw
from .errors import ValidationError

EXPERIMENTS = ("env-check", "walk-var", "effective-matrix", "clt-rate", "mclt-probe", "kernel-compare",
               "homog-rate", "elliptic-rate", "green-check")

_MISSING = object()


def parse_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    """Raw key/value pairs plus the typed values an experiment actually read."""

    experiment: str
    raw: dict[str, str]
    resolved: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if "experiment" in self.raw and self.raw["experiment"] != self.experiment:
            raise ValidationError(f"config declares experiment {self.raw['experiment']!r}, "
                                  f"but {self.experiment!r} was requested")
        self.master_seed = self.integer("master_seed")
        if self.master_seed < 0:
            raise ValidationError("master_seed must be a non-negative integer")

    @classmethod
    def from_file(cls, experiment: str, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls(experiment, parse_text(text))

    def _get(self, key, default):
        if key in self.raw:
            return self.raw[key]
        if default is _MISSING:
            raise ValidationError(f"missing required parameter {key!r}")
        return default

    def _convert(self, key, text, kind):
        try:
            return kind(text)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"parameter {key!r}: cannot read {text!r} as {kind.__name__}") from exc

    def integer(self, key: str, default=_MISSING, minimum: int | None = None) -> int:
        v = self._get(key, default)
        v = self._convert(key, v, int) if isinstance(v, str) else int(v)
        if minimum is not None and v < minimum:
            raise ValidationError(f"parameter {key!r} must be >= {minimum}, got {v}")
        self.resolved[key] = v
        return v

    def real(self, key: str, default=_MISSING, positive: bool = False) -> float:
        v = self._get(key, default)
        v = self._convert(key, v, float) if isinstance(v, str) else float(v)
        if not math.isfinite(v) or (positive and v <= 0):
            raise ValidationError(f"parameter {key!r} must be {'positive and ' if positive else ''}finite, got {v}")
        self.resolved[key] = v
        return v

    def reals(self, key: str, default=_MISSING, positive: bool = False) -> list[float]:
        v = self._get(key, default)
        if isinstance(v, str):
            v = [self._convert(key, p.strip(), float) for p in v.split(",") if p.strip()]
        v = [float(a) for a in v]
        if not v:
            raise ValidationError(f"parameter {key!r} is an empty list")
        if any(not math.isfinite(a) or (positive and a <= 0) for a in v):
            raise ValidationError(f"parameter {key!r} has invalid entries {v}")
        self.resolved[key] = v
        return v

    def boolean(self, key: str, default=_MISSING) -> bool:
        v = self._get(key, default)
        if isinstance(v, str):
            low = v.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValidationError(f"parameter {key!r}: expected true/false, got {v!r}")
            v = low in ("true", "yes", "1")
        self.resolved[key] = bool(v)
        return bool(v)

    def text(self, key: str, default=_MISSING, choices=None) -> str:
        v = str(self._get(key, default))
        if choices is not None and v not in choices:
            raise ValidationError(f"parameter {key!r} must be one of {choices}, got {v!r}")
        self.resolved[key] = v
        return v

    def law(self, key: str = "law", default: str = _MISSING) -> EnvironmentLaw:
        v = self._get(key, default)
        try:
            law = EnvironmentLaw.parse(v)
        except ValidationError as exc:
            raise ValidationError(f"parameter {key!r}: {exc}") from exc
        self.resolved[key] = str(law)
        return law
