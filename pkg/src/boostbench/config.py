"""Experiment configuration, stored as JSON."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Literal

from .prompts import BUILTIN_STRATEGIES

DatasetKind = Literal["blocksworld", "crt"]
DEFAULT_ROUNDS = {"blocksworld": 4, "crt": 2}
CORRECTION_MODES = ("error_feedback", "repeat")
EXTRACTION_MODES = ("rule", "llm")
BACKEND_KINDS = ("mock", "http")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a dataset, a model, a strategy and a correction protocol.

    ``rounds`` and ``correction_mode`` may be left unset and are filled in per
    dataset kind by :meth:`resolved` (BlocksWorld: 4 rounds of error feedback;
    CRT: 2 rounds of repeats).
    """

    dataset: str
    model: str
    output_dir: str
    strategy: str | None = None
    rounds: int | None = None
    correction_mode: str | None = None
    extraction_mode: str = "rule"
    summarizer_model: str = "4o"
    concurrency: int = 4
    seed: int = 0
    name: str | None = None
    # extra request parameters sent to the model, e.g. {"temperature": 0}
    params: dict = field(default_factory=dict)
    # {"kind": "mock", "solve_rate": 0.5} or {"kind": "http", "base_url": ..., "api_key_env": ...}
    backend: dict = field(default_factory=lambda: {"kind": "mock"})
    pricing: str | None = None
    # None: fixed logical timestamps under the mock backend, wall-clock otherwise
    deterministic_timestamps: bool | None = None

    def __post_init__(self) -> None:
        if self.rounds is not None and self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.correction_mode is not None and self.correction_mode not in CORRECTION_MODES:
            raise ConfigError(f"correction_mode must be one of {CORRECTION_MODES}")
        if self.extraction_mode not in EXTRACTION_MODES:
            raise ConfigError(f"extraction_mode must be one of {EXTRACTION_MODES}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.backend.get("kind") not in BACKEND_KINDS:
            raise ConfigError(f"backend kind must be one of {BACKEND_KINDS}")

    @property
    def label(self) -> str:
        return self.name or f"{self.model}/{Path(self.strategy).stem if self.strategy else 'none'}"

    @property
    def timestamps_fixed(self) -> bool:
        if self.deterministic_timestamps is None:
            return self.backend.get("kind") == "mock"
        return self.deterministic_timestamps

    def resolved(self, kind: DatasetKind) -> "ExperimentConfig":
        """Fill protocol defaults for a dataset kind and check they fit it."""
        mode = self.correction_mode
        if kind == "crt":
            if mode == "error_feedback":
                raise ConfigError("error_feedback correction needs a planning dataset; CRT runs use repeat")
            mode = "repeat"
        elif mode is None:
            mode = "error_feedback"
        rounds = DEFAULT_ROUNDS[kind] if self.rounds is None else self.rounds
        return replace(self, rounds=rounds, correction_mode=mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for needed in ("dataset", "model", "output_dir"):
            if needed not in data:
                raise ConfigError(f"config lacks {needed!r}")
        return cls(**data)

    def run_id(self) -> str:
        """Stable id over everything that affects results (not where or how fast they are produced)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("concurrency")
        blob = json.dumps(d, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _resolve_path(value: str | None, base: Path) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON config; relative paths are taken relative to the file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    base = path.parent.resolve()
    for key in ("dataset", "output_dir", "pricing"):
        if key in data:
            data[key] = _resolve_path(data[key], base)
    strategy = data.get("strategy")
    if strategy not in (None, "", "none") and strategy not in BUILTIN_STRATEGIES:
        data["strategy"] = _resolve_path(strategy, base)
    return ExperimentConfig.from_dict(data)
