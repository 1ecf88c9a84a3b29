"""Run configuration and provenance sidecars."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ArgumentError
from .nnet import TrainSchedule

SCHEDULES = {"full": TrainSchedule, "desk": TrainSchedule.desk}


@dataclass
class RunConfig:
    """Everything a CLI invocation depends on; hashed into every provenance file."""

    command: str = ""
    data: str | None = None
    synthetic: dict[str, Any] | None = None
    split: dict[str, Any] = field(default_factory=dict)
    schedule: str = "full"
    schedule_overrides: dict[str, Any] = field(default_factory=dict)
    hpo: dict[str, Any] = field(default_factory=dict)
    ensemble_sizes: list[int] = field(default_factory=list)
    options: dict[str, Any] = field(default_factory=dict)
    out_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if self.seed is None:
            raise ArgumentError("a seed is required")
        if self.schedule not in SCHEDULES:
            raise ArgumentError(f"schedule must be one of {sorted(SCHEDULES)}")

    def train_schedule(self) -> TrainSchedule:
        base = asdict(SCHEDULES[self.schedule]())
        base.update(self.schedule_overrides)
        return TrainSchedule(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        d = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown run-config keys: {sorted(unknown)}")
        return cls(**d)


def code_version() -> str:
    from . import __version__
    return __version__


def write_provenance(output: str | Path, run: RunConfig) -> Path:
    """Write ``<output>.provenance.json``; the only place timestamps appear."""
    output = Path(output)
    side = output.with_name(output.name + ".provenance.json")
    side.write_text(json.dumps({
        "output": output.name,
        "run_config_sha256": run.digest(),
        "run_config": run.to_dict(),
        "code_version": code_version(),
        "seed": run.seed,
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }, indent=2, sort_keys=True))
    return side
