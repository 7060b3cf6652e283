from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from types import TracebackType
from typing import Any, Iterable, Mapping, Optional

STEP_FIELDS: tuple[str, ...] = (
    "step",
    "difficulty_bin",
    "entropy_nats",
    "solver_rewards",
    "proposer_reward",
    "solver_kl",
    "proposer_kl",
    "beta_solver",
    "beta_proposer",
    "baseline_solver",
    "baseline_proposer",
    "majority_fraction",
)
ORIGIN_FIELD = "origin"


class SchemaError(ValueError):
    def __init__(self, message: str, *, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


def validate_entry(entry: Mapping[str, Any], *, line: Optional[int] = None) -> None:
    """Check a log entry carries exactly the step fields (plus an optional origin tag)."""

    keys = set(entry)
    expected = set(STEP_FIELDS)
    missing = sorted(expected - keys)
    unknown = sorted(keys - expected - {ORIGIN_FIELD})
    if missing:
        raise SchemaError(f"missing fields: {', '.join(missing)}", line=line)
    if unknown:
        raise SchemaError(f"unknown fields: {', '.join(unknown)}", line=line)
    if not isinstance(entry["solver_rewards"], list):
        raise SchemaError("solver_rewards must be a list", line=line)


def dumps_entry(entry: Mapping[str, Any]) -> str:
    validate_entry(entry)
    ordered = {name: entry[name] for name in STEP_FIELDS}
    if ORIGIN_FIELD in entry:
        ordered[ORIGIN_FIELD] = entry[ORIGIN_FIELD]
    return json.dumps(ordered, ensure_ascii=False, allow_nan=False)


class JsonlWriter:
    """Append-only step log, one JSON object per line in a fixed field order."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.count = 0
        self._handle = None

    def __enter__(self) -> JsonlWriter:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="\n")
        return self

    def __exit__(
        self,
        exc_type: Optional[type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def write(self, entry: Mapping[str, Any]) -> None:
        if self._handle is None:
            raise RuntimeError("writer is not open")
        self._handle.write(dumps_entry(entry) + "\n")
        self.count += 1

    def write_all(self, entries: Iterable[Mapping[str, Any]]) -> int:
        for entry in entries:
            self.write(entry)
        return self.count


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    entries: list[dict[str, Any]] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                entry = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=number) from exc
            if not isinstance(entry, dict):
                raise SchemaError("entry must be a JSON object", line=number)
            validate_entry(entry, line=number)
            entries.append(entry)
    return entries


def utc_now_iso(now: Optional[datetime] = None) -> str:
    moment = now or datetime.now(timezone.utc)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).isoformat(timespec="seconds")


@dataclass(slots=True)
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: int
    started_at: str
    version: str
    outputs: dict[str, str] = field(default_factory=dict)
    ended_at: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def write_json(path: str | Path, data: Any) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        json.dumps(data, ensure_ascii=False, indent=2, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    return target


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_manifest(path: str | Path, manifest: RunManifest) -> Path:
    return write_json(path, manifest.to_dict())


def read_manifest(path: str | Path) -> RunManifest:
    data = read_json(path)
    try:
        return RunManifest(**data)
    except TypeError as exc:
        raise SchemaError(f"malformed manifest: {exc}") from exc


__all__ = [
    "JsonlWriter",
    "ORIGIN_FIELD",
    "RunManifest",
    "STEP_FIELDS",
    "SchemaError",
    "dumps_entry",
    "read_json",
    "read_jsonl",
    "read_manifest",
    "utc_now_iso",
    "validate_entry",
    "write_json",
    "write_manifest",
]
