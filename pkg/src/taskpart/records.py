"""Append-only JSONL run logs.

A record file starts with one header line naming the schema version, the run
mode, and the launch configuration, followed by one record per evaluation.
Every line is flushed as written so a crashed run leaves a valid prefix.
The reader is forgiving: corrupt or out-of-order lines are counted and
skipped rather than failing the whole file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .search import HistoryRecord

__all__ = [
    "SCHEMA_NAME",
    "SCHEMA_VERSION",
    "RunRecord",
    "RecordWriter",
    "read_record_file",
]

SCHEMA_NAME = "taskpart.records"
SCHEMA_VERSION = 1


def _matrix(values) -> list[list[float]]:
    return [[float(x) for x in row] for row in values]


@dataclass(frozen=True)
class RunRecord:
    """One evaluation, in JSON-native form so equality survives a
    serialize/parse round trip."""

    step: int
    mode: str
    raw: list[list[float]]
    feasible: list[list[float]]
    per_task: list[float]
    aggregate: float
    avg_usage: float
    synthesis_median_error: float | None
    wall_millis: float

    @classmethod
    def from_history(cls, record: HistoryRecord, wall_millis: float = 0.0) -> "RunRecord":
        report = record.report
        err = report.synthesis_median_error
        return cls(
            step=int(record.step),
            mode=str(record.kind),
            raw=_matrix(record.raw.values),
            feasible=_matrix(record.feasible.values),
            per_task=[float(s) for s in report.per_task_scores],
            aggregate=float(report.aggregate),
            avg_usage=float(report.avg_usage),
            synthesis_median_error=None if err is None else float(err),
            wall_millis=float(wall_millis),
        )

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "RunRecord":
        if not isinstance(obj, dict):
            raise ValueError("record line is not an object")
        err = obj["synthesis_median_error"]
        record = cls(
            step=int(obj["step"]),
            mode=str(obj["mode"]),
            raw=_matrix(obj["raw"]),
            feasible=_matrix(obj["feasible"]),
            per_task=[float(x) for x in obj["per_task"]],
            aggregate=float(obj["aggregate"]),
            avg_usage=float(obj["avg_usage"]),
            synthesis_median_error=None if err is None else float(err),
            wall_millis=float(obj["wall_millis"]),
        )
        n = len(record.raw)
        for name, mat in (("raw", record.raw), ("feasible", record.feasible)):
            if len(mat) != n or any(len(row) != n for row in mat):
                raise ValueError(f"{name} matrix is not square")
        if len(record.per_task) != n:
            raise ValueError("per-task score count does not match the spec size")
        return record


class RecordWriter:
    """Single-owner writer; emits the header on open and flushes per line."""

    def __init__(self, path, mode: str, config: dict):
        self._file = open(path, "w", encoding="utf-8", newline="\n")
        header = {
            "schema": SCHEMA_NAME,
            "version": SCHEMA_VERSION,
            "mode": mode,
            "config": config,
        }
        self._file.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        self._file.flush()

    def write(self, record: RunRecord) -> None:
        self._file.write(record.to_line() + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "RecordWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_record_file(path) -> tuple[dict | None, list[RunRecord], int]:
    """Returns (header, records, n_skipped).

    The header is None for an empty file.  Lines that fail to parse, fail
    validation, or break the strictly-increasing step order count as skipped.
    """
    header = None
    records: list[RunRecord] = []
    skipped = 0
    last_step = None
    with open(path, "r", encoding="utf-8") as handle:
        for raw_line in handle:
            line = raw_line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if header is None and not records and isinstance(obj, dict) and obj.get("schema") == SCHEMA_NAME:
                header = obj
                continue
            try:
                record = RunRecord.from_dict(obj)
            except (KeyError, TypeError, ValueError):
                skipped += 1
                continue
            if last_step is not None and record.step <= last_step:
                skipped += 1
                continue
            records.append(record)
            last_step = record.step
    return header, records, skipped
