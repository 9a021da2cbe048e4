"""Append-only event log: the system of record.

Each record is one line: `<byte-length> <crc32> <json>`. The length prefix
and CRC make truncation and corruption detectable while keeping the file
greppable. Offsets are dense and strictly increasing; records are never
rewritten. Rebuilding state is a pure fold over the records.
"""
from __future__ import annotations

import json
import os
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterator


class StorageFailure(RuntimeError):
    pass


class CorruptLog(RuntimeError):
    pass


# event kinds
SERVICE_INITIALIZED = "ServiceInitialized"
INBOUND_RECEIVED = "InboundReceived"
QUERY_RECORDED = "QueryRecorded"
ANSWER_RECORDED = "AnswerRecorded"
SUGGESTIONS_OFFERED = "SuggestionsOffered"
TASK_CREATED = "TaskCreated"
TASK_TRANSITION = "TaskTransition"
TASK_REMINDER_SENT = "TaskReminderSent"
OUTBOUND_DISPATCHED = "OutboundDispatched"
SCHEDULER_FIRED = "SchedulerFired"
DIGEST_EMITTED = "DigestEmitted"
REVIEW_INGESTED = "ReviewIngested"
FAQ_APPLIED = "FAQApplied"
PROFILE_REGISTERED = "ProfileRegistered"
PROFILE_DEACTIVATED = "ProfileDeactivated"
LANGUAGE_CHANGED = "LanguageChanged"


@dataclass(frozen=True)
class EventRecord:
    offset: int
    at: datetime
    kind: str
    payload: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {
                "offset": self.offset,
                "at": self.at.isoformat(),
                "kind": self.kind,
                "payload": self.payload,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @staticmethod
    def from_json(text: str) -> "EventRecord":
        raw = json.loads(text)
        return EventRecord(
            offset=raw["offset"],
            at=datetime.fromisoformat(raw["at"]),
            kind=raw["kind"],
            payload=raw["payload"],
        )


def _frame(body: str) -> str:
    data = body.encode("utf-8")
    return f"{len(data)} {zlib.crc32(data):08x} {body}\n"


def _unframe(line: str, offset_hint: int) -> str:
    try:
        length_s, crc_s, body = line.split(" ", 2)
        length = int(length_s)
        crc = int(crc_s, 16)
    except ValueError as exc:
        raise CorruptLog(f"malformed frame at record {offset_hint}") from exc
    data = body.encode("utf-8")
    if len(data) != length:
        raise CorruptLog(f"truncated record {offset_hint}")
    if zlib.crc32(data) != crc:
        raise CorruptLog(f"checksum mismatch at record {offset_hint}")
    return body


class EventLog:
    """Single-writer durable log over a local file."""

    def __init__(self, path: Path, fsync: bool = True):
        self._path = Path(path)
        self._fsync = fsync
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._next_offset = sum(1 for _ in self.read_all()) if self._path.exists() else 0
        self._fh = open(self._path, "a", encoding="utf-8")

    @property
    def next_offset(self) -> int:
        return self._next_offset

    def append(self, at: datetime, kind: str, payload: dict[str, Any]) -> EventRecord:
        with self._lock:
            record = EventRecord(self._next_offset, at, kind, payload)
            try:
                self._fh.write(_frame(record.to_json()))
                self._fh.flush()
                if self._fsync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._next_offset += 1
            return record

    def read_all(self) -> Iterator[EventRecord]:
        if not self._path.exists():
            return
        with open(self._path, "r", encoding="utf-8") as fh:
            expected = 0
            for line_no, line in enumerate(fh):
                if not line.endswith("\n"):
                    raise CorruptLog(f"unterminated record at line {line_no}")
                record = EventRecord.from_json(_unframe(line[:-1], line_no))
                if record.offset != expected:
                    raise CorruptLog(
                        f"offset gap: expected {expected}, found {record.offset}"
                    )
                expected += 1
                yield record

    def close(self) -> None:
        self._fh.close()
