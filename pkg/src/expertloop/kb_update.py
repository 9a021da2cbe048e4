"""Nightly knowledge-base growth: review sheet out, approved entries in.

At the evening firing every correction completed since the previous sheet
becomes one review row; the reviewer marks rows Yes/No (optionally editing
the final answer); at the early-morning firing all queued Yes entries are
appended to the expert-FAQ document.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from datetime import datetime, time
from pathlib import Path
from typing import Callable, Optional
from zoneinfo import ZoneInfo

from . import events as ev
from .clock import next_slot_instant, slot_instants_between
from .embeddings import EmbeddingProviderFailure
from .model import IdGenerator
from .workflow import VerificationTask, VerificationWorkflow

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "row_id",
    "question",
    "bot_answer",
    "expert_correction",
    "merged_final_answer",
    "should_update",
    "final_answer_for_kb",
]


class ReviewError(Exception):
    pass


class UnknownRow(ReviewError):
    pass


class MissingFinalAnswer(ReviewError):
    pass


@dataclass(frozen=True)
class ReviewRow:
    row_id: str
    question: str
    bot_answer: str
    expert_correction: str
    merged_final_answer: str
    should_update: str = ""  # "Yes" | "No" | ""
    final_answer_for_kb: str = ""

    def to_payload(self) -> dict:
        return {
            "row_id": self.row_id,
            "question": self.question,
            "bot_answer": self.bot_answer,
            "expert_correction": self.expert_correction,
            "merged_final_answer": self.merged_final_answer,
        }


def rows_to_csv(rows: list[ReviewRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(
            [
                row.row_id,
                row.question,
                row.bot_answer,
                row.expert_correction,
                row.merged_final_answer,
                row.should_update,
                row.final_answer_for_kb,
            ]
        )
    return buffer.getvalue()


def rows_from_csv(text: str) -> list[ReviewRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ReviewError("empty review sheet") from None
    if header != CSV_HEADER:
        raise ReviewError(f"unexpected review sheet header: {header}")
    rows = []
    for record in reader:
        if not record:
            continue
        if len(record) != len(CSV_HEADER):
            raise ReviewError(f"malformed review row: {record}")
        should = record[5].strip()
        if should not in ("Yes", "No", ""):
            raise ReviewError(f"should_update must be Yes, No or blank: {should!r}")
        rows.append(
            ReviewRow(
                row_id=record[0],
                question=record[1],
                bot_answer=record[2],
                expert_correction=record[3],
                merged_final_answer=record[4],
                should_update=should,
                final_answer_for_kb=record[6],
            )
        )
    return rows


Committer = Callable[[str, dict], None]
RowContext = Callable[[VerificationTask], tuple[str, str]]  # question, bot answer
EntryApplier = Callable[[list[tuple[str, str]]], None]


class KbUpdatePipeline:
    def __init__(
        self,
        workflow: VerificationWorkflow,
        ids: IdGenerator,
        commit: Committer,
        row_context: RowContext,
        apply_entries: EntryApplier,
        review_dir: Path,
        tz: ZoneInfo,
        digest_time: time = time(20, 0),
        apply_time: time = time(3, 0),
    ):
        self._workflow = workflow
        self._ids = ids
        self._commit = commit
        self._row_context = row_context
        self._apply_entries = apply_entries
        self._review_dir = Path(review_dir)
        self.tz = tz
        self.digest_time = digest_time
        self.apply_time = apply_time

        self.pending_rows: dict[str, dict] = {}
        self.queue: list[tuple[str, str]] = []
        self._digest_cutoff: Optional[datetime] = None
        self._digest_watermark: Optional[datetime] = None
        self._apply_watermark: Optional[datetime] = None

    # -- event folding

    @property
    def digest_watermark(self) -> Optional[datetime]:
        return self._digest_watermark

    @property
    def apply_watermark(self) -> Optional[datetime]:
        return self._apply_watermark

    @property
    def digest_cutoff(self) -> Optional[datetime]:
        return self._digest_cutoff

    def apply(self, kind: str, payload: dict) -> None:
        if kind == ev.SERVICE_INITIALIZED:
            at = datetime.fromisoformat(payload["at"])
            if self._digest_watermark is None:
                self._digest_watermark = at
            if self._apply_watermark is None:
                self._apply_watermark = at
        elif kind == ev.SCHEDULER_FIRED:
            schedule = payload.get("schedule")
            if schedule == "kb_digest":
                self._digest_watermark = datetime.fromisoformat(payload["slot"])
            elif schedule == "kb_apply":
                self._apply_watermark = datetime.fromisoformat(payload["slot"])
        elif kind == ev.DIGEST_EMITTED:
            for row in payload["rows"]:
                self.pending_rows[row["row_id"]] = row
            self._digest_cutoff = datetime.fromisoformat(payload["cutoff"])
        elif kind == ev.REVIEW_INGESTED:
            for entry in payload["queued"]:
                self.queue.append((entry[0], entry[1]))
            for row_id in payload["row_ids"]:
                self.pending_rows.pop(row_id, None)
        elif kind == ev.FAQ_APPLIED:
            remaining = [tuple(entry) for entry in payload["entries"]]
            kept = []
            for entry in self.queue:
                if entry in remaining:
                    remaining.remove(entry)
                else:
                    kept.append(entry)
            self.queue = kept

    # -- operations

    def build_daily_digest(self, slot: datetime) -> list[ReviewRow]:
        """Sheet of every correction completed since the previous sheet."""
        start = self._digest_cutoff or datetime.min.replace(tzinfo=self.tz)
        tasks = self._workflow.corrected_between(start, slot)
        rows = []
        for task in tasks:
            question, bot_answer = self._row_context(task)
            rows.append(
                ReviewRow(
                    row_id=self._ids.new_id(),
                    question=question,
                    bot_answer=bot_answer,
                    expert_correction=task.correction_text or "",
                    merged_final_answer=task.final_answer or "",
                    should_update="",
                    final_answer_for_kb=task.final_answer or "",
                )
            )
        day = slot.astimezone(self.tz).date()
        self._review_dir.mkdir(parents=True, exist_ok=True)
        sheet_path = self._review_dir / f"kb_review_{day.isoformat()}.csv"
        sheet_path.write_text(rows_to_csv(rows), encoding="utf-8")
        self._commit(
            ev.DIGEST_EMITTED,
            {
                "rows": [row.to_payload() for row in rows],
                "cutoff": slot.isoformat(),
                "day": day.isoformat(),
                "sheet": str(sheet_path),
            },
        )
        logger.info("review sheet for %s: %d rows -> %s", day, len(rows), sheet_path)
        return rows

    def ingest_review(self, rows: list[ReviewRow]) -> list[tuple[str, str]]:
        """Queue Yes rows for the next apply firing; drop the rest."""
        for row in rows:
            if row.row_id not in self.pending_rows:
                raise UnknownRow(row.row_id)
            if row.should_update == "Yes" and not row.final_answer_for_kb.strip():
                raise MissingFinalAnswer(row.row_id)
        queued = [
            (row.question, row.final_answer_for_kb)
            for row in rows
            if row.should_update == "Yes"
        ]
        dropped = [row.row_id for row in rows if row.should_update != "Yes"]
        if dropped:
            logger.info("review dropped %d rows (not generalizable)", len(dropped))
        self._commit(
            ev.REVIEW_INGESTED,
            {
                "queued": [list(entry) for entry in queued],
                "row_ids": [row.row_id for row in rows],
                "dropped": dropped,
            },
        )
        return queued

    def apply_updates(self, now: datetime) -> int:
        """Append all queued entries to the expert-FAQ; keep queue on failure."""
        if not self.queue:
            return 0
        entries = list(self.queue)
        try:
            self._apply_entries(entries)
        except EmbeddingProviderFailure as exc:
            logger.warning("FAQ application failed, queue kept: %s", exc)
            return 0
        self._commit(
            ev.FAQ_APPLIED,
            {"entries": [list(entry) for entry in entries], "at": now.isoformat()},
        )
        return len(entries)

    # -- timers

    def tick(self, now: datetime) -> None:
        if self._digest_watermark is None:
            self._digest_watermark = now
        if self._apply_watermark is None:
            self._apply_watermark = now
        firings: list[tuple[datetime, str]] = []
        for slot in slot_instants_between(
            self._digest_watermark, now, (self.digest_time,), self.tz
        ):
            firings.append((slot, "kb_digest"))
        for slot in slot_instants_between(
            self._apply_watermark, now, (self.apply_time,), self.tz
        ):
            firings.append((slot, "kb_apply"))
        for slot, schedule in sorted(firings):
            self._commit(
                ev.SCHEDULER_FIRED, {"schedule": schedule, "slot": slot.isoformat()}
            )
            if schedule == "kb_digest":
                self.build_daily_digest(slot)
            else:
                self.apply_updates(slot)

    def next_due(self, now: datetime) -> Optional[datetime]:
        candidates = [
            next_slot_instant(now, (self.digest_time,), self.tz),
            next_slot_instant(now, (self.apply_time,), self.tz),
        ]
        future = [c for c in candidates if c > now]
        return min(future) if future else None
