"""Per-query verification state machine with escalation, reminders, digests.

Every mutation is recorded through an injected event committer and folded
back into engine state by `apply`, so live operation and log replay share
one code path. Time enters only through method arguments; the scheduler
driver decides when to call `tick`.

State graph:

    AwaitingOperating -> Escalated | ApprovedYes | AwaitingCorrection | Rerouted
    Escalated         -> ApprovedYes | AwaitingCorrection | Rerouted
    AwaitingCorrection-> CorrectedDone

ApprovedYes, CorrectedDone and Rerouted are terminal; the first terminal
decision wins and later decisions report AlreadyDecided with no side
effects. Once an expert picks No, every further decision is rejected until
that expert's correction lands.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, time
from enum import Enum
from typing import Callable, Optional
from zoneinfo import ZoneInfo

from . import events as ev
from .clock import next_slot_instant, slot_instants_between
from .model import IdGenerator, QueryType


class Track(str, Enum):
    DOCTOR = "doctor"
    COORDINATOR = "coordinator"

    @property
    def opposite(self) -> "Track":
        return Track.COORDINATOR if self is Track.DOCTOR else Track.DOCTOR


TRACK_FOR_QUERY_TYPE = {
    QueryType.MEDICAL: Track.DOCTOR,
    QueryType.LOGISTICAL: Track.COORDINATOR,
}


class TaskState(str, Enum):
    AWAITING_OPERATING = "awaiting_operating"
    ESCALATED = "escalated"
    APPROVED_YES = "approved_yes"
    AWAITING_CORRECTION = "awaiting_correction"
    CORRECTED_DONE = "corrected_done"
    REROUTED = "rerouted"


TERMINAL_STATES = frozenset(
    {TaskState.APPROVED_YES, TaskState.CORRECTED_DONE, TaskState.REROUTED}
)

LEGAL_TRANSITIONS: dict[TaskState, frozenset[TaskState]] = {
    TaskState.AWAITING_OPERATING: frozenset(
        {
            TaskState.ESCALATED,
            TaskState.APPROVED_YES,
            TaskState.AWAITING_CORRECTION,
            TaskState.REROUTED,
        }
    ),
    TaskState.ESCALATED: frozenset(
        {TaskState.APPROVED_YES, TaskState.AWAITING_CORRECTION, TaskState.REROUTED}
    ),
    TaskState.AWAITING_CORRECTION: frozenset({TaskState.CORRECTED_DONE}),
    TaskState.APPROVED_YES: frozenset(),
    TaskState.CORRECTED_DONE: frozenset(),
    TaskState.REROUTED: frozenset(),
}


class Decision(str, Enum):
    YES = "yes"
    NO = "no"
    REROUTE = "reroute"


class WorkflowError(Exception):
    pass


class UnknownTask(WorkflowError):
    pass


class NotAssignedExpert(WorkflowError):
    pass


class CorrectionPendingElsewhere(WorkflowError):
    """A No decision locked the task to its deciding expert."""


class WrongState(WorkflowError):
    pass


class WrongExpert(WorkflowError):
    pass


class RerouteDisabled(WorkflowError):
    pass


@dataclass
class VerificationTask:
    task_id: str
    query_id: str
    answer_id: str
    seeker_id: str
    track: Track
    operating_expert_id: str
    escalation_expert_id: str
    answer_message_id: str
    created_at: datetime
    state: TaskState = TaskState.AWAITING_OPERATING
    escalated_at: Optional[datetime] = None
    decided_at: Optional[datetime] = None
    corrected_at: Optional[datetime] = None
    deciding_expert_id: Optional[str] = None
    correction_text: Optional[str] = None
    final_answer: Optional[str] = None
    reminder_sent: bool = False
    predecessor_id: Optional[str] = None

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    @property
    def terminal_at(self) -> Optional[datetime]:
        if self.state is TaskState.CORRECTED_DONE:
            return self.corrected_at
        if self.state in (TaskState.APPROVED_YES, TaskState.REROUTED):
            return self.decided_at
        return None

    def was_pending_at(self, instant: datetime) -> bool:
        if self.created_at > instant:
            return False
        terminal_at = self.terminal_at
        return terminal_at is None or terminal_at > instant

    @property
    def assigned_experts(self) -> tuple[str, str]:
        return (self.operating_expert_id, self.escalation_expert_id)

    def to_payload(self) -> dict:
        return {
            "task_id": self.task_id,
            "query_id": self.query_id,
            "answer_id": self.answer_id,
            "seeker_id": self.seeker_id,
            "track": self.track.value,
            "operating_expert_id": self.operating_expert_id,
            "escalation_expert_id": self.escalation_expert_id,
            "answer_message_id": self.answer_message_id,
            "created_at": self.created_at.isoformat(),
            "predecessor_id": self.predecessor_id,
        }


class Outcome(str, Enum):
    APPLIED = "applied"
    ALREADY_DECIDED = "already_decided"


@dataclass(frozen=True)
class TransitionResult:
    outcome: Outcome
    task: VerificationTask
    successor: Optional[VerificationTask] = None


class DueKind(str, Enum):
    ESCALATE = "escalate"
    PENDING_REMINDER = "pending_reminder"
    DIGEST = "digest"


@dataclass(frozen=True)
class DueEvent:
    kind: DueKind
    due_at: datetime
    recipient_ids: tuple[str, ...]
    task_id: Optional[str] = None
    # digest only: expert id -> task ids pending > reminder_delay at the slot
    digest: dict[str, tuple[str, ...]] = field(default_factory=dict)


Committer = Callable[[str, dict], None]
ExpertAssigner = Callable[[Track, str], tuple[str, str]]


class VerificationWorkflow:
    def __init__(
        self,
        ids: IdGenerator,
        commit: Committer,
        assign_experts: ExpertAssigner,
        escalation_delay: timedelta = timedelta(hours=3),
        reminder_delay: timedelta = timedelta(hours=6),
        digest_times: tuple[time, ...] = (time(8), time(12), time(16)),
        tz: ZoneInfo = ZoneInfo("UTC"),
        coordinator_reroute_enabled: bool = True,
    ):
        self._ids = ids
        self._commit = commit
        self._assign_experts = assign_experts
        self.escalation_delay = escalation_delay
        self.reminder_delay = reminder_delay
        self.digest_times = digest_times
        self.tz = tz
        self.coordinator_reroute_enabled = coordinator_reroute_enabled
        self.tasks: dict[str, VerificationTask] = {}
        self._digest_watermark: Optional[datetime] = None
        self._last_tick: Optional[datetime] = None

    # -- event folding (shared by live mutation and replay)

    def apply(self, kind: str, payload: dict) -> None:
        if kind == ev.SERVICE_INITIALIZED:
            if self._digest_watermark is None:
                self._digest_watermark = datetime.fromisoformat(payload["at"])
        elif kind == ev.TASK_CREATED:
            task = VerificationTask(
                task_id=payload["task_id"],
                query_id=payload["query_id"],
                answer_id=payload["answer_id"],
                seeker_id=payload["seeker_id"],
                track=Track(payload["track"]),
                operating_expert_id=payload["operating_expert_id"],
                escalation_expert_id=payload["escalation_expert_id"],
                answer_message_id=payload["answer_message_id"],
                created_at=datetime.fromisoformat(payload["created_at"]),
                predecessor_id=payload.get("predecessor_id"),
            )
            self.tasks[task.task_id] = task
        elif kind == ev.TASK_TRANSITION:
            task = self.tasks[payload["task_id"]]
            to_state = TaskState(payload["to"])
            at = datetime.fromisoformat(payload["at"])
            if to_state not in LEGAL_TRANSITIONS[task.state]:
                raise WrongState(
                    f"illegal transition {task.state.value} -> {to_state.value}"
                )
            task.state = to_state
            if to_state is TaskState.ESCALATED:
                task.escalated_at = at
            elif to_state in (TaskState.APPROVED_YES, TaskState.REROUTED):
                task.decided_at = at
                task.deciding_expert_id = payload.get("by_expert")
            elif to_state is TaskState.AWAITING_CORRECTION:
                task.decided_at = at
                task.deciding_expert_id = payload.get("by_expert")
            elif to_state is TaskState.CORRECTED_DONE:
                task.corrected_at = at
                task.correction_text = payload.get("correction_text")
                task.final_answer = payload.get("final_answer")
        elif kind == ev.TASK_REMINDER_SENT:
            self.tasks[payload["task_id"]].reminder_sent = True
        elif kind == ev.SCHEDULER_FIRED and payload.get("schedule") == "digest":
            self._digest_watermark = datetime.fromisoformat(payload["slot"])

    # -- commands

    def create_task(
        self,
        query_id: str,
        answer_id: str,
        seeker_id: str,
        track: Track,
        operating_expert_id: str,
        escalation_expert_id: str,
        answer_message_id: str,
        now: datetime,
        predecessor_id: Optional[str] = None,
    ) -> VerificationTask:
        task_id = self._ids.new_id()
        self._commit(
            ev.TASK_CREATED,
            {
                "task_id": task_id,
                "query_id": query_id,
                "answer_id": answer_id,
                "seeker_id": seeker_id,
                "track": track.value,
                "operating_expert_id": operating_expert_id,
                "escalation_expert_id": escalation_expert_id,
                "answer_message_id": answer_message_id,
                "created_at": now.isoformat(),
                "predecessor_id": predecessor_id,
            },
        )
        return self.tasks[task_id]

    def _transition(
        self,
        task: VerificationTask,
        to_state: TaskState,
        now: datetime,
        by_expert: Optional[str] = None,
        correction_text: Optional[str] = None,
        final_answer: Optional[str] = None,
        successor_task_id: Optional[str] = None,
    ) -> None:
        payload = {
            "task_id": task.task_id,
            "from": task.state.value,
            "to": to_state.value,
            "at": now.isoformat(),
        }
        if by_expert is not None:
            payload["by_expert"] = by_expert
        if correction_text is not None:
            payload["correction_text"] = correction_text
        if final_answer is not None:
            payload["final_answer"] = final_answer
        if successor_task_id is not None:
            payload["successor_task_id"] = successor_task_id
        self._commit(ev.TASK_TRANSITION, payload)

    def _get_task(self, task_id: str) -> VerificationTask:
        task = self.tasks.get(task_id)
        if task is None:
            raise UnknownTask(task_id)
        return task

    def submit_decision(
        self, expert_id: str, task_id: str, decision: Decision, now: datetime
    ) -> TransitionResult:
        task = self._get_task(task_id)
        if expert_id not in task.assigned_experts:
            raise NotAssignedExpert(f"{expert_id} is not assigned to {task_id}")
        if expert_id == task.escalation_expert_id and task.escalated_at is None:
            raise NotAssignedExpert(
                "escalation expert may act only after escalation"
            )
        if task.is_terminal:
            return TransitionResult(Outcome.ALREADY_DECIDED, task)
        if task.state is TaskState.AWAITING_CORRECTION:
            raise CorrectionPendingElsewhere(
                f"correction held by {task.deciding_expert_id}"
            )

        if decision is Decision.YES:
            self._transition(task, TaskState.APPROVED_YES, now, by_expert=expert_id)
            return TransitionResult(Outcome.APPLIED, task)
        if decision is Decision.NO:
            self._transition(
                task, TaskState.AWAITING_CORRECTION, now, by_expert=expert_id
            )
            return TransitionResult(Outcome.APPLIED, task)

        # reroute to the opposite track
        if task.track is Track.COORDINATOR and not self.coordinator_reroute_enabled:
            raise RerouteDisabled("coordinator-to-doctor reroute is disabled")
        new_track = task.track.opposite
        op_id, esc_id = self._assign_experts(new_track, task.seeker_id)
        successor_id = self._ids.new_id()
        self._transition(
            task,
            TaskState.REROUTED,
            now,
            by_expert=expert_id,
            successor_task_id=successor_id,
        )
        self._commit(
            ev.TASK_CREATED,
            {
                "task_id": successor_id,
                "query_id": task.query_id,
                "answer_id": task.answer_id,
                "seeker_id": task.seeker_id,
                "track": new_track.value,
                "operating_expert_id": op_id,
                "escalation_expert_id": esc_id,
                "answer_message_id": task.answer_message_id,
                "created_at": now.isoformat(),
                "predecessor_id": task.task_id,
            },
        )
        return TransitionResult(Outcome.APPLIED, task, successor=self.tasks[successor_id])

    def validate_correction(self, expert_id: str, task_id: str) -> VerificationTask:
        task = self._get_task(task_id)
        if task.state is not TaskState.AWAITING_CORRECTION:
            raise WrongState(f"task {task_id} is {task.state.value}")
        if expert_id != task.deciding_expert_id:
            raise WrongExpert(
                f"correction must come from {task.deciding_expert_id}"
            )
        return task

    def apply_correction(
        self,
        expert_id: str,
        task_id: str,
        correction_text: str,
        final_answer: str,
        now: datetime,
    ) -> VerificationTask:
        task = self.validate_correction(expert_id, task_id)
        self._transition(
            task,
            TaskState.CORRECTED_DONE,
            now,
            by_expert=expert_id,
            correction_text=correction_text,
            final_answer=final_answer,
        )
        return task

    # -- timers

    def tick(self, now: datetime) -> list[DueEvent]:
        """Process everything due at or before `now`; idempotent per firing.

        Escalation moves a still-unhandled task to the escalation expert
        after `escalation_delay`; one joint reminder goes to both experts
        after `reminder_delay`; at each digest slot, every task pending
        longer than `reminder_delay` (evaluated at the slot instant) is
        listed to both of its experts.
        """
        if self._last_tick is not None and now < self._last_tick:
            raise ValueError("tick time went backwards")
        self._last_tick = now
        due: list[DueEvent] = []

        escalations = sorted(
            (
                t
                for t in self.tasks.values()
                if t.state is TaskState.AWAITING_OPERATING
                and now - t.created_at >= self.escalation_delay
            ),
            key=lambda t: (t.created_at, t.task_id),
        )
        for task in escalations:
            self._transition(task, TaskState.ESCALATED, now)
            due.append(
                DueEvent(
                    kind=DueKind.ESCALATE,
                    due_at=task.created_at + self.escalation_delay,
                    recipient_ids=(task.escalation_expert_id,),
                    task_id=task.task_id,
                )
            )

        reminders = sorted(
            (
                t
                for t in self.tasks.values()
                if not t.is_terminal
                and not t.reminder_sent
                and now - t.created_at >= self.reminder_delay
            ),
            key=lambda t: (t.created_at, t.task_id),
        )
        for task in reminders:
            self._commit(ev.TASK_REMINDER_SENT, {"task_id": task.task_id})
            due.append(
                DueEvent(
                    kind=DueKind.PENDING_REMINDER,
                    due_at=task.created_at + self.reminder_delay,
                    recipient_ids=task.assigned_experts,
                    task_id=task.task_id,
                )
            )

        if self._digest_watermark is None:
            self._digest_watermark = now
        for slot in slot_instants_between(
            self._digest_watermark, now, self.digest_times, self.tz
        ):
            self._commit(
                ev.SCHEDULER_FIRED, {"schedule": "digest", "slot": slot.isoformat()}
            )
            listing: dict[str, list[str]] = {}
            for task in sorted(
                self.tasks.values(), key=lambda t: (t.created_at, t.task_id)
            ):
                if task.was_pending_at(slot) and slot - task.created_at > self.reminder_delay:
                    for expert in task.assigned_experts:
                        listing.setdefault(expert, []).append(task.task_id)
            if listing:
                due.append(
                    DueEvent(
                        kind=DueKind.DIGEST,
                        due_at=slot,
                        recipient_ids=tuple(sorted(listing)),
                        digest={k: tuple(v) for k, v in listing.items()},
                    )
                )
        return due

    def next_due(self, now: datetime) -> Optional[datetime]:
        """Earliest instant strictly after `now` when new work comes due."""
        candidates: list[datetime] = []
        for task in self.tasks.values():
            if task.state is TaskState.AWAITING_OPERATING:
                candidates.append(task.created_at + self.escalation_delay)
            if not task.is_terminal and not task.reminder_sent:
                candidates.append(task.created_at + self.reminder_delay)
        if self.digest_times:
            candidates.append(next_slot_instant(now, self.digest_times, self.tz))
        future = [c for c in candidates if c > now]
        return min(future) if future else None

    # -- queries

    @property
    def digest_watermark(self) -> Optional[datetime]:
        return self._digest_watermark

    def pending_tasks(self) -> list[VerificationTask]:
        return sorted(
            (t for t in self.tasks.values() if not t.is_terminal),
            key=lambda t: (t.created_at, t.task_id),
        )

    def tasks_for_expert(self, expert_id: str) -> list[VerificationTask]:
        return sorted(
            (t for t in self.tasks.values() if expert_id in t.assigned_experts),
            key=lambda t: (t.created_at, t.task_id),
        )

    def actionable_tasks(self, expert_id: str) -> list[VerificationTask]:
        """Tasks on which this expert's button press would be legal now."""
        out = []
        for task in self.tasks_for_expert(expert_id):
            if task.is_terminal or task.state is TaskState.AWAITING_CORRECTION:
                continue
            if expert_id == task.escalation_expert_id and task.escalated_at is None:
                continue
            out.append(task)
        return out

    def latest_visible_task(self, expert_id: str) -> Optional[VerificationTask]:
        """Most recent task this expert could ever have seen a prompt for.

        Used to resolve a button press that arrives with no target context
        and no actionable task left (e.g. the race loser after a concurrent
        approval): the press lands on the latest task, which then reports
        its terminal outcome.
        """
        visible = [
            t
            for t in self.tasks_for_expert(expert_id)
            if expert_id != t.escalation_expert_id or t.escalated_at is not None
        ]
        return visible[-1] if visible else None

    def correction_tasks(self, expert_id: str) -> list[VerificationTask]:
        return [
            t
            for t in self.pending_tasks()
            if t.state is TaskState.AWAITING_CORRECTION
            and t.deciding_expert_id == expert_id
        ]

    def corrected_between(
        self, start: datetime, end: datetime
    ) -> list[VerificationTask]:
        """CorrectedDone tasks with corrected_at in (start, end]."""
        return sorted(
            (
                t
                for t in self.tasks.values()
                if t.state is TaskState.CORRECTED_DONE
                and t.corrected_at is not None
                and start < t.corrected_at <= end
            ),
            key=lambda t: (t.corrected_at, t.task_id),
        )
