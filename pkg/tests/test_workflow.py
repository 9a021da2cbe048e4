import random
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import pytest

from expertloop import events as ev
from expertloop.clock import VirtualClock
from expertloop.model import IdGenerator
from expertloop.workflow import (
    CorrectionPendingElsewhere,
    Decision,
    DueKind,
    NotAssignedExpert,
    Outcome,
    RerouteDisabled,
    TaskState,
    Track,
    UnknownTask,
    VerificationWorkflow,
    WrongExpert,
    WrongState,
)

T0 = datetime(2023, 12, 4, 9, 0, tzinfo=timezone.utc)  # a Monday
OP, ESC, OTHER = "op-1", "esc-1", "nobody"


class Harness:
    """Standalone engine with an in-memory committer."""

    def __init__(self, start=T0, **kw):
        self.clock = VirtualClock(start)
        self.events: list[tuple[str, dict]] = []

        def commit(kind, payload):
            self.events.append((kind, payload))
            self.wf.apply(kind, payload)

        self.wf = VerificationWorkflow(
            IdGenerator(self.clock, seed=1),
            commit,
            assign_experts=lambda track, seeker: ("op-2", "esc-2"),
            tz=ZoneInfo("UTC"),
            **kw,
        )

    def create(self, now=None):
        return self.wf.create_task(
            query_id="q1",
            answer_id="a1",
            seeker_id="s1",
            track=Track.DOCTOR,
            operating_expert_id=OP,
            escalation_expert_id=ESC,
            answer_message_id="m1",
            now=now or self.clock.now(),
        )

    def transitions_for(self, task_id):
        return [
            (p["from"], p["to"])
            for kind, p in self.events
            if kind == ev.TASK_TRANSITION and p["task_id"] == task_id
        ]


# -- decision guards (spec examples)

def test_yes_approves_task():
    h = Harness()
    task = h.create()
    result = h.wf.submit_decision(OP, task.task_id, Decision.YES, T0)
    assert result.outcome is Outcome.APPLIED
    assert task.state is TaskState.APPROVED_YES
    assert task.decided_at == T0


def test_no_awaits_correction_then_correction_completes():
    h = Harness()
    task = h.create()
    h.wf.submit_decision(OP, task.task_id, Decision.NO, T0)
    assert task.state is TaskState.AWAITING_CORRECTION
    assert task.deciding_expert_id == OP
    h.wf.apply_correction(OP, task.task_id, "Btr avoid", "Better to avoid.", T0)
    assert task.state is TaskState.CORRECTED_DONE
    assert task.final_answer == "Better to avoid."


def test_escalation_expert_rejected_before_escalation():
    h = Harness()
    task = h.create()
    with pytest.raises(NotAssignedExpert):
        h.wf.submit_decision(ESC, task.task_id, Decision.YES, T0)


def test_outsider_rejected():
    h = Harness()
    task = h.create()
    with pytest.raises(NotAssignedExpert):
        h.wf.submit_decision(OTHER, task.task_id, Decision.YES, T0)


def test_unknown_task():
    h = Harness()
    with pytest.raises(UnknownTask):
        h.wf.submit_decision(OP, "missing", Decision.YES, T0)


def test_second_terminal_decision_reports_already_decided():
    h = Harness()
    task = h.create()
    h.wf.submit_decision(OP, task.task_id, Decision.YES, T0)
    result = h.wf.submit_decision(OP, task.task_id, Decision.NO, T0)
    assert result.outcome is Outcome.ALREADY_DECIDED
    assert task.state is TaskState.APPROVED_YES
    assert h.transitions_for(task.task_id) == [("awaiting_operating", "approved_yes")]


def test_correction_lock_rejects_other_expert():
    h = Harness()
    task = h.create()
    h.wf.tick(T0 + timedelta(hours=3))  # escalate so both may act
    h.wf.submit_decision(OP, task.task_id, Decision.NO, T0 + timedelta(hours=3))
    with pytest.raises(CorrectionPendingElsewhere):
        h.wf.submit_decision(ESC, task.task_id, Decision.YES, T0 + timedelta(hours=3))


def test_correction_twice_is_wrong_state():
    h = Harness()
    task = h.create()
    h.wf.submit_decision(OP, task.task_id, Decision.NO, T0)
    h.wf.apply_correction(OP, task.task_id, "c", "final", T0)
    with pytest.raises(WrongState):
        h.wf.apply_correction(OP, task.task_id, "again", "final2", T0)


def test_correction_by_non_deciding_expert_is_wrong_expert():
    h = Harness()
    task = h.create()
    h.wf.tick(T0 + timedelta(hours=3))
    h.wf.submit_decision(ESC, task.task_id, Decision.NO, T0 + timedelta(hours=3))
    with pytest.raises(WrongExpert):
        h.wf.apply_correction(OP, task.task_id, "c", "f", T0 + timedelta(hours=3))


def test_reroute_creates_successor_on_opposite_track():
    h = Harness()
    task = h.create()
    result = h.wf.submit_decision(OP, task.task_id, Decision.REROUTE, T0)
    assert task.state is TaskState.REROUTED
    successor = result.successor
    assert successor is not None
    assert successor.track is Track.COORDINATOR
    assert successor.query_id == task.query_id
    assert successor.predecessor_id == task.task_id
    assert successor.state is TaskState.AWAITING_OPERATING
    assert (successor.operating_expert_id, successor.escalation_expert_id) == (
        "op-2",
        "esc-2",
    )


def test_coordinator_reroute_can_be_disabled():
    h = Harness(coordinator_reroute_enabled=False)
    task = h.wf.create_task(
        query_id="q",
        answer_id="a",
        seeker_id="s",
        track=Track.COORDINATOR,
        operating_expert_id=OP,
        escalation_expert_id=ESC,
        answer_message_id="m",
        now=T0,
    )
    with pytest.raises(RerouteDisabled):
        h.wf.submit_decision(OP, task.task_id, Decision.REROUTE, T0)


# -- timers (spec timelines)

def test_escalation_fires_exactly_once_at_three_hours():
    h = Harness()
    task = h.create()
    assert h.wf.tick(T0 + timedelta(hours=2, minutes=59)) == []
    due = h.wf.tick(T0 + timedelta(hours=3))
    assert [d.kind for d in due] == [DueKind.ESCALATE]
    assert due[0].due_at == T0 + timedelta(hours=3)
    assert due[0].recipient_ids == (ESC,)
    assert task.escalated_at == T0 + timedelta(hours=3)
    assert h.wf.tick(T0 + timedelta(hours=3, minutes=1)) == []


def test_decided_task_never_escalates():
    h = Harness()
    task = h.create()
    h.wf.submit_decision(OP, task.task_id, Decision.YES, T0 + timedelta(hours=1))
    assert h.wf.tick(T0 + timedelta(hours=4)) == []


def test_reminder_fires_once_to_both_experts_at_six_hours():
    h = Harness()
    task = h.create()
    h.wf.tick(T0 + timedelta(hours=3))  # escalation passes first
    due = h.wf.tick(T0 + timedelta(hours=6))
    kinds = [d.kind for d in due]
    assert kinds == [DueKind.PENDING_REMINDER]
    assert set(due[0].recipient_ids) == {OP, ESC}
    assert task.reminder_sent
    assert h.wf.tick(T0 + timedelta(hours=6, minutes=5)) == []


def test_awaiting_correction_still_gets_reminder_but_not_escalation():
    h = Harness()
    task = h.create()
    h.wf.submit_decision(OP, task.task_id, Decision.NO, T0 + timedelta(hours=1))
    due = h.wf.tick(T0 + timedelta(hours=7))
    assert [d.kind for d in due] == [DueKind.PENDING_REMINDER]
    assert task.state is TaskState.AWAITING_CORRECTION  # never escalated


def test_digest_lists_only_tasks_pending_over_six_hours():
    h = Harness(start=T0.replace(hour=5))  # Monday 05:00
    h.wf.tick(h.clock.now())  # initialize watermark
    task = h.create(now=h.clock.now())
    due_8 = h.wf.tick(T0.replace(hour=8))
    # 08:00: escalation fires; digest slot fires but lists nothing (age 3h)
    assert [d.kind for d in due_8] == [DueKind.ESCALATE]
    due_12 = h.wf.tick(T0.replace(hour=12))
    digests = [d for d in due_12 if d.kind is DueKind.DIGEST]
    assert len(digests) == 1
    assert digests[0].due_at == T0.replace(hour=12)
    assert digests[0].digest == {
        OP: (task.task_id,),
        ESC: (task.task_id,),
    }


def test_digest_fires_once_per_slot_even_with_repeated_ticks():
    h = Harness(start=T0.replace(hour=5))
    h.wf.tick(h.clock.now())
    h.create(now=h.clock.now())
    h.wf.tick(T0.replace(hour=12))
    fired = [
        p["slot"]
        for kind, p in h.events
        if kind == ev.SCHEDULER_FIRED and p["schedule"] == "digest"
    ]
    assert len(fired) == 2  # 08:00 and 12:00
    h.wf.tick(T0.replace(hour=12, minute=30))
    fired_after = [
        p for kind, p in h.events
        if kind == ev.SCHEDULER_FIRED and p["schedule"] == "digest"
    ]
    assert len(fired_after) == 2


def test_late_tick_reconstructs_digest_membership_at_slot_time():
    # a single delayed tick must list exactly what was pending AT the slot,
    # not at the moment the tick finally ran
    h = Harness(start=T0.replace(hour=5))
    h.wf.tick(h.clock.now())
    early = h.create(now=h.clock.now())  # 05:00, >6h pending by 12:00
    late = h.wf.create_task(
        query_id="q2", answer_id="a2", seeker_id="s1", track=Track.DOCTOR,
        operating_expert_id=OP, escalation_expert_id=ESC,
        answer_message_id="m2", now=T0.replace(hour=5, minute=30),
    )
    # `late` is corrected at 12:30: it WAS pending at the 12:00 slot
    h.wf.tick(T0.replace(hour=11))
    h.wf.submit_decision(OP, late.task_id, Decision.NO, T0.replace(hour=11, minute=30))
    h.wf.apply_correction(OP, late.task_id, "c", "f", T0.replace(hour=12, minute=30))
    # `early` is approved at 11:00: it was NOT pending at 12:00
    h.wf.submit_decision(ESC, early.task_id, Decision.YES, T0.replace(hour=11, minute=45))
    due = h.wf.tick(T0.replace(hour=13))  # first tick past the 12:00 slot
    digests = [d for d in due if d.kind is DueKind.DIGEST]
    assert len(digests) == 1
    assert digests[0].due_at == T0.replace(hour=12)
    listed = set(digests[0].digest.get(OP, ()))
    assert listed == {late.task_id}


def test_tick_rejects_time_going_backwards():
    h = Harness()
    h.wf.tick(T0 + timedelta(hours=1))
    with pytest.raises(ValueError):
        h.wf.tick(T0)


def test_next_due_reports_earliest_upcoming_instant():
    h = Harness()
    h.wf.tick(T0)
    h.create()
    assert h.wf.next_due(T0) == T0 + timedelta(hours=3)
    h.wf.tick(T0 + timedelta(hours=3))
    assert h.wf.next_due(T0 + timedelta(hours=3)) == T0 + timedelta(hours=6)


# -- replay fold equivalence

def test_fold_rebuilds_identical_state():
    h = Harness()
    task = h.create()
    h.wf.tick(T0 + timedelta(hours=3))
    h.wf.submit_decision(ESC, task.task_id, Decision.NO, T0 + timedelta(hours=4))
    h.wf.apply_correction(ESC, task.task_id, "c", "final text", T0 + timedelta(hours=5))

    rebuilt = Harness()
    for kind, payload in h.events:
        rebuilt.wf.apply(kind, payload)
    original = h.wf.tasks[task.task_id]
    copy = rebuilt.wf.tasks[task.task_id]
    assert copy == original


# -- randomized safety against the brute-force transition-table oracle

class TransitionOracle:
    """Independent single-task rules interpreter, straight from the rules:

    - only assigned experts may act; the escalation expert only once
      escalated; terminal tasks answer AlreadyDecided; a pending correction
      locks out every decision; corrections need the deciding expert and
      the awaiting state; escalation happens only from AwaitingOperating at
      +3h; one reminder at +6h while non-terminal.
    """

    TERMINAL = {"approved_yes", "corrected_done", "rerouted"}

    def __init__(self, created_at):
        self.created_at = created_at
        self.state = "awaiting_operating"
        self.escalated = False
        self.reminder_sent = False
        self.deciding = None

    def decide(self, actor, decision):
        if actor not in (OP, ESC):
            return "NotAssignedExpert"
        if actor == ESC and not self.escalated:
            return "NotAssignedExpert"
        if self.state in self.TERMINAL:
            return "already_decided"
        if self.state == "awaiting_correction":
            return "CorrectionPendingElsewhere"
        if decision == "yes":
            self.state = "approved_yes"
        elif decision == "no":
            self.state = "awaiting_correction"
            self.deciding = actor
        else:
            self.state = "rerouted"
        return "applied"

    def correct(self, actor):
        if self.state != "awaiting_correction":
            return "WrongState"
        if actor != self.deciding:
            return "WrongExpert"
        self.state = "corrected_done"
        return "applied"

    def tick(self, now):
        fired = []
        if (
            self.state == "awaiting_operating"
            and now - self.created_at >= timedelta(hours=3)
        ):
            self.state = "escalated"
            self.escalated = True
            fired.append("escalate")
        if (
            self.state not in self.TERMINAL
            and not self.reminder_sent
            and now - self.created_at >= timedelta(hours=6)
        ):
            self.reminder_sent = True
            fired.append("reminder")
        return fired


def engine_outcome(callable_):
    try:
        result = callable_()
    except (
        NotAssignedExpert,
        CorrectionPendingElsewhere,
        WrongState,
        WrongExpert,
    ) as exc:
        return type(exc).__name__
    if hasattr(result, "outcome"):
        return (
            "applied" if result.outcome is Outcome.APPLIED else "already_decided"
        )
    return "applied"


@pytest.mark.parametrize("seed", range(30))
def test_random_interleavings_match_oracle(seed):
    rng = random.Random(seed)
    h = Harness(digest_times=())  # digests covered separately
    task = h.create()
    oracle = TransitionOracle(T0)
    now = T0
    for _ in range(rng.randint(3, 25)):
        move = rng.random()
        if move < 0.45:
            actor = rng.choice([OP, ESC, OTHER])
            decision_name = rng.choice(["yes", "no", "reroute"])
            got = engine_outcome(
                lambda: h.wf.submit_decision(
                    actor, task.task_id, Decision(decision_name), now
                )
            )
            want = oracle.decide(actor, decision_name)
            assert got == want, f"decide({actor},{decision_name}) at {now}"
        elif move < 0.65:
            actor = rng.choice([OP, ESC, OTHER])
            got = engine_outcome(
                lambda: h.wf.apply_correction(actor, task.task_id, "c", "f", now)
            )
            want = oracle.correct(actor)
            assert got == want
        else:
            now = now + timedelta(minutes=rng.randint(1, 200))
            due = [
                d
                for d in h.wf.tick(now)
                if d.task_id == task.task_id and d.kind is not DueKind.DIGEST
            ]
            fired = {
                {"escalate": DueKind.ESCALATE, "reminder": DueKind.PENDING_REMINDER}[f]
                for f in oracle.tick(now)
            }
            assert {d.kind for d in due} == fired
        assert task.state.value == oracle.state
        assert task.reminder_sent == oracle.reminder_sent
    # transition legality over the whole run
    legal = {
        ("awaiting_operating", "escalated"),
        ("awaiting_operating", "approved_yes"),
        ("awaiting_operating", "awaiting_correction"),
        ("awaiting_operating", "rerouted"),
        ("escalated", "approved_yes"),
        ("escalated", "awaiting_correction"),
        ("escalated", "rerouted"),
        ("awaiting_correction", "corrected_done"),
    }
    for edge in h.transitions_for(task.task_id):
        assert edge in legal
