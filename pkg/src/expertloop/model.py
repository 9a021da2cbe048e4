"""Shared domain types: users, queries, answers, and their status machinery.

Everything in here is an immutable value object; no I/O happens in this
module. Identifiers are ULID-style strings (millisecond timestamp prefix +
random tail, Crockford base32) so that id order follows creation order.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from typing import Optional

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


class IdGenerator:
    """Monotonic ULID-style id factory.

    Ids sort lexicographically by creation time; within the same
    millisecond the random tail is incremented so ordering still holds.
    A seeded RNG makes id streams reproducible in simulation.
    """

    def __init__(self, clock, seed: int | None = None):
        self._clock = clock
        self._rng = random.Random(seed)
        self._last_ms = -1
        self._last_tail = 0

    def new_id(self) -> str:
        now: datetime = self._clock.now()
        ms = int(now.timestamp() * 1000)
        if ms <= self._last_ms:
            ms = self._last_ms
            self._last_tail += 1
        else:
            self._last_ms = ms
            self._last_tail = self._rng.getrandbits(80)
        tail = self._last_tail % (1 << 80)
        return _b32(ms, 10) + _b32(tail, 16)


def _b32(value: int, width: int) -> str:
    chars = []
    for _ in range(width):
        chars.append(_CROCKFORD[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


class Role(str, Enum):
    PATIENT = "patient"
    ATTENDANT = "attendant"
    OPERATING_DOCTOR = "operating_doctor"
    ESCALATION_DOCTOR = "escalation_doctor"
    OPERATING_COORDINATOR = "operating_coordinator"
    ESCALATION_COORDINATOR = "escalation_coordinator"
    KNOWLEDGE_BASE_EXPERT = "knowledge_base_expert"


SEEKER_ROLES = frozenset({Role.PATIENT, Role.ATTENDANT})
EXPERT_ROLES = frozenset(set(Role) - SEEKER_ROLES)


class LanguageCode(str, Enum):
    EN = "EN"
    HI = "HI"
    KN = "KN"
    TA = "TA"
    TE = "TE"


class Modality(str, Enum):
    TEXT = "text"
    AUDIO = "audio"
    TAP = "tap"


class QueryType(str, Enum):
    MEDICAL = "medical"
    LOGISTICAL = "logistical"
    SMALL_TALK = "small_talk"
    OTHER = "other"


class AnswerStatus(str, Enum):
    UNVERIFIED = "unverified"
    VERIFIED = "verified"
    MARKED_INCORRECT = "marked_incorrect"
    CORRECTED = "corrected"


# Legal status moves; VERIFIED and CORRECTED are terminal.
ANSWER_STATUS_TRANSITIONS = {
    AnswerStatus.UNVERIFIED: {AnswerStatus.VERIFIED, AnswerStatus.MARKED_INCORRECT},
    AnswerStatus.MARKED_INCORRECT: {AnswerStatus.CORRECTED},
    AnswerStatus.VERIFIED: set(),
    AnswerStatus.CORRECTED: set(),
}


class IconState(str, Enum):
    QUESTION_MARK = "❓"
    GREEN_TICK = "✅"
    RED_CROSS = "❌"


_ICON_FOR_STATUS = {
    AnswerStatus.UNVERIFIED: IconState.QUESTION_MARK,
    AnswerStatus.VERIFIED: IconState.GREEN_TICK,
    AnswerStatus.MARKED_INCORRECT: IconState.RED_CROSS,
    AnswerStatus.CORRECTED: IconState.GREEN_TICK,
}


def icon_for(status: AnswerStatus) -> IconState:
    """Map an answer status to the reaction glyph shown in the chat."""
    return _ICON_FOR_STATUS[status]


class ModelError(ValueError):
    """Invalid construction of a domain value."""


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    role: Role
    language: LanguageCode
    channel_address: str
    display_demographics: str = ""
    surgery_date: Optional[date] = None
    operating_doctor_id: Optional[str] = None
    operating_coordinator_id: Optional[str] = None
    active_until: Optional[datetime] = None

    def __post_init__(self):
        if self.role in SEEKER_ROLES:
            missing = [
                name
                for name, value in (
                    ("surgery_date", self.surgery_date),
                    ("operating_doctor_id", self.operating_doctor_id),
                    ("operating_coordinator_id", self.operating_coordinator_id),
                    ("active_until", self.active_until),
                )
                if value is None
            ]
            if missing:
                raise ModelError(f"seeker profile missing {', '.join(missing)}")
        else:
            if self.language is not LanguageCode.EN:
                raise ModelError("expert profiles are English-only")

    @property
    def is_seeker(self) -> bool:
        return self.role in SEEKER_ROLES


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    seeker_id: str
    original_text: str
    original_modality: Modality
    english_text: str
    query_type: QueryType
    asked_at: datetime
    conversation_id: str

    def __post_init__(self):
        if self.original_text and not self.english_text:
            raise ModelError("english_text must be non-empty when original_text is")


@dataclass(frozen=True)
class BotAnswer:
    answer_id: str
    query_id: str
    english_answer: str
    citations: tuple[str, ...] = ()
    is_unknown: bool = False
    status: AnswerStatus = AnswerStatus.UNVERIFIED
    related_questions: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.related_questions) > 3:
            raise ModelError("at most 3 related questions")
        for q in self.related_questions:
            if len(q) > 72:
                raise ModelError("related question exceeds 72 characters")
