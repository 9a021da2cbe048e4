"""Profile registry, enrollment, seeker reminders, and access revocation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Callable, Optional
from zoneinfo import ZoneInfo

from . import events as ev
from .clock import next_slot_instant, slot_instants_between
from .model import (
    EXPERT_ROLES,
    IdGenerator,
    LanguageCode,
    Role,
    UserProfile,
)

SEEKER_REMINDER_TEXT = "Ask any cataract surgery related questions."
ACCESS_ENDED_TEXT = (
    "Your access to this assistant has ended. Please contact the hospital "
    "front desk for any further questions."
)


class OnboardingError(Exception):
    pass


class DuplicateEnrollment(OnboardingError):
    pass


class InvalidForm(OnboardingError):
    pass


class UnknownUser(OnboardingError):
    pass


class LanguageChangeRejected(OnboardingError):
    """Expert interactions are English-only."""


@dataclass(frozen=True)
class OnboardingForm:
    operating_doctor_id: str
    operating_coordinator_id: str
    surgery_date: date
    patient_phone: Optional[str] = None
    attendant_phone: Optional[str] = None
    patient_language: LanguageCode = LanguageCode.EN
    attendant_language: LanguageCode = LanguageCode.EN
    demographics: str = ""


class UserDirectory:
    """All known profiles; deactivation is permanent."""

    def __init__(self):
        self._profiles: dict[str, UserProfile] = {}
        self._deactivated: set[str] = set()

    def apply(self, kind: str, payload: dict) -> None:
        if kind == ev.PROFILE_REGISTERED:
            profile = UserProfile(
                user_id=payload["user_id"],
                role=Role(payload["role"]),
                language=LanguageCode(payload["language"]),
                channel_address=payload["channel_address"],
                display_demographics=payload.get("display_demographics", ""),
                surgery_date=(
                    date.fromisoformat(payload["surgery_date"])
                    if payload.get("surgery_date")
                    else None
                ),
                operating_doctor_id=payload.get("operating_doctor_id"),
                operating_coordinator_id=payload.get("operating_coordinator_id"),
                active_until=(
                    datetime.fromisoformat(payload["active_until"])
                    if payload.get("active_until")
                    else None
                ),
            )
            self._profiles[profile.user_id] = profile
        elif kind == ev.PROFILE_DEACTIVATED:
            self._deactivated.add(payload["user_id"])
        elif kind == ev.LANGUAGE_CHANGED:
            profile = self._profiles[payload["user_id"]]
            self._profiles[payload["user_id"]] = dataclasses.replace(
                profile, language=LanguageCode(payload["language"])
            )

    def get(self, user_id: str) -> UserProfile:
        profile = self._profiles.get(user_id)
        if profile is None:
            raise UnknownUser(user_id)
        return profile

    def maybe_get(self, user_id: str) -> Optional[UserProfile]:
        return self._profiles.get(user_id)

    def by_address(self, address: str) -> Optional[UserProfile]:
        # prefer the non-deactivated profile when a phone was re-enrolled
        hit = None
        for profile in self._profiles.values():
            if profile.channel_address == address:
                hit = profile
                if profile.user_id not in self._deactivated:
                    return profile
        return hit

    def is_deactivated(self, user_id: str) -> bool:
        return user_id in self._deactivated

    def is_active_seeker(self, profile: UserProfile, now: datetime) -> bool:
        return (
            profile.is_seeker
            and profile.user_id not in self._deactivated
            and profile.active_until is not None
            and now < profile.active_until
        )

    def seekers(self) -> list[UserProfile]:
        return sorted(
            (p for p in self._profiles.values() if p.is_seeker),
            key=lambda p: p.user_id,
        )

    def all_profiles(self) -> list[UserProfile]:
        return sorted(self._profiles.values(), key=lambda p: p.user_id)


@dataclass(frozen=True)
class SeekerDueEvent:
    kind: str  # "reminder" | "deactivate"
    due_at: datetime
    seeker_ids: tuple[str, ...]


Committer = Callable[[str, dict], None]


class OnboardingScheduler:
    """Enrollment plus the 07:30/16:00 seeker reminder and revocation loop."""

    def __init__(
        self,
        directory: UserDirectory,
        ids: IdGenerator,
        commit: Committer,
        tz: ZoneInfo,
        reminder_times: tuple[time, ...] = (time(7, 30), time(16, 0)),
        active_days: int = 7,
        horizon_days: int = 14,
    ):
        self.directory = directory
        self._ids = ids
        self._commit = commit
        self.tz = tz
        self.reminder_times = reminder_times
        self.active_days = active_days
        self.horizon_days = horizon_days
        self._reminder_watermark: Optional[datetime] = None

    def apply(self, kind: str, payload: dict) -> None:
        if kind == ev.SCHEDULER_FIRED and payload.get("schedule") == "seeker_reminders":
            self._reminder_watermark = datetime.fromisoformat(payload["slot"])
        elif kind == ev.SERVICE_INITIALIZED:
            if self._reminder_watermark is None:
                self._reminder_watermark = datetime.fromisoformat(payload["at"])
        else:
            self.directory.apply(kind, payload)

    @property
    def reminder_watermark(self) -> Optional[datetime]:
        return self._reminder_watermark

    def active_until_for(self, surgery_date: date) -> datetime:
        # access runs out at local midnight starting day 7 post-surgery
        end_day = surgery_date + timedelta(days=self.active_days)
        return datetime.combine(end_day, time(0, 0), tzinfo=self.tz)

    def register(self, form: OnboardingForm, now: datetime) -> list[UserProfile]:
        if not form.patient_phone and not form.attendant_phone:
            raise InvalidForm("at least one phone number is required")
        today = now.astimezone(self.tz).date()
        if form.surgery_date > today + timedelta(days=self.horizon_days):
            raise InvalidForm(
                f"surgery date beyond the {self.horizon_days}-day horizon"
            )
        active_until = self.active_until_for(form.surgery_date)
        if active_until <= now:
            raise InvalidForm("enrollment window already over for this surgery date")
        for expert_id in (form.operating_doctor_id, form.operating_coordinator_id):
            profile = self.directory.maybe_get(expert_id)
            if profile is None or profile.is_seeker:
                raise InvalidForm(f"unknown expert {expert_id!r}")
        plan = []
        if form.patient_phone:
            plan.append((Role.PATIENT, form.patient_phone, form.patient_language))
        if form.attendant_phone:
            plan.append((Role.ATTENDANT, form.attendant_phone, form.attendant_language))
        for _, phone, _ in plan:
            existing = self.directory.by_address(phone)
            if existing is not None and (
                not existing.is_seeker
                or self.directory.is_active_seeker(existing, now)
            ):
                raise DuplicateEnrollment(phone)

        created = []
        for role, phone, language in plan:
            user_id = self._ids.new_id()
            self._commit(
                ev.PROFILE_REGISTERED,
                {
                    "user_id": user_id,
                    "role": role.value,
                    "language": language.value,
                    "channel_address": phone,
                    "display_demographics": form.demographics,
                    "surgery_date": form.surgery_date.isoformat(),
                    "operating_doctor_id": form.operating_doctor_id,
                    "operating_coordinator_id": form.operating_coordinator_id,
                    "active_until": active_until.isoformat(),
                },
            )
            created.append(self.directory.get(user_id))
        return created

    def register_expert(
        self, user_id: str, role: Role, channel_address: str, display_name: str = ""
    ) -> UserProfile:
        if role not in EXPERT_ROLES:
            raise InvalidForm(f"{role.value} is not an expert role")
        self._commit(
            ev.PROFILE_REGISTERED,
            {
                "user_id": user_id,
                "role": role.value,
                "language": LanguageCode.EN.value,
                "channel_address": channel_address,
                "display_demographics": display_name,
            },
        )
        return self.directory.get(user_id)

    def set_language(self, user_id: str, language: LanguageCode) -> UserProfile:
        profile = self.directory.get(user_id)
        if not profile.is_seeker:
            raise LanguageChangeRejected("expert profiles stay in English")
        self._commit(
            ev.LANGUAGE_CHANGED,
            {"user_id": user_id, "language": language.value},
        )
        return self.directory.get(user_id)

    def due_notifications(self, now: datetime) -> list[SeekerDueEvent]:
        """Deactivate lapsed seekers, then fire any crossed reminder slots."""
        due: list[SeekerDueEvent] = []
        lapsed = tuple(
            p.user_id
            for p in self.directory.seekers()
            if not self.directory.is_deactivated(p.user_id)
            and p.active_until is not None
            and now >= p.active_until
        )
        for user_id in lapsed:
            self._commit(ev.PROFILE_DEACTIVATED, {"user_id": user_id})
        if lapsed:
            due.append(SeekerDueEvent("deactivate", now, lapsed))

        if self._reminder_watermark is None:
            self._reminder_watermark = now
        for slot in slot_instants_between(
            self._reminder_watermark, now, self.reminder_times, self.tz
        ):
            self._commit(
                ev.SCHEDULER_FIRED,
                {"schedule": "seeker_reminders", "slot": slot.isoformat()},
            )
            recipients = tuple(
                p.user_id
                for p in self.directory.seekers()
                if self.directory.is_active_seeker(p, slot)
            )
            if recipients:
                due.append(SeekerDueEvent("reminder", slot, recipients))
        return due

    def next_due(self, now: datetime) -> Optional[datetime]:
        candidates = []
        if self.reminder_times:
            candidates.append(next_slot_instant(now, self.reminder_times, self.tz))
        for profile in self.directory.seekers():
            if (
                not self.directory.is_deactivated(profile.user_id)
                and profile.active_until is not None
                and profile.active_until > now
            ):
                candidates.append(profile.active_until)
        future = [c for c in candidates if c > now]
        return min(future) if future else None
