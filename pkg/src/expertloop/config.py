"""Deployment configuration for the service and the simulator."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import time, timedelta
from pathlib import Path
from typing import Any, Optional
from zoneinfo import ZoneInfo

import yaml

from .model import Role

DEFAULT_STARTER_FAQS = (
    "How long does recovery take after surgery?",
    "Will I feel pain during the surgery?",
    "What are the risks of cataract surgery?",
)


@dataclass(frozen=True)
class ExpertSpec:
    user_id: str
    role: Role
    channel_address: str
    display_name: str = ""


@dataclass
class ServiceConfig:
    log_path: Path = Path("var/events.log")
    corpus_dir: Optional[Path] = None
    audio_dir: Path = Path("var/audio")
    review_dir: Path = Path("var/review")
    timezone: str = "UTC"

    escalation_delay: timedelta = timedelta(hours=3)
    reminder_delay: timedelta = timedelta(hours=6)
    digest_times: tuple[time, ...] = (time(8, 0), time(12, 0), time(16, 0))
    seeker_reminder_times: tuple[time, ...] = (time(7, 30), time(16, 0))
    kb_digest_time: time = time(20, 0)
    kb_apply_time: time = time(3, 0)

    retrieval_k: int = 3
    chunk_budget: int = 500
    history_window: int = 4
    seeker_active_days: int = 7
    enrollment_horizon_days: int = 14
    coordinator_reroute_enabled: bool = True

    embedding_provider: str = "hashed-bow"
    completion_provider: str = "mock"
    translation_provider: str = "dictionary"
    stt_provider: str = "fixture"
    tts_provider: str = "marker"
    provider_options: dict[str, Any] = field(default_factory=dict)

    experts: tuple[ExpertSpec, ...] = ()
    starter_faqs: tuple[str, str, str] = DEFAULT_STARTER_FAQS

    llm_max_retries: int = 2
    llm_backoff_base_s: float = 1.0
    scheduler_interval_s: float = 30.0
    log_fsync: bool = True
    id_seed: Optional[int] = None
    admin_token: Optional[str] = None

    def __post_init__(self):
        ZoneInfo(self.timezone)  # validate early
        if len(self.starter_faqs) != 3:
            raise ValueError("exactly three starter FAQs required")
        for label in self.starter_faqs:
            if len(label) > 72:
                raise ValueError(f"starter FAQ over 72 chars: {label!r}")
        kb_experts = [e for e in self.experts if e.role is Role.KNOWLEDGE_BASE_EXPERT]
        if self.experts and len(kb_experts) != 1:
            raise ValueError("exactly one knowledge-base expert per deployment")

    @property
    def tzinfo(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)

    def expert_by_role(self, role: Role) -> ExpertSpec:
        matches = [e for e in self.experts if e.role is role]
        if len(matches) != 1:
            raise ValueError(f"expected exactly one {role.value}, found {len(matches)}")
        return matches[0]


def _parse_time(value: Any) -> time:
    if isinstance(value, time):
        return value
    hours, minutes = str(value).split(":")
    return time(int(hours), int(minutes))


def load_config(path: Path) -> ServiceConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return config_from_dict(raw, base_dir=Path(path).parent)


def config_from_dict(raw: dict[str, Any], base_dir: Path = Path(".")) -> ServiceConfig:
    kwargs: dict[str, Any] = {}
    simple = {
        "timezone",
        "retrieval_k",
        "chunk_budget",
        "history_window",
        "seeker_active_days",
        "enrollment_horizon_days",
        "coordinator_reroute_enabled",
        "embedding_provider",
        "completion_provider",
        "translation_provider",
        "stt_provider",
        "tts_provider",
        "provider_options",
        "llm_max_retries",
        "llm_backoff_base_s",
        "scheduler_interval_s",
        "log_fsync",
        "id_seed",
        "admin_token",
    }
    for key in simple & set(raw):
        kwargs[key] = raw[key]
    for key in ("log_path", "corpus_dir", "audio_dir", "review_dir"):
        if raw.get(key) is not None:
            kwargs[key] = base_dir / raw[key]
    if "escalation_delay_hours" in raw:
        kwargs["escalation_delay"] = timedelta(hours=float(raw["escalation_delay_hours"]))
    if "reminder_delay_hours" in raw:
        kwargs["reminder_delay"] = timedelta(hours=float(raw["reminder_delay_hours"]))
    for key in ("digest_times", "seeker_reminder_times"):
        if key in raw:
            kwargs[key] = tuple(_parse_time(v) for v in raw[key])
    for key in ("kb_digest_time", "kb_apply_time"):
        if key in raw:
            kwargs[key] = _parse_time(raw[key])
    if "starter_faqs" in raw:
        kwargs["starter_faqs"] = tuple(raw["starter_faqs"])
    if "experts" in raw:
        kwargs["experts"] = tuple(
            ExpertSpec(
                user_id=e["user_id"],
                role=Role(e["role"]),
                channel_address=e["channel_address"],
                display_name=e.get("display_name", ""),
            )
            for e in raw["experts"]
        )
    return ServiceConfig(**kwargs)
