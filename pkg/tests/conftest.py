"""Shared fixtures: a standard in-memory deployment driven by a virtual clock."""
from __future__ import annotations

from datetime import date, datetime, timezone
from pathlib import Path

import pytest

from expertloop.clock import VirtualClock
from expertloop.config import ExpertSpec, ServiceConfig
from expertloop.model import LanguageCode, Role
from expertloop.onboarding import OnboardingForm
from expertloop.service import Orchestrator

ROOT = Path(__file__).resolve().parents[1]
CORPUS_DIR = ROOT / "corpus"
FIXTURES_DIR = ROOT / "fixtures"
SCENARIOS_DIR = ROOT / "scenarios"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

START = datetime(2023, 12, 1, 9, 0, tzinfo=timezone.utc)

STANDARD_EXPERTS = (
    ExpertSpec("doc-op", Role.OPERATING_DOCTOR, "+91-doc-op", "Operating Doctor"),
    ExpertSpec("doc-esc", Role.ESCALATION_DOCTOR, "+91-doc-esc", "Escalation Doctor"),
    ExpertSpec("coord-op", Role.OPERATING_COORDINATOR, "+91-coord-op", "Coordinator"),
    ExpertSpec(
        "coord-esc", Role.ESCALATION_COORDINATOR, "+91-coord-esc", "Escalation Coord"
    ),
    ExpertSpec("kb-exp", Role.KNOWLEDGE_BASE_EXPERT, "+91-kb-exp", "KB Expert"),
)

LOGISTICS_KEYWORDS = (
    "insurance", "schedule", "cost", "discharge", "appointment", "payment",
    "time to reach", "admission", "documents",
)


def make_config(tmp_path: Path, **overrides) -> ServiceConfig:
    defaults = dict(
        log_path=tmp_path / "events.log",
        corpus_dir=CORPUS_DIR,
        audio_dir=tmp_path / "audio",
        review_dir=tmp_path / "review",
        timezone="UTC",
        experts=STANDARD_EXPERTS,
        provider_options={
            "completion": {"logistics_keywords": LOGISTICS_KEYWORDS},
            "translation": {"phrases_file": str(FIXTURES_DIR / "translations.json")},
            "stt": {"fixtures_file": str(FIXTURES_DIR / "audio_transcripts.json")},
        },
        log_fsync=False,
        llm_backoff_base_s=0.0,
        id_seed=42,
    )
    defaults.update(overrides)
    return ServiceConfig(**defaults)


class Deployment:
    """An orchestrator plus helpers for driving it from tests."""

    def __init__(self, config: ServiceConfig, clock: VirtualClock, hook_factory=None):
        self.config = config
        self.clock = clock
        self.sent: list[dict] = []
        self.orch = Orchestrator(config, clock, sink=self.sent.append)
        if hook_factory is not None:
            # installed before bootstrap so even setup events are observed
            self.orch.on_event = hook_factory(self.orch)
        self.orch.bootstrap()
        self._counter = 0

    def onboard_default(self, language=LanguageCode.EN, phone="+91-patient") -> str:
        ids = self.orch.onboard(
            OnboardingForm(
                operating_doctor_id="doc-op",
                operating_coordinator_id="coord-op",
                surgery_date=date(2023, 12, 1),
                patient_phone=phone,
                patient_language=language,
                demographics="64/F/OD",
            )
        )
        return ids[0]

    def inbound(self, sender: str, kind: str = "text", **fields) -> list:
        self._counter += 1
        payload = {
            "sender": sender,
            "message_id": f"in-{self._counter:04d}",
            "timestamp": self.clock.now().isoformat(),
            "kind": kind,
        }
        payload.update(fields)
        return self.orch.handle_webhook(payload)

    def text(self, sender: str, body: str):
        return self.inbound(sender, kind="text", text=body)

    def button(self, sender: str, label: str, context: str | None = None):
        fields = {"button_label": label}
        if context:
            fields["context_message_id"] = context
        return self.inbound(sender, kind="button", **fields)

    def sent_to(self, address: str, kind: str | None = None) -> list[dict]:
        return [
            p
            for p in self.sent
            if p["recipient"] == address and (kind is None or p["kind"] == kind)
        ]

    def events(self, kind: str | None = None) -> list[dict]:
        return [
            e for e in self.orch.events_view() if kind is None or e["kind"] == kind
        ]


@pytest.fixture
def deployment(tmp_path) -> Deployment:
    return Deployment(make_config(tmp_path), VirtualClock(START))
