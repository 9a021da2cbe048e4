"""Scenario-driven end-to-end harness over a virtual clock.

A scenario script (YAML) declares the deployment (experts, corpus,
provider fixtures), enrolls seeker profiles, plays timed steps as channel
messages, and asserts ordered expectations against the captured outbound
transcript and the event log. Identical script + identical config yields a
byte-identical transcript.
"""
from __future__ import annotations

import base64
import json
import re
import tempfile
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Optional

import yaml

from . import events as ev
from .clock import VirtualClock
from .config import ExpertSpec, ServiceConfig, config_from_dict
from .model import LanguageCode, Role
from .onboarding import OnboardingForm
from .service import Orchestrator


class ScriptError(ValueError):
    pass


@dataclass
class TranscriptEntry:
    at: datetime
    seq: int
    payload: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"at": self.at.isoformat(), "seq": self.seq, "payload": self.payload},
            sort_keys=True,
            ensure_ascii=False,
        )


@dataclass
class ExpectationResult:
    description: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    name: str
    passed: bool
    expectations: list[ExpectationResult]
    transcript: list[TranscriptEntry]
    events: list[dict]
    transition_edges: set[tuple[str, str]] = field(default_factory=set)

    def transcript_text(self) -> str:
        return "".join(entry.to_json() + "\n" for entry in self.transcript)


_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(s|m|h|d)\s*$")
_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


def parse_duration(text: str) -> timedelta:
    match = _DURATION_RE.match(str(text))
    if not match:
        raise ScriptError(f"bad duration {text!r} (use e.g. '3h', '30m', '45s')")
    return timedelta(seconds=float(match.group(1)) * _DURATION_UNITS[match.group(2)])


_ACTIONS = {
    "send_text",
    "send_audio_fixture",
    "tap_suggestion",
    "press_button",
    "submit_correction_text",
    "advance_clock",
}


class ScenarioRunner:
    def __init__(self, script_path: Path, seed: Optional[int] = None):
        self.script_path = Path(script_path)
        raw = yaml.safe_load(self.script_path.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ScriptError("scenario must be a YAML mapping")
        self.name = raw.get("name", self.script_path.stem)
        self.raw = raw
        self._seed = seed
        self._base_dir = self.script_path.parent

    def _resolve(self, path_value: str) -> Path:
        candidate = self._base_dir / path_value
        if candidate.exists():
            return candidate
        return Path(path_value)

    def _build_config(self, workdir: Path) -> ServiceConfig:
        cfg = dict(self.raw.get("config", {}))
        start = cfg.pop("start_time", "2023-12-01T09:00:00+00:00")
        self.start_time = datetime.fromisoformat(str(start))
        if self.start_time.tzinfo is None:
            raise ScriptError("start_time must carry a timezone offset")

        provider_options: dict[str, Any] = {"completion": {}, "translation": {}, "stt": {}}
        if "logistics_keywords" in cfg:
            provider_options["completion"]["logistics_keywords"] = tuple(
                cfg.pop("logistics_keywords")
            )
        if "greeting_keywords" in cfg:
            provider_options["completion"]["greeting_keywords"] = tuple(
                cfg.pop("greeting_keywords")
            )
        if "translations_file" in cfg:
            provider_options["translation"]["phrases_file"] = str(
                self._resolve(cfg.pop("translations_file"))
            )
        if "audio_fixtures_file" in cfg:
            provider_options["stt"]["fixtures_file"] = str(
                self._resolve(cfg.pop("audio_fixtures_file"))
            )

        corpus = cfg.pop("corpus_dir", None)
        seed = self._seed if self._seed is not None else cfg.pop("seed", 0)
        cfg.pop("seed", None)

        experts = tuple(
            ExpertSpec(
                user_id=e["user_id"],
                role=Role(e["role"]),
                channel_address=e["channel_address"],
                display_name=e.get("display_name", ""),
            )
            for e in self.raw.get("experts", [])
        )
        base = config_from_dict(cfg, base_dir=self._base_dir)
        base.log_path = workdir / "events.log"
        base.audio_dir = workdir / "audio"
        base.review_dir = workdir / "review"
        base.corpus_dir = self._resolve(corpus) if corpus else None
        base.provider_options = provider_options
        base.experts = experts
        base.id_seed = int(seed)
        base.log_fsync = False
        base.llm_backoff_base_s = 0.0
        return base

    def run(self, workdir: Optional[Path] = None) -> ScenarioResult:
        workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="scenario-"))
        config = self._build_config(workdir)
        clock = VirtualClock(self.start_time)
        transcript: list[TranscriptEntry] = []

        def sink(payload: dict) -> None:
            transcript.append(
                TranscriptEntry(at=clock.now(), seq=len(transcript), payload=payload)
            )

        orch = Orchestrator(config, clock, sink=sink)
        orch.bootstrap()

        aliases: dict[str, str] = {
            spec.user_id: spec.channel_address for spec in config.experts
        }
        for profile_spec in self.raw.get("profiles", []):
            form = OnboardingForm(
                operating_doctor_id=profile_spec["operating_doctor_id"],
                operating_coordinator_id=profile_spec["operating_coordinator_id"],
                surgery_date=date.fromisoformat(str(profile_spec["surgery_date"])),
                patient_phone=profile_spec.get("patient_phone"),
                attendant_phone=profile_spec.get("attendant_phone"),
                patient_language=LanguageCode(profile_spec.get("patient_language", "EN")),
                attendant_language=LanguageCode(
                    profile_spec.get("attendant_language", "EN")
                ),
                demographics=profile_spec.get("demographics", ""),
            )
            orch.onboard(form)
            if profile_spec.get("alias") and profile_spec.get("patient_phone"):
                aliases[profile_spec["alias"]] = profile_spec["patient_phone"]
            if profile_spec.get("attendant_alias") and profile_spec.get("attendant_phone"):
                aliases[profile_spec["attendant_alias"]] = profile_spec["attendant_phone"]

        inbound_count = 0
        last_at = clock.now()
        for index, step in enumerate(self.raw.get("steps", [])):
            action = step.get("action")
            if action not in _ACTIONS:
                raise ScriptError(f"step {index}: unknown action {action!r}")
            if "at" in step:
                at = datetime.fromisoformat(str(step["at"]))
                if at < last_at:
                    raise ScriptError(f"step {index}: time going backwards")
                last_at = at
                orch.advance_to(at)
            if action == "advance_clock":
                target = clock.now() + parse_duration(step.get("payload", "0s"))
                last_at = target
                orch.advance_to(target)
                continue
            actor = step.get("actor")
            if actor not in aliases:
                raise ScriptError(f"step {index}: unknown actor {actor!r}")
            inbound_count += 1
            payload: dict[str, Any] = {
                "sender": aliases[actor],
                "message_id": f"in-{inbound_count:04d}",
                "timestamp": clock.now().isoformat(),
            }
            body = step.get("payload", "")
            if action in ("send_text", "submit_correction_text"):
                payload.update({"kind": "text", "text": str(body)})
            elif action == "send_audio_fixture":
                audio = f"fixture:{body}".encode("utf-8")
                payload.update(
                    {"kind": "audio", "audio_b64": base64.b64encode(audio).decode()}
                )
            elif action == "tap_suggestion":
                payload.update({"kind": "suggestion", "suggestion_index": int(body)})
            elif action == "press_button":
                payload.update({"kind": "button", "button_label": str(body)})
            orch.handle_webhook(payload)

        events = orch.events_view()
        edges = {
            (e["payload"]["from"], e["payload"]["to"])
            for e in events
            if e["kind"] == ev.TASK_TRANSITION
        }
        results = self._check_expectations(transcript, events, aliases)
        return ScenarioResult(
            name=self.name,
            passed=all(r.passed for r in results),
            expectations=results,
            transcript=transcript,
            events=events,
            transition_edges=edges,
        )

    def _check_expectations(
        self,
        transcript: list[TranscriptEntry],
        events: list[dict],
        aliases: dict[str, str],
    ) -> list[ExpectationResult]:
        results = []
        t_cursor = 0
        e_cursor = 0
        for spec in self.raw.get("expectations", []):
            etype = spec.get("type", "message")
            description = json.dumps(spec, sort_keys=True, ensure_ascii=False)
            if etype == "event":
                matched = None
                for position in range(e_cursor, len(events)):
                    if _event_matches(events[position], spec):
                        matched = position
                        break
                if matched is None:
                    results.append(
                        ExpectationResult(description, False, "no matching event")
                    )
                else:
                    e_cursor = matched + 1
                    results.append(ExpectationResult(description, True))
                continue
            matched = None
            for position in range(t_cursor, len(transcript)):
                if _payload_matches(transcript[position].payload, spec, aliases):
                    matched = position
                    break
            if matched is None:
                tail = "\n".join(
                    e.to_json() for e in transcript[max(0, t_cursor - 2) :][:12]
                )
                results.append(
                    ExpectationResult(
                        description, False, f"no matching payload; nearby:\n{tail}"
                    )
                )
            else:
                t_cursor = matched + 1
                results.append(ExpectationResult(description, True))
        return results


def _payload_matches(payload: dict, spec: dict, aliases: dict[str, str]) -> bool:
    if spec.get("type", "message") == "reaction":
        if payload.get("kind") != "reaction":
            return False
        if "glyph" in spec and payload.get("emoji") != spec["glyph"]:
            return False
    else:
        if "kind" in spec and payload.get("kind") != spec["kind"]:
            return False
    if "recipient" in spec:
        want = aliases.get(spec["recipient"], spec["recipient"])
        if payload.get("recipient") != want:
            return False
    if "equals" in spec and payload.get("text") != spec["equals"]:
        return False
    if "contains" in spec:
        haystack = payload.get("text", "") + " ".join(
            payload.get("suggestions", [])
        ) + " ".join(payload.get("buttons", []))
        needles = spec["contains"]
        if isinstance(needles, str):
            needles = [needles]
        if any(needle not in haystack for needle in needles):
            return False
    if "header" in spec and payload.get("header") != spec["header"]:
        return False
    return True


def _event_matches(event: dict, spec: dict) -> bool:
    if "kind" in spec and event["kind"] != spec["kind"]:
        return False
    payload = event.get("payload", {})
    for key, want in spec.items():
        if key in ("type", "kind"):
            continue
        if payload.get(key) != want:
            return False
    return True


def run_suite(directory: Path, seed: Optional[int] = None) -> list[ScenarioResult]:
    results = []
    for path in sorted(Path(directory).glob("*.yaml")):
        results.append(ScenarioRunner(path, seed=seed).run())
    return results


ALL_TRANSITION_EDGES = {
    ("awaiting_operating", "escalated"),
    ("awaiting_operating", "approved_yes"),
    ("awaiting_operating", "awaiting_correction"),
    ("awaiting_operating", "rerouted"),
    ("escalated", "approved_yes"),
    ("escalated", "awaiting_correction"),
    ("escalated", "rerouted"),
    ("awaiting_correction", "corrected_done"),
}


def edge_coverage_report(results: list[ScenarioResult]) -> str:
    seen: set[tuple[str, str]] = set()
    for result in results:
        seen |= result.transition_edges
    lines = ["state-transition edge coverage:"]
    for edge in sorted(ALL_TRANSITION_EDGES):
        mark = "x" if edge in seen else " "
        lines.append(f"  [{mark}] {edge[0]} -> {edge[1]}")
    missing = ALL_TRANSITION_EDGES - seen
    lines.append(
        f"covered {len(ALL_TRANSITION_EDGES - missing)}/{len(ALL_TRANSITION_EDGES)} edges"
    )
    return "\n".join(lines)
