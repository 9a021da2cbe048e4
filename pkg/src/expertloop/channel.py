"""Codec between internal actions and the messaging channel's wire format.

Channel constraints enforced here: 700-character text bodies, 72-character
suggestion labels, exactly three suggestion chips, and the fixed
Yes / No / reroute button triple.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Any, Optional

from .model import IconState

TEXT_LIMIT = 700
LABEL_LIMIT = 72
SUGGESTION_HEADER = "What to do next?"
VERIFICATION_PROMPT = "Is the answer accurate and complete?"
BUTTON_YES = "Yes"
BUTTON_NO = "No"
BUTTON_TO_COORDINATOR = "Send to Patient Coordinator"
BUTTON_TO_DOCTOR = "Send to Doctor"
REROUTE_LABELS = (BUTTON_TO_COORDINATOR, BUTTON_TO_DOCTOR)


class SchemaViolation(ValueError):
    pass


class OversizeBody(ValueError):
    pass


class ActionKind(str, Enum):
    SEND_TEXT = "text"
    SEND_AUDIO = "audio"
    SET_REACTION = "reaction"
    TAGGED_REPLY = "tagged_reply"
    BUTTON_MENU = "buttons"
    SUGGESTION_LIST = "suggestions"


class InboundKind(str, Enum):
    TEXT = "text"
    AUDIO = "audio"
    BUTTON_PRESS = "button"
    SUGGESTION_PICK = "suggestion"


@dataclass(frozen=True)
class OutboundAction:
    kind: ActionKind
    recipient: str  # channel address
    message_id: str
    body: str = ""
    audio: Optional[bytes] = None
    target_message_id: Optional[str] = None
    buttons: tuple[str, ...] = ()
    suggestions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind in (ActionKind.SEND_TEXT, ActionKind.TAGGED_REPLY, ActionKind.BUTTON_MENU):
            if len(self.body) > TEXT_LIMIT:
                raise OversizeBody(f"{self.kind.value} body {len(self.body)} > {TEXT_LIMIT}")
        if self.kind in (ActionKind.SET_REACTION, ActionKind.TAGGED_REPLY):
            if not self.target_message_id:
                raise SchemaViolation(f"{self.kind.value} needs a target_message_id")
        if self.kind is ActionKind.SET_REACTION:
            IconState(self.body)  # must be one of the three glyphs
        if self.kind is ActionKind.BUTTON_MENU:
            if (
                len(self.buttons) != 3
                or self.buttons[:2] != (BUTTON_YES, BUTTON_NO)
                or self.buttons[2] not in REROUTE_LABELS
            ):
                raise SchemaViolation(f"illegal button set {self.buttons!r}")
        if self.kind is ActionKind.SUGGESTION_LIST:
            if len(self.suggestions) != 3:
                raise SchemaViolation("suggestion list must offer exactly 3 options")
            for label in self.suggestions:
                if len(label) > LABEL_LIMIT:
                    raise SchemaViolation(f"suggestion label over {LABEL_LIMIT} chars")
        if self.kind is ActionKind.SEND_AUDIO and self.audio is None:
            raise SchemaViolation("audio action without audio payload")


@dataclass(frozen=True)
class InboundMessage:
    sender: str  # channel address
    kind: InboundKind
    message_id: str
    timestamp: datetime
    body: str = ""
    audio: Optional[bytes] = None
    button_label: Optional[str] = None
    suggestion_index: Optional[int] = None
    # optional interactive-reply context: id of the message the press targets
    context_message_id: Optional[str] = None


def parse_webhook(payload: dict[str, Any]) -> InboundMessage:
    """Map one wire envelope to an InboundMessage; unknown fields ignored."""
    if not isinstance(payload, dict):
        raise SchemaViolation("payload must be a JSON object")
    for required in ("sender", "message_id", "timestamp", "kind"):
        if not payload.get(required):
            raise SchemaViolation(f"missing field {required!r}")
    try:
        kind = InboundKind(payload["kind"])
    except ValueError as exc:
        raise SchemaViolation(f"unknown kind {payload['kind']!r}") from exc
    raw_timestamp = str(payload["timestamp"])
    if raw_timestamp.endswith(("Z", "z")):  # RFC3339 Zulu; 3.10 fromisoformat lacks it
        raw_timestamp = raw_timestamp[:-1] + "+00:00"
    try:
        timestamp = datetime.fromisoformat(raw_timestamp)
    except ValueError as exc:
        raise SchemaViolation("timestamp is not RFC3339") from exc
    if timestamp.tzinfo is None:
        raise SchemaViolation("timestamp must carry a timezone")

    body = ""
    audio = None
    button_label = None
    suggestion_index = None
    if kind is InboundKind.TEXT:
        body = payload.get("text") or ""
        if not body:
            raise SchemaViolation("text message without text")
    elif kind is InboundKind.AUDIO:
        encoded = payload.get("audio_b64") or ""
        if not encoded:
            raise SchemaViolation("audio message without audio_b64")
        try:
            audio = base64.b64decode(encoded, validate=True)
        except Exception as exc:
            raise SchemaViolation("audio_b64 is not valid base64") from exc
    elif kind is InboundKind.BUTTON_PRESS:
        button_label = payload.get("button_label")
        legal = (BUTTON_YES, BUTTON_NO) + REROUTE_LABELS
        if button_label not in legal:
            raise SchemaViolation(f"illegal button label {button_label!r}")
    elif kind is InboundKind.SUGGESTION_PICK:
        suggestion_index = payload.get("suggestion_index")
        if suggestion_index not in (1, 2, 3):
            raise SchemaViolation("suggestion_index must be 1, 2 or 3")

    return InboundMessage(
        sender=str(payload["sender"]),
        kind=kind,
        message_id=str(payload["message_id"]),
        timestamp=timestamp,
        body=body,
        audio=audio,
        button_label=button_label,
        suggestion_index=suggestion_index,
        context_message_id=payload.get("context_message_id"),
    )


def render_outbound(action: OutboundAction) -> list[dict[str, Any]]:
    """Render an action into channel payloads (one per action kind)."""
    base: dict[str, Any] = {
        "recipient": action.recipient,
        "kind": action.kind.value,
        "message_id": action.message_id,
    }
    if action.kind is ActionKind.SEND_TEXT:
        base["text"] = action.body
    elif action.kind is ActionKind.SEND_AUDIO:
        base["audio_b64"] = base64.b64encode(action.audio or b"").decode("ascii")
        if action.body:
            base["text"] = action.body
    elif action.kind is ActionKind.SET_REACTION:
        base["emoji"] = action.body
        base["target_message_id"] = action.target_message_id
    elif action.kind is ActionKind.TAGGED_REPLY:
        base["text"] = action.body
        base["target_message_id"] = action.target_message_id
    elif action.kind is ActionKind.BUTTON_MENU:
        base["text"] = action.body
        base["buttons"] = list(action.buttons)
    elif action.kind is ActionKind.SUGGESTION_LIST:
        base["header"] = SUGGESTION_HEADER
        base["suggestions"] = list(action.suggestions)
    return [base]


def parse_outbound(payload: dict[str, Any]) -> OutboundAction:
    """Client-side parse used by the simulator; inverse of render_outbound."""
    kind = ActionKind(payload["kind"])
    return OutboundAction(
        kind=kind,
        recipient=payload["recipient"],
        message_id=payload["message_id"],
        body=payload.get("text", "") if kind is not ActionKind.SET_REACTION else payload["emoji"],
        audio=(
            base64.b64decode(payload["audio_b64"])
            if kind is ActionKind.SEND_AUDIO
            else None
        ),
        target_message_id=payload.get("target_message_id"),
        buttons=tuple(payload.get("buttons", ())),
        suggestions=tuple(payload.get("suggestions", ())),
    )
