import base64
from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from expertloop.channel import (
    ActionKind,
    BUTTON_TO_COORDINATOR,
    InboundKind,
    OutboundAction,
    OversizeBody,
    SchemaViolation,
    parse_outbound,
    parse_webhook,
    render_outbound,
)

NOW = "2023-12-01T09:00:00+00:00"


def envelope(**fields):
    base = {"sender": "+91-p", "message_id": "m1", "timestamp": NOW}
    base.update(fields)
    return base


def test_parse_text_message():
    msg = parse_webhook(envelope(kind="text", text="hello"))
    assert msg.kind is InboundKind.TEXT
    assert msg.body == "hello"
    assert msg.timestamp == datetime(2023, 12, 1, 9, 0, tzinfo=timezone.utc)


def test_parse_button_press():
    msg = parse_webhook(envelope(kind="button", button_label="Yes"))
    assert msg.kind is InboundKind.BUTTON_PRESS
    assert msg.button_label == "Yes"


def test_parse_suggestion_pick():
    msg = parse_webhook(envelope(kind="suggestion", suggestion_index=2))
    assert msg.suggestion_index == 2


def test_parse_audio_decodes_base64():
    encoded = base64.b64encode(b"fixture:x").decode()
    msg = parse_webhook(envelope(kind="audio", audio_b64=encoded))
    assert msg.audio == b"fixture:x"


def test_parse_ignores_unknown_fields():
    msg = parse_webhook(envelope(kind="text", text="hi", mystery_field=1))
    assert msg.body == "hi"


def test_parse_accepts_zulu_timestamps():
    msg = parse_webhook(envelope(kind="text", text="hi", timestamp="2023-12-01T09:00:00.250Z"))
    assert msg.timestamp.tzinfo is not None
    assert msg.timestamp.hour == 9


@pytest.mark.parametrize(
    "bad",
    [
        envelope(kind="text", text="x", sender=""),
        envelope(kind="text"),  # no text
        envelope(kind="audio"),  # no audio
        envelope(kind="button", button_label="Maybe"),
        envelope(kind="suggestion", suggestion_index=4),
        envelope(kind="carrier-pigeon", text="x"),
        envelope(kind="text", text="x", timestamp="yesterday"),
        envelope(kind="text", text="x", timestamp="2023-12-01T09:00:00"),
    ],
)
def test_parse_rejects_schema_violations(bad):
    with pytest.raises(SchemaViolation):
        parse_webhook(bad)


def _actions():
    return [
        OutboundAction(ActionKind.SEND_TEXT, "+91-p", "m1", body="hello"),
        OutboundAction(ActionKind.SEND_AUDIO, "+91-p", "m2", audio=b"bytes", body="cap"),
        OutboundAction(
            ActionKind.SET_REACTION, "+91-p", "m3", body="✅", target_message_id="m1"
        ),
        OutboundAction(
            ActionKind.TAGGED_REPLY, "+91-p", "m4", body="verified", target_message_id="m1"
        ),
        OutboundAction(
            ActionKind.BUTTON_MENU,
            "+91-d",
            "m5",
            body="Is the answer accurate and complete?",
            buttons=("Yes", "No", BUTTON_TO_COORDINATOR),
        ),
        OutboundAction(
            ActionKind.SUGGESTION_LIST,
            "+91-p",
            "m6",
            suggestions=("one", "two", "three"),
        ),
    ]


@pytest.mark.parametrize("action", _actions(), ids=lambda a: a.kind.value)
def test_render_parse_round_trip(action):
    payloads = render_outbound(action)
    assert len(payloads) == 1
    assert parse_outbound(payloads[0]) == action


def test_reaction_renders_glyph_and_target():
    action = OutboundAction(
        ActionKind.SET_REACTION, "+91-p", "m9", body="✅", target_message_id="msg-42"
    )
    payload = render_outbound(action)[0]
    assert payload["emoji"] == "✅"
    assert payload["target_message_id"] == "msg-42"


def test_suggestion_list_carries_header():
    action = OutboundAction(
        ActionKind.SUGGESTION_LIST, "+91-p", "m7", suggestions=("a", "b", "c")
    )
    payload = render_outbound(action)[0]
    assert payload["header"] == "What to do next?"
    assert payload["suggestions"] == ["a", "b", "c"]


def test_oversize_text_body_rejected():
    with pytest.raises(OversizeBody):
        OutboundAction(ActionKind.SEND_TEXT, "+91-p", "m1", body="x" * 701)
    OutboundAction(ActionKind.SEND_TEXT, "+91-p", "m1", body="x" * 700)


def test_button_menu_requires_exact_triple():
    with pytest.raises(SchemaViolation):
        OutboundAction(
            ActionKind.BUTTON_MENU, "+91-d", "m1", body="?", buttons=("Yes", "No")
        )
    with pytest.raises(SchemaViolation):
        OutboundAction(
            ActionKind.BUTTON_MENU,
            "+91-d",
            "m1",
            body="?",
            buttons=("Yes", "No", "Escalate"),
        )


def test_suggestions_must_be_three_and_short():
    with pytest.raises(SchemaViolation):
        OutboundAction(ActionKind.SUGGESTION_LIST, "+91-p", "m1", suggestions=("a", "b"))
    with pytest.raises(SchemaViolation):
        OutboundAction(
            ActionKind.SUGGESTION_LIST, "+91-p", "m1", suggestions=("a", "b", "x" * 73)
        )


def test_reaction_requires_known_glyph():
    with pytest.raises(ValueError):
        OutboundAction(
            ActionKind.SET_REACTION, "+91-p", "m1", body="??", target_message_id="m0"
        )


@given(st.text(min_size=1, max_size=700))
def test_any_short_text_renders(body):
    action = OutboundAction(ActionKind.SEND_TEXT, "+91-p", "m1", body=body)
    payload = render_outbound(action)[0]
    assert payload["text"] == body
