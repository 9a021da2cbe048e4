import json

import pytest
from hypothesis import given, strategies as st

from expertloop.llm import (
    DEFAULT_FALLBACK_RELATED,
    LlmConfig,
    LlmGateway,
    MockCompletionProvider,
    PromptBundle,
    ProviderFailure,
    UNKNOWN_ANSWER_TEXT,
    render_final_response,
    render_related_questions,
    render_response_generation,
    render_shorten,
    truncate_label,
    truncate_sentences,
)
from expertloop.model import QueryType


def make_gateway(provider=None, **config):
    config.setdefault("backoff_base_s", 0.0)
    return LlmGateway(provider or MockCompletionProvider(), LlmConfig(**config))


# -- template fidelity: rendering only substitutes at placeholder sites

def test_response_generation_template_fidelity():
    bundle = render_response_generation("QQ", ["RAW1", "RAW2"], ["FAQ1"], ["H1", "H2"])
    assert bundle.system_prompt.startswith(
        "You are a Cataract chatbot whose primary goal is to help patients"
    )
    assert (
        '"I do not know the answer to your question. If this needs to be '
        'answered by a doctor, please schedule a consultation."'
        in bundle.system_prompt
    )
    assert "prefer the new knowledge base" in bundle.system_prompt
    assert 'indicate like a 3-class classifier' in bundle.system_prompt
    assert bundle.system_prompt.rstrip().endswith(
        '{"response": "<answer text>", "query_type": "<medical|logistical|small-talk>"}'
    )
    assert bundle.query_prompt == (
        "The following knowledge base have been provided to you as reference:\n"
        "    Raw documents are as follows:\n"
        "        RAW1\nRAW2\n"
        "    New documents are as follows:\n"
        "        FAQ1\n"
        "    The most recent conversations are here:\n"
        "        H1\nH2\n"
        "    You are asked the following query:\n"
        "        QQ\n"
        "\n"
        "Ensure that the query type belongs to only the above mentioned three "
        'categories. When not sure, choose one of "medical" or "logistical".'
    )


def test_response_generation_empty_sections_render_none_markers():
    bundle = render_response_generation("q", [], [], [])
    assert "Raw documents are as follows:\n        (none)" in bundle.query_prompt
    assert "New documents are as follows:\n        (none)" in bundle.query_prompt


def test_related_questions_template_fidelity():
    bundle = render_related_questions("Q?", "A.")
    assert bundle.system_prompt == (
        "What are three possible follow-up questions the patient might ask? "
        "Respond with the questions only in a python list of strings. Each "
        "question should not exceed 72 characters."
    )
    assert bundle.query_prompt == (
        "A patient asked the following query:\nQ?\n"
        "A chatbot answered the following:\nA."
    )


def test_final_response_template_fidelity():
    bundle = render_final_response("Q?", "A.", "C!")
    assert "taking the doctor's correction into account" in bundle.system_prompt
    assert bundle.query_prompt == (
        "A cataract patient asked the following query:\nQ?\n"
        "A cataract chatbot answered the following:\nA.\n"
        "A doctor corrected the response as follows:\nC!"
    )


def test_shorten_template_fidelity():
    bundle = render_shorten("LONG")
    assert bundle.system_prompt == (
        "You are a Cataract chatbot, and you have to summarize the answer "
        "provided by a bot. Please summarise the answer in 700 characters or "
        "less. Only return the summarized answer and nothing else."
    )
    assert bundle.query_prompt == "You are given the following response:\nLONG"


# -- answer generation

SURGERY_CHUNK = (
    "The actual duration of the cataract surgery can vary depending on the "
    "specific case, but generally, it takes about 10-20 minutes."
)


def test_answer_query_extracts_duration_sentence():
    gateway = make_gateway()
    result = gateway.answer_query("How long will the surgery take?", [SURGERY_CHUNK], [], [])
    assert result.query_type is QueryType.MEDICAL
    assert "about 10-20 minutes" in result.english_answer
    assert not result.is_unknown


def test_answer_query_greeting_is_small_talk():
    gateway = make_gateway()
    result = gateway.answer_query("Hello", [], [], [])
    assert result.query_type is QueryType.SMALL_TALK
    assert not result.is_unknown
    assert result.english_answer != UNKNOWN_ANSWER_TEXT


def test_answer_query_unknown_uses_exact_template():
    gateway = make_gateway()
    result = gateway.answer_query("What is the lens warranty period?", [], [], [])
    assert result.is_unknown
    assert result.english_answer == UNKNOWN_ANSWER_TEXT
    assert result.query_type in (QueryType.MEDICAL, QueryType.LOGISTICAL)


def test_answer_query_prefers_expert_faq_on_tie():
    faq = "Q: How long will the surgery take?\nA: It takes about 15 minutes usually."
    gateway = make_gateway()
    result = gateway.answer_query(
        "How long will the surgery take?", [SURGERY_CHUNK], [faq], []
    )
    assert result.english_answer == "It takes about 15 minutes usually."


def test_answer_query_logistics_keywords_classify():
    gateway = make_gateway()
    result = gateway.answer_query(
        "How does insurance pre-authorization work?",
        ["Insurance pre-authorization is handled at the billing counter."],
        [],
        [],
    )
    assert result.query_type is QueryType.LOGISTICAL


class ScriptedProvider:
    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.calls = 0

    def complete(self, bundle: PromptBundle) -> str:
        self.calls += 1
        output = self.outputs.pop(0)
        if isinstance(output, Exception):
            raise output
        return output


def test_malformed_output_retried_once_then_other():
    provider = ScriptedProvider(["not json", "still not json"])
    gateway = make_gateway(provider)
    result = gateway.answer_query("q", [], [], [])
    assert provider.calls == 2
    assert result.query_type is QueryType.OTHER
    assert result.english_answer == UNKNOWN_ANSWER_TEXT
    assert not result.is_unknown  # Other never counts as a knowledge miss


def test_malformed_then_good_output_recovers():
    good = json.dumps({"response": "fine", "query_type": "medical"})
    provider = ScriptedProvider(["garbage", good])
    result = make_gateway(provider).answer_query("q", [], [], [])
    assert result.english_answer == "fine"


def test_provider_failure_retried_then_surfaced():
    provider = ScriptedProvider(
        [ProviderFailure("x"), ProviderFailure("y"), ProviderFailure("z")]
    )
    gateway = make_gateway(provider, max_retries=2)
    with pytest.raises(ProviderFailure):
        gateway.answer_query("q", [], [], [])
    assert provider.calls == 3


def test_provider_failure_recovers_within_retry_budget():
    good = json.dumps({"response": "ok", "query_type": "medical"})
    provider = ScriptedProvider([ProviderFailure("x"), good])
    result = make_gateway(provider, max_retries=2).answer_query("q", [], [], [])
    assert result.english_answer == "ok"


@given(
    st.one_of(
        st.text(max_size=120),
        st.fixed_dictionaries(
            {
                "response": st.text(max_size=120),
                "query_type": st.sampled_from(
                    ["medical", "logistical", "small-talk", "other", "[]"]
                ),
            }
        ).map(json.dumps),
        st.just(json.dumps({"response": UNKNOWN_ANSWER_TEXT, "query_type": "medical"})),
    )
)
def test_answer_query_invariants_for_any_provider_output(raw):
    provider = ScriptedProvider([raw, raw])
    result = make_gateway(provider).answer_query("q", [], [], [])
    assert result.query_type in set(QueryType)
    if result.is_unknown:
        assert result.query_type in (QueryType.MEDICAL, QueryType.LOGISTICAL)
        assert result.english_answer == UNKNOWN_ANSWER_TEXT


def test_history_window_limits_turns():
    seen = {}

    class Spy:
        def complete(self, bundle):
            seen["prompt"] = bundle.query_prompt
            return json.dumps({"response": "ok", "query_type": "medical"})

    gateway = make_gateway(Spy(), history_window=4)
    history = [f"turn-{i}" for i in range(10)]
    gateway.answer_query("q", [], [], history)
    assert "turn-5" not in seen["prompt"]
    assert all(f"turn-{i}" in seen["prompt"] for i in (6, 7, 8, 9))


# -- related questions

def test_related_questions_for_surgery_query():
    gateway = make_gateway()
    questions = gateway.related_questions(
        "How long will the surgery take?", "It takes about 10-20 minutes."
    )
    assert questions == list(DEFAULT_FALLBACK_RELATED)
    assert all(len(q) <= 72 for q in questions)


def test_related_questions_surplus_truncated_to_three():
    provider = ScriptedProvider([json.dumps([f"q{i}" for i in range(5)])])
    questions = make_gateway(provider).related_questions("q", "a")
    assert questions == ["q0", "q1", "q2"]


def test_related_questions_long_output_truncated_at_word_boundary():
    long_question = (
        "Could you please explain in detail what the complete recovery "
        "timeline after this operation looks like for me?"
    )
    assert len(long_question) == 110
    provider = ScriptedProvider([json.dumps([long_question])])
    questions = make_gateway(provider).related_questions("q", "a")
    # branch: cut at 69 chars, back to last space, strip, add ellipsis
    expected = long_question[:69]
    expected = expected[: expected.rfind(" ")].rstrip(" ,;:.!?") + "..."
    assert questions[0] == expected
    assert len(questions[0]) <= 72


@given(st.text(max_size=300))
def test_related_questions_shape_for_any_provider_output(raw):
    provider = ScriptedProvider([raw])
    questions = make_gateway(provider).related_questions("q", "a")
    assert len(questions) == 3
    assert all(isinstance(q, str) and 0 < len(q) <= 72 for q in questions)


def test_related_questions_shape_when_provider_keeps_failing():
    provider = ScriptedProvider([ProviderFailure("a")] * 3)
    questions = make_gateway(provider).related_questions("q", "a")
    assert questions == list(DEFAULT_FALLBACK_RELATED)


# -- correction merging

def test_merge_correction_reproduces_informal_expansion():
    gateway = make_gateway()
    final = gateway.merge_correction(
        "How many days after surgery can I wash my hair?",
        "Washing your hair and shampooing are allowed 3 days after the surgery.",
        "Btr avoid for 2 wks..",
    )
    assert final == (
        "Better to avoid washing your hair for 2 weeks after the cataract surgery."
    )


def test_merge_correction_fixed_point():
    gateway = make_gateway()
    answer = "Use the drops twice a day."
    assert gateway.merge_correction("q?", answer, answer) == answer


def test_merge_correction_keeps_plain_instruction():
    gateway = make_gateway()
    final = gateway.merge_correction(
        "Can I postpone the surgery to February?",
        UNKNOWN_ANSWER_TEXT,
        "Please come and check",
    )
    assert "Please come and check" in final


def test_merge_correction_expands_abbreviations():
    gateway = make_gateway()
    final = gateway.merge_correction(
        "When should I come?", "Come tomorrow.", "Pls book an appt first"
    )
    assert "appointment" in final


def test_merge_correction_rejects_empty_inputs():
    gateway = make_gateway()
    with pytest.raises(ValueError):
        gateway.merge_correction("", "a", "c")


# -- shortening

def test_shorten_mock_summarizes_under_limit():
    sentences = [f"Sentence number {i} speaks about healing." for i in range(40)]
    long_text = " ".join(sentences)
    assert len(long_text) > 700
    out = make_gateway().shorten(long_text)
    assert len(out) <= 700
    assert out.startswith("Sentence number 0")


def test_shorten_hard_truncates_overlong_provider_output():
    over = ("word " * 155 + "End of sentence one. ") + "tail " * 20
    provider = ScriptedProvider([over])
    out = make_gateway(provider).shorten("x" * 1400)
    assert len(out) <= 700
    assert out.endswith(".")


def test_truncate_sentences_cuts_at_boundary():
    text = "First part. Second part! Third part? " + "x" * 800
    out = truncate_sentences(text, 40)
    assert out == "First part. Second part! Third part?"


def test_truncate_label_examples():
    assert truncate_label("short") == "short"
    exactly_72 = "x" * 72
    assert truncate_label(exactly_72) == exactly_72
    no_spaces = "y" * 100
    assert truncate_label(no_spaces) == "y" * 69 + "..."


@given(st.text(min_size=1, max_size=400))
def test_truncate_label_always_within_limit(text):
    assert len(truncate_label(text)) <= 72


@given(st.text(min_size=1, max_size=2000))
def test_truncate_sentences_always_within_limit(text):
    assert len(truncate_sentences(text, 700)) <= 700
