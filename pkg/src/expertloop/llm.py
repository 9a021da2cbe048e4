"""Completion-provider gateway hosting the four prompt tasks.

The prompt texts are fixed templates; rendering only substitutes the
placeholder sites. The deterministic mock provider answers extractively
from the supplied knowledge chunks so every protocol test runs without a
live model.
"""
from __future__ import annotations

import ast
import json
import logging
import re
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

from .model import QueryType
from .textnorm import light_stem, tokenize

logger = logging.getLogger(__name__)

UNKNOWN_ANSWER_TEXT = (
    "I do not know the answer to your question. If this needs to be "
    "answered by a doctor, please schedule a consultation."
)

TEXT_LIMIT = 700
LABEL_LIMIT = 72


class PromptTask(str, Enum):
    RESPONSE_GENERATION = "response_generation"
    RELATED_QUESTIONS = "related_questions"
    FINAL_RESPONSE = "final_response"
    SHORTEN = "shorten"


@dataclass(frozen=True)
class PromptBundle:
    system_prompt: str
    query_prompt: str
    task: PromptTask


@dataclass(frozen=True)
class AnswerGeneration:
    english_answer: str
    query_type: QueryType
    is_unknown: bool


class ProviderFailure(RuntimeError):
    """The completion backend failed; retried, then surfaced."""


class MalformedOutput(ValueError):
    """Provider output did not match the expected wire shape."""


RESPONSE_GENERATION_SYSTEM = (
    "You are a Cataract chatbot whose primary goal is to help patients "
    "undergoing or undergone a cataract surgery. If the query can be "
    "truthfully and factually answered using the knowledge base only, "
    "answer it concisely in a polite and professional way. If not, then "
    'just say "I do not know the answer to your question. If this needs '
    'to be answered by a doctor, please schedule a consultation."\n'
    "\n"
    "In case of a conflict between raw knowledge base and new knowledge "
    "base, prefer the new knowledge base. One exception to the above is "
    "if the query is a greeting or an acknowledgement or gratitude. If "
    "the query is a greeting, then respond with a greeting. If the query "
    "is an acknowledgement or gratitude to the bot's response, then "
    "respond with an acknowledgement of the same. Some examples of "
    "acknowledgement or gratitude to the bot's response are \"Thank You\", "
    '"Got it" and "I understand". In addition to the above, indicate like '
    'a 3-class classifier if the query is "medical", "logistical" or '
    '"small-talk". Here, "small-talk" is defined as a query which is a '
    "greeting or an acknowledgement or gratitude. Answer it in the "
    "following json format:\n"
    '{"response": "<answer text>", "query_type": "<medical|logistical|small-talk>"}'
)

RESPONSE_GENERATION_QUERY = (
    "The following knowledge base have been provided to you as reference:\n"
    "    Raw documents are as follows:\n"
    "        {raw_chunks}\n"
    "    New documents are as follows:\n"
    "        {faq_chunks}\n"
    "    The most recent conversations are here:\n"
    "        {history}\n"
    "    You are asked the following query:\n"
    "        {query}\n"
    "\n"
    "Ensure that the query type belongs to only the above mentioned three "
    'categories. When not sure, choose one of "medical" or "logistical".'
)

RELATED_QUESTIONS_SYSTEM = (
    "What are three possible follow-up questions the patient might ask? "
    "Respond with the questions only in a python list of strings. Each "
    "question should not exceed 72 characters."
)

RELATED_QUESTIONS_QUERY = (
    "A patient asked the following query:\n"
    "{query}\n"
    "A chatbot answered the following:\n"
    "{answer}"
)

FINAL_RESPONSE_SYSTEM = (
    "You are a Cataract chatbot whose primary goal is to help patients "
    "undergoing or undergone a cataract surgery. A cataract patient asks "
    "a query and a cataract chatbot answers it. But, the doctor gives a "
    "correction to the chatbot's response. Update the cataract chatbot's "
    "response by taking the doctor's correction into account. Respond "
    "only with the final updated response."
)

FINAL_RESPONSE_QUERY = (
    "A cataract patient asked the following query:\n"
    "{query}\n"
    "A cataract chatbot answered the following:\n"
    "{response}\n"
    "A doctor corrected the response as follows:\n"
    "{correction}"
)

SHORTEN_SYSTEM = (
    "You are a Cataract chatbot, and you have to summarize the answer "
    "provided by a bot. Please summarise the answer in 700 characters or "
    "less. Only return the summarized answer and nothing else."
)

SHORTEN_QUERY = "You are given the following response:\n{response}"


def _block(items: list[str]) -> str:
    return "\n".join(items) if items else "(none)"


def render_response_generation(
    query: str, raw_chunks: list[str], faq_chunks: list[str], history: list[str]
) -> PromptBundle:
    return PromptBundle(
        system_prompt=RESPONSE_GENERATION_SYSTEM,
        query_prompt=RESPONSE_GENERATION_QUERY.format(
            raw_chunks=_block(raw_chunks),
            faq_chunks=_block(faq_chunks),
            history=_block(history),
            query=query,
        ),
        task=PromptTask.RESPONSE_GENERATION,
    )


def render_related_questions(query: str, answer: str) -> PromptBundle:
    return PromptBundle(
        system_prompt=RELATED_QUESTIONS_SYSTEM,
        query_prompt=RELATED_QUESTIONS_QUERY.format(query=query, answer=answer),
        task=PromptTask.RELATED_QUESTIONS,
    )


def render_final_response(query: str, response: str, correction: str) -> PromptBundle:
    return PromptBundle(
        system_prompt=FINAL_RESPONSE_SYSTEM,
        query_prompt=FINAL_RESPONSE_QUERY.format(
            query=query, response=response, correction=correction
        ),
        task=PromptTask.FINAL_RESPONSE,
    )


def render_shorten(response: str) -> PromptBundle:
    return PromptBundle(
        system_prompt=SHORTEN_SYSTEM,
        query_prompt=SHORTEN_QUERY.format(response=response),
        task=PromptTask.SHORTEN,
    )


class CompletionProvider(Protocol):
    def complete(self, bundle: PromptBundle) -> str: ...


def truncate_label(text: str, limit: int = LABEL_LIMIT) -> str:
    """Cut an over-length label at the last word boundary <= limit-3, add '...'."""
    if len(text) <= limit:
        return text
    cut = text[: limit - 3]
    if " " in cut:
        cut = cut[: cut.rfind(" ")]
    return cut.rstrip(" ,;:.!?") + "..."


def truncate_sentences(text: str, limit: int = TEXT_LIMIT) -> str:
    """Cut at the last sentence boundary <= limit; word boundary as last resort."""
    if len(text) <= limit:
        return text
    window = text[:limit]
    boundary = max(window.rfind("."), window.rfind("!"), window.rfind("?"))
    if boundary > 0:
        return window[: boundary + 1]
    return truncate_label(text, limit)


DEFAULT_FALLBACK_RELATED = (
    "How long does recovery take after surgery?",
    "Will I feel pain during the surgery?",
    "What are the risks of cataract surgery?",
)


@dataclass
class LlmConfig:
    history_window: int = 4
    max_retries: int = 2
    backoff_base_s: float = 1.0
    fallback_related: tuple[str, ...] = DEFAULT_FALLBACK_RELATED

    def __post_init__(self):
        if len(self.fallback_related) < 3:
            raise ValueError("need at least 3 fallback related questions")
        for q in self.fallback_related:
            if len(q) > LABEL_LIMIT:
                raise ValueError(f"fallback question over {LABEL_LIMIT} chars: {q!r}")


_QUERY_TYPE_WIRE = {
    "medical": QueryType.MEDICAL,
    "logistical": QueryType.LOGISTICAL,
    "small-talk": QueryType.SMALL_TALK,
}


class LlmGateway:
    """Renders prompts, invokes the provider, and validates its output."""

    def __init__(
        self,
        provider: CompletionProvider,
        config: LlmConfig | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._provider = provider
        self._config = config or LlmConfig()
        self._sleep = sleeper

    def _call(self, bundle: PromptBundle) -> str:
        delay = self._config.backoff_base_s
        for attempt in range(self._config.max_retries + 1):
            try:
                return self._provider.complete(bundle)
            except ProviderFailure:
                if attempt == self._config.max_retries:
                    raise
                logger.warning("provider failed (%s), retrying", bundle.task.value)
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")  # pragma: no cover

    def answer_query(
        self,
        query: str,
        raw_chunks: list[str],
        faq_chunks: list[str],
        history: list[str],
    ) -> AnswerGeneration:
        if not query.strip():
            raise ValueError("query must be non-empty")
        windowed = history[-self._config.history_window :]
        bundle = render_response_generation(query, raw_chunks, faq_chunks, windowed)
        raw = self._call(bundle)
        try:
            return self._parse_answer(raw)
        except MalformedOutput:
            logger.warning("malformed answer output, retrying once")
        raw = self._call(bundle)
        try:
            return self._parse_answer(raw)
        except MalformedOutput:
            # keep the seeker informed rather than silently dropping
            return AnswerGeneration(
                english_answer=UNKNOWN_ANSWER_TEXT,
                query_type=QueryType.OTHER,
                is_unknown=False,
            )

    @staticmethod
    def _parse_answer(raw: str) -> AnswerGeneration:
        try:
            payload = json.loads(raw)
        except (json.JSONDecodeError, TypeError) as exc:
            raise MalformedOutput(str(exc)) from exc
        if not isinstance(payload, dict):
            raise MalformedOutput("not a JSON object")
        response = payload.get("response")
        wire_type = payload.get("query_type")
        if not isinstance(response, str) or not response.strip():
            raise MalformedOutput("missing response text")
        if wire_type not in _QUERY_TYPE_WIRE:
            raise MalformedOutput(f"unknown query_type {wire_type!r}")
        query_type = _QUERY_TYPE_WIRE[wire_type]
        is_unknown = (
            response == UNKNOWN_ANSWER_TEXT
            and query_type in (QueryType.MEDICAL, QueryType.LOGISTICAL)
        )
        return AnswerGeneration(
            english_answer=response, query_type=query_type, is_unknown=is_unknown
        )

    def related_questions(self, query: str, answer: str) -> list[str]:
        """Exactly three follow-up suggestions, each within the label limit.

        Whatever the provider does (too many, too few, over-length, garbage,
        or persistent failure), the result is padded/truncated into shape;
        the suggestion strip must never break the seeker flow.
        """
        if not query.strip() or not answer.strip():
            raise ValueError("query and answer must be non-empty")
        bundle = render_related_questions(query, answer)
        try:
            raw = self._call(bundle)
        except ProviderFailure:
            logger.warning("related-questions provider failed; using fallbacks")
            raw = ""
        questions = [truncate_label(q) for q in _parse_string_list(raw)[:3]]
        for fallback in self._config.fallback_related:
            if len(questions) >= 3:
                break
            if fallback not in questions:
                questions.append(fallback)
        return questions[:3]

    def merge_correction(self, query: str, bot_answer: str, correction: str) -> str:
        if not (query.strip() and bot_answer.strip() and correction.strip()):
            raise ValueError("query, bot_answer and correction must be non-empty")
        bundle = render_final_response(query, bot_answer, correction)
        return self._call(bundle).strip()

    def shorten(self, answer: str) -> str:
        bundle = render_shorten(answer)
        out = self._call(bundle).strip()
        if len(out) > TEXT_LIMIT:
            out = truncate_sentences(out, TEXT_LIMIT)
        return out


def _parse_string_list(raw: str) -> list[str]:
    """Best-effort parse of a provider's 'list of strings' output."""
    raw = raw.strip()
    if not raw:
        return []
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(raw)
        except Exception:
            continue
        if isinstance(value, list):
            return [v.strip() for v in value if isinstance(v, str) and v.strip()]
    items = []
    for line in raw.splitlines():
        line = line.strip().lstrip("-*0123456789. ").strip("\"'")
        if line and not line.startswith(("[", "]")):
            items.append(line)
    return items


# --- deterministic mock provider ------------------------------------------

# words too common in this domain to signal relevance
_STOPWORDS = frozenset(
    """a an the is are am was were be been being i you he she it we they my your
    his her its our their me him them us do does did done can could will would
    shall should may might must how what when where which who whom why to of in
    on at for with and or but if then than this that these those there here by
    from as not no yes so please about any some get got have has had
    surgery surgeries cataract""".split()
)

DEFAULT_LOGISTICS_KEYWORDS = (
    "insurance",
    "schedule",
    "cost",
    "discharge",
    "appointment",
    "payment",
    "time to reach",
)

DEFAULT_GREETING_KEYWORDS = ("hello", "hi", "thank")

DEFAULT_EXPANSIONS = {
    "btr": "Better",
    "wks": "weeks",
    "wk": "week",
    "appt": "appointment",
}

DEFAULT_RELATED_TEMPLATES = (
    (
        "wash",
        (
            "When can I take a head bath after surgery?",
            "Can I use shampoo near my eyes?",
            "How should I clean my face after surgery?",
        ),
    ),
    (
        "surgery",
        (
            "How long does recovery take after surgery?",
            "Will I feel pain during the surgery?",
            "What are the risks of cataract surgery?",
        ),
    ),
)

_GREETING_REPLY = "Hello! I am happy to help with your cataract surgery questions."
_ACK_REPLY = "You're welcome! Feel free to ask more questions about your cataract surgery."


def _content_words(text: str) -> set[str]:
    return {light_stem(w) for w in tokenize(text) if w not in _STOPWORDS}


def _tokens(text: str) -> list[str]:
    return tokenize(text)


def _sentences(text: str) -> list[str]:
    pieces = re.split(r"(?<=[.!?])\s+|\n+", text)
    return [p.strip() for p in pieces if p.strip()]


def _extract(region: str, start_marker: str, end_marker: str | None) -> str:
    lo = region.find(start_marker)
    if lo < 0:
        return ""
    lo += len(start_marker)
    hi = region.find(end_marker, lo) if end_marker else -1
    body = region[lo:hi] if hi >= 0 else region[lo:]
    body = body.strip()
    return "" if body == "(none)" else body


class MockCompletionProvider:
    """Keyword classifier + extractive answerer over the rendered prompt.

    The mock sees exactly what a real model would see (the rendered prompt
    text) and recovers the placeholder contents from the fixed template
    markers. Answering picks the knowledge sentence with the most content
    words shared with the query, preferring expert-FAQ entries on ties, and
    falls back to the fixed unknown-answer template when nothing overlaps.
    """

    def __init__(
        self,
        logistics_keywords: tuple[str, ...] = DEFAULT_LOGISTICS_KEYWORDS,
        greeting_keywords: tuple[str, ...] = DEFAULT_GREETING_KEYWORDS,
        expansions: dict[str, str] | None = None,
        related_templates=DEFAULT_RELATED_TEMPLATES,
    ):
        self.logistics_keywords = tuple(k.lower() for k in logistics_keywords)
        self.greeting_keywords = tuple(k.lower() for k in greeting_keywords)
        self.expansions = dict(DEFAULT_EXPANSIONS if expansions is None else expansions)
        self.related_templates = tuple(related_templates)

    def complete(self, bundle: PromptBundle) -> str:
        if bundle.task is PromptTask.RESPONSE_GENERATION:
            return self._respond(bundle.query_prompt)
        if bundle.task is PromptTask.RELATED_QUESTIONS:
            return self._related(bundle.query_prompt)
        if bundle.task is PromptTask.FINAL_RESPONSE:
            return self._merge(bundle.query_prompt)
        if bundle.task is PromptTask.SHORTEN:
            return self._shorten(bundle.query_prompt)
        raise ValueError(f"unknown task {bundle.task}")  # pragma: no cover

    # -- response generation

    def _respond(self, prompt: str) -> str:
        raw_region = _extract(
            prompt, "Raw documents are as follows:\n", "New documents are as follows:"
        )
        faq_region = _extract(
            prompt,
            "New documents are as follows:\n",
            "The most recent conversations are here:",
        )
        query = _extract(
            prompt, "You are asked the following query:\n", "\nEnsure that the query type"
        )
        qtype = self._classify(query)
        if qtype == "small-talk":
            reply = self._small_talk_reply(query)
        else:
            reply = self._extractive_answer(query, raw_region, faq_region)
        return json.dumps({"response": reply, "query_type": qtype})

    def _classify(self, query: str) -> str:
        tokens = _tokens(query)
        for kw in self.greeting_keywords:
            for token in tokens:
                if token == kw or (len(kw) >= 4 and token.startswith(kw)):
                    return "small-talk"
        lowered = query.lower()
        if any(kw in lowered for kw in self.logistics_keywords):
            return "logistical"
        return "medical"

    @staticmethod
    def _small_talk_reply(query: str) -> str:
        tokens = _tokens(query)
        if any(t.startswith(("thank", "got", "understand")) for t in tokens):
            return _ACK_REPLY
        return _GREETING_REPLY

    def _extractive_answer(self, query: str, raw_region: str, faq_region: str) -> str:
        want = _content_words(query)
        best_score = 0
        best_answer = ""
        # expert-FAQ entries score on question+answer, reply with the answer
        for q_text, a_text in _faq_entries(faq_region):
            score = len(want & _content_words(q_text + " " + a_text))
            if score > best_score:
                best_score, best_answer = score, a_text
        for sentence in _sentences(raw_region):
            score = len(want & _content_words(sentence))
            if score > best_score:
                best_score, best_answer = score, sentence
        if best_score == 0:
            return UNKNOWN_ANSWER_TEXT
        return best_answer

    # -- related questions

    def _related(self, prompt: str) -> str:
        query = _extract(
            prompt, "A patient asked the following query:\n", "\nA chatbot answered"
        )
        lowered = query.lower()
        for keyword, trio in self.related_templates:
            if keyword in lowered:
                return json.dumps(list(trio))
        return json.dumps(list(DEFAULT_FALLBACK_RELATED))

    # -- final response generation

    def _merge(self, prompt: str) -> str:
        query = _extract(
            prompt,
            "A cataract patient asked the following query:\n",
            "\nA cataract chatbot answered",
        )
        answer = _extract(
            prompt,
            "A cataract chatbot answered the following:\n",
            "\nA doctor corrected the response",
        )
        correction = _extract(
            prompt, "A doctor corrected the response as follows:\n", None
        )
        if correction == answer:
            return answer
        expanded = self._expand(correction)
        composed = self._contextualize(expanded, query)
        if composed:
            return composed
        final = expanded.rstrip(" .")
        if final:
            final = final[0].upper() + final[1:] + "."
        return final

    def _expand(self, text: str) -> str:
        words = []
        for word in text.split():
            stripped = word.strip(".,!?")
            trailer = word[len(stripped) :] if stripped else ""
            replacement = self.expansions.get(stripped.lower())
            words.append((replacement + trailer) if replacement else word)
        return " ".join(words)

    @staticmethod
    def _contextualize(expanded: str, query: str) -> str | None:
        """Weave an avoidance-style correction around the query's activity."""
        flat = expanded.rstrip(" .").strip()
        match = re.match(r"(?i)^better (?:to )?avoid (?:for )?(.+)$", flat)
        if not match:
            return None
        duration = match.group(1).strip()
        activity = _query_activity(query)
        if not activity:
            return None
        return (
            f"Better to avoid {activity} for {duration} after the cataract surgery."
        )

    # -- shorten

    @staticmethod
    def _shorten(prompt: str) -> str:
        response = _extract(prompt, "You are given the following response:\n", None)
        kept: list[str] = []
        total = 0
        for sentence in _sentences(response):
            added = len(sentence) + (1 if kept else 0)
            if total + added > TEXT_LIMIT:
                break
            kept.append(sentence)
            total += added
        return " ".join(kept) if kept else response[:TEXT_LIMIT]


def _faq_entries(faq_region: str) -> list[tuple[str, str]]:
    entries = []
    question = None
    answer_lines: list[str] = []
    for line in faq_region.splitlines():
        stripped = line.strip()
        if stripped.startswith("Q:"):
            if question is not None and answer_lines:
                entries.append((question, " ".join(answer_lines)))
            question = stripped[2:].strip()
            answer_lines = []
        elif stripped.startswith("A:"):
            answer_lines = [stripped[2:].strip()]
        elif stripped and answer_lines:
            answer_lines.append(stripped)
    if question is not None and answer_lines:
        entries.append((question, " ".join(answer_lines)))
    return entries


def _query_activity(query: str) -> str | None:
    """Pull the asked-about activity out of a can/should question."""
    match = re.search(
        r"(?i)\b(?:can|should|may|could)\s+i\s+(.+?)(?:\?|$)", query.strip()
    )
    if not match:
        return None
    activity = match.group(1).strip()
    words = activity.split()
    if not words:
        return None
    words[0] = _gerund(words[0])
    swaps = {"my": "your", "me": "you", "i": "you", "mine": "yours"}
    words = [swaps.get(w.lower(), w) for w in words]
    return " ".join(words)


def _gerund(verb: str) -> str:
    lower = verb.lower()
    if lower.endswith("e") and not lower.endswith(("ee", "ye")):
        return lower[:-1] + "ing"
    return lower + "ing"


class HttpCompletionProvider:
    """Adapter slot for a real completion service.

    POSTs {"system": ..., "prompt": ..., "task": ...} to the configured URL
    and expects the raw completion text back in a {"text": ...} body.
    """

    def __init__(self, url: str, timeout_s: float = 30.0):
        self._url = url
        self._timeout = timeout_s

    def complete(self, bundle: PromptBundle) -> str:
        import urllib.error
        import urllib.request

        body = json.dumps(
            {
                "system": bundle.system_prompt,
                "prompt": bundle.query_prompt,
                "task": bundle.task.value,
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            self._url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            raise ProviderFailure(str(exc)) from exc
        text = payload.get("text")
        if not isinstance(text, str):
            raise ProviderFailure("completion service returned no text")
        return text


def make_completion_provider(name: str, options: dict | None = None) -> CompletionProvider:
    options = options or {}
    if name == "mock":
        return MockCompletionProvider(
            logistics_keywords=tuple(
                options.get("logistics_keywords", DEFAULT_LOGISTICS_KEYWORDS)
            ),
            greeting_keywords=tuple(
                options.get("greeting_keywords", DEFAULT_GREETING_KEYWORDS)
            ),
            expansions=options.get("expansions"),
            related_templates=options.get("related_templates", DEFAULT_RELATED_TEMPLATES),
        )
    if name == "http":
        return HttpCompletionProvider(url=options["url"])
    raise ValueError(f"unknown completion provider: {name}")
