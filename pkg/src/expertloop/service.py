"""Service core: wires stores, providers and engines over the event log.

The event log is the system of record. Every command validates, appends
events, folds them into in-memory state, and only then performs outbound
dispatch; replaying the log therefore reconstructs tasks, profiles, the KB
queue and scheduler watermarks without re-triggering side effects.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional

from . import events as ev
from .channel import (
    ActionKind,
    BUTTON_NO,
    BUTTON_TO_COORDINATOR,
    BUTTON_TO_DOCTOR,
    BUTTON_YES,
    InboundKind,
    InboundMessage,
    OutboundAction,
    VERIFICATION_PROMPT,
    parse_webhook,
    render_outbound,
)
from .clock import Clock
from .config import ServiceConfig
from .embeddings import EmbeddingProviderFailure, make_embedding_provider
from .events import EventLog, EventRecord
from .kb_update import KbUpdatePipeline, ReviewRow
from .knowledge import KnowledgeStore, load_corpus
from .language import (
    AUDIO_RETRY_NOTICE,
    AudioStore,
    DictionaryTranslator,
    FixtureTranscriber,
    LanguageService,
    MarkerSynthesizer,
    TranscriptionFailure,
    TranslationFailure,
)
from .llm import (
    LlmConfig,
    LlmGateway,
    ProviderFailure,
    TEXT_LIMIT,
    make_completion_provider,
    truncate_label,
    truncate_sentences,
)
from .model import (
    AnswerStatus,
    BotAnswer,
    IconState,
    IdGenerator,
    LanguageCode,
    Modality,
    QueryRecord,
    QueryType,
    Role,
    UserProfile,
    icon_for,
)
from .onboarding import (
    ACCESS_ENDED_TEXT,
    OnboardingForm,
    OnboardingScheduler,
    SEEKER_REMINDER_TEXT,
    UserDirectory,
)
from .workflow import (
    Decision,
    DueEvent,
    DueKind,
    Outcome,
    TaskState,
    Track,
    TRACK_FOR_QUERY_TYPE,
    VerificationTask,
    VerificationWorkflow,
    WorkflowError,
)

logger = logging.getLogger(__name__)

VERIFIED_NOTICE = "This answer has been verified by the expert."
AWAIT_CORRECTION_NOTICE = (
    "The expert marked this answer as incorrect. "
    "Please await the expert's corrected response."
)
TRY_AGAIN_NOTICE = "Sorry, something went wrong. Please try asking your question again."
TEXT_RETRY_NOTICE = (
    "Sorry, we could not understand your message. Please try typing it again."
)
CORRECTION_ASK = "Please reply with your correction as a free-form text message."
NO_CORRECTION_PENDING = "There is no answer awaiting your correction right now."
NO_ACTIONABLE_TASK = "There are no questions awaiting your verification right now."
REROUTE_DISABLED_NOTICE = "Sending this question to the doctor track is disabled."
WELCOME_TEXT = (
    "Welcome! I am your cataract surgery assistant. Ask me any question "
    "about your surgery: I answer instantly and a hospital expert verifies "
    "every answer. To change your language, reply: change language."
)
LANGUAGE_MENU_TEXT = (
    "Reply with the name of your preferred language: "
    "English, Hindi, Kannada, Tamil, Telugu."
)
LANGUAGE_CONFIRMED_TEXT = "Your language preference has been updated."

_LANGUAGE_NAMES = {
    "english": LanguageCode.EN,
    "hindi": LanguageCode.HI,
    "kannada": LanguageCode.KN,
    "tamil": LanguageCode.TA,
    "telugu": LanguageCode.TE,
}

_DECISION_FOR_LABEL = {
    BUTTON_YES: Decision.YES,
    BUTTON_NO: Decision.NO,
    BUTTON_TO_COORDINATOR: Decision.REROUTE,
    BUTTON_TO_DOCTOR: Decision.REROUTE,
}


@dataclass
class MessageView:
    message_id: str
    direction: str  # "in" | "out"
    kind: str
    at: str
    text: str = ""
    reaction: Optional[str] = None
    target_message_id: Optional[str] = None
    buttons: list[str] = field(default_factory=list)
    suggestions: list[str] = field(default_factory=list)
    header: Optional[str] = None
    audio: bool = False

    def to_dict(self) -> dict:
        return {
            "message_id": self.message_id,
            "direction": self.direction,
            "kind": self.kind,
            "at": self.at,
            "text": self.text,
            "reaction": self.reaction,
            "target_message_id": self.target_message_id,
            "buttons": self.buttons,
            "suggestions": self.suggestions,
            "header": self.header,
            "audio": self.audio,
        }


class ConversationState:
    """Per-user transcript folded from inbound/outbound events."""

    def __init__(self):
        self.messages: dict[str, list[MessageView]] = {}
        self.history: dict[str, list[str]] = {}
        self.suggestion_sets: dict[str, dict] = {}
        self.last_suggestions: dict[str, str] = {}  # seeker -> message_id

    def apply(self, kind: str, payload: dict) -> None:
        if kind == ev.INBOUND_RECEIVED:
            user_id = payload.get("sender_id")
            if not user_id:
                return
            self.messages.setdefault(user_id, []).append(
                MessageView(
                    message_id=payload["message_id"],
                    direction="in",
                    kind=payload.get("inbound_kind", "text"),
                    at=payload["at"],
                    text=payload.get("original_text", "") or payload.get("text", ""),
                    audio=payload.get("modality") == Modality.AUDIO.value,
                )
            )
        elif kind == ev.QUERY_RECORDED:
            seeker = payload["seeker_id"]
            self.history.setdefault(seeker, []).append(
                f"Patient: {payload['english_text']}"
            )
        elif kind == ev.ANSWER_RECORDED:
            seeker = payload["seeker_id"]
            self.history.setdefault(seeker, []).append(
                f"Bot: {payload['english_answer']}"
            )
        elif kind == ev.SUGGESTIONS_OFFERED:
            self.suggestion_sets[payload["message_id"]] = payload
            self.last_suggestions[payload["seeker_id"]] = payload["message_id"]
        elif kind == ev.OUTBOUND_DISPATCHED:
            wire = payload["payload"]
            user_id = payload["recipient_id"]
            views = self.messages.setdefault(user_id, [])
            if wire["kind"] == ActionKind.SET_REACTION.value:
                for view in views:
                    if view.message_id == wire["target_message_id"]:
                        view.reaction = wire["emoji"]
                        break
                return
            views.append(
                MessageView(
                    message_id=wire["message_id"],
                    direction="out",
                    kind=wire["kind"],
                    at=payload["at"],
                    text=wire.get("text", ""),
                    target_message_id=wire.get("target_message_id"),
                    buttons=list(wire.get("buttons", [])),
                    suggestions=list(wire.get("suggestions", [])),
                    header=wire.get("header"),
                    audio=wire["kind"] == ActionKind.SEND_AUDIO.value,
                )
            )

    def view(self, user_id: str) -> list[MessageView]:
        return list(self.messages.get(user_id, []))

    def history_for(self, user_id: str) -> list[str]:
        return list(self.history.get(user_id, []))


@dataclass(frozen=True)
class ReplyOutcome:
    kind: str
    query_id: Optional[str] = None
    answer_id: Optional[str] = None
    task_id: Optional[str] = None
    state: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


OutboundSink = Callable[[dict], None]


class Orchestrator:
    """One deployment of the assistant: stores, engines, log, and dispatch."""

    def __init__(
        self,
        config: ServiceConfig,
        clock: Clock,
        sink: Optional[OutboundSink] = None,
    ):
        self.config = config
        self.clock = clock
        self.sink = sink
        self._lock = threading.RLock()
        self._replaying = False
        # audit hook: called once per committed event (live path only)
        self.on_event: Optional[Callable[[EventRecord], None]] = None

        self.ids = IdGenerator(clock, seed=config.id_seed)
        self.log = EventLog(config.log_path, fsync=config.log_fsync)

        embedder = make_embedding_provider(
            config.embedding_provider, config.provider_options.get("embedding")
        )
        self.store = KnowledgeStore(
            embedder, self.ids, clock, chunk_budget=config.chunk_budget
        )
        completion = make_completion_provider(
            config.completion_provider, config.provider_options.get("completion")
        )
        llm_options = config.provider_options.get("llm", {})
        self.gateway = LlmGateway(
            completion,
            LlmConfig(
                history_window=config.history_window,
                max_retries=config.llm_max_retries,
                backoff_base_s=config.llm_backoff_base_s,
                fallback_related=tuple(
                    llm_options.get("fallback_related", config.starter_faqs)
                ),
            ),
            sleeper=(lambda _s: None) if config.llm_backoff_base_s == 0 else time.sleep,
        )
        self.language = self._build_language_service()
        self.directory = UserDirectory()
        self.workflow = VerificationWorkflow(
            self.ids,
            self._commit,
            self._assign_experts,
            escalation_delay=config.escalation_delay,
            reminder_delay=config.reminder_delay,
            digest_times=config.digest_times,
            tz=config.tzinfo,
            coordinator_reroute_enabled=config.coordinator_reroute_enabled,
        )
        self.onboarding = OnboardingScheduler(
            self.directory,
            self.ids,
            self._commit,
            tz=config.tzinfo,
            reminder_times=config.seeker_reminder_times,
            active_days=config.seeker_active_days,
            horizon_days=config.enrollment_horizon_days,
        )
        self.kb = KbUpdatePipeline(
            self.workflow,
            self.ids,
            self._commit,
            row_context=self._row_context,
            apply_entries=lambda entries: self.store.append_faq_entries(entries),
            review_dir=config.review_dir,
            tz=config.tzinfo,
            digest_time=config.kb_digest_time,
            apply_time=config.kb_apply_time,
        )
        self.conversations = ConversationState()

        self.queries: dict[str, QueryRecord] = {}
        self.answers: dict[str, BotAnswer] = {}
        self.answer_status: dict[str, AnswerStatus] = {}
        self.prompt_tasks: dict[str, str] = {}  # prompt message id -> task id
        self.task_prompts: dict[str, dict[str, str]] = {}  # task -> expert -> msg

    def _row_context(self, task: VerificationTask) -> tuple[str, str]:
        query = self.queries.get(task.query_id)
        answer = self.answers.get(task.answer_id)
        return (
            query.english_text if query else "",
            answer.english_answer if answer else "",
        )

    def _build_language_service(self) -> LanguageService:
        options = self.config.provider_options
        translator_opts = options.get("translation", {})
        if self.config.translation_provider == "dictionary":
            if "phrases_file" in translator_opts:
                translator = DictionaryTranslator.from_file(
                    Path(translator_opts["phrases_file"]),
                    on_missing=translator_opts.get("on_missing", "tag"),
                )
            else:
                translator = DictionaryTranslator(
                    translator_opts.get("phrases"),
                    on_missing=translator_opts.get("on_missing", "tag"),
                )
        else:
            raise ValueError(
                f"unknown translation provider {self.config.translation_provider}"
            )
        stt_opts = options.get("stt", {})
        if self.config.stt_provider == "fixture":
            if "fixtures_file" in stt_opts:
                transcriber = FixtureTranscriber.from_file(Path(stt_opts["fixtures_file"]))
            else:
                transcriber = FixtureTranscriber(stt_opts.get("fixtures"))
        else:
            raise ValueError(f"unknown stt provider {self.config.stt_provider}")
        if self.config.tts_provider != "marker":
            raise ValueError(f"unknown tts provider {self.config.tts_provider}")
        return LanguageService(
            translator,
            transcriber,
            MarkerSynthesizer(),
            AudioStore(self.config.audio_dir),
        )

    # -- bootstrap / replay

    def bootstrap(self) -> int:
        """Load the corpus, then replay the log or register the deployment."""
        if self.config.corpus_dir:
            load_corpus(self.store, self.config.corpus_dir)
        existing = list(self.log.read_all())
        if existing:
            self._replaying = True
            try:
                for record in existing:
                    self._fold(record)
            finally:
                self._replaying = False
            logger.info("replayed %d events", len(existing))
        else:
            self._commit(
                ev.SERVICE_INITIALIZED, {"at": self.clock.now().isoformat()}
            )
            for spec in self.config.experts:
                self.onboarding.register_expert(
                    spec.user_id, spec.role, spec.channel_address, spec.display_name
                )
        return len(existing)

    # -- event plumbing

    def _commit(self, kind: str, payload: dict) -> EventRecord:
        record = self.log.append(self.clock.now(), kind, payload)
        self._fold(record)
        if self.on_event is not None:
            self.on_event(record)
        return record

    def _fold(self, record: EventRecord) -> None:
        """Route an event into every piece of state it affects.

        Engines mutate state exclusively here (their command methods only
        emit), so the live path and replay share one transition function.
        """
        kind, payload = record.kind, record.payload
        if kind in (ev.TASK_CREATED, ev.TASK_TRANSITION, ev.TASK_REMINDER_SENT):
            self.workflow.apply(kind, payload)
            self._fold_answer_status(kind, payload)
        elif kind in (ev.PROFILE_REGISTERED, ev.PROFILE_DEACTIVATED, ev.LANGUAGE_CHANGED):
            self.directory.apply(kind, payload)
        elif kind in (ev.SCHEDULER_FIRED, ev.SERVICE_INITIALIZED):
            self.workflow.apply(kind, payload)
            self.onboarding.apply(kind, payload)
            self.kb.apply(kind, payload)
        elif kind in (ev.DIGEST_EMITTED, ev.REVIEW_INGESTED, ev.FAQ_APPLIED):
            self.kb.apply(kind, payload)
            if kind == ev.FAQ_APPLIED and self._replaying:
                # live application already appended via the pipeline callback
                self.store.append_faq_entries(
                    [tuple(entry) for entry in payload["entries"]]
                )
        elif kind == ev.QUERY_RECORDED:
            self.queries[payload["query_id"]] = QueryRecord(
                query_id=payload["query_id"],
                seeker_id=payload["seeker_id"],
                original_text=payload["original_text"],
                original_modality=Modality(payload["modality"]),
                english_text=payload["english_text"],
                query_type=QueryType(payload["query_type"]),
                asked_at=datetime.fromisoformat(payload["asked_at"]),
                conversation_id=payload["conversation_id"],
            )
        elif kind == ev.ANSWER_RECORDED:
            answer = BotAnswer(
                answer_id=payload["answer_id"],
                query_id=payload["query_id"],
                english_answer=payload["english_answer"],
                citations=tuple(payload.get("citations", ())),
                is_unknown=payload["is_unknown"],
                related_questions=tuple(payload.get("related_questions", ())),
            )
            self.answers[answer.answer_id] = answer
            self.answer_status[answer.answer_id] = AnswerStatus.UNVERIFIED
        elif kind == ev.OUTBOUND_DISPATCHED:
            context = payload.get("context", {})
            if context.get("role") == "verification_prompt":
                message_id = payload["payload"]["message_id"]
                task_id = context["task_id"]
                self.prompt_tasks[message_id] = task_id
                self.task_prompts.setdefault(task_id, {})[
                    payload["recipient_id"]
                ] = message_id
        # conversation state folds from several kinds
        self.conversations.apply(kind, payload)

    def _fold_answer_status(self, kind: str, payload: dict) -> None:
        if kind != ev.TASK_TRANSITION:
            return
        task = self.workflow.tasks.get(payload["task_id"])
        if task is None:
            return
        to_state = TaskState(payload["to"])
        status_map = {
            TaskState.APPROVED_YES: AnswerStatus.VERIFIED,
            TaskState.AWAITING_CORRECTION: AnswerStatus.MARKED_INCORRECT,
            TaskState.CORRECTED_DONE: AnswerStatus.CORRECTED,
        }
        if to_state in status_map:
            self.answer_status[task.answer_id] = status_map[to_state]

    # -- dispatch

    def _dispatch(self, action: OutboundAction, context: dict) -> str:
        recipient_id = context.get("recipient_id", "")
        for wire in render_outbound(action):
            self._commit(
                ev.OUTBOUND_DISPATCHED,
                {
                    "payload": wire,
                    "recipient_id": recipient_id,
                    "at": self.clock.now().isoformat(),
                    "context": {k: v for k, v in context.items() if k != "recipient_id"},
                },
            )
            if self.sink is not None:
                self.sink(wire)
        return action.message_id

    def _send_text(
        self,
        profile: UserProfile,
        english_text: str,
        *,
        want_audio: bool = False,
        tagged_target: Optional[str] = None,
        context: Optional[dict] = None,
    ) -> str:
        """Localize (seekers only; experts are English-only) and send."""
        context = dict(context or {})
        context["recipient_id"] = profile.user_id
        if len(english_text) > TEXT_LIMIT:
            english_text = self.gateway.shorten(english_text)
        target_lang = profile.language if profile.is_seeker else LanguageCode.EN
        text, audio = self.language.localize_outbound(
            english_text, target_lang, want_audio
        )
        if len(text) > TEXT_LIMIT:  # localization may inflate; keep the wire legal
            text = truncate_sentences(text, TEXT_LIMIT)
        message_id = self.ids.new_id()
        kind = ActionKind.TAGGED_REPLY if tagged_target else ActionKind.SEND_TEXT
        self._dispatch(
            OutboundAction(
                kind=kind,
                recipient=profile.channel_address,
                message_id=message_id,
                body=text,
                target_message_id=tagged_target,
            ),
            context,
        )
        if audio is not None:
            self._dispatch(
                OutboundAction(
                    kind=ActionKind.SEND_AUDIO,
                    recipient=profile.channel_address,
                    message_id=self.ids.new_id(),
                    body="",
                    audio=audio,
                ),
                {**context, "role": context.get("role", "") + "_audio"},
            )
        return message_id

    def _set_reaction(self, profile: UserProfile, target_message_id: str, icon: IconState, context: dict) -> None:
        self._dispatch(
            OutboundAction(
                kind=ActionKind.SET_REACTION,
                recipient=profile.channel_address,
                message_id=self.ids.new_id(),
                body=icon.value,
                target_message_id=target_message_id,
            ),
            {**context, "recipient_id": profile.user_id},
        )

    # -- webhook entry point

    def handle_webhook(self, payload: dict) -> list[ReplyOutcome]:
        message = parse_webhook(payload)
        with self._lock:
            now = self.clock.now()
            profile = self.directory.by_address(message.sender)
            if profile is None:
                self._commit(
                    ev.INBOUND_RECEIVED,
                    {
                        "message_id": message.message_id,
                        "sender_address": message.sender,
                        "inbound_kind": message.kind.value,
                        "at": now.isoformat(),
                    },
                )
                logger.warning("inbound from unknown address %s", message.sender)
                return [ReplyOutcome(kind="unknown_sender")]
            if profile.is_seeker:
                return [self._handle_seeker_inbound(profile, message, now)]
            return [self._handle_expert_inbound(profile, message, now)]

    # -- seeker flow

    def _record_inbound(
        self,
        profile: UserProfile,
        message: InboundMessage,
        now: datetime,
        *,
        original_text: str = "",
        english_text: str = "",
        modality: str = "",
        audio_ref: Optional[str] = None,
        task_id: Optional[str] = None,
    ) -> None:
        self._commit(
            ev.INBOUND_RECEIVED,
            {
                "message_id": message.message_id,
                "sender_id": profile.user_id,
                "sender_address": message.sender,
                "inbound_kind": message.kind.value,
                "original_text": original_text,
                "english_text": english_text,
                "modality": modality,
                "audio_ref": audio_ref,
                "button_label": message.button_label,
                "suggestion_index": message.suggestion_index,
                "task_id": task_id,
                "at": now.isoformat(),
            },
        )

    def _handle_seeker_inbound(
        self, profile: UserProfile, message: InboundMessage, now: datetime
    ) -> ReplyOutcome:
        if not self.directory.is_active_seeker(profile, now):
            self._record_inbound(
                profile, message, now, original_text=message.body, modality="",
            )
            self._send_text(profile, ACCESS_ENDED_TEXT, context={"role": "notice"})
            return ReplyOutcome(kind="access_ended")

        if message.kind is InboundKind.TEXT:
            command = message.body.strip().lower().rstrip(".!?")
            if command == "change language":
                self._record_inbound(
                    profile, message, now,
                    original_text=message.body, modality=Modality.TEXT.value,
                )
                self._send_text(profile, LANGUAGE_MENU_TEXT, context={"role": "notice"})
                return ReplyOutcome(kind="language_menu")
            if command in _LANGUAGE_NAMES:
                self._record_inbound(
                    profile, message, now,
                    original_text=message.body, modality=Modality.TEXT.value,
                )
                updated = self.onboarding.set_language(
                    profile.user_id, _LANGUAGE_NAMES[command]
                )
                self._send_text(
                    updated, LANGUAGE_CONFIRMED_TEXT, context={"role": "notice"}
                )
                return ReplyOutcome(kind="language_changed")

        try:
            inbound = self._normalize(profile, message)
        except TranscriptionFailure:
            self._record_inbound(
                profile, message, now, modality=Modality.AUDIO.value,
                audio_ref=self.language.store_audio(message.audio or b""),
            )
            self._send_text(profile, AUDIO_RETRY_NOTICE, context={"role": "notice"})
            return ReplyOutcome(kind="transcription_failed")
        except TranslationFailure:
            self._record_inbound(
                profile, message, now,
                original_text=message.body, modality=Modality.TEXT.value,
            )
            self._send_text(profile, TEXT_RETRY_NOTICE, context={"role": "notice"})
            return ReplyOutcome(kind="translation_failed")

        self._record_inbound(
            profile,
            message,
            now,
            original_text=inbound.original_text,
            english_text=inbound.english_text,
            modality=inbound.original_modality.value,
            audio_ref=inbound.audio_ref,
        )
        return self._answer_query(profile, message, inbound, now)

    def _normalize(self, profile: UserProfile, message: InboundMessage):
        if message.kind is InboundKind.TEXT:
            return self.language.normalize_text(profile, message.body)
        if message.kind is InboundKind.AUDIO:
            return self.language.normalize_audio(profile, message.audio or b"")
        if message.kind is InboundKind.SUGGESTION_PICK:
            set_id = message.context_message_id or self.last_suggestions_for(
                profile.user_id
            )
            suggestion_set = self.conversations.suggestion_sets.get(set_id or "")
            if suggestion_set is None:
                raise TranslationFailure("no suggestion set to resolve the tap")
            index = (message.suggestion_index or 1) - 1
            english = suggestion_set["english"][index]
            label = suggestion_set["labels"][index]
            return self.language.normalize_tap(profile, english, label)
        raise TranslationFailure(f"unsupported seeker message kind {message.kind}")

    def last_suggestions_for(self, seeker_id: str) -> Optional[str]:
        return self.conversations.last_suggestions.get(seeker_id)

    def _answer_query(
        self,
        profile: UserProfile,
        message: InboundMessage,
        inbound,
        now: datetime,
    ) -> ReplyOutcome:
        history = self.conversations.history_for(profile.user_id)
        try:
            result = self.store.search(inbound.english_text, k=self.config.retrieval_k)
            raw_texts = [s.chunk.text for s in result.raw_chunks]
            faq_texts = [s.chunk.text for s in result.faq_chunks]
            generation = self.gateway.answer_query(
                inbound.english_text, raw_texts, faq_texts, history
            )
        except (ProviderFailure, EmbeddingProviderFailure) as exc:
            logger.error("answer generation failed: %s", exc)
            self._send_text(profile, TRY_AGAIN_NOTICE, context={"role": "notice"})
            return ReplyOutcome(kind="provider_failure")

        query_id = self.ids.new_id()
        self._commit(
            ev.QUERY_RECORDED,
            {
                "query_id": query_id,
                "seeker_id": profile.user_id,
                "original_text": inbound.original_text,
                "modality": inbound.original_modality.value,
                "english_text": inbound.english_text,
                "query_type": generation.query_type.value,
                "asked_at": now.isoformat(),
                "conversation_id": profile.user_id,
            },
        )

        needs_verification = generation.query_type in TRACK_FOR_QUERY_TYPE
        citations: tuple[str, ...] = ()
        related: tuple[str, ...] = ()
        if needs_verification and not generation.is_unknown:
            seen: list[str] = []
            for scored in result.all_chunks():
                if scored.chunk.doc_id not in seen:
                    seen.append(scored.chunk.doc_id)
            citations = tuple(seen)
        if needs_verification:
            related = tuple(
                self.gateway.related_questions(
                    inbound.english_text, generation.english_answer
                )
            )

        answer_id = self.ids.new_id()
        self._commit(
            ev.ANSWER_RECORDED,
            {
                "answer_id": answer_id,
                "query_id": query_id,
                "seeker_id": profile.user_id,
                "english_answer": generation.english_answer,
                "citations": list(citations),
                "is_unknown": generation.is_unknown,
                "related_questions": list(related),
            },
        )

        want_audio = inbound.original_modality is Modality.AUDIO
        answer_message_id = self._send_text(
            profile,
            generation.english_answer,
            want_audio=want_audio,
            context={"role": "answer", "query_id": query_id, "answer_id": answer_id},
        )

        task_id: Optional[str] = None
        if needs_verification:
            self._set_reaction(
                profile,
                answer_message_id,
                icon_for(AnswerStatus.UNVERIFIED),
                {"role": "answer_status", "query_id": query_id},
            )
            self._offer_suggestions(profile, related, query_id)
            task = self._open_verification(
                profile, query_id, answer_id, generation.query_type,
                answer_message_id, now,
            )
            task_id = task.task_id
        return ReplyOutcome(
            kind="seeker_reply", query_id=query_id, answer_id=answer_id, task_id=task_id
        )

    def _offer_suggestions(
        self, profile: UserProfile, english: tuple[str, ...], query_id: str
    ) -> None:
        labels = []
        for question in english:
            localized, _ = self.language.localize_outbound(
                question, profile.language, False
            )
            labels.append(truncate_label(localized))
        message_id = self.ids.new_id()
        self._commit(
            ev.SUGGESTIONS_OFFERED,
            {
                "message_id": message_id,
                "seeker_id": profile.user_id,
                "english": list(english),
                "labels": labels,
                "query_id": query_id,
            },
        )
        self._dispatch(
            OutboundAction(
                kind=ActionKind.SUGGESTION_LIST,
                recipient=profile.channel_address,
                message_id=message_id,
                suggestions=tuple(labels),
            ),
            {"role": "suggestions", "query_id": query_id, "recipient_id": profile.user_id},
        )

    def _assign_experts(self, track: Track, seeker_id: str) -> tuple[str, str]:
        profile = self.directory.get(seeker_id)
        if track is Track.DOCTOR:
            escalation = self.config.expert_by_role(Role.ESCALATION_DOCTOR)
            return profile.operating_doctor_id, escalation.user_id
        escalation = self.config.expert_by_role(Role.ESCALATION_COORDINATOR)
        return profile.operating_coordinator_id, escalation.user_id

    def _open_verification(
        self,
        seeker: UserProfile,
        query_id: str,
        answer_id: str,
        query_type: QueryType,
        answer_message_id: str,
        now: datetime,
    ) -> VerificationTask:
        track = TRACK_FOR_QUERY_TYPE[query_type]
        operating_id, escalation_id = self._assign_experts(track, seeker.user_id)
        task = self.workflow.create_task(
            query_id=query_id,
            answer_id=answer_id,
            seeker_id=seeker.user_id,
            track=track,
            operating_expert_id=operating_id,
            escalation_expert_id=escalation_id,
            answer_message_id=answer_message_id,
            now=now,
        )
        self._send_verification_prompt(task, operating_id)
        return task

    def _verification_body(self, task: VerificationTask) -> str:
        """Question first, then the bot's answer with citations, then the
        seeker context; composed to fit the channel's text limit."""
        query = self.queries[task.query_id]
        answer = self.answers[task.answer_id]
        seeker = self.directory.get(task.seeker_id)
        citation_line = ", ".join(answer.citations) if answer.citations else "none"
        skeleton = (
            "Question: {q}\n\n"
            "Bot answer: {a}\n\n"
            f"Citations: {citation_line}\n\n"
            f"Patient: {seeker.display_demographics or 'n/a'}\n\n"
            f"{VERIFICATION_PROMPT}"
        )
        overhead = len(skeleton.format(q=query.english_text, a=""))
        answer_budget = TEXT_LIMIT - overhead
        answer_text = answer.english_answer
        if len(answer_text) > answer_budget:
            answer_text = truncate_sentences(answer_text, max(answer_budget, 40))
        body = skeleton.format(q=query.english_text, a=answer_text)
        if len(body) > TEXT_LIMIT:
            body = truncate_sentences(body, TEXT_LIMIT)
        return body

    def _send_verification_prompt(self, task: VerificationTask, expert_id: str) -> str:
        expert = self.directory.get(expert_id)
        reroute_label = (
            BUTTON_TO_COORDINATOR if task.track is Track.DOCTOR else BUTTON_TO_DOCTOR
        )
        message_id = self.ids.new_id()
        self._dispatch(
            OutboundAction(
                kind=ActionKind.BUTTON_MENU,
                recipient=expert.channel_address,
                message_id=message_id,
                body=self._verification_body(task),
                buttons=(BUTTON_YES, BUTTON_NO, reroute_label),
            ),
            {
                "role": "verification_prompt",
                "task_id": task.task_id,
                "recipient_id": expert_id,
            },
        )
        # the expert's own view starts as pending (question mark)
        self._set_reaction(
            expert,
            message_id,
            IconState.QUESTION_MARK,
            {"role": "prompt_status", "task_id": task.task_id},
        )
        return message_id

    # -- expert flow

    def _handle_expert_inbound(
        self, profile: UserProfile, message: InboundMessage, now: datetime
    ) -> ReplyOutcome:
        if message.kind is InboundKind.BUTTON_PRESS:
            task_id = None
            if message.context_message_id:
                task_id = self.prompt_tasks.get(message.context_message_id)
            if task_id is None:
                actionable = self.workflow.actionable_tasks(profile.user_id)
                if actionable:
                    task_id = actionable[0].task_id
                else:
                    latest = self.workflow.latest_visible_task(profile.user_id)
                    task_id = latest.task_id if latest else None
            self._record_inbound(profile, message, now, task_id=task_id)
            if task_id is None:
                self._send_text(profile, NO_ACTIONABLE_TASK, context={"role": "notice"})
                return ReplyOutcome(kind="no_actionable_task")
            decision = _DECISION_FOR_LABEL[message.button_label]
            return self.submit_decision(profile.user_id, task_id, decision, now)

        if message.kind is InboundKind.TEXT:
            pending = self.workflow.correction_tasks(profile.user_id)
            if not pending:
                self._record_inbound(
                    profile, message, now, original_text=message.body,
                    modality=Modality.TEXT.value,
                )
                self._send_text(
                    profile, NO_CORRECTION_PENDING, context={"role": "notice"}
                )
                return ReplyOutcome(kind="no_correction_pending")
            task = pending[0]
            self._record_inbound(
                profile, message, now, original_text=message.body,
                modality=Modality.TEXT.value, task_id=task.task_id,
            )
            return self.submit_correction(
                profile.user_id, task.task_id, message.body, now
            )

        self._record_inbound(profile, message, now)
        self._send_text(
            profile,
            "Please use the buttons to verify, or reply with text to correct.",
            context={"role": "notice"},
        )
        return ReplyOutcome(kind="unsupported_expert_message")

    def submit_decision(
        self, expert_id: str, task_id: str, decision: Decision, now: datetime
    ) -> ReplyOutcome:
        try:
            result = self.workflow.submit_decision(expert_id, task_id, decision, now)
        except WorkflowError as exc:
            logger.info("decision rejected: %s", exc)
            if type(exc).__name__ == "RerouteDisabled":
                self._send_text(
                    self.directory.get(expert_id),
                    REROUTE_DISABLED_NOTICE,
                    context={"role": "notice"},
                )
            return ReplyOutcome(
                kind="decision_rejected", task_id=task_id,
                error=type(exc).__name__,
            )
        task = result.task
        if result.outcome is Outcome.ALREADY_DECIDED:
            # first terminal decision wins; no side effects for the loser
            return ReplyOutcome(
                kind="decision", task_id=task_id, state=task.state.value,
                error="AlreadyDecided",
            )

        seeker = self.directory.get(task.seeker_id)
        if decision is Decision.YES:
            self._set_reaction(
                seeker, task.answer_message_id,
                icon_for(AnswerStatus.VERIFIED),
                {"role": "answer_status", "task_id": task.task_id},
            )
            self._send_text(
                seeker,
                VERIFIED_NOTICE,
                tagged_target=task.answer_message_id,
                context={"role": "verified_notice", "task_id": task.task_id},
            )
            self._mark_expert_prompts_done(task)
        elif decision is Decision.NO:
            self._set_reaction(
                seeker, task.answer_message_id,
                icon_for(AnswerStatus.MARKED_INCORRECT),
                {"role": "answer_status", "task_id": task.task_id},
            )
            self._send_text(
                seeker,
                AWAIT_CORRECTION_NOTICE,
                tagged_target=task.answer_message_id,
                context={"role": "await_correction_notice", "task_id": task.task_id},
            )
            expert = self.directory.get(expert_id)
            prompt_id = self.task_prompts.get(task.task_id, {}).get(expert_id)
            self._send_text(
                expert,
                CORRECTION_ASK,
                tagged_target=prompt_id,
                context={"role": "correction_ask", "task_id": task.task_id},
            )
        else:  # reroute
            self._mark_expert_prompts_done(task)
            assert result.successor is not None
            self._send_verification_prompt(
                result.successor, result.successor.operating_expert_id
            )
        return ReplyOutcome(
            kind="decision", task_id=task.task_id, state=task.state.value
        )

    def _mark_expert_prompts_done(self, task: VerificationTask) -> None:
        for expert_id, message_id in self.task_prompts.get(task.task_id, {}).items():
            expert = self.directory.get(expert_id)
            self._set_reaction(
                expert, message_id, IconState.GREEN_TICK,
                {"role": "prompt_status", "task_id": task.task_id},
            )

    def submit_correction(
        self, expert_id: str, task_id: str, correction: str, now: datetime
    ) -> ReplyOutcome:
        try:
            task = self.workflow.validate_correction(expert_id, task_id)
            query = self.queries[task.query_id]
            answer = self.answers[task.answer_id]
            final = self.gateway.merge_correction(
                query.english_text, answer.english_answer, correction
            )
            if len(final) > TEXT_LIMIT:
                final = self.gateway.shorten(final)
            task = self.workflow.apply_correction(
                expert_id, task_id, correction, final, now
            )
        except WorkflowError as exc:
            logger.info("correction rejected: %s", exc)
            return ReplyOutcome(
                kind="correction_rejected", task_id=task_id, error=type(exc).__name__
            )
        except ProviderFailure:
            self._send_text(
                self.directory.get(expert_id),
                "Sorry, the correction could not be processed. Please resend it.",
                context={"role": "notice"},
            )
            return ReplyOutcome(kind="provider_failure", task_id=task_id)

        seeker = self.directory.get(task.seeker_id)
        query = self.queries[task.query_id]
        want_audio = query.original_modality is Modality.AUDIO
        corrected_message_id = self._send_text(
            seeker,
            task.final_answer or "",
            want_audio=want_audio,
            tagged_target=task.answer_message_id,
            context={"role": "corrected_answer", "task_id": task.task_id},
        )
        self._set_reaction(
            seeker, corrected_message_id,
            icon_for(AnswerStatus.CORRECTED),
            {"role": "answer_status", "task_id": task.task_id},
        )
        # the merged answer is not echoed back to the deciding expert
        self._mark_expert_prompts_done(task)
        return ReplyOutcome(
            kind="correction", task_id=task.task_id, state=task.state.value
        )

    # -- onboarding

    def onboard(self, form: OnboardingForm) -> list[str]:
        with self._lock:
            now = self.clock.now()
            profiles = self.onboarding.register(form, now)
            for profile in profiles:
                self._send_text(profile, WELCOME_TEXT, context={"role": "welcome"})
                self._offer_suggestions(
                    profile, tuple(self.config.starter_faqs), query_id=""
                )
            return [p.user_id for p in profiles]

    # -- scheduler

    def poll(self, now: Optional[datetime] = None) -> None:
        """One driver pass: verification timers, seeker reminders, KB jobs."""
        with self._lock:
            now = now or self.clock.now()
            for due in self.workflow.tick(now):
                self._execute_due(due)
            for seeker_due in self.onboarding.due_notifications(now):
                if seeker_due.kind == "reminder":
                    for seeker_id in seeker_due.seeker_ids:
                        profile = self.directory.get(seeker_id)
                        self._send_text(
                            profile, SEEKER_REMINDER_TEXT,
                            context={"role": "seeker_reminder"},
                        )
            self.kb.tick(now)

    def next_due(self, now: datetime) -> Optional[datetime]:
        candidates = [
            engine.next_due(now)
            for engine in (self.workflow, self.onboarding, self.kb)
        ]
        future = [c for c in candidates if c is not None]
        return min(future) if future else None

    def advance_to(self, target: datetime) -> None:
        """Step a virtual clock through every scheduled firing up to target."""
        clock = self.clock
        if not hasattr(clock, "set"):
            raise TypeError("advance_to requires a virtual clock")
        while True:
            upcoming = self.next_due(clock.now())
            if upcoming is None or upcoming > target:
                break
            clock.set(upcoming)
            self.poll(upcoming)
        if clock.now() < target:
            clock.set(target)
        self.poll(target)

    def _execute_due(self, due: DueEvent) -> None:
        if due.kind is DueKind.ESCALATE:
            task = self.workflow.tasks[due.task_id]
            self._send_verification_prompt(task, task.escalation_expert_id)
        elif due.kind is DueKind.PENDING_REMINDER:
            task = self.workflow.tasks[due.task_id]
            query = self.queries[task.query_id]
            body = truncate_sentences(
                "Reminder: this question is still awaiting verification: "
                f"\"{query.english_text}\"",
                TEXT_LIMIT,
            )
            for expert_id in due.recipient_ids:
                expert = self.directory.get(expert_id)
                prompt_id = self.task_prompts.get(task.task_id, {}).get(expert_id)
                self._send_text(
                    expert, body, tagged_target=prompt_id,
                    context={"role": "pending_reminder", "task_id": task.task_id},
                )
        elif due.kind is DueKind.DIGEST:
            hours = int(self.workflow.reminder_delay.total_seconds() // 3600)
            for expert_id, task_ids in due.digest.items():
                lines = [f"Questions pending verification for more than {hours} hours:"]
                for position, task_id in enumerate(task_ids, 1):
                    question = self.queries[self.workflow.tasks[task_id].query_id]
                    lines.append(f"{position}. {question.english_text}")
                body = "\n".join(lines)
                if len(body) > TEXT_LIMIT:
                    body = _trim_listing(lines)
                expert = self.directory.get(expert_id)
                self._send_text(
                    expert, body, context={"role": "digest", "at": due.due_at.isoformat()},
                )

    # -- KB review surface

    def ingest_review_rows(self, rows: list[ReviewRow]) -> int:
        with self._lock:
            return len(self.kb.ingest_review(rows))

    # -- read models

    def tasks_view(
        self,
        state: Optional[str] = None,
        expert_id: Optional[str] = None,
    ) -> list[dict]:
        tasks = (
            self.workflow.tasks_for_expert(expert_id)
            if expert_id
            else sorted(
                self.workflow.tasks.values(), key=lambda t: (t.created_at, t.task_id)
            )
        )
        if state == "pending":
            tasks = [t for t in tasks if not t.is_terminal]
        elif state:
            tasks = [t for t in tasks if t.state.value == state]
        out = []
        for task in tasks:
            query = self.queries.get(task.query_id)
            answer = self.answers.get(task.answer_id)
            seeker = self.directory.maybe_get(task.seeker_id)
            reroute_label = (
                BUTTON_TO_COORDINATOR if task.track is Track.DOCTOR else BUTTON_TO_DOCTOR
            )
            out.append(
                {
                    "task_id": task.task_id,
                    "query_id": task.query_id,
                    "answer_id": task.answer_id,
                    "state": task.state.value,
                    "track": task.track.value,
                    "question": query.english_text if query else "",
                    "bot_answer": answer.english_answer if answer else "",
                    "citations": list(answer.citations) if answer else [],
                    "is_unknown": answer.is_unknown if answer else False,
                    "demographics": seeker.display_demographics if seeker else "",
                    "operating_expert_id": task.operating_expert_id,
                    "escalation_expert_id": task.escalation_expert_id,
                    "deciding_expert_id": task.deciding_expert_id,
                    "created_at": task.created_at.isoformat(),
                    "escalated_at": task.escalated_at.isoformat()
                    if task.escalated_at
                    else None,
                    "buttons": [BUTTON_YES, BUTTON_NO, reroute_label],
                    "final_answer": task.final_answer,
                    "prompt_message_ids": dict(self.task_prompts.get(task.task_id, {})),
                }
            )
        return out

    def conversation_view(self, user_id: str) -> list[dict]:
        self.directory.get(user_id)  # raises UnknownUser
        return [m.to_dict() for m in self.conversations.view(user_id)]

    def users_view(self) -> list[dict]:
        return [
            {
                "user_id": p.user_id,
                "role": p.role.value,
                "language": p.language.value,
                "channel_address": p.channel_address,
                "demographics": p.display_demographics,
                "deactivated": self.directory.is_deactivated(p.user_id),
            }
            for p in self.directory.all_profiles()
        ]

    def events_view(self, since: int = 0) -> list[dict]:
        return [
            {
                "offset": r.offset,
                "at": r.at.isoformat(),
                "kind": r.kind,
                "payload": r.payload,
            }
            for r in self.log.read_all()
            if r.offset >= since
        ]

    # -- state fingerprint (crash-recovery verification)

    def state_fingerprint(self) -> str:
        tasks = {
            t.task_id: {
                "state": t.state.value,
                "track": t.track.value,
                "query_id": t.query_id,
                "answer_id": t.answer_id,
                "operating": t.operating_expert_id,
                "escalation": t.escalation_expert_id,
                "created_at": t.created_at.isoformat(),
                "escalated_at": t.escalated_at.isoformat() if t.escalated_at else None,
                "decided_at": t.decided_at.isoformat() if t.decided_at else None,
                "corrected_at": t.corrected_at.isoformat() if t.corrected_at else None,
                "deciding": t.deciding_expert_id,
                "correction": t.correction_text,
                "final": t.final_answer,
                "reminder_sent": t.reminder_sent,
                "predecessor": t.predecessor_id,
            }
            for t in self.workflow.tasks.values()
        }
        profiles = {
            p.user_id: {
                "role": p.role.value,
                "language": p.language.value,
                "address": p.channel_address,
                "active_until": p.active_until.isoformat() if p.active_until else None,
                "deactivated": self.directory.is_deactivated(p.user_id),
            }
            for p in self.directory.all_profiles()
        }
        state = {
            "tasks": tasks,
            "profiles": profiles,
            "kb_queue": [list(entry) for entry in self.kb.queue],
            "kb_pending_rows": sorted(self.kb.pending_rows),
            "watermarks": {
                "digest": _iso(self.workflow.digest_watermark),
                "seeker_reminders": _iso(self.onboarding.reminder_watermark),
                "kb_digest": _iso(self.kb.digest_watermark),
                "kb_apply": _iso(self.kb.apply_watermark),
                "kb_cutoff": _iso(self.kb.digest_cutoff),
            },
        }
        canonical = json.dumps(state, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _iso(value: Optional[datetime]) -> Optional[str]:
    return value.isoformat() if value else None


def _trim_listing(lines: list[str]) -> str:
    """Drop overflow digest lines, appending a count of what was cut."""
    kept = [lines[0]]
    used = len(lines[0])
    dropped = 0
    for line in lines[1:]:
        if dropped == 0 and used + 1 + len(line) <= TEXT_LIMIT - 40:
            kept.append(line)
            used += 1 + len(line)
        else:
            dropped += 1
    kept.append(f"...and {dropped} more.")
    return "\n".join(kept)
