"""Inbound normalization and outbound localization.

Inbound: transcribe audio, translate Indic-language text to English.
Outbound: translate English back to the seeker's language and synthesize
speech for voice-initiated exchanges. Providers sit behind small protocols
with dictionary/identity mocks so routing logic tests stay deterministic.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

from .model import LanguageCode, Modality, UserProfile

logger = logging.getLogger(__name__)

TRANSLATION_APOLOGY = (
    "Sorry, we could not translate this message into your language."
)
AUDIO_RETRY_NOTICE = (
    "Sorry, we could not understand the audio. Please type your question instead."
)


class TranslationFailure(RuntimeError):
    pass


class TranscriptionFailure(RuntimeError):
    pass


class SynthesisFailure(RuntimeError):
    pass


class TranslationProvider(Protocol):
    def translate(self, text: str, source: LanguageCode, target: LanguageCode) -> str: ...


class SpeechToTextProvider(Protocol):
    def transcribe(self, audio: bytes, language: LanguageCode) -> str: ...


class TextToSpeechProvider(Protocol):
    def synthesize(self, text: str, language: LanguageCode) -> bytes: ...


@dataclass(frozen=True)
class NormalizedInbound:
    english_text: str
    original_text: str
    original_language: LanguageCode
    original_modality: Modality
    audio_ref: Optional[str] = None

    def __post_init__(self):
        if self.original_modality is Modality.AUDIO and not self.audio_ref:
            raise ValueError("audio inbound must retain an audio_ref")
        if self.original_language is LanguageCode.EN and (
            self.english_text != self.original_text
        ):
            raise ValueError("English inbound must pass through unchanged")


class DictionaryTranslator:
    """Phrase-dictionary mock translator.

    The fixture file maps exact phrases between EN and each Indic language.
    Unknown phrases either pass through tagged with the target-language
    marker (default) or raise TranslationFailure (`on_missing="fail"`),
    letting tests exercise the declared fallback paths.
    """

    def __init__(self, phrases: dict | None = None, on_missing: str = "tag"):
        if on_missing not in ("tag", "fail"):
            raise ValueError("on_missing must be 'tag' or 'fail'")
        self._on_missing = on_missing
        # {(source, target): {text: translated}}
        self._table: dict[tuple[str, str], dict[str, str]] = {}
        if phrases:
            for lang, pairs in phrases.items():
                for english, localized in pairs.items():
                    self._table.setdefault(("EN", lang), {})[english] = localized
                    self._table.setdefault((lang, "EN"), {})[localized] = english

    @classmethod
    def from_file(cls, path: Path, on_missing: str = "tag") -> "DictionaryTranslator":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), on_missing)

    def translate(self, text: str, source: LanguageCode, target: LanguageCode) -> str:
        if source is target:
            return text
        hit = self._table.get((source.value, target.value), {}).get(text)
        if hit is not None:
            return hit
        if self._on_missing == "fail":
            raise TranslationFailure(f"no {source.value}->{target.value} entry")
        return f"[{target.value.lower()}] {text}"


class FixtureTranscriber:
    """Maps named audio fixtures (the payload bytes) to transcripts."""

    def __init__(self, fixtures: dict[str, str] | None = None):
        self._fixtures = dict(fixtures or {})

    @classmethod
    def from_file(cls, path: Path) -> "FixtureTranscriber":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def transcribe(self, audio: bytes, language: LanguageCode) -> str:
        key = audio.decode("utf-8", errors="replace")
        if key not in self._fixtures:
            raise TranscriptionFailure(f"no transcript fixture for {key!r}")
        return self._fixtures[key]


class MarkerSynthesizer:
    """Deterministic TTS stand-in: emits a tagged byte blob per text."""

    def synthesize(self, text: str, language: LanguageCode) -> bytes:
        return f"[tts:{language.value.lower()}] {text}".encode("utf-8")


class AudioStore:
    """Content-addressed audio artifacts; the handle is the content hash."""

    def __init__(self, directory: Path):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)

    def put(self, audio: bytes) -> str:
        handle = hashlib.sha256(audio).hexdigest()
        path = self._dir / handle
        if not path.exists():
            path.write_bytes(audio)
        return handle

    def get(self, handle: str) -> bytes:
        return (self._dir / handle).read_bytes()


class LanguageService:
    def __init__(
        self,
        translator: TranslationProvider,
        transcriber: SpeechToTextProvider,
        synthesizer: TextToSpeechProvider,
        audio_store: AudioStore,
    ):
        self._translator = translator
        self._transcriber = transcriber
        self._synthesizer = synthesizer
        self._audio = audio_store

    def _to_english(self, text: str, source: LanguageCode) -> str:
        if source is LanguageCode.EN:
            return text
        try:
            return self._translator.translate(text, source, LanguageCode.EN)
        except TranslationFailure:
            logger.warning("inbound translation failed once, retrying")
            return self._translator.translate(text, source, LanguageCode.EN)

    def normalize_text(self, sender: UserProfile, text: str) -> NormalizedInbound:
        return NormalizedInbound(
            english_text=self._to_english(text, sender.language),
            original_text=text,
            original_language=sender.language,
            original_modality=Modality.TEXT,
        )

    def normalize_audio(self, sender: UserProfile, audio: bytes) -> NormalizedInbound:
        """Transcribe in the sender's language, then translate to English.

        The raw audio is retained so an expert can request the original
        recording later; the handle rides along on the inbound record.
        """
        handle = self._audio.put(audio)
        original = self._transcriber.transcribe(audio, sender.language)
        return NormalizedInbound(
            english_text=self._to_english(original, sender.language),
            original_text=original,
            original_language=sender.language,
            original_modality=Modality.AUDIO,
            audio_ref=handle,
        )

    def normalize_tap(self, sender: UserProfile, english_text: str, label: str) -> NormalizedInbound:
        # taps resolve to the stored English suggestion text; no round-trip
        return NormalizedInbound(
            english_text=english_text,
            original_text=label if sender.language is not LanguageCode.EN else english_text,
            original_language=sender.language,
            original_modality=Modality.TAP,
        )

    def localize_outbound(
        self, english_text: str, target: LanguageCode, want_audio: bool
    ) -> tuple[str, Optional[bytes]]:
        if len(english_text) > 700:
            raise ValueError("localize_outbound expects pre-shortened text")
        if target is LanguageCode.EN:
            text = english_text
        else:
            try:
                text = self._translator.translate(english_text, LanguageCode.EN, target)
            except TranslationFailure:
                logger.warning("outbound translation to %s failed", target.value)
                return f"{english_text}\n{TRANSLATION_APOLOGY}", None
        audio: Optional[bytes] = None
        if want_audio:
            try:
                audio = self._synthesizer.synthesize(text, target)
            except SynthesisFailure:
                logger.warning("speech synthesis failed; sending text only")
                audio = None
        return text, audio

    def store_audio(self, audio: bytes) -> str:
        return self._audio.put(audio)

    def fetch_audio(self, handle: str) -> bytes:
        return self._audio.get(handle)
