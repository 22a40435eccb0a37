"""Dialogue rewriting: prompt construction, chat backends, and rewrite parsing.

Two rewrite flows exist. The empathy flow ("er") rewrites only the doctor
response into a compassionate reply. The emotional flow ("eqsr") rewrites the
patient query to carry one of five negative emotions and the doctor response
to soothe it. Both run against a chat-completion backend; a deterministic
mock backend makes the whole pipeline runnable offline.
"""

from __future__ import annotations

import hashlib
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import requests

from .corpus import Dialogue, DatasetError, EmotionTag, EMOTIONS, ERExample, EQSRExample

API_URL_VAR = "ALIGNFORGE_API_URL"
API_KEY_VAR = "ALIGNFORGE_API_KEY"

REWRITE_SYSTEM_PROMPT = "You rewrite medical dialogues. Follow the formatting instructions exactly."

EQSR_TEMPLATE_TEXT = """\
You will be given a dialogue between a patient and a doctor. Please rewrite \
the patient's question ensuring that it retains the original information \
while expressing a sense of {emotion}. At the same time, rewrite the \
doctor's response to retain the original information while soothing the \
patient's negative feelings.

Respond with exactly two sections labeled PATIENT: and DOCTOR:.

PATIENT: {patient_query}
DOCTOR: {doctor_response}"""

ER_TEMPLATE_TEXT = """\
You will be given a dialogue between a patient and a doctor. Please rewrite \
only the doctor's response so that it exhibits empathy and compassion while \
retaining the medical knowledge of the original. Keep the patient's question \
unchanged.

Respond with exactly one section labeled DOCTOR:.

PATIENT: {patient_query}
DOCTOR: {doctor_response}"""


@dataclass(frozen=True)
class PromptTemplate:
    """A rewrite prompt with named placeholders, validated per rewrite kind."""

    template_text: str
    kind: str  # "er" | "eqsr"

    def __post_init__(self) -> None:
        if self.kind not in ("er", "eqsr"):
            raise ValueError(f"kind must be 'er' or 'eqsr', got {self.kind!r}")
        has_emotion = "{emotion}" in self.template_text
        if self.kind == "eqsr" and not has_emotion:
            raise ValueError("eqsr template must contain the {emotion} placeholder")
        if self.kind == "er" and has_emotion:
            raise ValueError("er template must not contain the {emotion} placeholder")
        for placeholder in ("{patient_query}", "{doctor_response}"):
            if placeholder not in self.template_text:
                raise ValueError(f"template must contain the {placeholder} placeholder")


EQSR_TEMPLATE = PromptTemplate(EQSR_TEMPLATE_TEXT, "eqsr")
ER_TEMPLATE = PromptTemplate(ER_TEMPLATE_TEXT, "er")


def build_eqsr_prompt(
    dialogue: Dialogue, emotion: EmotionTag, template: PromptTemplate = EQSR_TEMPLATE
) -> str:
    """Render the emotional-rewrite prompt for one dialogue and emotion."""
    if template.kind != "eqsr":
        raise ValueError("template kind must be 'eqsr'")
    return template.template_text.format(
        emotion=emotion.value,
        patient_query=dialogue.patient_query,
        doctor_response=dialogue.doctor_response,
    )


def build_er_prompt(dialogue: Dialogue, template: PromptTemplate = ER_TEMPLATE) -> str:
    """Render the empathy-rewrite prompt for one dialogue."""
    if template.kind != "er":
        raise ValueError("template kind must be 'er'")
    return template.template_text.format(
        patient_query=dialogue.patient_query,
        doctor_response=dialogue.doctor_response,
    )


def assign_emotions(n: int, seed: int) -> list[EmotionTag]:
    """Balanced emotion assignment: each tag used floor(n/5) or ceil(n/5) times."""
    if n < 0:
        raise ValueError("n must be >= 0")
    tags = [EMOTIONS[i % len(EMOTIONS)] for i in range(n)]
    random.Random(seed).shuffle(tags)
    return tags


@dataclass(frozen=True)
class RewriteResult:
    """Parsed model output; failures are carried in ``ok``, never raised."""

    raw: str
    parsed_query: Optional[str]
    parsed_response: str
    ok: bool


_BLOCK_RE = re.compile(r"^(PATIENT|DOCTOR):[ \t]*", re.MULTILINE)


def _labeled_blocks(text: str) -> dict[str, str]:
    """Extract line-anchored PATIENT:/DOCTOR: blocks; later blocks win."""
    matches = list(_BLOCK_RE.finditer(text))
    blocks: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        blocks[m.group(1)] = text[m.end() : end].strip()
    return blocks


def parse_rewrite(raw: str, kind: str) -> RewriteResult:
    """Pull the last PATIENT: (eqsr only) and last DOCTOR: block out of raw output."""
    if kind not in ("er", "eqsr"):
        raise ValueError(f"kind must be 'er' or 'eqsr', got {kind!r}")
    blocks = _labeled_blocks(raw)
    response = blocks.get("DOCTOR", "")
    query = blocks.get("PATIENT", "") if kind == "eqsr" else None
    ok = bool(response) and (kind == "er" or bool(query))
    return RewriteResult(raw=raw, parsed_query=query or None, parsed_response=response, ok=ok)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    max_tokens: Optional[int] = None


class ChatClient(Protocol):
    """Chat-completion backend; must be safe to call from multiple threads."""

    def complete(self, system: str, user: str, params: GenerationParams) -> str: ...


class ChatClientError(RuntimeError):
    """Base class for chat backend failures."""


class ChatAuthError(ChatClientError):
    """Authentication/credential failure; never retried."""


class ChatTransportError(ChatClientError):
    """Transient transport or protocol failure; retried with backoff."""


class HttpChatClient:
    """Minimal chat-completion HTTP client (OpenAI-style wire format)."""

    def __init__(self, url: str, api_key: str, model: str, timeout: float = 60.0):
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self._session = requests.Session()

    @classmethod
    def from_env(cls, model: str, timeout: float = 60.0) -> "HttpChatClient":
        url = os.environ.get(API_URL_VAR, "")
        key = os.environ.get(API_KEY_VAR, "")
        if not url or not key:
            raise ChatAuthError(
                f"network backend needs credentials: set {API_URL_VAR} and {API_KEY_VAR}"
            )
        return cls(url=url, api_key=key, model=model, timeout=timeout)

    def complete(self, system: str, user: str, params: GenerationParams) -> str:
        payload: dict = {
            "model": self.model,
            "temperature": params.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        if params.max_tokens is not None:
            payload["max_tokens"] = params.max_tokens
        headers = {"Authorization": f"Bearer {self.api_key}"}
        try:
            resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ChatTransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise ChatAuthError(f"authentication failed (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise ChatTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ChatTransportError(f"unexpected response shape: {exc}") from exc


# Phrase lexicons for the offline mock backend. The soothing phrases share the
# "I understand." opener so a small model trained on mock rewrites converges on
# a stable comforting register.
EMOTION_QUERY_PREFIXES: dict[EmotionTag, tuple[str, ...]] = {
    EmotionTag.FEAR: (
        "I'm really scared, ",
        "I'm terrified something is wrong, ",
        "It frightens me so much, ",
        "I'm too afraid to sleep, ",
    ),
    EmotionTag.ANXIETY: (
        "I can't stop worrying, ",
        "My mind keeps racing over this, ",
        "I'm so on edge about it, ",
        "I feel panicky all day, ",
    ),
    EmotionTag.EMBARRASSMENT: (
        "This is awkward to ask, ",
        "I'm too ashamed to say it aloud, ",
        "I blush even writing this, ",
        "Please don't laugh at me, ",
    ),
    EmotionTag.FRUSTRATION: (
        "I'm fed up with this, ",
        "Nothing I try helps, ",
        "I'm at my wits' end, ",
        "It's maddening to deal with, ",
    ),
    EmotionTag.DISTRUST: (
        "I doubt anyone can help, ",
        "I can't trust advice anymore, ",
        "Everyone tells me something different, ",
        "I'm skeptical of doctors now, ",
    ),
}

SOOTHING_PREFIXES: tuple[str, ...] = (
    "I understand. Please don't worry. ",
    "I understand. You are not alone. ",
    "I understand. We will get through this together. ",
    "I understand. Take a deep breath. ",
)

EMPATHY_PREFIXES: tuple[str, ...] = (
    "I'm sorry you're going through this. ",
    "I hear you, and I want to help. ",
    "That sounds really hard to live with. ",
    "Thank you for trusting me with this; I'm with you. ",
)


def _stable_rng(seed: int, *parts: str) -> random.Random:
    digest = hashlib.sha256("\x1f".join([str(seed), *parts]).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _mock_rewrite_text(
    patient_query: str, doctor_response: str, emotion: Optional[EmotionTag], kind: str, seed: int
) -> str:
    if kind == "eqsr":
        if emotion is None:
            raise ValueError("eqsr mock rewrite requires an emotion")
        rng = _stable_rng(seed, kind, emotion.value, patient_query, doctor_response)
        query_prefix = rng.choice(EMOTION_QUERY_PREFIXES[emotion])
        soothing_prefix = rng.choice(SOOTHING_PREFIXES)
        return (
            f"PATIENT: {query_prefix}{patient_query}\n"
            f"DOCTOR: {soothing_prefix}{doctor_response}"
        )
    if kind == "er":
        if emotion is not None:
            raise ValueError("er mock rewrite takes no emotion")
        rng = _stable_rng(seed, kind, "", patient_query, doctor_response)
        empathy_prefix = rng.choice(EMPATHY_PREFIXES)
        return f"DOCTOR: {empathy_prefix}{doctor_response}"
    raise ValueError(f"kind must be 'er' or 'eqsr', got {kind!r}")


def mock_rewrite(dialogue: Dialogue, emotion: Optional[EmotionTag], kind: str, seed: int) -> str:
    """Deterministic offline rewrite: seeded phrase prefixes around the original texts."""
    return _mock_rewrite_text(dialogue.patient_query, dialogue.doctor_response, emotion, kind, seed)


_EMOTION_IN_PROMPT_RE = re.compile(
    r"expressing a sense of (" + "|".join(e.value for e in EMOTIONS) + r")"
)


class MockChatClient:
    """Offline backend: parses the dialogue back out of the prompt and rewrites it.

    Pure function of (system, user, seed), so batch runs are reproducible no
    matter how calls interleave across threads.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, system: str, user: str, params: GenerationParams) -> str:
        emotion_match = _EMOTION_IN_PROMPT_RE.search(user)
        kind = "eqsr" if emotion_match else "er"
        emotion = EmotionTag(emotion_match.group(1)) if emotion_match else None
        blocks = _labeled_blocks(user)
        query = blocks.get("PATIENT", "")
        response = blocks.get("DOCTOR", "")
        if not query or not response:
            return ""  # malformed prompt; surfaces as a parse failure upstream
        return _mock_rewrite_text(query, response, emotion, kind, self.seed)


RewriteSuccess = Union[ERExample, EQSRExample]


def _build_example(
    dialogue: Dialogue, emotion: Optional[EmotionTag], kind: str, result: RewriteResult
) -> RewriteSuccess:
    if kind == "eqsr":
        assert emotion is not None
        return EQSRExample(
            dialogue_id=dialogue.id,
            emotion=emotion,
            emotional_query=result.parsed_query or "",
            soothing_response=result.parsed_response,
            original_query=dialogue.patient_query,
            original_response=dialogue.doctor_response,
        )
    return ERExample(
        dialogue_id=dialogue.id,
        patient_query=dialogue.patient_query,
        empathetic_response=result.parsed_response,
        original_response=dialogue.doctor_response,
    )


def rewrite_batch(
    dialogues: Sequence[Dialogue],
    emotions: Optional[Sequence[EmotionTag]],
    kind: str,
    client: ChatClient,
    concurrency: int = 4,
    max_retries: int = 2,
    params: GenerationParams = GenerationParams(),
    retry_base_delay: float = 1.0,
    retry_max_delay: float = 30.0,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[RewriteSuccess], list[tuple[str, str]]]:
    """Rewrite dialogues with at most ``concurrency`` in-flight client calls.

    Each dialogue is attempted up to 1 + max_retries times on transport or
    parse failure, with exponential jittered backoff between attempts.
    Successes come back in input order; every input lands in exactly one of
    (successes, failures). Authentication errors abort the whole batch.
    """
    if kind not in ("er", "eqsr"):
        raise ValueError(f"kind must be 'er' or 'eqsr', got {kind!r}")
    if kind == "eqsr":
        if emotions is None or len(emotions) != len(dialogues):
            raise ValueError("eqsr rewriting needs one emotion per dialogue")
    elif emotions is not None:
        raise ValueError("er rewriting takes no emotions")
    if not dialogues:
        return [], []

    def attempt_one(index: int) -> tuple[bool, object]:
        dialogue = dialogues[index]
        emotion = emotions[index] if kind == "eqsr" else None
        prompt = (
            build_eqsr_prompt(dialogue, emotion) if kind == "eqsr" else build_er_prompt(dialogue)
        )
        jitter_rng = _stable_rng(0, "retry", dialogue.id)
        reason = "no attempt made"
        attempts = 1 + max_retries
        for attempt in range(1, attempts + 1):
            raw: Optional[str] = None
            try:
                raw = client.complete(REWRITE_SYSTEM_PROMPT, prompt, params)
            except ChatAuthError:
                raise
            except ChatClientError as exc:
                reason = f"transport failure: {exc}"
            if raw is not None:
                result = parse_rewrite(raw, kind)
                if result.ok:
                    try:
                        return True, _build_example(dialogue, emotion, kind, result)
                    except DatasetError as exc:
                        reason = f"invalid rewrite: {exc}"
                else:
                    reason = "parse failure: missing labeled sections"
            if attempt <= max_retries:
                delay = min(retry_max_delay, retry_base_delay * (2 ** (attempt - 1)))
                sleep(delay * jitter_rng.uniform(0.5, 1.5))
        return False, (dialogue.id, f"{reason} ({attempts} attempts)")

    outcomes: dict[int, tuple[bool, object]] = {}
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        futures = {pool.submit(attempt_one, i): i for i in range(len(dialogues))}
        try:
            for future in as_completed(futures):
                outcomes[futures[future]] = future.result()
        except ChatAuthError:
            for future in futures:
                future.cancel()
            raise

    successes: list[RewriteSuccess] = []
    failures: list[tuple[str, str]] = []
    for i in range(len(dialogues)):
        ok, payload = outcomes[i]
        if ok:
            successes.append(payload)  # type: ignore[arg-type]
        else:
            failures.append(payload)  # type: ignore[arg-type]
    return successes, failures
