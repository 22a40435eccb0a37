"""Judge-based evaluation: emotion-intensity scoring and pairwise preference.

The deterministic mock judge scores a response by counting distinct lexicon
phrases (score = min(1, hits / 5) per dimension), which keeps the whole
evaluation battery runnable offline with monotone, testable behavior.
"""

from __future__ import annotations

import random
import re
import string
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .rewriter import ChatAuthError, ChatClient, ChatClientError, GenerationParams

DIMENSIONS = ("empathetic", "comforting", "reassuring")
PREFERENCE_DIMENSIONS = ("knowledgeable", "emotional")

EMPATHETIC_LEXICON = (
    "i understand",
    "i hear you",
    "i'm sorry you",
    "that sounds really hard",
    "i'm with you",
)
COMFORTING_LEXICON = (
    "don't worry",
    "completely normal",
    "not alone",
    "here to help",
    "take a deep breath",
)
REASSURING_LEXICON = (
    "rest assured",
    "we'll work through this",
    "in good hands",
    "we're here",
    "together",
)
KNOWLEDGE_LEXICON = (
    "recommend",
    "examination",
    "treatment",
    "specialist",
    "cause",
    "symptom",
)

INTENSITY_LEXICONS = {
    "empathetic": EMPATHETIC_LEXICON,
    "comforting": COMFORTING_LEXICON,
    "reassuring": REASSURING_LEXICON,
}

JUDGE_SYSTEM_PROMPT = "You evaluate medical dialogue responses. Answer exactly as instructed."

INTENSITY_PROMPT_TEMPLATE = """\
Rate how {dimension} the following response to a patient is.
Reply with a single number between 0 and 1, where 0 means not {dimension} at all
and 1 means extremely {dimension}.

RESPONSE:
{response}

Score:"""

PREFERENCE_PROMPT_TEMPLATE = """\
A patient asked the question below. Candidate responses follow.

QUESTION:
{question}

{candidates}
Which response is the most {criterion}? Reply with exactly one letter.

Answer:"""

PREFERENCE_CRITERIA = {
    "knowledgeable": "knowledgeable and medically informative",
    "emotional": "emotionally supportive and comforting",
}


@dataclass(frozen=True)
class EmotionScores:
    """Per-dimension intensities with their mean and max.

    For a single response ``max`` is the maximum of the three dimensions. For
    aggregated scores it is the mean of per-response maxima, so it may exceed
    every dimension column; it can never fall below them.
    """

    empathetic: float
    comforting: float
    reassuring: float
    mean: float
    max: float

    def __post_init__(self) -> None:
        for name in ("empathetic", "comforting", "reassuring", "mean", "max"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        dims = (self.empathetic, self.comforting, self.reassuring)
        if abs(self.mean - sum(dims) / 3) > 1e-9:
            raise ValueError("mean must equal the arithmetic mean of the three dimensions")
        if self.max < max(dims) - 1e-9:
            raise ValueError("max cannot be below the largest dimension")

    @classmethod
    def from_dimensions(cls, empathetic: float, comforting: float, reassuring: float) -> "EmotionScores":
        dims = (empathetic, comforting, reassuring)
        return cls(*dims, mean=sum(dims) / 3, max=max(dims))


@dataclass
class JudgeStats:
    requests: int = 0
    parse_failures: int = 0
    abstentions: int = 0


def lexicon_hits(text: str, lexicon: Sequence[str]) -> int:
    lowered = text.lower()
    return sum(1 for phrase in lexicon if phrase in lowered)


def mock_intensity(text: str, dimension: str) -> float:
    return min(1.0, lexicon_hits(text, INTENSITY_LEXICONS[dimension]) / 5)


_NUMBER_RE = re.compile(r"-?\d*\.?\d+")


def _parse_score(reply: str) -> Optional[float]:
    match = _NUMBER_RE.search(reply)
    if match is None:
        return None
    return min(1.0, max(0.0, float(match.group(0))))


def judge_intensity(
    client: ChatClient,
    response: str,
    retries: int = 3,
    params: GenerationParams = GenerationParams(temperature=0.0),
    stats: Optional[JudgeStats] = None,
) -> EmotionScores:
    """One judging request per emotion dimension; malformed replies are retried.

    After ``retries`` retries a dimension scores 0 and the failure is counted
    in ``stats``. Authentication errors propagate.
    """
    if not response.strip():
        raise ValueError("response must be non-empty")
    scores = {}
    for dimension in DIMENSIONS:
        prompt = INTENSITY_PROMPT_TEMPLATE.format(dimension=dimension, response=response)
        score: Optional[float] = None
        for _ in range(1 + retries):
            if stats is not None:
                stats.requests += 1
            try:
                reply = client.complete(JUDGE_SYSTEM_PROMPT, prompt, params)
            except ChatAuthError:
                raise
            except ChatClientError:
                continue
            score = _parse_score(reply)
            if score is not None:
                break
        if score is None:
            if stats is not None:
                stats.parse_failures += 1
            score = 0.0
        scores[dimension] = score
    return EmotionScores.from_dimensions(
        scores["empathetic"], scores["comforting"], scores["reassuring"]
    )


def aggregate_intensity(per_response: Sequence[EmotionScores]) -> EmotionScores:
    """Field-wise arithmetic mean; the max column averages per-response maxima."""
    if not per_response:
        raise ValueError("cannot aggregate an empty score list")
    n = len(per_response)
    empathetic = sum(s.empathetic for s in per_response) / n
    comforting = sum(s.comforting for s in per_response) / n
    reassuring = sum(s.reassuring for s in per_response) / n
    return EmotionScores(
        empathetic=empathetic,
        comforting=comforting,
        reassuring=reassuring,
        mean=(empathetic + comforting + reassuring) / 3,
        max=sum(s.max for s in per_response) / n,
    )


@dataclass(frozen=True)
class PreferenceBallot:
    """One judge selection among simultaneously presented candidates."""

    question_id: str
    candidates: tuple[str, ...]  # method ids in presentation order
    dimension: str
    winner: Optional[str]  # None records an abstention
    seed: int
    tie: bool = False

    def __post_init__(self) -> None:
        if self.dimension not in PREFERENCE_DIMENSIONS:
            raise ValueError(f"dimension must be one of {PREFERENCE_DIMENSIONS}")
        if self.winner is not None and self.winner not in self.candidates:
            raise ValueError("winner must be one of the candidates")


def _letters(n: int) -> list[str]:
    return list(string.ascii_uppercase[:n])


def judge_preference(
    client: ChatClient,
    question_id: str,
    question: str,
    responses: Sequence[tuple[str, str]],
    dimension: str,
    seed: int,
    retries: int = 3,
    params: GenerationParams = GenerationParams(temperature=0.0),
    stats: Optional[JudgeStats] = None,
) -> PreferenceBallot:
    """Present all candidates in seeded random order and ask for one letter.

    The random presentation order counters position bias; the ballot keeps the
    order so the winning letter maps back to a method id. Failures after
    retries yield an abstaining ballot rather than an exception.
    """
    if len(responses) < 2:
        raise ValueError("preference judging needs at least 2 responses")
    if dimension not in PREFERENCE_DIMENSIONS:
        raise ValueError(f"dimension must be one of {PREFERENCE_DIMENSIONS}")
    order = list(range(len(responses)))
    random.Random(seed).shuffle(order)
    presented = [responses[i] for i in order]
    letters = _letters(len(presented))
    blocks = "".join(
        f"Response {letter}:\n{text}\n\n" for letter, (_, text) in zip(letters, presented)
    )
    prompt = PREFERENCE_PROMPT_TEMPLATE.format(
        question=question, candidates=blocks, criterion=PREFERENCE_CRITERIA[dimension]
    )
    letter_re = re.compile(r"\b([A-" + letters[-1] + r"])\b")
    winner: Optional[str] = None
    tie = False
    for _ in range(1 + retries):
        if stats is not None:
            stats.requests += 1
        try:
            reply = client.complete(JUDGE_SYSTEM_PROMPT, prompt, params)
        except ChatAuthError:
            raise
        except ChatClientError:
            continue
        match = letter_re.search(reply)
        if match is not None:
            winner = presented[letters.index(match.group(1))][0]
            tie = "tie" in reply.lower()
            break
        if stats is not None:
            stats.parse_failures += 1
    if winner is None and stats is not None:
        stats.abstentions += 1
    return PreferenceBallot(
        question_id=question_id,
        candidates=tuple(method for method, _ in presented),
        dimension=dimension,
        winner=winner,
        seed=seed,
        tie=tie,
    )


class MockJudgeClient:
    """Deterministic lexicon-based judge implementing the ChatClient protocol."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, system: str, user: str, params: GenerationParams) -> str:
        intensity = re.match(r"Rate how (\w+) ", user)
        if intensity:
            dimension = intensity.group(1)
            if dimension not in INTENSITY_LEXICONS:
                return "0"
            match = re.search(r"RESPONSE:\n(.*)\n\nScore:", user, re.DOTALL)
            if match is None:
                return "0"
            return str(mock_intensity(match.group(1), dimension))
        preference = re.search(r"Which response is the most (.+)\? Reply", user)
        if preference:
            criterion = preference.group(1)
            if criterion == PREFERENCE_CRITERIA["knowledgeable"]:
                lexicon: tuple[str, ...] = KNOWLEDGE_LEXICON
            else:
                lexicon = EMPATHETIC_LEXICON + COMFORTING_LEXICON + REASSURING_LEXICON
            anchors = list(re.finditer(r"^Response ([A-Z]):\n", user, re.MULTILINE))
            stop = user.find("\nWhich response is the most")
            if stop == -1:
                stop = len(user)
            blocks = []
            for i, anchor in enumerate(anchors):
                end = anchors[i + 1].start() if i + 1 < len(anchors) else stop
                blocks.append((anchor.group(1), user[anchor.end() : end].strip()))
            if not blocks:
                return ""
            scores = [(lexicon_hits(text, lexicon), letter) for letter, text in blocks]
            best = max(score for score, _ in scores)
            winners = [letter for score, letter in scores if score == best]
            reply = winners[0]
            if len(winners) > 1:
                reply += " (tie)"
            return reply
        return ""
