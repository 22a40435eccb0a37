"""Seeded synthetic medical-dialogue corpus so the whole pipeline runs offline."""

from __future__ import annotations

import random

from .corpus import Dialogue

SYMPTOMS = (
    "a dull headache",
    "a dry cough",
    "lower back pain",
    "an itchy rash",
    "chest tightness",
    "ringing in my ears",
    "a swollen ankle",
    "stomach cramps",
    "a sore throat",
    "tingling fingers",
    "trouble sleeping",
    "mild dizziness",
    "a stiff neck",
    "watery eyes",
    "heartburn at night",
    "aching knees",
)

DURATIONS = (
    "two days",
    "a week",
    "ten days",
    "three weeks",
    "a month",
    "since yesterday",
    "several months",
    "a few hours",
)

QUERY_TEMPLATES = (
    "I have had {symptom} for {duration}. {question}",
    "For {duration} I have been dealing with {symptom}. {question}",
    "My problem is {symptom}, going on for {duration} now. {question}",
    "I noticed {symptom} about {duration} ago. {question}",
)

QUESTIONS = (
    "Should I get it checked?",
    "What could be causing this?",
    "Is this something serious?",
    "What should I do next?",
    "Do I need any tests?",
    "Can I treat this at home?",
)

CAUSES = (
    "muscle strain",
    "a mild infection",
    "seasonal allergies",
    "acid reflux",
    "tension and poor sleep",
    "minor inflammation",
    "a circulation issue",
    "joint wear",
)

ACTIONS = (
    "rest and plenty of fluids",
    "an antihistamine",
    "gentle stretching",
    "a course of antacids",
    "warm compresses",
    "a simple symptom diary",
    "light exercise",
    "a daily ice pack",
)

RESPONSE_TEMPLATES = (
    "This is often caused by {cause}. I recommend {action}.",
    "The likely cause is {cause}. Try {action}, and book an examination if it persists.",
    "Such symptoms usually point to {cause}. I recommend {action}.",
    "That pattern fits {cause}. Start with {action}, then see a specialist if needed.",
)


def synth_dialogues(
    n: int, seed: int, test_fraction: float = 0.15, source: str = "synthetic"
) -> list[Dialogue]:
    """Generate ``n`` templated dialogues; the trailing fraction is the test split."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = random.Random(seed)
    n_test = round(n * test_fraction)
    dialogues = []
    for i in range(n):
        query = rng.choice(QUERY_TEMPLATES).format(
            symptom=rng.choice(SYMPTOMS),
            duration=rng.choice(DURATIONS),
            question=rng.choice(QUESTIONS),
        )
        response = rng.choice(RESPONSE_TEMPLATES).format(
            cause=rng.choice(CAUSES),
            action=rng.choice(ACTIONS),
        )
        split = "test" if i >= n - n_test else "train"
        dialogues.append(
            Dialogue(
                id=f"{source}-{split}-{i:06d}",
                patient_query=query,
                doctor_response=response,
                split=split,
                source=source,
            )
        )
    return dialogues
