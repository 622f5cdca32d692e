"""Versioned prompt templates for slide analysis, context condensation,
post-editing and mismatch annotation.

Templates are plain module constants; their SHA-256 digests are recorded in
run manifests so output provenance survives template edits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import PreconditionError

SLIDE_QUESTIONS: tuple[str, ...] = (
    "Please describe the layout of the slide.",
    "What is the main topic or headline of the slide?",
    "Can you list the key points or bullet points presented on the slide?",
    "Are there any important dates, statistics, or quantitative data mentioned? Please summarize.",
    "Could you identify and list all the affiliations mentioned in the slide?",
    "Are there any visual aids (e.g., charts, graphs, images, diagrams or tables) on the slide? What information do they convey?",
    "Does the slide include any quotes, citations, or references to other works? Please detail.",
    "Please provide a holistic summary that encapsulates the entire content and context of the slide.",
)

SLIDE_QUESTION_SYSTEM = (
    "You are looking at one slide from a technical presentation. Answer the "
    "question about the slide factually. If the slide does not contain the "
    "requested information, say so instead of guessing."
)

SCENE_SUMMARY_PROMPT = """You are given raw answers that a vision model produced about a single \
presentation slide. The answers may be repetitive, overly long, or contain \
mistakes. Cross-check them against each other, discard anything \
unsupported, and write one concise, accurate summary of the slide's \
content. Keep technical terms, names and numbers exactly as written on the \
slide. Reply with the summary only.

Raw answers:
{answers}
"""

CONDENSE_PROMPT = """Below are summaries of the consecutive slides of one presentation. Write a \
single comprehensive summary of the whole presentation that preserves the \
technical terms, names, numbers and the overall narrative, so that it can \
serve as shared context when cleaning up the talk's transcript. Reply with \
the summary only.

Slide summaries:
{summaries}
"""

POST_EDIT_PROMPT = """You are cleaning up an automatic speech-recognition transcript of one scene \
of a technical presentation. Use the slide context and the presentation \
summary to fix recognition errors: wrong technical terms, misheard names \
and numbers, and obvious word errors. Preserve the speaker's wording and \
sentence structure everywhere else; do not paraphrase, summarize, or add \
content. Reply with the corrected transcript text only.

Slide context:
{scene_context}

Presentation summary:
{presentation_summary}

Transcript:
{transcript}
"""

E2E_POST_EDIT_PROMPT = """The attached image is the slide shown during one scene of a technical \
presentation. Below is the automatic speech-recognition transcript of that \
scene. Using the slide as context, fix recognition errors: wrong technical \
terms, misheard names and numbers, and obvious word errors. Preserve the \
speaker's wording and sentence structure everywhere else; do not \
paraphrase, summarize, or add content. Reply with the corrected transcript \
text only.

Transcript:
{transcript}
"""

ANNOTATION_GUIDELINE = """You are grading the errors of an automatic speech-recognition transcript \
against its reference. You receive the reference and the hypothesis as two \
paragraphs where differences are highlighted: [word] marks a substitution \
on both sides, {word} marks a word omitted from the hypothesis, and <word> \
marks a word inserted by the hypothesis. A numbered index of the mismatch \
groups follows (S=substitution, O=omission, I=insertion).

For every group id, decide the content type of the mismatched content, \
judged on the reference side:
- TERM: specialized words or phrases of the field
- NUM: numbers, dates, quantities or statistics
- NE: names of people, places or organizations
- GRAM: words serving mainly a grammatical function (articles, \
prepositions, conjunctions, auxiliaries)
- DISF: disfluencies and fillers (uh, um, repetitions, self-corrections)
- GEN: any other common word

Then grade the severity of the mismatch by its impact on understanding:
- OK: no significant impact on the meaning
- MIN: slight impact, the main point is still understandable
- CRI: significant change or distortion of the original meaning

Reply with exactly one line per group id, in the form `id: TYPE/SEV`, and \
nothing else.
"""


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class PromptSet:
    """The prompt bundle one pipeline run dispatches from. All templates are
    fully filled before any request leaves the process."""

    slide_questions: tuple[str, ...] = SLIDE_QUESTIONS
    slide_question_system: str = SLIDE_QUESTION_SYSTEM
    scene_summary_prompt: str = SCENE_SUMMARY_PROMPT
    condense_prompt: str = CONDENSE_PROMPT
    post_edit_prompt: str = POST_EDIT_PROMPT
    e2e_prompt: str = E2E_POST_EDIT_PROMPT
    annotation_guideline: str = ANNOTATION_GUIDELINE

    def __post_init__(self):
        if len(self.slide_questions) != 8:
            raise PreconditionError(
                f"exactly 8 slide questions are required, got {len(self.slide_questions)}"
            )
        for name, template, slots in (
            ("scene_summary_prompt", self.scene_summary_prompt, ["{answers}"]),
            ("condense_prompt", self.condense_prompt, ["{summaries}"]),
            (
                "post_edit_prompt",
                self.post_edit_prompt,
                ["{scene_context}", "{presentation_summary}", "{transcript}"],
            ),
            ("e2e_prompt", self.e2e_prompt, ["{transcript}"]),
        ):
            for slot in slots:
                if slot not in template:
                    raise PreconditionError(f"{name} is missing the {slot} slot")

    def digests(self) -> dict[str, str]:
        return {
            "slide_questions": digest("\n".join(self.slide_questions)),
            "scene_summary_prompt": digest(self.scene_summary_prompt),
            "condense_prompt": digest(self.condense_prompt),
            "post_edit_prompt": digest(self.post_edit_prompt),
            "e2e_prompt": digest(self.e2e_prompt),
            "annotation_guideline": digest(self.annotation_guideline),
        }
