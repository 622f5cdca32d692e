"""End-to-end post-editing pipeline: scene assembly, slide analysis, context
condensation and transcript correction.

Four run modes cover the ablation ladder: ``asr-only`` (identity pass-through),
``text-pe`` (text-model correction without visual context), ``vision-pe``
(slide analysis feeding the corrector) and ``e2e-vision-pe`` (a single
image+transcript call per scene). A scene that cannot be post-edited falls
back to its unedited transcript; the pipeline never drops content.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import (
    InputError,
    PreconditionError,
    RequestError,
    TalkevalError,
    TransportError,
)
from .kts import FeatureMatrix, ScenePlan, build_plan
from .llm import ChatClient
from .prompts import PromptSet
from .transcript import Segment, Token, Transcript, slice_by_spans, tokenize

log = logging.getLogger(__name__)

MODES = ("asr-only", "text-pe", "vision-pe", "e2e-vision-pe")

LENGTH_GUARD = (0.5, 2.0)
MIN_SLIDE_ANSWERS = 4

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


class StageError(TalkevalError):
    """A pipeline stage failed without a per-scene fallback."""

    exit_code = 4

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class SceneRecord:
    """One slide scene: its sampled frame, transcript slice, extracted
    context and post-edited text (both empty until the relevant stage ran)."""

    index: int  # dense from 1
    tokens: tuple[Token, ...]
    span_s: tuple[float, float] | None = None
    image_ref: Path | None = None
    scene_context: str = ""
    post_edited: str = ""

    @property
    def transcript_text(self) -> str:
        return " ".join(t.surface for t in self.tokens)


@dataclass(frozen=True)
class PresentationContext:
    summary: str


@dataclass
class PipelineResult:
    transcript: Transcript
    manifest: dict
    scenes: list[SceneRecord] = field(default_factory=list)


def find_frame_file(frames_dir: Path, index: int) -> Path:
    for ext in _MEDIA_TYPES:
        candidate = frames_dir / f"scene_{index:03d}{ext}"
        if candidate.exists():
            return candidate
    raise InputError(
        f"no frame file scene_{index:03d}.* under {frames_dir}"
    )


def assemble_scenes(
    plan: ScenePlan, transcript: Transcript, frames_dir: str | Path | None
) -> list[SceneRecord]:
    """Pair each scene span with its transcript slice and sampled frame.

    Spans with no transcript segments yield scenes with empty token lists;
    a missing frame file is an assembly error naming the span."""
    groups = slice_by_spans(transcript, list(plan.spans_s))
    scenes = []
    for i, (span, tokens) in enumerate(zip(plan.spans_s, groups), start=1):
        image_ref = None
        if frames_dir is not None:
            try:
                image_ref = find_frame_file(Path(frames_dir), i)
            except InputError as exc:
                raise InputError(
                    f"scene {i} spanning ({span[0]:.2f}s, {span[1]:.2f}s): {exc}"
                ) from exc
        scenes.append(
            SceneRecord(index=i, tokens=tuple(tokens), span_s=span, image_ref=image_ref)
        )
    return scenes


def _read_image(path: Path) -> tuple[bytes, str]:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read frame {path}: {exc}") from exc
    return data, _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")


def analyze_slide(
    scene: SceneRecord,
    vision: ChatClient,
    text: ChatClient,
    prompts: PromptSet,
    min_answers: int = MIN_SLIDE_ANSWERS,
) -> tuple[str, list[str]]:
    """Extract the scene context: eight slide questions to the vision model,
    then one text-model pass to cross-check and compress the raw answers.

    Returns (scene_context, warnings). Individual question failures are
    tolerated down to ``min_answers`` survivors."""
    if scene.image_ref is None:
        raise PreconditionError(f"scene {scene.index} has no frame image")
    image, media_type = _read_image(scene.image_ref)

    answers: list[tuple[int, str]] = []
    warnings: list[str] = []
    for q_index, question in enumerate(prompts.slide_questions, start=1):
        try:
            reply = vision.complete_vision(
                prompts.slide_question_system, question, image, media_type
            )
            answers.append((q_index, reply))
        except (TransportError, RequestError) as exc:
            warnings.append(f"scene {scene.index} question {q_index} failed: {exc}")
    if len(answers) < min_answers:
        raise StageError(
            "slide-analysis",
            f"scene {scene.index}: only {len(answers)} of "
            f"{len(prompts.slide_questions)} slide questions answered",
        )

    raw = "\n".join(f"{idx}. {reply}" for idx, reply in answers)
    summary = text.complete_text(
        system="You turn noisy slide descriptions into one reliable summary.",
        user=prompts.scene_summary_prompt.format(answers=raw),
    )
    return summary.strip(), warnings


def _chunk_by_budget(texts: list[str], budget: int) -> list[list[str]]:
    chunks: list[list[str]] = [[]]
    size = 0
    for t in texts:
        if chunks[-1] and size + len(t) > budget:
            chunks.append([])
            size = 0
        chunks[-1].append(t)
        size += len(t)
    return chunks


def condense(
    scene_contexts: list[str],
    text: ChatClient,
    prompts: PromptSet,
    char_budget: int = 16000,
) -> tuple[PresentationContext, bool]:
    """Condense scene summaries into the presentation-level summary.

    Returns (context, chunked): when the concatenated summaries exceed the
    character budget they are condensed hierarchically in two passes."""
    contexts = [c for c in scene_contexts if c.strip()]
    if not contexts:
        raise PreconditionError("no non-empty scene contexts to condense")

    def ask(summaries: list[str]) -> str:
        joined = "\n\n".join(
            f"Slide {i}:\n{s}" for i, s in enumerate(summaries, start=1)
        )
        return text.complete_text(
            system="You write faithful technical summaries.",
            user=prompts.condense_prompt.format(summaries=joined),
        ).strip()

    if sum(len(c) for c in contexts) <= char_budget:
        return PresentationContext(summary=ask(contexts)), False

    partials = [ask(chunk) for chunk in _chunk_by_budget(contexts, char_budget)]
    return PresentationContext(summary=ask(partials)), True


def _length_guard_ok(original: str, edited: str) -> bool:
    n_in = len(original.split())
    n_out = len(edited.split())
    if n_in == 0:
        return n_out == 0
    lo, hi = LENGTH_GUARD
    return lo * n_in <= n_out <= hi * n_in


def post_edit(
    scene: SceneRecord,
    presentation: PresentationContext,
    text: ChatClient,
    prompts: PromptSet,
) -> tuple[str, list[str]]:
    """Correct one scene's transcript with its slide context and the
    presentation summary. Falls back to the unedited transcript on model
    failure or when the reply fails the length-ratio guard."""
    original = scene.transcript_text
    if not original:
        return "", []
    prompt = prompts.post_edit_prompt.format(
        scene_context=scene.scene_context or "(no slide context available)",
        presentation_summary=presentation.summary or "(no presentation summary available)",
        transcript=original,
    )
    try:
        edited = text.complete_text(
            system="You repair speech-recognition transcripts.", user=prompt
        ).strip()
    except (TransportError, RequestError) as exc:
        return original, [f"scene {scene.index} post-edit failed, keeping input: {exc}"]
    if not _length_guard_ok(original, edited):
        return original, [
            f"scene {scene.index} edit rejected by length guard "
            f"({len(original.split())} -> {len(edited.split())} tokens)"
        ]
    return edited, []


def post_edit_e2e(
    scene: SceneRecord,
    vision: ChatClient,
    prompts: PromptSet,
) -> tuple[str, list[str]]:
    """Single image+transcript correction call; same guard and fallback as
    the pipelined post-editor. Empty scenes are returned unchanged without
    spending a model call."""
    original = scene.transcript_text
    if not original:
        return "", []
    if scene.image_ref is None:
        raise PreconditionError(f"scene {scene.index} has no frame image")
    image, media_type = _read_image(scene.image_ref)
    try:
        edited = vision.complete_vision(
            "You repair speech-recognition transcripts.",
            prompts.e2e_prompt.format(transcript=original),
            image,
            media_type,
        ).strip()
    except (TransportError, RequestError) as exc:
        return original, [f"scene {scene.index} e2e edit failed, keeping input: {exc}"]
    if not _length_guard_ok(original, edited):
        return original, [
            f"scene {scene.index} e2e edit rejected by length guard "
            f"({len(original.split())} -> {len(edited.split())} tokens)"
        ]
    return edited, []


def _client_stats(*clients: ChatClient | None) -> dict[str, int]:
    agg = {"text_calls": 0, "vision_calls": 0, "cache_hits": 0, "network_calls": 0}
    seen: set[int] = set()
    for c in clients:
        if c is None or id(c) in seen:
            continue
        seen.add(id(c))
        for k, v in c.stats().items():
            agg[k] += v
    return agg


def _scenes_to_transcript(video_id: str, scenes: list[SceneRecord]) -> Transcript:
    segments = []
    for scene in scenes:
        text = scene.post_edited if scene.post_edited else scene.transcript_text
        start, end = scene.span_s if scene.span_s else (None, None)
        segments.append(
            Segment(
                id=f"scene_{scene.index:03d}",
                tokens=tuple(tokenize(text)),
                start_s=start,
                end_s=end,
            )
        )
    return Transcript(video_id=video_id, segments=tuple(segments), role="hypothesis")


def run(
    transcript: Transcript,
    mode: str,
    *,
    features: FeatureMatrix | None = None,
    frames_dir: str | Path | None = None,
    text_client: ChatClient | None = None,
    vision_client: ChatClient | None = None,
    prompts: PromptSet | None = None,
    max_segments: int = 30,
    penalty_coeff: float = 1.0,
    stride: int = 1,
    max_parallel_scenes: int = 4,
    condense_char_budget: int = 16000,
) -> PipelineResult:
    """Execute one video through the requested mode's stage subset.

    The returned manifest records per-stage timings, exact model call counts,
    cache statistics, prompt digests and all warnings raised along the way.
    """
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
    prompts = prompts or PromptSet()
    t_start = time.monotonic()
    warnings: list[str] = []
    timings: dict[str, float] = {}
    manifest: dict = {
        "video_id": transcript.video_id,
        "mode": mode,
        "toolkit_version": __version__,
        "prompt_digests": prompts.digests(),
    }

    needs_vision = mode in ("vision-pe", "e2e-vision-pe")
    needs_text = mode in ("text-pe", "vision-pe")
    if needs_vision:
        if features is None:
            raise PreconditionError(f"mode {mode} requires a feature matrix")
        if frames_dir is None:
            raise PreconditionError(f"mode {mode} requires a frames directory")
        if vision_client is None:
            raise PreconditionError(f"mode {mode} requires a vision endpoint")
    if needs_text and text_client is None:
        raise PreconditionError(f"mode {mode} requires a text endpoint")

    stats_before = _client_stats(text_client, vision_client)

    if mode == "asr-only":
        manifest.update(
            scenes=0,
            calls={"text": 0, "vision": 0},
            stage_calls={},
            condense_chunked=False,
            warnings=[],
            timings_s={"total": time.monotonic() - t_start},
            cache={"hits": 0, "network": 0},
            output_sha256=hashlib.sha256(transcript.text().encode()).hexdigest(),
        )
        return PipelineResult(transcript=transcript, manifest=manifest, scenes=[])

    # Scene assembly (KTS spans when features are available).
    t0 = time.monotonic()
    if features is not None:
        plan = build_plan(features, max_segments, penalty_coeff, stride)
        scenes = assemble_scenes(
            plan, transcript, frames_dir if needs_vision else None
        )
        manifest["change_points"] = list(plan.change_points)
    else:
        scenes = [
            SceneRecord(index=1, tokens=tuple(transcript.all_tokens()), span_s=None)
        ]
    timings["segmentation"] = time.monotonic() - t0
    manifest["scenes"] = len(scenes)

    stage_calls: dict[str, int] = {}

    def pool() -> ThreadPoolExecutor:
        return ThreadPoolExecutor(max_workers=max(1, max_parallel_scenes))

    presentation = PresentationContext(summary="")
    if mode == "vision-pe":
        t0 = time.monotonic()
        before = _client_stats(text_client, vision_client)
        with pool() as ex:
            results = list(
                ex.map(
                    lambda s: analyze_slide(s, vision_client, text_client, prompts),
                    scenes,
                )
            )
        for scene, (context, warns) in zip(scenes, results):
            scene.scene_context = context
            warnings.extend(warns)
        after = _client_stats(text_client, vision_client)
        stage_calls["analysis_vision"] = after["vision_calls"] - before["vision_calls"]
        stage_calls["analysis_text"] = after["text_calls"] - before["text_calls"]
        timings["analysis"] = time.monotonic() - t0

        t0 = time.monotonic()
        before = after
        presentation, chunked = condense(
            [s.scene_context for s in scenes], text_client, prompts, condense_char_budget
        )
        after = _client_stats(text_client, vision_client)
        stage_calls["condense_text"] = after["text_calls"] - before["text_calls"]
        manifest["condense_chunked"] = chunked
        timings["condense"] = time.monotonic() - t0
    else:
        manifest["condense_chunked"] = False

    t0 = time.monotonic()
    before = _client_stats(text_client, vision_client)
    if mode in ("text-pe", "vision-pe"):
        with pool() as ex:
            results = list(
                ex.map(
                    lambda s: post_edit(s, presentation, text_client, prompts), scenes
                )
            )
        for scene, (edited, warns) in zip(scenes, results):
            scene.post_edited = edited
            warnings.extend(warns)
        after = _client_stats(text_client, vision_client)
        stage_calls["post_edit_text"] = after["text_calls"] - before["text_calls"]
    else:  # e2e-vision-pe
        with pool() as ex:
            results = list(
                ex.map(lambda s: post_edit_e2e(s, vision_client, prompts), scenes)
            )
        for scene, (edited, warns) in zip(scenes, results):
            scene.post_edited = edited
            warnings.extend(warns)
        after = _client_stats(text_client, vision_client)
        stage_calls["post_edit_vision"] = after["vision_calls"] - before["vision_calls"]
    timings["post_edit"] = time.monotonic() - t0

    out = _scenes_to_transcript(transcript.video_id, scenes)
    stats_after = _client_stats(text_client, vision_client)
    timings["total"] = time.monotonic() - t_start
    manifest.update(
        calls={
            "text": stats_after["text_calls"] - stats_before["text_calls"],
            "vision": stats_after["vision_calls"] - stats_before["vision_calls"],
        },
        stage_calls=stage_calls,
        cache={
            "hits": stats_after["cache_hits"] - stats_before["cache_hits"],
            "network": stats_after["network_calls"] - stats_before["network_calls"],
        },
        warnings=sorted(warnings),
        timings_s=timings,
        output_sha256=hashlib.sha256(out.text().encode()).hexdigest(),
    )
    return PipelineResult(transcript=out, manifest=manifest, scenes=scenes)
