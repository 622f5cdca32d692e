"""Scene-level evaluation of a hypothesis transcript against a reference.

Pairs hypothesis segments with reference segments (re-segmenting the
hypothesis stream when the segmentations disagree), aligns each pair,
annotates the mismatches, and folds everything into an EvalReport.
"""

from __future__ import annotations

from dataclasses import dataclass

from .alignment import EditScript, Mismatch, align, extract_mismatches
from .annotate import AnnotationRecord, RuleLexicons, annotate_rules
from .errors import ConsistencyError, PreconditionError
from .metrics import (
    AnnotatedMismatch,
    ContentType,
    EvalReport,
    Severity,
    SeverityWeights,
    build_report,
    count_term_hits,
)
from .resegment import resegment
from .transcript import (
    LENIENT_PROFILE,
    NormalizationProfile,
    Segment,
    Token,
    Transcript,
)


@dataclass(frozen=True)
class SegmentEvaluation:
    segment_id: str
    script: EditScript
    ref_tokens: tuple[Token, ...]
    hyp_tokens: tuple[Token, ...]
    mismatches: tuple[Mismatch, ...]
    annotated: tuple[AnnotatedMismatch, ...]


@dataclass(frozen=True)
class EvaluationResult:
    report: EvalReport
    segments: tuple[SegmentEvaluation, ...]


def _fold_tokens(tokens: tuple[Token, ...]) -> tuple[Token, ...]:
    return tuple(Token(surface=t.surface.lower(), normalized=t.normalized) for t in tokens)


def _fold_transcript(t: Transcript) -> Transcript:
    return Transcript(
        video_id=t.video_id,
        segments=tuple(
            Segment(
                id=s.id,
                tokens=_fold_tokens(s.tokens),
                start_s=s.start_s,
                end_s=s.end_s,
                terms=s.terms,
            )
            for s in t.segments
        ),
        role=t.role,
    )


def pair_segments(
    reference: Transcript, hypothesis: Transcript, allow_resegment: bool = True
) -> list[list[Token]]:
    """Hypothesis token groups paired 1:1 with the reference segments."""
    if len(hypothesis.segments) == len(reference.segments):
        return [list(s.tokens) for s in hypothesis.segments]
    if not allow_resegment:
        raise PreconditionError(
            f"{len(hypothesis.segments)} hypothesis segments cannot pair with "
            f"{len(reference.segments)} reference segments"
        )
    ref_groups = [list(s.tokens) for s in reference.segments]
    result = resegment(ref_groups, hypothesis.all_tokens())
    return result.split(hypothesis.all_tokens())


def evaluate_pair(
    reference: Transcript,
    hypothesis: Transcript,
    *,
    weights: SeverityWeights | None = None,
    lexicons: RuleLexicons | None = None,
    severity_profile: NormalizationProfile = LENIENT_PROFILE,
    annotations: list[AnnotationRecord] | None = None,
    case_fold: bool = False,
    baseline_total: int | None = None,
    allow_resegment: bool = True,
) -> EvaluationResult:
    """Full evaluation of one video.

    Mismatches are annotated by the rule backend unless explicit annotation
    records (e.g. model- or human-produced) are supplied; supplied records
    must cover the computed mismatches exactly.
    """
    weights = weights or SeverityWeights()
    lexicons = lexicons or RuleLexicons()
    if not reference.segments:
        raise PreconditionError("reference transcript has no segments")

    ref_eval = _fold_transcript(reference) if case_fold else reference
    hyp_eval = _fold_transcript(hypothesis) if case_fold else hypothesis

    hyp_groups = pair_segments(ref_eval, hyp_eval, allow_resegment)

    by_key: dict[tuple[str, int, int], AnnotationRecord] = {}
    if annotations is not None:
        for rec in annotations:
            key = (rec.scene_id, rec.group_id, rec.op_index)
            if key in by_key:
                raise ConsistencyError(f"duplicate annotation for {key}")
            by_key[key] = rec

    seg_evals: list[SegmentEvaluation] = []
    all_annotated: list[AnnotatedMismatch] = []
    total_i = total_o = total_s = 0
    for ref_seg, hyp_tokens in zip(ref_eval.segments, hyp_groups):
        script = align(list(ref_seg.tokens), hyp_tokens)
        mismatches = extract_mismatches(script, list(ref_seg.tokens), hyp_tokens)
        if annotations is None:
            annotated = annotate_rules(
                mismatches,
                lexicons,
                severity_profile,
                ref_tokens=ref_seg.tokens,
                hyp_tokens=hyp_tokens,
            )
        else:
            annotated = _attach_records(ref_seg.id, mismatches, by_key)
        i, o, s = script.counts
        total_i += i
        total_o += o
        total_s += s
        all_annotated.extend(annotated)
        seg_evals.append(
            SegmentEvaluation(
                segment_id=ref_seg.id,
                script=script,
                ref_tokens=ref_seg.tokens,
                hyp_tokens=tuple(hyp_tokens),
                mismatches=tuple(mismatches),
                annotated=tuple(annotated),
            )
        )

    term_found, term_total = count_term_hits(
        list(ref_eval.segments), hyp_groups, severity_profile
    )
    n_ref = sum(len(s.tokens) for s in ref_eval.segments)
    report = build_report(
        video_id=reference.video_id,
        script_counts=(total_i, total_o, total_s),
        n_ref=n_ref,
        annotated=all_annotated,
        weights=weights,
        term_found=term_found,
        term_total=term_total,
        baseline_total=baseline_total,
    )
    return EvaluationResult(report=report, segments=tuple(seg_evals))


def _attach_records(
    segment_id: str,
    mismatches: list[Mismatch],
    by_key: dict[tuple[str, int, int], AnnotationRecord],
) -> list[AnnotatedMismatch]:
    annotated = []
    for op_index, m in enumerate(mismatches):
        rec = by_key.get((segment_id, m.group_id, op_index))
        if rec is None:
            raise PreconditionError(
                f"no annotation for segment {segment_id!r} group {m.group_id} "
                f"op {op_index}"
            )
        if rec.op_kind != m.op.kind:
            raise ConsistencyError(
                f"annotation for segment {segment_id!r} group {m.group_id} op "
                f"{op_index} is a {rec.op_kind}, alignment produced {m.op.kind}"
            )
        annotated.append(
            AnnotatedMismatch(
                mismatch=m,
                content_type=ContentType(rec.content_type),
                severity=Severity(rec.severity),
                annotator=rec.annotator if rec.annotator in ("rules", "llm", "human") else "human",
            )
        )
    return annotated
