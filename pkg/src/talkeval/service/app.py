"""FastAPI service exposing the evaluation toolkit.

Every endpoint handler is a plain function over pydantic models, so the CLI
can dispatch to them in-process without a socket; the FastAPI app is a thin
HTTP veneer on the same functions.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..alignment import (
    EditOp,
    Mismatch,
    align,
    extract_mismatches,
    parse_highlight,
    render_highlight,
)
from ..annotate import (
    AnnotationRecord,
    RuleLexicons,
    annotate_rules,
    build_annotation_request,
    annotate_llm,
)
from ..errors import (
    AnnotationError,
    ConsistencyError,
    InputError,
    PreconditionError,
    RequestError,
    TalkevalError,
    TransportError,
)
from ..evaluate import evaluate_pair
from ..kts import FeatureMatrix, build_plan, load_features
from ..llm import ChatClient, EndpointConfig
from ..metrics import (
    agreement_from_labels,
    aggregate_scores,
    correlation,
    count_term_hits,
    difficulty_score,
    perplexity_from_logprobs,
    swer,
    AnnotatedMismatch,
)
from ..pipeline import run as run_pipeline
from ..prompts import PromptSet
from ..report import (
    HumanVote,
    bundle_from_dict,
    render_report,
    tally_votes,
)
from ..resegment import resegment
from ..transcript import Token, read_transcript, segment_to_record, tokenize
from . import schemas as s

app = FastAPI(title="talkeval", version=__version__)


def _surface_tokens(words: list[str]) -> list[Token]:
    return [Token(surface=w, normalized=w) for w in words]


def _op_model(op: EditOp) -> s.EditOpModel:
    return s.EditOpModel(
        kind=op.kind, ref_span=op.ref_span, hyp_span=op.hyp_span, position=op.position
    )


def _mismatch_models(mismatches) -> list[s.MismatchModel]:
    return [
        s.MismatchModel(
            group_id=m.group_id,
            op=_op_model(m.op),
            ref_text=m.ref_text,
            hyp_text=m.hyp_text,
        )
        for m in mismatches
    ]


# ---------------------------------------------------------------------------
# Handlers


def healthz() -> s.HealthResponse:
    return s.HealthResponse(status="ok", version=__version__)


def tokenize_endpoint(req: s.TokenizeRequest) -> s.TokenizeResponse:
    tokens = tokenize(req.text, req.profile.to_profile())
    return s.TokenizeResponse(tokens=[s.TokenModel.from_token(t) for t in tokens])


def align_endpoint(req: s.AlignRequest) -> s.AlignResponse:
    script = align(_surface_tokens(req.ref), _surface_tokens(req.hyp))
    i, o, sub = script.counts
    return s.AlignResponse(
        ops=[_op_model(op) for op in script.ops],
        insertions=i,
        omissions=o,
        substitutions=sub,
        ref_len=script.ref_len,
        distance=script.distance,
    )


def highlight_endpoint(req: s.AlignRequest) -> s.HighlightResponse:
    ref = _surface_tokens(req.ref)
    hyp = _surface_tokens(req.hyp)
    script = align(ref, hyp)
    ref_line, hyp_line = render_highlight(script, ref, hyp)
    return s.HighlightResponse(
        highlighted_ref=ref_line,
        highlighted_hyp=hyp_line,
        mismatches=_mismatch_models(extract_mismatches(script, ref, hyp)),
    )


def parse_highlight_endpoint(req: s.ParseHighlightRequest) -> s.ParseHighlightResponse:
    mismatches = parse_highlight(req.highlighted_ref, req.highlighted_hyp)
    return s.ParseHighlightResponse(mismatches=_mismatch_models(mismatches))


def resegment_endpoint(req: s.ResegmentRequest) -> s.ResegmentResponse:
    ref_groups = [_surface_tokens(g) for g in req.ref_segments]
    hyp = _surface_tokens(req.hyp)
    result = resegment(ref_groups, hyp)
    return s.ResegmentResponse(
        boundaries=list(result.boundaries),
        per_segment_cost=list(result.per_segment_cost),
        total_cost=result.total_cost,
        segments=[[t.surface for t in piece] for piece in result.split(hyp)],
    )


def score_endpoint(req: s.ScoreRequest) -> s.ScoreResponse:
    # Positional annotations suffice for scoring; spans are irrelevant here.
    annotated = []
    for idx, item in enumerate(req.items):
        op = EditOp("substitution", (idx, idx + 1), (idx, idx + 1), idx)
        annotated.append(
            AnnotatedMismatch(
                mismatch=Mismatch(op=op, ref_text="", hyp_text="", group_id=idx + 1),
                content_type=item.content_type,
                severity=item.severity,
                annotator="human",
            )
        )
    weights = req.weights.to_weights()
    breakdown = aggregate_scores(annotated, weights, req.baseline_total)
    return s.ScoreResponse(
        wer=len(annotated) / req.n_ref,
        swer=swer(annotated, req.n_ref, weights),
        content_scores={
            ct.value: s.ContentScoreModel(
                weighted=breakdown.weighted(ct), unweighted=breakdown.unweighted(ct)
            )
            for ct in breakdown.counts
        },
        severity_counts={
            sev.value: c for sev, c in breakdown.severity_counts().items()
        },
        severity_percentages={
            sev.value: p for sev, p in breakdown.severity_percentages().items()
        },
        n_ref=req.n_ref,
        k_mismatches=len(annotated),
    )


def correlation_endpoint(req: s.CorrelationRequest) -> s.CorrelationResponse:
    value = correlation(req.x, req.y, req.mode)
    return s.CorrelationResponse(value=value, mode=req.mode, n=len(req.x))


def agreement_endpoint(req: s.AgreementRequest) -> s.AgreementResponse:
    def label_map(records: list[s.AnnotationRecordModel]):
        out = {}
        for r in records:
            key = (r.video_id, r.scene_id, r.group_id, r.op_index)
            if key in out:
                raise InputError(f"duplicate annotation record for {key}")
            out[key] = (r.content_type, r.severity)
        return out

    rep = agreement_from_labels(label_map(req.pred), label_map(req.gold))
    return s.AgreementResponse(
        per_type={
            ct.value: s.PRFModel(
                precision=prf.precision, recall=prf.recall, f1=prf.f1
            )
            for ct, prf in rep.per_type.items()
        },
        micro=s.PRFModel(
            precision=rep.micro.precision, recall=rep.micro.recall, f1=rep.micro.f1
        ),
        severity_pearson=rep.severity_pearson,
        severity_spearman=rep.severity_spearman,
        n_items=rep.n_items,
    )


def term_recall_endpoint(req: s.TermRecallRequest) -> s.TermRecallResponse:
    profile = req.profile.to_profile()
    ref_segments = [r.to_segment(profile) for r in req.ref_segments]
    hyp_groups = [tokenize(text, profile) for text in req.hyp_segments]
    found, total = count_term_hits(ref_segments, hyp_groups, profile)
    recall = 100.0 if total == 0 else 100.0 * found / total
    return s.TermRecallResponse(recall=recall, found=found, total=total)


def difficulty_endpoint(req: s.DifficultyRequest) -> s.DifficultyResponse:
    cppl_b = req.cppl_baseline
    cppl_s = req.cppl_speech
    if cppl_b is None:
        if req.baseline_logprobs is None:
            raise InputError("need cppl_baseline or baseline_logprobs")
        cppl_b = perplexity_from_logprobs(req.baseline_logprobs)
    if cppl_s is None:
        if req.speech_logprobs is None:
            raise InputError("need cppl_speech or speech_logprobs")
        cppl_s = perplexity_from_logprobs(req.speech_logprobs)
    return s.DifficultyResponse(
        score=difficulty_score(cppl_b, cppl_s), cppl_baseline=cppl_b, cppl_speech=cppl_s
    )


def _lexicons(model: s.LexiconsModel) -> RuleLexicons:
    return RuleLexicons.build(
        terminology=model.terminology,
        gazetteer=model.gazetteer,
        fillers=model.fillers,
        grammatical=model.grammatical,
    )


def _annotation_models(annotated) -> list[s.AnnotationModel]:
    return [
        s.AnnotationModel(
            group_id=a.mismatch.group_id,
            op_index=i,
            op_kind=a.mismatch.op.kind,
            ref_text=a.mismatch.ref_text,
            hyp_text=a.mismatch.hyp_text,
            content_type=a.content_type,
            severity=a.severity,
            annotator=a.annotator,
        )
        for i, a in enumerate(annotated)
    ]


def annotate_rules_endpoint(req: s.AnnotateRulesRequest) -> s.AnnotateResponse:
    ref = _surface_tokens(req.ref)
    hyp = _surface_tokens(req.hyp)
    script = align(ref, hyp)
    mismatches = extract_mismatches(script, ref, hyp)
    annotated = annotate_rules(
        mismatches,
        _lexicons(req.lexicons),
        req.profile.to_profile(),
        ref_tokens=ref,
        hyp_tokens=hyp,
    )
    ref_line, hyp_line = render_highlight(script, ref, hyp)
    return s.AnnotateResponse(
        annotations=_annotation_models(annotated),
        highlighted_ref=ref_line,
        highlighted_hyp=hyp_line,
        n_ref=script.ref_len,
    )


def annotate_llm_endpoint(req: s.AnnotateLlmRequest) -> s.AnnotateResponse:
    ref = _surface_tokens(req.ref)
    hyp = _surface_tokens(req.hyp)
    script = align(ref, hyp)
    request = build_annotation_request(script, ref, hyp)
    cfg = EndpointConfig(**req.endpoint.model_dump())
    client = ChatClient(cfg, cache_dir=req.cache_dir)
    try:
        guideline = req.guideline or PromptSet().annotation_guideline
        annotated = annotate_llm(request, client, guideline)
    finally:
        client.close()
    return s.AnnotateResponse(
        annotations=_annotation_models(annotated),
        highlighted_ref=request.highlighted_ref,
        highlighted_hyp=request.highlighted_hyp,
        n_ref=script.ref_len,
    )


def kts_plan_endpoint(req: s.KtsPlanRequest) -> s.KtsPlanResponse:
    arr = np.asarray(req.features, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError("features must be a rectangular 2-D array")
    features = FeatureMatrix(arr, req.fps)
    plan = build_plan(features, req.max_segments, req.penalty_coeff, req.stride)
    return s.KtsPlanResponse(**plan.to_dict())


def votes_tally_endpoint(req: s.VotesTallyRequest) -> s.VotesTallyResponse:
    votes = [
        HumanVote(
            video_id=v.video_id,
            scene_id=v.scene_id,
            system_a=v.system_a,
            system_b=v.system_b,
            verdict=v.verdict,
            annotator_group=v.annotator_group,
        )
        for v in req.votes
    ]
    selected = [
        v
        for v in votes
        if (req.system_a is None or v.system_a == req.system_a)
        and (req.system_b is None or v.system_b == req.system_b)
    ]
    win, tie, lose = tally_votes(votes, req.system_a, req.system_b)
    return s.VotesTallyResponse(win=win, tie=tie, lose=lose, n=len(selected))


def report_render_endpoint(req: s.ReportRenderRequest) -> s.ReportRenderResponse:
    bundle = bundle_from_dict(req.bundle)
    return s.ReportRenderResponse(text=render_report(bundle, req.format))


def eval_endpoint(req: s.EvalRequest) -> s.EvalResponse:
    from ..transcript import WER_PROFILE

    reference = s.segments_to_transcript(
        req.video_id, req.reference, "reference", WER_PROFILE
    )
    hypothesis = s.segments_to_transcript(
        req.video_id, req.hypothesis, "hypothesis", WER_PROFILE
    )
    annotations = None
    if req.annotations is not None:
        annotations = [
            AnnotationRecord(
                video_id=r.video_id or req.video_id,
                scene_id=r.scene_id,
                group_id=r.group_id,
                op_index=r.op_index,
                op_kind=r.op_kind,
                ref_text=r.ref_text,
                hyp_text=r.hyp_text,
                content_type=r.content_type,
                severity=r.severity,
                annotator=r.annotator,
            )
            for r in req.annotations
        ]
    result = evaluate_pair(
        reference,
        hypothesis,
        weights=req.weights.to_weights(),
        lexicons=_lexicons(req.lexicons),
        annotations=annotations,
        case_fold=req.case_fold,
        baseline_total=req.baseline_total,
        allow_resegment=req.allow_resegment,
    )
    highlighted = []
    for seg in result.segments:
        ref_line, hyp_line = render_highlight(
            seg.script, list(seg.ref_tokens), list(seg.hyp_tokens)
        )
        highlighted.append(
            {"segment_id": seg.segment_id, "ref": ref_line, "hyp": hyp_line}
        )
    return s.EvalResponse(report=result.report.to_dict(), highlighted=highlighted)


def pipeline_run_endpoint(req: s.PipelineRunRequest) -> s.PipelineRunResponse:
    transcript = read_transcript(req.transcript_path, role="hypothesis")
    features = load_features(req.features_path) if req.features_path else None

    def make_client(cfg_model: s.EndpointModel | None) -> ChatClient | None:
        if cfg_model is None:
            return None
        return ChatClient(
            EndpointConfig(**cfg_model.model_dump()),
            cache_dir=req.cache_dir,
            use_cache=req.use_cache,
        )

    text_client = make_client(req.text_endpoint)
    vision_client = make_client(req.vision_endpoint)
    try:
        result = run_pipeline(
            transcript,
            req.mode,
            features=features,
            frames_dir=req.frames_dir,
            text_client=text_client,
            vision_client=vision_client,
            max_segments=req.max_segments,
            penalty_coeff=req.penalty_coeff,
            stride=req.stride,
            max_parallel_scenes=req.max_parallel_scenes,
        )
    finally:
        for client in (text_client, vision_client):
            if client is not None:
                client.close()
    records = [
        segment_to_record(result.transcript.video_id, seg)
        for seg in result.transcript.segments
    ]
    if req.output_path:
        from ..transcript import write_transcript

        write_transcript(result.transcript, req.output_path)
    return s.PipelineRunResponse(manifest=result.manifest, transcript=records)


# ---------------------------------------------------------------------------
# Route registry (shared by the HTTP app and the in-process CLI dispatch)

ROUTES: dict[str, tuple] = {
    "/tokenize": (tokenize_endpoint, s.TokenizeRequest, s.TokenizeResponse),
    "/align": (align_endpoint, s.AlignRequest, s.AlignResponse),
    "/highlight/render": (highlight_endpoint, s.AlignRequest, s.HighlightResponse),
    "/highlight/parse": (
        parse_highlight_endpoint,
        s.ParseHighlightRequest,
        s.ParseHighlightResponse,
    ),
    "/resegment": (resegment_endpoint, s.ResegmentRequest, s.ResegmentResponse),
    "/metrics/score": (score_endpoint, s.ScoreRequest, s.ScoreResponse),
    "/metrics/correlation": (
        correlation_endpoint,
        s.CorrelationRequest,
        s.CorrelationResponse,
    ),
    "/metrics/agreement": (agreement_endpoint, s.AgreementRequest, s.AgreementResponse),
    "/metrics/term-recall": (
        term_recall_endpoint,
        s.TermRecallRequest,
        s.TermRecallResponse,
    ),
    "/metrics/difficulty": (
        difficulty_endpoint,
        s.DifficultyRequest,
        s.DifficultyResponse,
    ),
    "/annotate/rules": (
        annotate_rules_endpoint,
        s.AnnotateRulesRequest,
        s.AnnotateResponse,
    ),
    "/annotate/llm": (annotate_llm_endpoint, s.AnnotateLlmRequest, s.AnnotateResponse),
    "/kts/plan": (kts_plan_endpoint, s.KtsPlanRequest, s.KtsPlanResponse),
    "/votes/tally": (votes_tally_endpoint, s.VotesTallyRequest, s.VotesTallyResponse),
    "/report/render": (
        report_render_endpoint,
        s.ReportRenderRequest,
        s.ReportRenderResponse,
    ),
    "/eval": (eval_endpoint, s.EvalRequest, s.EvalResponse),
    "/pipeline/run": (
        pipeline_run_endpoint,
        s.PipelineRunRequest,
        s.PipelineRunResponse,
    ),
}

_HTTP_STATUS = {
    InputError: 400,
    PreconditionError: 422,
    ConsistencyError: 422,
    TransportError: 502,
    RequestError: 502,
    AnnotationError: 502,
}


@app.exception_handler(TalkevalError)
async def talkeval_error_handler(request: Request, exc: TalkevalError):
    status = 500
    for klass, code in _HTTP_STATUS.items():
        if isinstance(exc, klass):
            status = code
            break
    return JSONResponse(
        status_code=status,
        content={
            "error": str(exc),
            "kind": type(exc).__name__,
            "exit_code": exc.exit_code,
        },
    )


app.get("/healthz", response_model=s.HealthResponse)(healthz)
for path, (handler, request_model, response_model) in ROUTES.items():
    app.post(path, response_model=response_model)(handler)
