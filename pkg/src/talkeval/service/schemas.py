"""Pydantic request/response models for the evaluation service.

These mirror the core dataclasses at the wire boundary; conversion helpers
keep the core free of pydantic.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..metrics import ContentType, Severity, SeverityWeights, WEIGHT_PRESETS
from ..transcript import (
    DEFAULT_FILLERS,
    NormalizationProfile,
    Segment,
    Token,
    Transcript,
    record_to_segment,
)
from ..errors import InputError


class ProfileModel(BaseModel):
    unicode_form: bool = True
    lowercase: bool = False
    strip_punct: bool = False
    collapse_hyphens: bool = False
    fillers: list[str] | None = None

    def to_profile(self) -> NormalizationProfile:
        return NormalizationProfile(
            unicode_form=self.unicode_form,
            lowercase=self.lowercase,
            strip_punct=self.strip_punct,
            collapse_hyphens=self.collapse_hyphens,
            filler_lexicon=(
                frozenset(self.fillers) if self.fillers is not None else DEFAULT_FILLERS
            ),
        )


LENIENT_PROFILE_MODEL = ProfileModel(
    lowercase=True, strip_punct=True, collapse_hyphens=True
)


class WeightsModel(BaseModel):
    critical: float = 1.0
    minor: float = 0.6
    ok: float = 0.2
    preset: str | None = None

    def to_weights(self) -> SeverityWeights:
        if self.preset is not None:
            if self.preset not in WEIGHT_PRESETS:
                raise InputError(
                    f"unknown weight preset {self.preset!r}; "
                    f"known: {sorted(WEIGHT_PRESETS)}"
                )
            return WEIGHT_PRESETS[self.preset]
        return SeverityWeights(self.critical, self.minor, self.ok, preset="custom")


class TokenModel(BaseModel):
    surface: str
    normalized: str

    @classmethod
    def from_token(cls, t: Token) -> "TokenModel":
        return cls(surface=t.surface, normalized=t.normalized)


class TokenizeRequest(BaseModel):
    text: str
    profile: ProfileModel = ProfileModel()


class TokenizeResponse(BaseModel):
    tokens: list[TokenModel]


class EditOpModel(BaseModel):
    kind: str
    ref_span: tuple[int, int]
    hyp_span: tuple[int, int]
    position: int


class MismatchModel(BaseModel):
    group_id: int
    op: EditOpModel
    ref_text: str
    hyp_text: str


class AlignRequest(BaseModel):
    ref: list[str]
    hyp: list[str]


class AlignResponse(BaseModel):
    ops: list[EditOpModel]
    insertions: int
    omissions: int
    substitutions: int
    ref_len: int
    distance: int


class HighlightResponse(BaseModel):
    highlighted_ref: str
    highlighted_hyp: str
    mismatches: list[MismatchModel]


class ParseHighlightRequest(BaseModel):
    highlighted_ref: str
    highlighted_hyp: str


class ParseHighlightResponse(BaseModel):
    mismatches: list[MismatchModel]


class ResegmentRequest(BaseModel):
    ref_segments: list[list[str]]
    hyp: list[str]


class ResegmentResponse(BaseModel):
    boundaries: list[int]
    per_segment_cost: list[int]
    total_cost: int
    segments: list[list[str]]


class LabeledItem(BaseModel):
    content_type: ContentType
    severity: Severity


class ScoreRequest(BaseModel):
    items: list[LabeledItem]
    n_ref: int = Field(gt=0)
    weights: WeightsModel = WeightsModel()
    baseline_total: int | None = None


class ContentScoreModel(BaseModel):
    weighted: float
    unweighted: int


class ScoreResponse(BaseModel):
    wer: float
    swer: float
    content_scores: dict[str, ContentScoreModel]
    severity_counts: dict[str, int]
    severity_percentages: dict[str, float]
    n_ref: int
    k_mismatches: int


class CorrelationRequest(BaseModel):
    x: list[float]
    y: list[float]
    mode: str = "pearson"


class CorrelationResponse(BaseModel):
    value: float
    mode: str
    n: int


class AnnotationRecordModel(BaseModel):
    video_id: str = ""
    scene_id: str = ""
    group_id: int
    op_index: int
    op_kind: str = ""
    ref_text: str = ""
    hyp_text: str = ""
    content_type: ContentType
    severity: Severity
    annotator: str = "human"


class AgreementRequest(BaseModel):
    pred: list[AnnotationRecordModel]
    gold: list[AnnotationRecordModel]


class PRFModel(BaseModel):
    precision: float
    recall: float
    f1: float


class AgreementResponse(BaseModel):
    per_type: dict[str, PRFModel]
    micro: PRFModel
    severity_pearson: float | None
    severity_spearman: float | None
    n_items: int


class SegmentRecordModel(BaseModel):
    video_id: str = ""
    segment_id: str
    start_s: float | None = None
    end_s: float | None = None
    text: str
    terms: list[tuple[int, int]] = Field(default_factory=list)

    def to_segment(self, profile: NormalizationProfile) -> Segment:
        return record_to_segment(
            {
                "segment_id": self.segment_id,
                "start_s": self.start_s,
                "end_s": self.end_s,
                "text": self.text,
                "terms": [list(t) for t in self.terms],
            },
            profile,
        )


def segments_to_transcript(
    video_id: str,
    records: list[SegmentRecordModel],
    role: str,
    profile: NormalizationProfile,
) -> Transcript:
    return Transcript(
        video_id=video_id,
        segments=tuple(r.to_segment(profile) for r in records),
        role=role,
    )


class TermRecallRequest(BaseModel):
    ref_segments: list[SegmentRecordModel]
    hyp_segments: list[str]  # plain text per paired segment
    profile: ProfileModel = LENIENT_PROFILE_MODEL


class TermRecallResponse(BaseModel):
    recall: float
    found: int
    total: int


class DifficultyRequest(BaseModel):
    cppl_baseline: float | None = None
    cppl_speech: float | None = None
    baseline_logprobs: list[float] | None = None
    speech_logprobs: list[float] | None = None


class DifficultyResponse(BaseModel):
    score: float
    cppl_baseline: float
    cppl_speech: float


class LexiconsModel(BaseModel):
    terminology: list[str] = Field(default_factory=list)
    gazetteer: list[str] = Field(default_factory=list)
    fillers: list[str] | None = None
    grammatical: list[str] | None = None


class AnnotateRulesRequest(BaseModel):
    ref: list[str]
    hyp: list[str]
    lexicons: LexiconsModel = LexiconsModel()
    profile: ProfileModel = LENIENT_PROFILE_MODEL


class AnnotationModel(BaseModel):
    group_id: int
    op_index: int
    op_kind: str
    ref_text: str
    hyp_text: str
    content_type: ContentType
    severity: Severity
    annotator: str


class AnnotateResponse(BaseModel):
    annotations: list[AnnotationModel]
    highlighted_ref: str
    highlighted_hyp: str
    n_ref: int


class EndpointModel(BaseModel):
    base_url: str
    model_name: str
    api_key_env: str = "TALKEVAL_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    retry_backoff_s: float = 1.0


class AnnotateLlmRequest(BaseModel):
    ref: list[str]
    hyp: list[str]
    endpoint: EndpointModel
    cache_dir: str | None = None
    guideline: str | None = None


class KtsPlanRequest(BaseModel):
    features: list[list[float]]
    fps: float = Field(gt=0)
    max_segments: int = Field(default=30, ge=1)
    penalty_coeff: float = Field(default=1.0, ge=0)
    stride: int = Field(default=1, ge=1)


class KtsPlanResponse(BaseModel):
    change_points: list[int]
    spans_s: list[tuple[float, float]]
    sample_times_s: list[float]
    fps: float
    n_frames: int


class VoteModel(BaseModel):
    video_id: str
    scene_id: str = ""
    system_a: str
    system_b: str
    verdict: str
    annotator_group: str = ""


class VotesTallyRequest(BaseModel):
    votes: list[VoteModel]
    system_a: str | None = None
    system_b: str | None = None


class VotesTallyResponse(BaseModel):
    win: float
    tie: float
    lose: float
    n: int


class ReportRenderRequest(BaseModel):
    bundle: dict
    format: str = "table"


class ReportRenderResponse(BaseModel):
    text: str


class EvalRequest(BaseModel):
    video_id: str
    reference: list[SegmentRecordModel]
    hypothesis: list[SegmentRecordModel]
    annotations: list[AnnotationRecordModel] | None = None
    lexicons: LexiconsModel = LexiconsModel()
    weights: WeightsModel = WeightsModel()
    baseline_total: int | None = None
    case_fold: bool = False
    allow_resegment: bool = True


class EvalResponse(BaseModel):
    report: dict
    highlighted: list[dict]  # per segment: {segment_id, ref, hyp}


class PipelineRunRequest(BaseModel):
    mode: str
    video_id: str
    transcript_path: str
    features_path: str | None = None
    frames_dir: str | None = None
    text_endpoint: EndpointModel | None = None
    vision_endpoint: EndpointModel | None = None
    cache_dir: str | None = None
    use_cache: bool = True
    max_segments: int = 30
    penalty_coeff: float = 1.0
    stride: int = 1
    max_parallel_scenes: int = 4
    output_path: str | None = None


class PipelineRunResponse(BaseModel):
    manifest: dict
    transcript: list[dict]  # segment records of the final transcript


class HealthResponse(BaseModel):
    status: str
    version: str
