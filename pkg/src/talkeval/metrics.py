"""Transcript quality metrics: WER, severity-weighted WER, terminology
recall, content-wise score breakdowns, correlation and agreement statistics,
and the perplexity-ratio difficulty score.

Weighted sums are carried as exact rationals internally so the reported
identities (swer * N == sum of content-wise weighted scores, K == sum of
unweighted scores) hold exactly, not approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .alignment import EditScript, Mismatch
from .errors import InputError, PreconditionError, UndefinedMetricError
from .transcript import NormalizationProfile, Segment, Token


class ContentType(str, Enum):
    TERM = "TERM"
    NUM = "NUM"
    NE = "NE"
    GRAM = "GRAM"
    DISF = "DISF"
    GEN = "GEN"


class Severity(str, Enum):
    OK = "OK"
    MINOR = "MINOR"
    CRITICAL = "CRITICAL"

    @property
    def encoding(self) -> int:
        return _SEVERITY_INT[self]


_SEVERITY_INT = {Severity.OK: 0, Severity.MINOR: 1, Severity.CRITICAL: 2}

CONTENT_TYPES = tuple(ContentType)
SEVERITIES = (Severity.CRITICAL, Severity.MINOR, Severity.OK)


@dataclass(frozen=True)
class SeverityWeights:
    w_critical: float = 1.0
    w_minor: float = 0.6
    w_ok: float = 0.2
    preset: str = "default"

    def __post_init__(self):
        if not (0.0 <= self.w_ok <= self.w_minor <= self.w_critical <= 1.0):
            raise InputError(
                f"weights must satisfy 0 <= ok <= minor <= critical <= 1, got "
                f"({self.w_critical}, {self.w_minor}, {self.w_ok})"
            )

    def weight(self, severity: Severity) -> float:
        return {
            Severity.CRITICAL: self.w_critical,
            Severity.MINOR: self.w_minor,
            Severity.OK: self.w_ok,
        }[severity]

    def exact_weight(self, severity: Severity) -> Fraction:
        return Fraction(self.weight(severity))


WEIGHT_PRESETS = {
    "default": SeverityWeights(1.0, 0.6, 0.2, preset="default"),
    "alternate": SeverityWeights(1.0, 0.5, 0.1, preset="alternate"),
    "uniform": SeverityWeights(1.0, 1.0, 1.0, preset="uniform"),
}


@dataclass(frozen=True)
class AnnotatedMismatch:
    mismatch: Mismatch
    content_type: ContentType
    severity: Severity
    annotator: str = "rules"  # rules | llm | human

    def __post_init__(self):
        if self.annotator not in ("rules", "llm", "human"):
            raise InputError(f"unknown annotator source {self.annotator!r}")


def _op_key(m: Mismatch) -> tuple:
    return (m.group_id, m.op.kind, m.op.ref_span, m.op.hyp_span)


def wer(script: EditScript) -> float:
    """(insertions + omissions + substitutions) / reference length."""
    if script.ref_len == 0:
        raise UndefinedMetricError("WER undefined for empty reference")
    return script.distance / script.ref_len


def swer_exact(
    annotated: Sequence[AnnotatedMismatch],
    n: int,
    weights: SeverityWeights,
    mismatches: Sequence[Mismatch] | None = None,
) -> Fraction:
    """Severity-weighted error mass over the reference length, as an exact
    rational. Pass the underlying mismatch list to enforce full coverage."""
    if n <= 0:
        raise UndefinedMetricError("SWER undefined for empty reference")
    if mismatches is not None:
        seen = {_op_key(a.mismatch) for a in annotated}
        missing = sorted({m.group_id for m in mismatches if _op_key(m) not in seen})
        if missing:
            raise PreconditionError(
                f"unannotated mismatches in groups: {', '.join(map(str, missing))}"
            )
        if len(annotated) != len(mismatches):
            raise PreconditionError(
                f"{len(annotated)} annotations for {len(mismatches)} mismatches"
            )
    total = sum((weights.exact_weight(a.severity) for a in annotated), Fraction(0))
    return total / n


def swer(
    annotated: Sequence[AnnotatedMismatch],
    n: int,
    weights: SeverityWeights,
    mismatches: Sequence[Mismatch] | None = None,
) -> float:
    return float(swer_exact(annotated, n, weights, mismatches))


def joint_counts(
    annotated: Iterable[AnnotatedMismatch],
) -> dict[ContentType, dict[Severity, int]]:
    counts = {ct: {sev: 0 for sev in Severity} for ct in ContentType}
    for a in annotated:
        counts[a.content_type][a.severity] += 1
    return counts


@dataclass(frozen=True)
class ScoreBreakdown:
    """Content-wise and severity-wise tallies of annotated mismatches.

    The per-(type, severity) integer counts are the source of truth; weighted
    scores and percentages are derived from them.
    """

    counts: dict[ContentType, dict[Severity, int]]
    weights: SeverityWeights
    baseline_total: int | None = None

    def unweighted(self, ct: ContentType) -> int:
        return sum(self.counts[ct].values())

    def weighted_exact(self, ct: ContentType) -> Fraction:
        return sum(
            (self.weights.exact_weight(sev) * c for sev, c in self.counts[ct].items()),
            Fraction(0),
        )

    def weighted(self, ct: ContentType) -> float:
        return float(self.weighted_exact(ct))

    @property
    def total(self) -> int:
        return sum(self.unweighted(ct) for ct in ContentType)

    def total_weight_exact(self) -> Fraction:
        return sum((self.weighted_exact(ct) for ct in ContentType), Fraction(0))

    def severity_counts(self) -> dict[Severity, int]:
        return {
            sev: sum(self.counts[ct][sev] for ct in ContentType) for sev in Severity
        }

    def severity_percentages(self) -> dict[Severity, float]:
        denom = self.baseline_total if self.baseline_total is not None else self.total
        sev = self.severity_counts()
        if denom == 0:
            if self.total:
                raise UndefinedMetricError("baseline_total is 0 with mismatches present")
            return {s: 0.0 for s in Severity}
        return {s: 100.0 * c / denom for s, c in sev.items()}

    def content_scores(self) -> dict[ContentType, tuple[float, int]]:
        return {ct: (self.weighted(ct), self.unweighted(ct)) for ct in ContentType}


def aggregate_scores(
    annotated: Sequence[AnnotatedMismatch],
    weights: SeverityWeights,
    baseline_total: int | None = None,
) -> ScoreBreakdown:
    if baseline_total is not None and baseline_total == 0 and annotated:
        raise UndefinedMetricError("baseline_total is 0 with mismatches present")
    return aggregate_counts(joint_counts(annotated), weights, baseline_total)


def aggregate_counts(
    counts: dict[ContentType, dict[Severity, int]],
    weights: SeverityWeights,
    baseline_total: int | None = None,
) -> ScoreBreakdown:
    full = {ct: {sev: counts.get(ct, {}).get(sev, 0) for sev in Severity} for ct in ContentType}
    breakdown = ScoreBreakdown(counts=full, weights=weights, baseline_total=baseline_total)
    if baseline_total is not None and baseline_total == 0 and breakdown.total:
        raise UndefinedMetricError("baseline_total is 0 with mismatches present")
    return breakdown


def severity_tally_percentages(
    critical: int, minor: int, ok: int, baseline_total: int
) -> tuple[float, float, float]:
    """Percentages of a (critical, minor, ok) tally over a baseline total."""
    if baseline_total <= 0:
        raise UndefinedMetricError("baseline_total must be positive")
    return (
        100.0 * critical / baseline_total,
        100.0 * minor / baseline_total,
        100.0 * ok / baseline_total,
    )


# ---------------------------------------------------------------------------
# Terminology recall


def count_term_hits(
    ref_segments: Sequence[Segment],
    hyp_segments: Sequence[Sequence[Token]],
    profile: NormalizationProfile,
) -> tuple[int, int]:
    """(recovered, total) over all annotated reference term spans.

    A term counts as recovered when its normalized token sequence occurs
    contiguously in the paired hypothesis segment.
    """
    if len(ref_segments) != len(hyp_segments):
        raise PreconditionError(
            f"{len(ref_segments)} reference vs {len(hyp_segments)} hypothesis segments"
        )
    hits = total = 0
    for ref_seg, hyp_seg in zip(ref_segments, hyp_segments):
        hyp_norm = [profile.normalize(t.surface) for t in hyp_seg]
        for span in ref_seg.term_token_spans():
            needle = [profile.normalize(t.surface) for t in span]
            total += 1
            if _contains_contiguous(hyp_norm, needle):
                hits += 1
    return hits, total


def _contains_contiguous(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return True
    k = len(needle)
    return any(haystack[i : i + k] == needle for i in range(len(haystack) - k + 1))


def term_recall(
    ref_segments: Sequence[Segment],
    hyp_segments: Sequence[Sequence[Token]],
    profile: NormalizationProfile,
) -> float:
    """Percentage of reference term spans recovered in the paired hypothesis
    segments. Vacuously 100.0 when the reference annotates no terms."""
    hits, total = count_term_hits(ref_segments, hyp_segments, profile)
    if total == 0:
        return 100.0
    return 100.0 * hits / total


# ---------------------------------------------------------------------------
# Correlation


def _ranks(values: Sequence[float]) -> list[float]:
    """Average ranks (1-based); ties share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def correlation(x: Sequence[float], y: Sequence[float], mode: str = "pearson") -> float:
    """Pearson product-moment or Spearman rank correlation in [-1, 1]."""
    if mode not in ("pearson", "spearman"):
        raise InputError(f"unknown correlation mode {mode!r}")
    if len(x) != len(y):
        raise PreconditionError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise PreconditionError("need at least two points")
    if mode == "spearman":
        x = _ranks(x)
        y = _ranks(y)
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = sum(d * d for d in dx)
    syy = sum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation undefined for constant input")
    r = sum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------------------
# Annotator agreement


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class AgreementReport:
    per_type: dict[ContentType, PRF]
    micro: PRF
    severity_pearson: float | None
    severity_spearman: float | None
    n_items: int


def _prf(tp: int, fp: int, fn: int) -> PRF:
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(precision=p, recall=r, f1=f)


def agreement(
    pred: Sequence[AnnotatedMismatch], gold: Sequence[AnnotatedMismatch]
) -> AgreementReport:
    """Compare predicted annotations against gold annotations of the same
    mismatch set: per-content-type P/R/F1 (percent), micro average over all
    decisions, and Pearson/Spearman over integer severity encodings."""
    return agreement_from_labels(
        {_op_key(a.mismatch): (a.content_type, a.severity) for a in pred},
        {_op_key(a.mismatch): (a.content_type, a.severity) for a in gold},
    )


def agreement_from_labels(
    pred_map: dict, gold_map: dict
) -> AgreementReport:
    """Agreement over arbitrary keyed label maps of (ContentType, Severity)."""
    if set(pred_map) != set(gold_map):
        only_pred = sorted(set(pred_map) - set(gold_map))[:10]
        only_gold = sorted(set(gold_map) - set(pred_map))[:10]
        raise PreconditionError(
            "annotation sets disagree; keys only in pred: "
            f"{only_pred}, only in gold: {only_gold}"
        )
    if not pred_map:
        raise PreconditionError("cannot compute agreement on empty annotation sets")

    keys = sorted(pred_map)
    confusion = {g: {p: 0 for p in ContentType} for g in ContentType}
    sev_pred: list[float] = []
    sev_gold: list[float] = []
    for k in keys:
        pct, psev = pred_map[k]
        gct, gsev = gold_map[k]
        confusion[gct][pct] += 1
        sev_pred.append(psev.encoding)
        sev_gold.append(gsev.encoding)

    per_type = {}
    tp_sum = fp_sum = fn_sum = 0
    for ct in ContentType:
        tp = confusion[ct][ct]
        fp = sum(confusion[g][ct] for g in ContentType if g != ct)
        fn = sum(confusion[ct][p] for p in ContentType if p != ct)
        per_type[ct] = _prf(tp, fp, fn)
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    micro = _prf(tp_sum, fp_sum, fn_sum)

    def _safe_corr(mode: str) -> float | None:
        try:
            return correlation(sev_pred, sev_gold, mode)
        except UndefinedMetricError:
            return None
        except PreconditionError:
            return None

    return AgreementReport(
        per_type=per_type,
        micro=micro,
        severity_pearson=_safe_corr("pearson"),
        severity_spearman=_safe_corr("spearman"),
        n_items=len(keys),
    )


def confusion_prf(matrix: Sequence[Sequence[int]]) -> tuple[list[PRF], PRF]:
    """P/R/F1 per class and micro average from a gold-by-pred count matrix."""
    n = len(matrix)
    per = []
    tp_sum = fp_sum = fn_sum = 0
    for c in range(n):
        tp = matrix[c][c]
        fp = sum(matrix[g][c] for g in range(n) if g != c)
        fn = sum(matrix[c][p] for p in range(n) if p != c)
        per.append(_prf(tp, fp, fn))
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    return per, _prf(tp_sum, fp_sum, fn_sum)


# ---------------------------------------------------------------------------
# Difficulty score


def difficulty_score(cppl_baseline: float, cppl_speech: float) -> float:
    """Ratio of synthetic-speech to real-speech conditional perplexity.

    Smaller means harder; no clamping is applied.
    """
    if cppl_baseline <= 0 or cppl_speech <= 0:
        raise InputError("conditional perplexities must be positive")
    return cppl_baseline / cppl_speech


def perplexity_from_logprobs(logprobs: Sequence[float]) -> float:
    """Reduce per-token log-probabilities to a perplexity via exp(-mean)."""
    if not logprobs:
        raise InputError("need at least one log-probability")
    return math.exp(-sum(logprobs) / len(logprobs))


# ---------------------------------------------------------------------------
# Evaluation report


@dataclass(frozen=True)
class EvalReport:
    """Per-video (or aggregate) evaluation summary.

    Integer tallies are authoritative; WER/SWER/score fields are derived and
    revalidated on construction so an inconsistent report cannot exist.
    """

    video_id: str
    n_ref: int
    counts: dict[ContentType, dict[Severity, int]]
    weights: SeverityWeights
    term_found: int | None = None
    term_total: int | None = None
    baseline_total: int | None = None
    insertions: int = 0
    omissions: int = 0
    substitutions: int = 0

    def __post_init__(self):
        if self.n_ref <= 0:
            raise UndefinedMetricError("report needs a non-empty reference")
        if self.insertions + self.omissions + self.substitutions != self.k_mismatches:
            raise PreconditionError(
                f"operation counts {(self.insertions, self.omissions, self.substitutions)} "
                f"do not sum to mismatch tally {self.k_mismatches}"
            )

    @property
    def breakdown(self) -> ScoreBreakdown:
        return ScoreBreakdown(
            counts=self.counts, weights=self.weights, baseline_total=self.baseline_total
        )

    @property
    def k_mismatches(self) -> int:
        return self.breakdown.total

    @property
    def wer(self) -> float:
        return self.k_mismatches / self.n_ref

    def swer_exact(self) -> Fraction:
        return self.breakdown.total_weight_exact() / self.n_ref

    @property
    def swer(self) -> float:
        return float(self.swer_exact())

    @property
    def term_recall(self) -> float | None:
        if self.term_total is None:
            return None
        if self.term_total == 0:
            return 100.0
        return 100.0 * (self.term_found or 0) / self.term_total

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "n_ref": self.n_ref,
            "counts": {
                ct.value: {sev.value: c for sev, c in row.items() if c}
                for ct, row in self.counts.items()
                if any(row.values())
            },
            "weights": {
                "critical": self.weights.w_critical,
                "minor": self.weights.w_minor,
                "ok": self.weights.w_ok,
                "preset": self.weights.preset,
            },
            "operations": {
                "insertions": self.insertions,
                "omissions": self.omissions,
                "substitutions": self.substitutions,
            },
            "term_found": self.term_found,
            "term_total": self.term_total,
            "baseline_total": self.baseline_total,
            "wer": self.wer,
            "swer": self.swer,
            "term_recall": self.term_recall,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        w = data["weights"]
        counts = {
            ContentType(ct): {Severity(s): int(c) for s, c in row.items()}
            for ct, row in data.get("counts", {}).items()
        }
        full = {
            ct: {sev: counts.get(ct, {}).get(sev, 0) for sev in Severity}
            for ct in ContentType
        }
        ops = data.get("operations", {})
        report = cls(
            video_id=data["video_id"],
            n_ref=int(data["n_ref"]),
            counts=full,
            weights=SeverityWeights(
                w["critical"], w["minor"], w["ok"], preset=w.get("preset", "custom")
            ),
            term_found=data.get("term_found"),
            term_total=data.get("term_total"),
            baseline_total=data.get("baseline_total"),
            insertions=int(ops.get("insertions", 0)),
            omissions=int(ops.get("omissions", 0)),
            substitutions=int(ops.get("substitutions", 0)),
        )
        for key in ("wer", "swer"):
            if key in data and data[key] != getattr(report, key):
                raise PreconditionError(
                    f"stored {key}={data[key]} disagrees with value derived "
                    f"from counts ({getattr(report, key)})"
                )
        return report


def build_report(
    video_id: str,
    script_counts: tuple[int, int, int],
    n_ref: int,
    annotated: Sequence[AnnotatedMismatch],
    weights: SeverityWeights,
    term_found: int | None = None,
    term_total: int | None = None,
    baseline_total: int | None = None,
) -> EvalReport:
    """Assemble a report from one video's alignment counts and annotations."""
    i, o, s = script_counts
    if i + o + s != len(annotated):
        raise PreconditionError(
            f"{len(annotated)} annotations for {i + o + s} edit operations"
        )
    return EvalReport(
        video_id=video_id,
        n_ref=n_ref,
        counts=joint_counts(annotated),
        weights=weights,
        term_found=term_found,
        term_total=term_total,
        baseline_total=baseline_total,
        insertions=i,
        omissions=o,
        substitutions=s,
    )


def merge_reports(video_reports: Sequence[EvalReport], video_id: str = "ALL") -> EvalReport:
    """Aggregate per-video reports; tallies and reference lengths add up."""
    if not video_reports:
        raise PreconditionError("nothing to merge")
    weights = video_reports[0].weights
    for r in video_reports[1:]:
        if r.weights != weights:
            raise PreconditionError("cannot merge reports with different weights")
    counts = {ct: {sev: 0 for sev in Severity} for ct in ContentType}
    for r in video_reports:
        for ct in ContentType:
            for sev in Severity:
                counts[ct][sev] += r.counts[ct][sev]
    term_totals = [r.term_total for r in video_reports if r.term_total is not None]
    return EvalReport(
        video_id=video_id,
        n_ref=sum(r.n_ref for r in video_reports),
        counts=counts,
        weights=weights,
        term_found=sum(r.term_found or 0 for r in video_reports) if term_totals else None,
        term_total=sum(term_totals) if term_totals else None,
        baseline_total=video_reports[0].baseline_total,
        insertions=sum(r.insertions for r in video_reports),
        omissions=sum(r.omissions for r in video_reports),
        substitutions=sum(r.substitutions for r in video_reports),
    )
