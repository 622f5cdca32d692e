"""Content-type and severity annotation of alignment mismatches.

Two backends: a deterministic rule backend driven by lexicons, and a remote
chat-model backend that labels whole mismatch groups from the highlighted
diff. Annotations are exchanged as line-delimited JSON records::

    {"video_id": ..., "scene_id": ..., "group_id": 1, "op_index": 0,
     "op_kind": "substitution", "ref_text": "BERT", "hyp_text": "birds",
     "content_type": "TERM", "severity": "CRITICAL", "annotator": "llm"}

Gold human labels use the same format, so agreement statistics consume both
sides uniformly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

from .alignment import (
    EditScript,
    INSERTION,
    Mismatch,
    OMISSION,
    SUBSTITUTION,
    extract_mismatches,
    render_highlight,
)
from .errors import AnnotationError, InputError, PreconditionError
from .metrics import AnnotatedMismatch, ContentType, Severity
from .transcript import LENIENT_PROFILE, NormalizationProfile, Token

log = logging.getLogger(__name__)

_KIND_LETTER = {SUBSTITUTION: "S", OMISSION: "O", INSERTION: "I"}

DEFAULT_GRAMMATICAL = frozenset(
    """
    a an the
    of in to for with on at from by about as into like through after over
    between out against during without before under around among within
    across behind beyond near above below off up down onto upon
    and or but nor so yet if because although though while whereas than
    that whether since unless until when where
    be am is are was were been being have has had having do does did
    will would shall should may might must can could
    it its this these those they them their he she his her him we us our
    you your i me my
    not no
    """.split()
)

_NUMBER_WORDS = frozenset(
    """
    zero one two three four five six seven eight nine ten eleven twelve
    thirteen fourteen fifteen sixteen seventeen eighteen nineteen twenty
    thirty forty fifty sixty seventy eighty ninety hundred thousand million
    billion trillion percent half quarter third fourth fifth
    first second sixth seventh eighth ninth tenth dozen
    """.split()
)

_DIGIT_RE = re.compile(r"\d")


@dataclass(frozen=True)
class RuleLexicons:
    """Word lists backing the rule annotator. Terminology and gazetteer
    lookups are normalization-aware; overlaps are reported but tolerated."""

    fillers: frozenset[str] = frozenset()
    grammatical: frozenset[str] = DEFAULT_GRAMMATICAL
    terminology: frozenset[str] = frozenset()
    gazetteer: frozenset[str] = frozenset()

    def __post_init__(self):
        named = {
            "fillers": self.fillers,
            "grammatical": self.grammatical,
            "terminology": self.terminology,
            "gazetteer": self.gazetteer,
        }
        items = list(named.items())
        for i, (name_a, set_a) in enumerate(items):
            for name_b, set_b in items[i + 1 :]:
                overlap = set_a & set_b
                if overlap:
                    log.warning(
                        "lexicons %s and %s overlap on %d words (e.g. %r)",
                        name_a, name_b, len(overlap), sorted(overlap)[0],
                    )

    @classmethod
    def build(
        cls,
        terminology: Sequence[str] = (),
        gazetteer: Sequence[str] = (),
        fillers: Sequence[str] | None = None,
        grammatical: Sequence[str] | None = None,
        profile: NormalizationProfile = LENIENT_PROFILE,
    ) -> "RuleLexicons":
        """Normalize user-supplied word lists once, at load time. Multi-word
        terms contribute both the full phrase and their component words."""

        def norm_words(words: Sequence[str]) -> frozenset[str]:
            out = set()
            for w in words:
                phrase = profile.normalize(w).lower()
                if phrase:
                    out.add(phrase)
                for part in w.split():
                    p = profile.normalize(part).lower()
                    if p:
                        out.add(p)
            return frozenset(out)

        from .transcript import DEFAULT_FILLERS

        return cls(
            fillers=norm_words(fillers) if fillers is not None else DEFAULT_FILLERS,
            grammatical=(
                norm_words(grammatical) if grammatical is not None else DEFAULT_GRAMMATICAL
            ),
            terminology=norm_words(terminology),
            gazetteer=norm_words(gazetteer),
        )


def _norm_key(text: str, profile: NormalizationProfile) -> str:
    return profile.normalize(text).lower()


def _is_numeric(text: str, profile: NormalizationProfile) -> bool:
    words = text.split()
    if not words:
        return False
    return all(
        _DIGIT_RE.search(w) or _norm_key(w, profile) in _NUMBER_WORDS for w in words
    )


def _looks_like_name(text: str, position: int) -> bool:
    # Capitalized token away from the segment start; acronyms are caught by
    # the terminology set first when one is supplied.
    words = text.split()
    return bool(words) and position > 0 and all(w[:1].isupper() for w in words)


_REPETITION_WINDOW = 3


def _near_duplicate(tokens: Sequence[Token], index: int, profile: NormalizationProfile) -> bool:
    # Stutters repeat within a few words ("try to um try to"), so a small
    # window catches them without flagging distant reuse of common words.
    key = _norm_key(tokens[index].surface, profile)
    lo = max(0, index - _REPETITION_WINDOW)
    hi = min(len(tokens), index + _REPETITION_WINDOW + 1)
    return any(
        i != index and _norm_key(tokens[i].surface, profile) == key
        for i in range(lo, hi)
    )


def _is_repetition(
    m: Mismatch,
    profile: NormalizationProfile,
    ref_tokens: Sequence[Token] | None,
    hyp_tokens: Sequence[Token] | None,
) -> bool:
    if m.op.kind == OMISSION and ref_tokens is not None:
        return _near_duplicate(ref_tokens, m.op.ref_span[0], profile)
    if m.op.kind == INSERTION and hyp_tokens is not None:
        return _near_duplicate(hyp_tokens, m.op.hyp_span[0], profile)
    return False


def classify_content(
    m: Mismatch,
    lexicons: RuleLexicons,
    profile: NormalizationProfile,
    ref_tokens: Sequence[Token] | None = None,
    hyp_tokens: Sequence[Token] | None = None,
) -> ContentType:
    """Type a mismatch by its ground-truth (reference) span; pure insertions
    fall back to the hypothesis span."""
    text = m.hyp_text if m.op.kind == INSERTION else m.ref_text
    key = _norm_key(text, profile)
    if _is_numeric(text, profile):
        return ContentType.NUM
    if key in lexicons.terminology:
        return ContentType.TERM
    if key in lexicons.gazetteer or _looks_like_name(text, m.op.position):
        return ContentType.NE
    if key in lexicons.fillers or _is_repetition(m, profile, ref_tokens, hyp_tokens):
        return ContentType.DISF
    if key in lexicons.grammatical:
        return ContentType.GRAM
    return ContentType.GEN


def _severity(m: Mismatch, content_type: ContentType, profile: NormalizationProfile) -> Severity:
    if m.op.kind == SUBSTITUTION and profile.normalize(m.ref_text) == profile.normalize(
        m.hyp_text
    ):
        return Severity.OK
    if content_type == ContentType.DISF and m.op.kind == OMISSION:
        return Severity.OK
    if m.op.kind == INSERTION:
        # Contextual judgement is out of reach for rules; stay conservative.
        return Severity.MINOR
    if content_type in (ContentType.TERM, ContentType.NUM, ContentType.NE):
        return Severity.CRITICAL
    return Severity.MINOR


def annotate_rules(
    mismatches: Sequence[Mismatch],
    lexicons: RuleLexicons,
    profile: NormalizationProfile = LENIENT_PROFILE,
    ref_tokens: Sequence[Token] | None = None,
    hyp_tokens: Sequence[Token] | None = None,
) -> list[AnnotatedMismatch]:
    """Deterministic lexicon-driven annotation. Token context, when passed,
    enables repetition detection for disfluencies."""
    out = []
    for m in mismatches:
        ct = classify_content(m, lexicons, profile, ref_tokens, hyp_tokens)
        out.append(
            AnnotatedMismatch(
                mismatch=m,
                content_type=ct,
                severity=_severity(m, ct, profile),
                annotator="rules",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Remote-model backend


@dataclass(frozen=True)
class AnnotationRequest:
    """Everything one model call needs to label the mismatch groups of a
    single aligned (reference, hypothesis) pair."""

    highlighted_ref: str
    highlighted_hyp: str
    groups: tuple[tuple[int, tuple[str, ...]], ...]  # (group_id, op kind letters)
    mismatches: tuple[Mismatch, ...] = field(repr=False, default=())

    def __post_init__(self):
        ids = [gid for gid, _ in self.groups]
        if ids != list(range(1, len(ids) + 1)):
            raise PreconditionError(f"group ids must be dense from 1, got {ids}")

    def index_lines(self) -> str:
        return "\n".join(
            f"{gid}: {','.join(kinds)}" for gid, kinds in self.groups
        )


def build_annotation_request(
    script: EditScript, ref: Sequence[Token], hyp: Sequence[Token]
) -> AnnotationRequest:
    mismatches = extract_mismatches(script, list(ref), list(hyp))
    highlighted_ref, highlighted_hyp = render_highlight(script, list(ref), list(hyp))
    groups: dict[int, list[str]] = {}
    for m in mismatches:
        groups.setdefault(m.group_id, []).append(_KIND_LETTER[m.op.kind])
    return AnnotationRequest(
        highlighted_ref=highlighted_ref,
        highlighted_hyp=highlighted_hyp,
        groups=tuple((gid, tuple(kinds)) for gid, kinds in sorted(groups.items())),
        mismatches=tuple(mismatches),
    )


_TYPE_ALIASES = {ct.value: ct for ct in ContentType}
_SEVERITY_ALIASES = {
    "OK": Severity.OK,
    "MIN": Severity.MINOR,
    "MINOR": Severity.MINOR,
    "CRI": Severity.CRITICAL,
    "CRITICAL": Severity.CRITICAL,
}

_LABEL_LINE_RE = re.compile(
    r"^\s*(\d+)\s*[:.]\s*([A-Za-z]+)\s*/\s*([A-Za-z]+)\s*$"
)


def parse_label_lines(text: str, expected_ids: Sequence[int]) -> dict[int, tuple[ContentType, Severity]]:
    """Parse strict ``group_id: TYPE/SEV`` lines; anything off-contract is an
    AnnotationError carrying the raw model text."""
    labels: dict[int, tuple[ContentType, Severity]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        match = _LABEL_LINE_RE.match(line)
        if not match:
            raise AnnotationError(f"unparseable label line: {line.strip()!r}", raw_text=text)
        gid = int(match.group(1))
        type_txt = match.group(2).upper()
        sev_txt = match.group(3).upper()
        if type_txt not in _TYPE_ALIASES:
            raise AnnotationError(f"unknown content type {type_txt!r}", raw_text=text)
        if sev_txt not in _SEVERITY_ALIASES:
            raise AnnotationError(f"unknown severity {sev_txt!r}", raw_text=text)
        if gid in labels:
            raise AnnotationError(f"duplicate label for group {gid}", raw_text=text)
        labels[gid] = (_TYPE_ALIASES[type_txt], _SEVERITY_ALIASES[sev_txt])
    missing = [gid for gid in expected_ids if gid not in labels]
    extra = [gid for gid in labels if gid not in set(expected_ids)]
    if missing or extra:
        raise AnnotationError(
            f"label coverage mismatch; missing groups {missing}, unexpected {extra}",
            raw_text=text,
        )
    return labels


def annotate_llm(
    request: AnnotationRequest,
    client,
    guideline: str,
    max_label_attempts: int = 2,
) -> list[AnnotatedMismatch]:
    """Label every mismatch group via the remote model, then fan the group
    label out to its operations. Returns [] without any network traffic when
    the request has no mismatches."""
    if not request.groups:
        return []
    expected_ids = [gid for gid, _ in request.groups]
    user = (
        f"{request.highlighted_ref}\n\n{request.highlighted_hyp}\n\n"
        f"Mismatch index (id: operation kinds):\n{request.index_lines()}\n"
    )
    last_error: AnnotationError | None = None
    for attempt in range(max_label_attempts):
        prompt = user
        if attempt:
            prompt += (
                "\nYour previous reply did not follow the output contract. "
                "Reply with exactly one line per group id, formatted as "
                "'id: TYPE/SEVERITY', and nothing else.\n"
            )
        raw = client.complete_text(system=guideline, user=prompt)
        try:
            labels = parse_label_lines(raw, expected_ids)
            break
        except AnnotationError as exc:
            last_error = exc
            log.warning("annotation reply rejected (attempt %d): %s", attempt + 1, exc)
    else:
        assert last_error is not None
        raise last_error

    out = []
    for m in request.mismatches:
        ct, sev = labels[m.group_id]
        out.append(
            AnnotatedMismatch(mismatch=m, content_type=ct, severity=sev, annotator="llm")
        )
    return out


def validate_annotations(
    annotated: Sequence[AnnotatedMismatch], script: EditScript
) -> list[AnnotatedMismatch]:
    """All-or-nothing check: every non-match op annotated exactly once, labels
    inside the closed enums, one label per group."""
    problems: list[str] = []

    expected: dict[tuple, int] = {}
    for op in script.ops:
        if op.kind != "match":
            expected[(op.kind, op.ref_span, op.hyp_span)] = 0
    group_of: dict[tuple, int] = {}
    group_labels: dict[int, set[tuple]] = {}
    for a in annotated:
        if not isinstance(a.content_type, ContentType):
            problems.append(f"group {a.mismatch.group_id}: bad content type {a.content_type!r}")
        if not isinstance(a.severity, Severity):
            problems.append(f"group {a.mismatch.group_id}: bad severity {a.severity!r}")
        key = (a.mismatch.op.kind, a.mismatch.op.ref_span, a.mismatch.op.hyp_span)
        if key not in expected:
            problems.append(f"group {a.mismatch.group_id}: op {key} not in script")
            continue
        expected[key] += 1
        group_of[key] = a.mismatch.group_id
        group_labels.setdefault(a.mismatch.group_id, set()).add(
            (a.content_type, a.severity)
        )

    for key, seen in expected.items():
        if seen == 0:
            problems.append(f"op {key} has no annotation")
        elif seen > 1:
            problems.append(f"op {key} annotated {seen} times (group {group_of[key]})")
    for gid, labels in sorted(group_labels.items()):
        if len(labels) > 1:
            problems.append(f"group {gid} carries conflicting labels {sorted(labels)}")

    if problems:
        raise PreconditionError(
            "annotation validation failed:\n  " + "\n  ".join(problems)
        )
    return list(annotated)


# ---------------------------------------------------------------------------
# Annotation interchange records


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    scene_id: str
    group_id: int
    op_index: int
    op_kind: str
    ref_text: str
    hyp_text: str
    content_type: ContentType
    severity: Severity
    annotator: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "video_id": self.video_id,
                "scene_id": self.scene_id,
                "group_id": self.group_id,
                "op_index": self.op_index,
                "op_kind": self.op_kind,
                "ref_text": self.ref_text,
                "hyp_text": self.hyp_text,
                "content_type": self.content_type.value,
                "severity": self.severity.value,
                "annotator": self.annotator,
            },
            ensure_ascii=False,
        )


def records_from_annotations(
    video_id: str, scene_id: str, annotated: Sequence[AnnotatedMismatch]
) -> list[AnnotationRecord]:
    return [
        AnnotationRecord(
            video_id=video_id,
            scene_id=scene_id,
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


def write_annotation_records(records: Sequence[AnnotationRecord], fp: IO[str] | str | Path) -> None:
    if isinstance(fp, (str, Path)):
        with open(fp, "w", encoding="utf-8") as fh:
            write_annotation_records(records, fh)
        return
    for rec in records:
        fp.write(rec.to_json())
        fp.write("\n")


def read_annotation_records(fp: IO[str] | str | Path) -> list[AnnotationRecord]:
    if isinstance(fp, (str, Path)):
        try:
            with open(fp, "r", encoding="utf-8") as fh:
                return read_annotation_records(fh)
        except OSError as exc:
            raise InputError(f"cannot read annotation file {fp}: {exc}") from exc

    records = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            records.append(
                AnnotationRecord(
                    video_id=str(rec["video_id"]),
                    scene_id=str(rec["scene_id"]),
                    group_id=int(rec["group_id"]),
                    op_index=int(rec["op_index"]),
                    op_kind=str(rec["op_kind"]),
                    ref_text=str(rec.get("ref_text", "")),
                    hyp_text=str(rec.get("hyp_text", "")),
                    content_type=ContentType(rec["content_type"]),
                    severity=Severity(rec["severity"]),
                    annotator=str(rec.get("annotator", "human")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad annotation record on line {lineno}: {exc}") from exc
    return records


def agreement_keyed_labels(
    records: Sequence[AnnotationRecord],
) -> dict[tuple, tuple[ContentType, Severity]]:
    out = {}
    for rec in records:
        key = (rec.video_id, rec.scene_id, rec.group_id, rec.op_index)
        if key in out:
            raise InputError(f"duplicate annotation record for {key}")
        out[key] = (rec.content_type, rec.severity)
    return out
