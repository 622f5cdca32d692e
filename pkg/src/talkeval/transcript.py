"""Transcript data model, tokenization and text normalization.

Transcripts are exchanged as line-delimited JSON (UTF-8), one record per
segment::

    {"video_id": "...", "segment_id": "...", "start_s": 1.2, "end_s": 4.5,
     "text": "...", "terms": [[0, 2], ...]}

``start_s``/``end_s`` are ``null`` for untimed segments. ``terms`` holds
half-open token-index ranges marking annotated terminology spans.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

from .errors import ConsistencyError, InputError, PreconditionError

log = logging.getLogger(__name__)

DEFAULT_FILLERS = frozenset(
    "uh um ah er eh hm hmm mm mhm uhm uh-huh erm".split()
)


@dataclass(frozen=True)
class NormalizationProfile:
    """Immutable recipe turning a surface form into its matching key.

    Two tokens are normalization-equal iff their normalized forms are
    byte-identical under the same profile.
    """

    unicode_form: bool = True
    lowercase: bool = False
    strip_punct: bool = False
    collapse_hyphens: bool = False
    filler_lexicon: frozenset[str] = DEFAULT_FILLERS

    def normalize(self, surface: str) -> str:
        text = surface
        if self.unicode_form:
            text = unicodedata.normalize("NFC", text)
        if self.lowercase:
            text = text.lower()
        if self.collapse_hyphens:
            text = text.replace("-", "").replace("‐", "")
        if self.strip_punct:
            text = "".join(c for c in text if not unicodedata.category(c).startswith("P"))
        return text

    def is_filler(self, surface: str) -> bool:
        return self.normalize(surface).lower() in self.filler_lexicon


# Raw metric profile: surfaces compared verbatim so that e.g.
# "fine-tuning" vs "finetuning" still counts as an error.
WER_PROFILE = NormalizationProfile(
    unicode_form=True, lowercase=False, strip_punct=False, collapse_hyphens=False
)

# Severity heuristics tolerate casing, punctuation and hyphenation noise.
LENIENT_PROFILE = NormalizationProfile(
    unicode_form=True, lowercase=True, strip_punct=True, collapse_hyphens=True
)


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str

    def __post_init__(self):
        if not self.surface:
            raise InputError("token surface must be non-empty")


def tokenize(text: str, profile: NormalizationProfile = WER_PROFILE) -> list[Token]:
    """Split text into tokens on whitespace after canonical normalization.

    Empty or whitespace-only input yields an empty list.
    """
    try:
        text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InputError(f"text is not valid Unicode: {exc}") from exc
    if profile.unicode_form:
        text = unicodedata.normalize("NFC", text)
    return [Token(surface=w, normalized=profile.normalize(w)) for w in text.split()]


def surfaces(tokens: Iterable[Token]) -> list[str]:
    return [t.surface for t in tokens]


@dataclass(frozen=True)
class Segment:
    """One timed (or untimed) stretch of speech with optional term spans."""

    id: str
    tokens: tuple[Token, ...]
    start_s: float | None = None
    end_s: float | None = None
    terms: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if (self.start_s is None) != (self.end_s is None):
            raise InputError(f"segment {self.id}: start_s and end_s must both be set or both null")
        if self.start_s is not None:
            if self.start_s < 0:
                raise InputError(f"segment {self.id}: start_s must be >= 0")
            if self.end_s <= self.start_s:
                raise InputError(f"segment {self.id}: end_s must exceed start_s")
        for lo, hi in self.terms:
            if not (0 <= lo < hi <= len(self.tokens)):
                raise InputError(
                    f"segment {self.id}: term span [{lo}, {hi}) outside token range "
                    f"[0, {len(self.tokens)})"
                )

    @property
    def timed(self) -> bool:
        return self.start_s is not None

    @property
    def midpoint_s(self) -> float:
        if not self.timed:
            raise PreconditionError(f"segment {self.id} has no timestamps")
        return (self.start_s + self.end_s) / 2.0

    def term_token_spans(self) -> list[tuple[Token, ...]]:
        return [self.tokens[lo:hi] for lo, hi in self.terms]


@dataclass(frozen=True)
class Transcript:
    video_id: str
    segments: tuple[Segment, ...]
    role: str = "hypothesis"  # "reference" | "hypothesis"

    def __post_init__(self):
        if not self.video_id:
            raise InputError("video_id must be non-empty")
        if self.role not in ("reference", "hypothesis"):
            raise InputError(f"unknown transcript role {self.role!r}")
        timed = [s for s in self.segments if s.timed]
        for a, b in zip(timed, timed[1:]):
            if b.start_s < a.end_s:
                raise InputError(
                    f"segments {a.id} and {b.id} overlap or are out of time order"
                )

    @property
    def timed(self) -> bool:
        return bool(self.segments) and all(s.timed for s in self.segments)

    def all_tokens(self) -> list[Token]:
        out: list[Token] = []
        for seg in self.segments:
            out.extend(seg.tokens)
        return out

    def text(self) -> str:
        return " ".join(t.surface for t in self.all_tokens())


@dataclass(frozen=True)
class PresentationMeta:
    video_id: str
    length_s: float = 0.0
    gender: str | None = None
    l1: str | None = None
    country: str | None = None
    track: str | None = None
    difficulty_score: float | None = None

    def __post_init__(self):
        if not self.video_id:
            raise InputError("video_id must be non-empty")
        if self.difficulty_score is not None and self.difficulty_score <= 0:
            raise InputError("difficulty_score must be positive when present")


def slice_by_spans(
    t: Transcript, spans: list[tuple[float, float]]
) -> list[list[Token]]:
    """Partition a timed transcript's tokens into the given time spans.

    Each segment goes to the span containing its midpoint; a midpoint falling
    outside all spans is assigned to the span with the nearest boundary and a
    warning is logged. Concatenating the groups in span order preserves the
    original token order.
    """
    if not spans:
        raise PreconditionError("spans must be non-empty")
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        if b0 < a1:
            raise PreconditionError("spans must be ordered and non-overlapping")
    for a0, a1 in spans:
        if a1 < a0:
            raise PreconditionError(f"span ({a0}, {a1}) is reversed")
    if not t.timed:
        raise PreconditionError(f"transcript {t.video_id} is not fully timed")

    groups: list[list[Token]] = [[] for _ in spans]
    for seg in t.segments:
        mid = seg.midpoint_s
        idx = None
        for i, (a0, a1) in enumerate(spans):
            if a0 <= mid < a1 or (i == len(spans) - 1 and mid == a1):
                idx = i
                break
        if idx is None:
            dists = [min(abs(mid - a0), abs(mid - a1)) for a0, a1 in spans]
            idx = dists.index(min(dists))
            log.warning(
                "segment %s midpoint %.3fs lies outside all spans; assigned to span %d",
                seg.id, mid, idx,
            )
        groups[idx].append(seg)

    # Spans are ordered and segments time-ordered, so flattening per group
    # keeps the stream order.
    return [[tok for seg in group for tok in seg.tokens] for group in groups]


def slice_segments_by_spans(
    t: Transcript, spans: list[tuple[float, float]]
) -> list[list[Segment]]:
    """Like slice_by_spans but keeps whole segments instead of flat tokens."""
    if not spans:
        raise PreconditionError("spans must be non-empty")
    if not t.timed:
        raise PreconditionError(f"transcript {t.video_id} is not fully timed")
    groups: list[list[Segment]] = [[] for _ in spans]
    for seg in t.segments:
        mid = seg.midpoint_s
        idx = None
        for i, (a0, a1) in enumerate(spans):
            if a0 <= mid < a1 or (i == len(spans) - 1 and mid == a1):
                idx = i
                break
        if idx is None:
            dists = [min(abs(mid - a0), abs(mid - a1)) for a0, a1 in spans]
            idx = dists.index(min(dists))
            log.warning(
                "segment %s midpoint %.3fs lies outside all spans; assigned to span %d",
                seg.id, mid, idx,
            )
        groups[idx].append(seg)
    return groups


# ---------------------------------------------------------------------------
# Interchange format


def segment_to_record(video_id: str, seg: Segment) -> dict:
    return {
        "video_id": video_id,
        "segment_id": seg.id,
        "start_s": seg.start_s,
        "end_s": seg.end_s,
        "text": " ".join(t.surface for t in seg.tokens),
        "terms": [list(span) for span in seg.terms],
    }


def record_to_segment(rec: dict, profile: NormalizationProfile) -> Segment:
    try:
        tokens = tuple(tokenize(rec["text"], profile))
        return Segment(
            id=str(rec["segment_id"]),
            tokens=tokens,
            start_s=rec.get("start_s"),
            end_s=rec.get("end_s"),
            terms=tuple((int(a), int(b)) for a, b in rec.get("terms") or []),
        )
    except KeyError as exc:
        raise InputError(f"segment record missing field {exc}") from exc


def write_transcript(t: Transcript, fp: IO[str] | str | Path) -> None:
    if isinstance(fp, (str, Path)):
        with open(fp, "w", encoding="utf-8") as fh:
            write_transcript(t, fh)
        return
    for seg in t.segments:
        fp.write(json.dumps(segment_to_record(t.video_id, seg), ensure_ascii=False))
        fp.write("\n")


def read_transcript(
    fp: IO[str] | str | Path,
    role: str = "hypothesis",
    profile: NormalizationProfile = WER_PROFILE,
) -> Transcript:
    if isinstance(fp, (str, Path)):
        try:
            with open(fp, "r", encoding="utf-8") as fh:
                return read_transcript(fh, role=role, profile=profile)
        except OSError as exc:
            raise InputError(f"cannot read transcript file {fp}: {exc}") from exc
        except UnicodeDecodeError as exc:
            raise InputError(f"transcript file {fp} is not valid UTF-8: {exc}") from exc

    segments = []
    video_id = None
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"bad JSON on line {lineno}: {exc}") from exc
        if video_id is None:
            video_id = str(rec.get("video_id", ""))
        elif rec.get("video_id") != video_id:
            raise ConsistencyError(
                f"line {lineno}: video_id {rec.get('video_id')!r} differs from {video_id!r}"
            )
        segments.append(record_to_segment(rec, profile))
    if video_id is None:
        raise InputError("transcript file holds no segment records")
    return Transcript(video_id=video_id, segments=tuple(segments), role=role)
