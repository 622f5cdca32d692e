"""Optimal re-segmentation of a hypothesis token stream against reference
segment boundaries.

Finds the partition of the hypothesis into as many contiguous (possibly
empty) pieces as there are reference segments that minimizes the summed
token edit distance, breaking ties toward earlier cut points. Uses the same
unit costs and surface-token comparison as the alignment module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .transcript import Segment, Token, Transcript

_BIG = 10**9


@dataclass(frozen=True)
class SegmentationResult:
    boundaries: tuple[int, ...]  # interior cut points, non-decreasing
    per_segment_cost: tuple[int, ...]

    @property
    def total_cost(self) -> int:
        return sum(self.per_segment_cost)

    def split(self, hyp: list[Token]) -> list[list[Token]]:
        cuts = [0, *self.boundaries, len(hyp)]
        return [hyp[a:b] for a, b in zip(cuts, cuts[1:])]


def _edit_distance_prefix_row(ref_words: list[str], hyp_words: list[str]) -> list[int]:
    """Final DP row: distances from ref_words to every prefix of hyp_words."""
    n = len(hyp_words)
    row = list(range(n + 1))
    for w in ref_words:
        prev_diag = row[0]
        row[0] += 1
        for j in range(1, n + 1):
            cur = min(
                prev_diag + (0 if w == hyp_words[j - 1] else 1),
                row[j] + 1,
                row[j - 1] + 1,
            )
            prev_diag = row[j]
            row[j] = cur
    return row


def _suffix_costs(
    ref_segments: list[list[str]], hyp_words: list[str]
) -> list[np.ndarray]:
    """suffix[s][j] = min summed edit distance of segments s.. against hyp[j:]."""
    n = len(hyp_words)
    k = len(ref_segments)
    idx = np.arange(n + 1, dtype=np.int64)
    hyp_arr = np.array(hyp_words, dtype=object) if n else np.empty(0, dtype=object)

    suffix: list[np.ndarray] = [np.empty(0)] * (k + 1)
    last = np.full(n + 1, _BIG, dtype=np.int64)
    last[n] = 0
    suffix[k] = last

    for s in range(k - 1, -1, -1):
        nxt = suffix[s + 1]
        # Row for "this segment's reference exhausted": leftover hypothesis
        # tokens up to the next cut become insertions.
        c = nxt + idx
        row = np.minimum.accumulate(c[::-1])[::-1] - idx
        for w in reversed(ref_segments[s]):
            base = np.full(n + 1, _BIG, dtype=np.int64)
            base = np.minimum(base, row + 1)  # omission of w
            if n:
                sub = (hyp_arr != w).astype(np.int64)
                base[:-1] = np.minimum(base[:-1], row[1:] + sub)
            c = base + idx
            row = np.minimum.accumulate(c[::-1])[::-1] - idx
        suffix[s] = row
    return suffix


def resegment(ref_segments: list[list[Token]], hyp: list[Token]) -> SegmentationResult:
    """Cut the hypothesis into len(ref_segments) contiguous pieces minimizing
    the total per-segment edit distance.

    Empty pieces are allowed (needed when the hypothesis drops a sentence);
    cut points are therefore non-decreasing rather than strictly increasing.
    """
    if not ref_segments:
        raise PreconditionError("ref_segments must be non-empty")
    ref_words = [[t.surface for t in seg] for seg in ref_segments]
    hyp_words = [t.surface for t in hyp]
    n = len(hyp_words)
    k = len(ref_segments)

    suffix = _suffix_costs(ref_words, hyp_words)

    boundaries: list[int] = []
    costs: list[int] = []
    cur = 0
    for s in range(k - 1):
        prefix_costs = _edit_distance_prefix_row(ref_words[s], hyp_words[cur:])
        target = suffix[s][cur]
        for c in range(cur, n + 1):
            if prefix_costs[c - cur] + suffix[s + 1][c] == target:
                boundaries.append(c)
                costs.append(prefix_costs[c - cur])
                cur = c
                break
        else:  # pragma: no cover - DP guarantees a feasible cut exists
            raise AssertionError("no consistent cut point found")
    costs.append(
        _edit_distance_prefix_row(ref_words[k - 1], hyp_words[cur:])[n - cur]
    )
    return SegmentationResult(boundaries=tuple(boundaries), per_segment_cost=tuple(costs))


def resegment_transcript(reference: Transcript, hyp_tokens: list[Token]) -> Transcript:
    """Build a hypothesis transcript whose segment boundaries mirror the
    reference's, by optimal cutting of the flat hypothesis token stream."""
    ref_groups = [list(seg.tokens) for seg in reference.segments]
    result = resegment(ref_groups, hyp_tokens)
    pieces = result.split(hyp_tokens)
    segments = tuple(
        Segment(id=ref_seg.id, tokens=tuple(piece))
        for ref_seg, piece in zip(reference.segments, pieces)
    )
    return Transcript(video_id=reference.video_id, segments=segments, role="hypothesis")
