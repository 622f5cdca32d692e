"""Token-level edit-distance alignment, mismatch extraction and the
bracket-highlight diff format.

The highlight format marks substitutions with ``[]`` on both sides,
omissions with ``{}`` on the reference side and insertions with ``<>`` on
the hypothesis side. A highlight file is the reference paragraph, one blank
line, then the hypothesis paragraph (UTF-8). Bracket characters occurring
inside tokens are escaped with a backslash.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConsistencyError, ParseError, PreconditionError
from .transcript import Token

MATCH = "match"
SUBSTITUTION = "substitution"
OMISSION = "omission"
INSERTION = "insertion"

_ESCAPABLE = set("[]{}<>\\")


@dataclass(frozen=True)
class EditOp:
    """One alignment step. Spans are half-open token-index ranges; the span
    on the missing side is empty (start == end) and anchors the position."""

    kind: str
    ref_span: tuple[int, int]
    hyp_span: tuple[int, int]
    position: int

    def __post_init__(self):
        ref_n = self.ref_span[1] - self.ref_span[0]
        hyp_n = self.hyp_span[1] - self.hyp_span[0]
        expected = {
            MATCH: (1, 1),
            SUBSTITUTION: (1, 1),
            OMISSION: (1, 0),
            INSERTION: (0, 1),
        }
        if self.kind not in expected:
            raise ConsistencyError(f"unknown op kind {self.kind!r}")
        if (ref_n, hyp_n) != expected[self.kind]:
            raise ConsistencyError(
                f"{self.kind} op must span {expected[self.kind]} tokens, got ({ref_n}, {hyp_n})"
            )


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...]
    ref_len: int
    counts: tuple[int, int, int]  # (insertions, omissions, substitutions)

    def __post_init__(self):
        covered = sum(
            op.ref_span[1] - op.ref_span[0] for op in self.ops if op.kind != INSERTION
        )
        if covered != self.ref_len:
            raise ConsistencyError(
                f"ops cover {covered} reference tokens, expected {self.ref_len}"
            )
        tally = (
            sum(op.kind == INSERTION for op in self.ops),
            sum(op.kind == OMISSION for op in self.ops),
            sum(op.kind == SUBSTITUTION for op in self.ops),
        )
        if tally != tuple(self.counts):
            raise ConsistencyError(f"counts {self.counts} != op tally {tally}")

    @property
    def distance(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class Mismatch:
    """One non-match edit operation with its differing texts. Adjacent
    non-match ops share a group_id (maximal runs)."""

    op: EditOp
    ref_text: str
    hyp_text: str
    group_id: int


def align(ref: list[Token], hyp: list[Token]) -> EditScript:
    """Minimal unit-cost alignment of hypothesis tokens to reference tokens.

    Tokens are compared by surface form. Among minimal-cost paths the one
    keeping the most matches wins (so "we um go" vs "we go now" aligns as an
    omission plus an insertion around the matched "go", not as two
    substitutions); remaining ties break match > substitution > omission >
    insertion during backtrace. The result is byte-reproducible across runs
    and platforms.
    """
    m, n = len(ref), len(hyp)
    rs = [t.surface for t in ref]
    hs = [t.surface for t in hyp]

    # cost[i][j] = edit distance between ref[:i] and hyp[:j];
    # hits[i][j] = max match count among cost-minimal paths to (i, j).
    cost = [[0] * (n + 1) for _ in range(m + 1)]
    hits = [[0] * (n + 1) for _ in range(m + 1)]
    for j in range(1, n + 1):
        cost[0][j] = j
    for i in range(1, m + 1):
        cost[i][0] = i
        ri = rs[i - 1]
        crow, prow = cost[i], cost[i - 1]
        hrow, phrow = hits[i], hits[i - 1]
        for j in range(1, n + 1):
            if ri == hs[j - 1]:
                best = (prow[j - 1], -(phrow[j - 1] + 1))
            else:
                best = (prow[j - 1] + 1, -phrow[j - 1])
            up = (prow[j] + 1, -phrow[j])
            left = (crow[j - 1] + 1, -hrow[j - 1])
            if up < best:
                best = up
            if left < best:
                best = left
            crow[j] = best[0]
            hrow[j] = -best[1]

    ops: list[EditOp] = []
    i, j = m, n
    while i > 0 or j > 0:
        c, h = cost[i][j], hits[i][j]
        if (
            i > 0
            and j > 0
            and rs[i - 1] == hs[j - 1]
            and cost[i - 1][j - 1] == c
            and hits[i - 1][j - 1] + 1 == h
        ):
            ops.append(EditOp(MATCH, (i - 1, i), (j - 1, j), i - 1))
            i, j = i - 1, j - 1
        elif (
            i > 0
            and j > 0
            and cost[i - 1][j - 1] + 1 == c
            and hits[i - 1][j - 1] == h
        ):
            ops.append(EditOp(SUBSTITUTION, (i - 1, i), (j - 1, j), i - 1))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i - 1][j] + 1 == c and hits[i - 1][j] == h:
            ops.append(EditOp(OMISSION, (i - 1, i), (j, j), i - 1))
            i = i - 1
        else:
            ops.append(EditOp(INSERTION, (i, i), (j - 1, j), i))
            j = j - 1
    ops.reverse()

    counts = (
        sum(op.kind == INSERTION for op in ops),
        sum(op.kind == OMISSION for op in ops),
        sum(op.kind == SUBSTITUTION for op in ops),
    )
    return EditScript(ops=tuple(ops), ref_len=m, counts=counts)


def _op_texts(op: EditOp, ref: list[Token], hyp: list[Token]) -> tuple[str, str]:
    r0, r1 = op.ref_span
    h0, h1 = op.hyp_span
    if r1 > len(ref) or h1 > len(hyp):
        raise ConsistencyError(
            f"op spans ({op.ref_span}, {op.hyp_span}) exceed token lists "
            f"({len(ref)}, {len(hyp)})"
        )
    return (
        " ".join(t.surface for t in ref[r0:r1]),
        " ".join(t.surface for t in hyp[h0:h1]),
    )


def extract_mismatches(
    script: EditScript, ref: list[Token], hyp: list[Token]
) -> list[Mismatch]:
    """One Mismatch per non-match op; maximal runs of consecutive non-match
    ops share a group_id, dense from 1."""
    out: list[Mismatch] = []
    group = 0
    in_run = False
    for op in script.ops:
        if op.kind == MATCH:
            in_run = False
            continue
        if not in_run:
            group += 1
            in_run = True
        ref_text, hyp_text = _op_texts(op, ref, hyp)
        out.append(Mismatch(op=op, ref_text=ref_text, hyp_text=hyp_text, group_id=group))
    return out


def _escape(token: str) -> str:
    return "".join("\\" + c if c in _ESCAPABLE else c for c in token)


def render_highlight(
    script: EditScript, ref: list[Token], hyp: list[Token]
) -> tuple[str, str]:
    """Render the aligned pair as two highlighted lines (reference, hypothesis)."""
    ref_parts: list[str] = []
    hyp_parts: list[str] = []
    for op in script.ops:
        rtext, htext = _op_texts(op, ref, hyp)
        if op.kind == MATCH:
            ref_parts.append(_escape(rtext))
            hyp_parts.append(_escape(htext))
        elif op.kind == SUBSTITUTION:
            ref_parts.append("[" + _escape(rtext) + "]")
            hyp_parts.append("[" + _escape(htext) + "]")
        elif op.kind == OMISSION:
            ref_parts.append("{" + _escape(rtext) + "}")
        else:  # insertion
            hyp_parts.append("<" + _escape(htext) + ">")
    return " ".join(ref_parts), " ".join(hyp_parts)


_OPENERS = {"[": "]", "{": "}", "<": ">"}


def _scan_units(line: str, line_no: int) -> list[tuple[str, str, int]]:
    """Split one highlighted line into (kind_char_or_'', raw_token, column) units.

    kind char is '[', '{' or '<' for bracketed units, '' for plain tokens.
    Raw tokens are unescaped.
    """
    units: list[tuple[str, str, int]] = []
    i = 0
    ln = len(line)
    while i < ln:
        if line[i].isspace():
            i += 1
            continue
        col = i + 1
        opener = line[i] if line[i] in _OPENERS else ""
        closer = _OPENERS.get(opener, "")
        if opener:
            i += 1
        buf: list[str] = []
        closed = not opener
        while i < ln and not line[i].isspace():
            c = line[i]
            if c == "\\":
                if i + 1 >= ln or line[i + 1] not in _ESCAPABLE:
                    raise ParseError("dangling escape", line=line_no, column=i + 1)
                buf.append(line[i + 1])
                i += 2
                continue
            if opener and c == closer:
                closed = True
                i += 1
                if i < ln and not line[i].isspace():
                    raise ParseError(
                        f"trailing characters after {closer!r}", line=line_no, column=i + 1
                    )
                break
            if c in "[]{}<>":
                raise ParseError(
                    f"unescaped bracket {c!r} inside token", line=line_no, column=i + 1
                )
            buf.append(c)
            i += 1
        if not closed:
            raise ParseError(f"unbalanced {opener!r}", line=line_no, column=col)
        if not buf:
            raise ParseError("empty token", line=line_no, column=col)
        units.append((opener, "".join(buf), col))
    return units


def parse_highlight(highlighted_ref: str, highlighted_hyp: str) -> list[Mismatch]:
    """Recover the mismatch list from a rendered highlight pair.

    The inverse of render_highlight composed with extract_mismatches: kinds,
    texts, positions and grouping are reconstructed exactly.
    """
    ref_units = _scan_units(highlighted_ref, line_no=1)
    hyp_units = _scan_units(highlighted_hyp, line_no=3)

    mismatches: list[Mismatch] = []
    ri = hi = 0  # unit cursors
    r = h = 0  # token indices
    group = 0
    in_run = False

    def push(kind: str, ref_text: str, hyp_text: str, op: EditOp):
        nonlocal group, in_run
        if not in_run:
            group += 1
            in_run = True
        mismatches.append(
            Mismatch(op=op, ref_text=ref_text, hyp_text=hyp_text, group_id=group)
        )

    while ri < len(ref_units) or hi < len(hyp_units):
        rkind, rtok, rcol = ref_units[ri] if ri < len(ref_units) else ("", "", 0)
        hkind, htok, hcol = hyp_units[hi] if hi < len(hyp_units) else ("", "", 0)
        if ri < len(ref_units) and rkind == "{":
            push(OMISSION, rtok, "", EditOp(OMISSION, (r, r + 1), (h, h), r))
            ri += 1
            r += 1
        elif hi < len(hyp_units) and hkind == "<":
            push(INSERTION, "", htok, EditOp(INSERTION, (r, r), (h, h + 1), r))
            hi += 1
            h += 1
        elif ri >= len(ref_units) or hi >= len(hyp_units):
            raise ConsistencyError(
                "reference and hypothesis lines disagree on mismatch counts"
            )
        elif rkind == "[" and hkind == "[":
            push(SUBSTITUTION, rtok, htok, EditOp(SUBSTITUTION, (r, r + 1), (h, h + 1), r))
            ri += 1
            hi += 1
            r += 1
            h += 1
        elif rkind == "" and hkind == "":
            if rtok != htok:
                raise ConsistencyError(
                    f"unmarked tokens disagree: {rtok!r} vs {htok!r} "
                    f"(columns {rcol}/{hcol})"
                )
            in_run = False
            ri += 1
            hi += 1
            r += 1
            h += 1
        else:
            raise ConsistencyError(
                f"bracket kinds disagree at columns {rcol}/{hcol}: "
                f"{rkind or 'plain'} vs {hkind or 'plain'}"
            )
    return mismatches


def parse_highlight_file(text: str) -> list[Mismatch]:
    """Parse a two-paragraph highlight document (ref, blank line, hyp)."""
    paragraphs = [p for p in text.split("\n\n") if p.strip()]
    if len(paragraphs) != 2:
        raise ParseError(
            f"expected reference and hypothesis paragraphs, found {len(paragraphs)}"
        )
    ref_line = " ".join(paragraphs[0].split("\n"))
    hyp_line = " ".join(paragraphs[1].split("\n"))
    return parse_highlight(ref_line, hyp_line)


def render_highlight_file(script: EditScript, ref: list[Token], hyp: list[Token]) -> str:
    ref_line, hyp_line = render_highlight(script, ref, hyp)
    return f"{ref_line}\n\n{hyp_line}\n"


def wer_counts(ref: list[Token], hyp: list[Token]) -> tuple[int, int, int]:
    """(insertions, omissions, substitutions) of the minimal alignment."""
    return align(ref, hyp).counts


def check_same_tokens(script: EditScript, ref: list[Token], hyp: list[Token]) -> None:
    """Guard that a script was produced for these exact token lists."""
    if script.ref_len != len(ref):
        raise PreconditionError(
            f"script aligned {script.ref_len} reference tokens, got {len(ref)}"
        )
    covered_hyp = sum(
        op.hyp_span[1] - op.hyp_span[0] for op in script.ops if op.kind != OMISSION
    )
    if covered_hyp != len(hyp):
        raise PreconditionError(
            f"script aligned {covered_hyp} hypothesis tokens, got {len(hyp)}"
        )
