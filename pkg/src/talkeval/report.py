"""Evaluation report bundles, rendering, and human preference tallies.

The structured format is lossless JSON (render -> parse -> equal bundle);
the table format is a fixed-width text view of the same numbers. Rendering
is fail-closed: a bundle violating its internal identities is refused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

from . import __version__
from .errors import ConsistencyError, InputError, PreconditionError
from .metrics import ContentType, EvalReport, Severity, merge_reports

VERDICTS = ("win", "tie", "lose")


@dataclass(frozen=True)
class HumanVote:
    """One pairwise preference judgement, from system_a's perspective."""

    video_id: str
    scene_id: str
    system_a: str
    system_b: str
    verdict: str
    annotator_group: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise InputError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if self.system_a == self.system_b:
            raise InputError("vote must compare two distinct systems")


def tally_votes(
    votes: Sequence[HumanVote],
    system_a: str | None = None,
    system_b: str | None = None,
) -> tuple[float, float, float]:
    """(win%, tie%, lose%) over the votes matching the pair filter."""
    selected = [
        v
        for v in votes
        if (system_a is None or v.system_a == system_a)
        and (system_b is None or v.system_b == system_b)
    ]
    if not selected:
        raise PreconditionError(
            f"no votes match pair ({system_a!r}, {system_b!r})"
        )
    n = len(selected)
    wins = sum(v.verdict == "win" for v in selected)
    ties = sum(v.verdict == "tie" for v in selected)
    loses = n - wins - ties
    return (100.0 * wins / n, 100.0 * ties / n, 100.0 * loses / n)


def read_votes(fp: IO[str] | str | Path) -> list[HumanVote]:
    if isinstance(fp, (str, Path)):
        try:
            with open(fp, "r", encoding="utf-8") as fh:
                return read_votes(fh)
        except OSError as exc:
            raise InputError(f"cannot read votes file {fp}: {exc}") from exc
    votes = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            votes.append(
                HumanVote(
                    video_id=str(rec["video_id"]),
                    scene_id=str(rec.get("scene_id", "")),
                    system_a=str(rec["system_a"]),
                    system_b=str(rec["system_b"]),
                    verdict=str(rec["verdict"]),
                    annotator_group=str(rec.get("annotator_group", "")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad vote record on line {lineno}: {exc}") from exc
    return votes


@dataclass(frozen=True)
class CorrelationEntry:
    name: str
    mode: str
    value: float
    n: int


@dataclass(frozen=True)
class VoteRatioEntry:
    system_a: str
    system_b: str
    win: float
    tie: float
    lose: float
    n: int


@dataclass(frozen=True)
class ReportBundle:
    per_video: tuple[EvalReport, ...]
    aggregate: EvalReport
    correlations: tuple[CorrelationEntry, ...] = ()
    vote_ratios: tuple[VoteRatioEntry, ...] = ()

    def __post_init__(self):
        validate_bundle(self)


def bundle_from_reports(
    per_video: Sequence[EvalReport],
    correlations: Sequence[CorrelationEntry] = (),
    vote_ratios: Sequence[VoteRatioEntry] = (),
) -> ReportBundle:
    return ReportBundle(
        per_video=tuple(per_video),
        aggregate=merge_reports(list(per_video)),
        correlations=tuple(correlations),
        vote_ratios=tuple(vote_ratios),
    )


def validate_bundle(bundle: ReportBundle) -> None:
    """Check the cross-report identities; name the violated one on failure."""
    agg = bundle.aggregate
    if bundle.per_video:
        n_sum = sum(r.n_ref for r in bundle.per_video)
        k_sum = sum(r.k_mismatches for r in bundle.per_video)
        if agg.n_ref != n_sum:
            raise ConsistencyError(
                f"aggregate N ({agg.n_ref}) != sum of per-video N ({n_sum})"
            )
        if agg.k_mismatches != k_sum:
            raise ConsistencyError(
                f"aggregate K ({agg.k_mismatches}) != sum of per-video K ({k_sum})"
            )
    for report in (*bundle.per_video, agg):
        b = report.breakdown
        if b.total != report.k_mismatches:
            raise ConsistencyError(
                f"report {report.video_id}: K != sum of unweighted content scores"
            )
        if report.swer_exact() * report.n_ref != b.total_weight_exact():
            raise ConsistencyError(
                f"report {report.video_id}: swer*N != sum of weighted content scores"
            )
    for entry in bundle.vote_ratios:
        total = entry.win + entry.tie + entry.lose
        if abs(total - 100.0) > 0.02:
            raise ConsistencyError(
                f"vote ratios for ({entry.system_a}, {entry.system_b}) "
                f"sum to {total}, not 100"
            )


# ---------------------------------------------------------------------------
# Structured (lossless) rendering


def bundle_to_dict(bundle: ReportBundle) -> dict:
    return {
        "toolkit_version": __version__,
        "per_video": [r.to_dict() for r in bundle.per_video],
        "aggregate": bundle.aggregate.to_dict(),
        "correlations": [
            {"name": c.name, "mode": c.mode, "value": c.value, "n": c.n}
            for c in bundle.correlations
        ],
        "vote_ratios": [
            {
                "system_a": v.system_a,
                "system_b": v.system_b,
                "win": v.win,
                "tie": v.tie,
                "lose": v.lose,
                "n": v.n,
            }
            for v in bundle.vote_ratios
        ],
    }


def bundle_from_dict(data: dict) -> ReportBundle:
    try:
        return ReportBundle(
            per_video=tuple(EvalReport.from_dict(d) for d in data.get("per_video", [])),
            aggregate=EvalReport.from_dict(data["aggregate"]),
            correlations=tuple(
                CorrelationEntry(c["name"], c["mode"], float(c["value"]), int(c["n"]))
                for c in data.get("correlations", [])
            ),
            vote_ratios=tuple(
                VoteRatioEntry(
                    v["system_a"],
                    v["system_b"],
                    float(v["win"]),
                    float(v["tie"]),
                    float(v["lose"]),
                    int(v["n"]),
                )
                for v in data.get("vote_ratios", [])
            ),
        )
    except KeyError as exc:
        raise InputError(f"report document missing field {exc}") from exc


def parse_report(text: str) -> ReportBundle:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"report document is not valid JSON: {exc}") from exc
    return bundle_from_dict(data)


# ---------------------------------------------------------------------------
# Table rendering


def _fmt_pair(weighted: float, unweighted: int) -> str:
    return f"{weighted:.1f}/{unweighted}"


def _table_rows(bundle: ReportBundle) -> list[list[str]]:
    header = [
        "video",
        *[ct.value for ct in ContentType],
        "WER%",
        "SWER%",
        "TermRecall%",
    ]
    rows = [header]
    for report in (*bundle.per_video, bundle.aggregate):
        b = report.breakdown
        row = [report.video_id]
        for ct in ContentType:
            row.append(_fmt_pair(b.weighted(ct), b.unweighted(ct)))
        row.append(f"{100 * report.wer:.2f}")
        row.append(f"{100 * report.swer:.2f}")
        row.append("-" if report.term_recall is None else f"{report.term_recall:.2f}")
        rows.append(row)
    return rows


def render_report(bundle: ReportBundle, format: str = "table") -> str:
    """Render the bundle as a fixed-width table or a lossless JSON document."""
    validate_bundle(bundle)
    if format == "structured":
        return json.dumps(bundle_to_dict(bundle), indent=2, ensure_ascii=False) + "\n"
    if format != "table":
        raise InputError(f"unknown report format {format!r}")

    rows = _table_rows(bundle)
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for r_index, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if r_index == 0:
            lines.append("  ".join("-" * w for w in widths))

    agg = bundle.aggregate
    lines.append("")
    lines.append("severity counts (aggregate):")
    counts = agg.breakdown.severity_counts()
    pcts = agg.breakdown.severity_percentages()
    denom = agg.baseline_total if agg.baseline_total is not None else agg.k_mismatches
    for sev in (Severity.CRITICAL, Severity.MINOR, Severity.OK):
        lines.append(
            f"  {sev.value:<9} {counts[sev]:>6}  {pcts[sev]:6.2f}% of {denom}"
        )
    if bundle.correlations:
        lines.append("")
        lines.append("correlations:")
        for c in bundle.correlations:
            lines.append(f"  {c.name} ({c.mode}, n={c.n}): {c.value:+.3f}")
    if bundle.vote_ratios:
        lines.append("")
        lines.append("human preference (win/tie/lose %):")
        for v in bundle.vote_ratios:
            lines.append(
                f"  {v.system_a} vs {v.system_b} (n={v.n}): "
                f"{v.win:.2f}/{v.tie:.2f}/{v.lose:.2f}"
            )
    return "\n".join(lines) + "\n"
