"""Command-line surface.

Every subcommand marshals files into the service's request models and
dispatches them either in-process (default) or to a running talkeval server
(``--server http://host:port``); all computation lives behind the service
layer either way. Exit codes: 0 success, 2 input error, 3 precondition or
consistency error, 4 remote-service error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .errors import (
    AnnotationError,
    ConfigError,
    ConsistencyError,
    InputError,
    ParseError,
    PreconditionError,
    RequestError,
    TalkevalError,
    TransportError,
    UndefinedMetricError,
)
from .service import schemas as s
from .service.app import ROUTES

_ERROR_KINDS = {
    cls.__name__: cls
    for cls in (
        TalkevalError,
        InputError,
        ParseError,
        ConfigError,
        PreconditionError,
        ConsistencyError,
        UndefinedMetricError,
        TransportError,
        RequestError,
        AnnotationError,
    )
}


class Dispatcher:
    """Runs service requests in-process or against a remote server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def call(self, path: str, request):
        handler, _, response_cls = ROUTES[path]
        if self.server is None:
            return handler(request)
        try:
            resp = httpx.post(
                self.server + path,
                json=request.model_dump(mode="json"),
                timeout=600.0,
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"cannot reach server {self.server}: {exc}") from exc
        if resp.status_code >= 400:
            try:
                payload = resp.json()
                kind = _ERROR_KINDS.get(payload.get("kind"), TalkevalError)
                raise kind(payload.get("error", resp.text))
            except (json.JSONDecodeError, ValueError):
                raise TransportError(
                    f"server returned HTTP {resp.status_code}: {resp.text[:300]}"
                )
        return response_cls.model_validate(resp.json())


pass_dispatcher = click.make_pass_decorator(Dispatcher)


def _read_words(path: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").split()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} is not valid UTF-8: {exc}") from exc


def _read_lines(path: str) -> list[str]:
    try:
        return [
            line.strip()
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _read_segment_records(path: str) -> list[s.SegmentRecordModel]:
    records = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            rec = json.loads(line)
            records.append(
                s.SegmentRecordModel(
                    video_id=str(rec.get("video_id", "")),
                    segment_id=str(rec["segment_id"]),
                    start_s=rec.get("start_s"),
                    end_s=rec.get("end_s"),
                    text=str(rec["text"]),
                    terms=[tuple(t) for t in rec.get("terms") or []],
                )
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: bad segment record: {exc}") from exc
    if not records:
        raise InputError(f"{path} holds no segment records")
    return records


def _read_annotation_models(path: str) -> list[s.AnnotationRecordModel]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            out.append(s.AnnotationRecordModel(**json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad annotation record: {exc}") from exc
    return out


def _write_output(text: str, out: str | None) -> None:
    if out is None or out == "-":
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(out).write_text(text, encoding="utf-8")


def _profile_options(fn):
    fn = click.option("--case-fold", is_flag=True, help="Lowercase before matching.")(fn)
    fn = click.option("--strip-punct", is_flag=True, help="Drop punctuation when matching.")(fn)
    fn = click.option(
        "--collapse-hyphens", is_flag=True, help="Treat hyphenated and fused forms as equal."
    )(fn)
    return fn


def _weights_option(fn):
    fn = click.option(
        "--weights",
        default=None,
        metavar="CRIT,MINOR,OK",
        help="Severity weights, e.g. 1.0,0.6,0.2.",
    )(fn)
    fn = click.option(
        "--preset",
        default=None,
        type=click.Choice(["default", "alternate", "uniform"]),
        help="Named severity-weight preset.",
    )(fn)
    return fn


def _weights_model(weights: str | None, preset: str | None) -> s.WeightsModel:
    if weights and preset:
        raise InputError("--weights and --preset are mutually exclusive")
    if preset:
        return s.WeightsModel(preset=preset)
    if weights:
        try:
            crit, minor, ok = (float(v) for v in weights.split(","))
        except ValueError as exc:
            raise InputError(f"bad --weights value {weights!r}: {exc}") from exc
        return s.WeightsModel(critical=crit, minor=minor, ok=ok)
    return s.WeightsModel(preset="default")


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--server",
    default=None,
    metavar="URL",
    help="Send requests to a running talkeval server instead of computing in-process.",
)
@click.pass_context
def main(ctx, server):
    """Severity-aware evaluation and post-editing of presentation transcripts."""
    ctx.obj = Dispatcher(server)


@main.command()
@click.argument("text", required=False)
@click.option("--file", "file_", type=click.Path(exists=True), help="Read text from a file.")
@_profile_options
@click.option("--json", "as_json", is_flag=True, help="Emit tokens as JSON.")
@pass_dispatcher
def tokenize(dispatcher, text, file_, case_fold, strip_punct, collapse_hyphens, as_json):
    """Split TEXT (or --file) into tokens with their normalized forms."""
    if (text is None) == (file_ is None):
        raise InputError("provide TEXT or --file, not both")
    if file_:
        text = Path(file_).read_text(encoding="utf-8")
    profile = s.ProfileModel(
        lowercase=case_fold, strip_punct=strip_punct, collapse_hyphens=collapse_hyphens
    )
    resp = dispatcher.call("/tokenize", s.TokenizeRequest(text=text, profile=profile))
    if as_json:
        click.echo(json.dumps([t.model_dump() for t in resp.tokens], ensure_ascii=False))
    else:
        for t in resp.tokens:
            click.echo(f"{t.surface}\t{t.normalized}")


@main.command()
@click.argument("ref", type=click.Path(exists=True))
@click.argument("hyp", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Emit the full edit script as JSON.")
@pass_dispatcher
def align(dispatcher, ref, hyp, as_json):
    """Align two whitespace-tokenized text files and report edit counts."""
    resp = dispatcher.call(
        "/align", s.AlignRequest(ref=_read_words(ref), hyp=_read_words(hyp))
    )
    if as_json:
        click.echo(resp.model_dump_json(indent=2))
        return
    click.echo(
        f"insertions={resp.insertions} omissions={resp.omissions} "
        f"substitutions={resp.substitutions} N={resp.ref_len}"
    )
    if resp.ref_len:
        click.echo(f"WER={100.0 * resp.distance / resp.ref_len:.2f}%")


@main.command()
@click.argument("ref", type=click.Path(exists=True))
@click.argument("hyp", type=click.Path(exists=True))
@click.option("-o", "--out", default=None, help="Output file (default stdout).")
@pass_dispatcher
def highlight(dispatcher, ref, hyp, out):
    """Render the bracket-highlighted diff of two tokenized text files."""
    resp = dispatcher.call(
        "/highlight/render", s.AlignRequest(ref=_read_words(ref), hyp=_read_words(hyp))
    )
    _write_output(f"{resp.highlighted_ref}\n\n{resp.highlighted_hyp}\n", out)


@main.command()
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--hypothesis", required=True, type=click.Path(exists=True),
              help="Plain-text hypothesis token stream.")
@click.option("-o", "--out", default=None, help="Output transcript file (default stdout).")
@pass_dispatcher
def resegment(dispatcher, reference, hypothesis, out):
    """Cut a flat hypothesis to mirror the reference transcript's segmentation."""
    ref_records = _read_segment_records(reference)
    resp = dispatcher.call(
        "/resegment",
        s.ResegmentRequest(
            ref_segments=[r.text.split() for r in ref_records],
            hyp=_read_words(hypothesis),
        ),
    )
    video_id = ref_records[0].video_id or "unknown"
    lines = []
    for ref_rec, words in zip(ref_records, resp.segments):
        lines.append(
            json.dumps(
                {
                    "video_id": video_id,
                    "segment_id": ref_rec.segment_id,
                    "start_s": None,
                    "end_s": None,
                    "text": " ".join(words),
                    "terms": [],
                },
                ensure_ascii=False,
            )
        )
    _write_output("\n".join(lines) + "\n", out)
    click.echo(
        f"total edit distance {resp.total_cost}; "
        f"boundaries {list(resp.boundaries)}",
        err=True,
    )


@main.command()
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--hypothesis", required=True, type=click.Path(exists=True))
@click.option("--backend", type=click.Choice(["rules", "llm"]), default="rules")
@click.option("--terms", type=click.Path(exists=True), help="Terminology list, one per line.")
@click.option("--gazetteer", type=click.Path(exists=True), help="Named-entity list.")
@click.option("--endpoint-url", default=None, help="Chat endpoint base URL (llm backend).")
@click.option("--model", default=None, help="Model name (llm backend).")
@click.option("--api-key-env", default="TALKEVAL_API_KEY", show_default=True)
@click.option("--cache-dir", default=None, help="Response cache directory (llm backend).")
@click.option("-o", "--out", default=None, help="Annotation records file (default stdout).")
@pass_dispatcher
def annotate(
    dispatcher, reference, hypothesis, backend, terms, gazetteer,
    endpoint_url, model, api_key_env, cache_dir, out,
):
    """Annotate mismatch content types and severities for a transcript pair."""
    ref_records = _read_segment_records(reference)
    hyp_records = _read_segment_records(hypothesis)
    if len(ref_records) != len(hyp_records):
        raise PreconditionError(
            f"{len(ref_records)} reference vs {len(hyp_records)} hypothesis segments; "
            "run `talkeval resegment` first"
        )
    video_id = ref_records[0].video_id or "unknown"
    lexicons = s.LexiconsModel(
        terminology=_read_lines(terms) if terms else [],
        gazetteer=_read_lines(gazetteer) if gazetteer else [],
    )
    lines = []
    for ref_rec, hyp_rec in zip(ref_records, hyp_records):
        if backend == "rules":
            resp = dispatcher.call(
                "/annotate/rules",
                s.AnnotateRulesRequest(
                    ref=ref_rec.text.split(), hyp=hyp_rec.text.split(), lexicons=lexicons
                ),
            )
        else:
            if not endpoint_url or not model:
                raise ConfigError("llm backend needs --endpoint-url and --model")
            resp = dispatcher.call(
                "/annotate/llm",
                s.AnnotateLlmRequest(
                    ref=ref_rec.text.split(),
                    hyp=hyp_rec.text.split(),
                    endpoint=s.EndpointModel(
                        base_url=endpoint_url, model_name=model, api_key_env=api_key_env
                    ),
                    cache_dir=cache_dir,
                ),
            )
        for a in resp.annotations:
            record = a.model_dump()
            record.update(video_id=video_id, scene_id=ref_rec.segment_id)
            lines.append(json.dumps(record, ensure_ascii=False))
    _write_output("\n".join(lines) + ("\n" if lines else ""), out)


@main.command(name="eval")
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--hypothesis", required=True, type=click.Path(exists=True))
@click.option("--annotations", type=click.Path(exists=True),
              help="Annotation records; rule backend is used when omitted.")
@click.option("--terms", type=click.Path(exists=True), help="Terminology list for the rules.")
@click.option("--gazetteer", type=click.Path(exists=True))
@_weights_option
@click.option("--baseline-total", type=int, default=None,
              help="Normalize severity percentages by this baseline mismatch count.")
@click.option("--case-fold", is_flag=True, help="Compute the metrics case-insensitively.")
@click.option("--no-resegment", is_flag=True, help="Require 1:1 segment pairing.")
@click.option("--format", "format_", type=click.Choice(["json", "table"]), default="json")
@click.option("-o", "--out", default=None, help="Output file (default stdout).")
@pass_dispatcher
def eval_cmd(
    dispatcher, reference, hypothesis, annotations, terms, gazetteer,
    weights, preset, baseline_total, case_fold, no_resegment, format_, out,
):
    """Evaluate a hypothesis transcript against a reference transcript."""
    ref_records = _read_segment_records(reference)
    hyp_records = _read_segment_records(hypothesis)
    video_id = ref_records[0].video_id or "unknown"
    req = s.EvalRequest(
        video_id=video_id,
        reference=ref_records,
        hypothesis=hyp_records,
        annotations=_read_annotation_models(annotations) if annotations else None,
        lexicons=s.LexiconsModel(
            terminology=_read_lines(terms) if terms else [],
            gazetteer=_read_lines(gazetteer) if gazetteer else [],
        ),
        weights=_weights_model(weights, preset),
        baseline_total=baseline_total,
        case_fold=case_fold,
        allow_resegment=not no_resegment,
    )
    resp = dispatcher.call("/eval", req)
    if format_ == "table":
        render = dispatcher.call(
            "/report/render",
            s.ReportRenderRequest(
                bundle={
                    "per_video": [resp.report],
                    "aggregate": resp.report,
                    "correlations": [],
                    "vote_ratios": [],
                },
                format="table",
            ),
        )
        _write_output(render.text, out)
    else:
        _write_output(json.dumps(resp.report, indent=2, ensure_ascii=False) + "\n", out)


@main.command()
@click.option("--features", required=True, type=click.Path(exists=True),
              help="Binary frame-feature file (T, d, fps header + float32 rows).")
@click.option("--max-segments", type=int, default=30, show_default=True)
@click.option("--penalty", type=float, default=1.0, show_default=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("-o", "--out", default=None, help="Scene plan JSON (default stdout).")
@pass_dispatcher
def kts(dispatcher, features, max_segments, penalty, stride, out):
    """Segment a video into slide scenes from its frame-feature matrix."""
    from .kts import load_features

    matrix = load_features(features)
    resp = dispatcher.call(
        "/kts/plan",
        s.KtsPlanRequest(
            features=[list(map(float, row)) for row in matrix.frames],
            fps=matrix.fps,
            max_segments=max_segments,
            penalty_coeff=penalty,
            stride=stride,
        ),
    )
    _write_output(resp.model_dump_json(indent=2) + "\n", out)


@main.group()
def pipeline():
    """Post-editing pipeline commands."""


@pipeline.command(name="run")
@click.option("--mode", required=True,
              type=click.Choice(["asr-only", "text-pe", "vision-pe", "e2e-vision-pe"]))
@click.option("--video", "video_id", required=True, help="Video identifier.")
@click.option("--transcript", required=True, type=click.Path(exists=True))
@click.option("--features", type=click.Path(exists=True), default=None)
@click.option("--frames", type=click.Path(exists=True), default=None)
@click.option("--endpoint", "endpoint_cfg", type=click.Path(exists=True), default=None,
              help="JSON endpoint config: {\"text\": {...}, \"vision\": {...}}.")
@click.option("--cache-dir", default=None)
@click.option("--no-cache", is_flag=True, help="Bypass the response cache.")
@click.option("--max-segments", type=int, default=30, show_default=True)
@click.option("--penalty", type=float, default=1.0, show_default=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--parallel", type=int, default=4, show_default=True)
@click.option("-o", "--out", default=None, help="Final transcript file (default stdout).")
@click.option("--manifest-out", default=None, help="Manifest JSON file (default stderr).")
@pass_dispatcher
def pipeline_run(
    dispatcher, mode, video_id, transcript, features, frames, endpoint_cfg,
    cache_dir, no_cache, max_segments, penalty, stride, parallel, out, manifest_out,
):
    """Run one video through the post-editing pipeline."""
    text_ep = vision_ep = None
    if endpoint_cfg:
        try:
            cfg = json.loads(Path(endpoint_cfg).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read endpoint config {endpoint_cfg}: {exc}") from exc
        shared = cfg if "base_url" in cfg else None
        text_ep = s.EndpointModel(**(shared or cfg.get("text"))) if (shared or cfg.get("text")) else None
        vision_ep = s.EndpointModel(**(shared or cfg.get("vision"))) if (shared or cfg.get("vision")) else None
    resp = dispatcher.call(
        "/pipeline/run",
        s.PipelineRunRequest(
            mode=mode,
            video_id=video_id,
            transcript_path=str(Path(transcript).resolve()),
            features_path=str(Path(features).resolve()) if features else None,
            frames_dir=str(Path(frames).resolve()) if frames else None,
            text_endpoint=text_ep,
            vision_endpoint=vision_ep,
            cache_dir=cache_dir,
            use_cache=not no_cache,
            max_segments=max_segments,
            penalty_coeff=penalty,
            stride=stride,
            max_parallel_scenes=parallel,
        ),
    )
    lines = [json.dumps(rec, ensure_ascii=False) for rec in resp.transcript]
    _write_output("\n".join(lines) + "\n", out)
    manifest_text = json.dumps(resp.manifest, indent=2, sort_keys=True) + "\n"
    if manifest_out:
        Path(manifest_out).write_text(manifest_text, encoding="utf-8")
    else:
        click.echo(manifest_text, err=True, nl=False)


@main.command()
@click.option("--eval", "eval_files", multiple=True, type=click.Path(exists=True),
              help="Per-video eval report JSON (repeatable).")
@click.option("--votes", type=click.Path(exists=True), default=None)
@click.option("--pair", default=None, metavar="SYS_A,SYS_B",
              help="Tally votes for this system pair.")
@click.option("--format", "format_", type=click.Choice(["table", "structured"]),
              default="table", show_default=True)
@click.option("-o", "--out", default=None, help="Output file (default stdout).")
@pass_dispatcher
def report(dispatcher, eval_files, votes, pair, format_, out):
    """Combine per-video eval reports (and optional votes) into one report."""
    if not eval_files:
        raise InputError("provide at least one --eval report file")
    from .metrics import EvalReport, merge_reports
    from .report import bundle_to_dict, bundle_from_reports, VoteRatioEntry

    reports = []
    for path in eval_files:
        try:
            reports.append(EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise InputError(f"cannot read eval report {path}: {exc}") from exc

    vote_ratios = []
    if votes:
        models = _read_vote_models(votes)
        pairs = []
        if pair:
            a, _, b = pair.partition(",")
            if not b:
                raise InputError("--pair must look like SYS_A,SYS_B")
            pairs = [(a, b)]
        else:
            pairs = sorted({(v.system_a, v.system_b) for v in models})
        for a, b in pairs:
            resp = dispatcher.call(
                "/votes/tally",
                s.VotesTallyRequest(votes=models, system_a=a, system_b=b),
            )
            vote_ratios.append(
                VoteRatioEntry(system_a=a, system_b=b, win=resp.win, tie=resp.tie,
                               lose=resp.lose, n=resp.n)
            )

    bundle = bundle_from_reports(reports, vote_ratios=vote_ratios)
    render = dispatcher.call(
        "/report/render",
        s.ReportRenderRequest(bundle=bundle_to_dict(bundle), format=format_),
    )
    _write_output(render.text, out)


def _read_vote_models(path: str) -> list[s.VoteModel]:
    models = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        try:
            models.append(s.VoteModel(**json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad vote record: {exc}") from exc
    return models


@main.command()
@click.argument("votes_file", type=click.Path(exists=True))
@click.option("--system-a", default=None)
@click.option("--system-b", default=None)
@pass_dispatcher
def votes(dispatcher, votes_file, system_a, system_b):
    """Tally win/tie/lose percentages from a votes file."""
    resp = dispatcher.call(
        "/votes/tally",
        s.VotesTallyRequest(
            votes=_read_vote_models(votes_file), system_a=system_a, system_b=system_b
        ),
    )
    click.echo(
        f"win={resp.win:.2f}% tie={resp.tie:.2f}% lose={resp.lose:.2f}% (n={resp.n})"
    )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8777, show_default=True)
def serve(host, port):
    """Run the talkeval HTTP service."""
    import uvicorn

    uvicorn.run("talkeval.service.app:app", host=host, port=port)


def entrypoint(argv=None) -> int:
    try:
        main.main(args=argv, standalone_mode=False, obj=None)
        return 0
    except TalkevalError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 130


def run() -> None:
    sys.exit(entrypoint())


if __name__ == "__main__":
    run()
