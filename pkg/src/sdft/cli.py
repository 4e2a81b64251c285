"""Operator command line.

Subcommands: synth, export, validate, eval (recognition|qa|retention),
loss (check|mask), templates lint, serve. Every subcommand supports --json
for stable machine-readable stdout. Exit codes: 0 success, 1 validation
failure, 2 usage error.

Configuration precedence: JSON config file, overridden by flags, overridden
by the SDFT_* environment variables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .curation import CurationStore
from .dataset import StructureMode, export as dataset_export, read_records, validate as dataset_validate
from .domain import Phase, SynthesisJob, TurnWeights
from .gateway import (
    ENV_BASE_API_KEY,
    ENV_BASE_BASE_URL,
    ENV_SYNTH_API_KEY,
    ENV_SYNTH_BASE_URL,
    EndpointConfig,
    Gateway,
    HttpBackend,
    MockBackend,
)
from .loss import EmptyTurn, InvalidWeights, TurnLossInput, total_loss, turn_cross_entropy, weight_mask
from .evaluation import (
    MetricsReport,
    ProbeSet,
    RetentionScores,
    ScorerUnavailable,
    qa_accuracy,
    recognition_eval,
    token_f1,
    weighted_accuracy,
)
from .synthesis import JobConfigurationError, SynthesisEngine, SynthesisSettings
from .templates import TemplateError, default_library, load_templates

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _build_gateway(args, config: dict) -> Gateway:
    """Mock script wins; otherwise live endpoints from config/env."""
    if getattr(args, "mock_script", None):
        return Gateway.mock(MockBackend.from_script_file(args.mock_script))
    endpoints = config.get("endpoints", {})
    synth = dict(endpoints.get("synthesizer", {}))
    base = dict(endpoints.get("base", {}))
    env = os.environ
    synth_url = env.get(ENV_SYNTH_BASE_URL, synth.get("base_url"))
    base_url = env.get(ENV_BASE_BASE_URL, base.get("base_url"))
    if not synth_url or not base_url:
        raise SystemExit(
            f"no endpoints configured: set {ENV_SYNTH_BASE_URL}/{ENV_BASE_BASE_URL} or a "
            "config file, or pass --mock-script"
        )
    return Gateway(
        synthesizer=HttpBackend(
            EndpointConfig(
                base_url=synth_url,
                api_key=env.get(ENV_SYNTH_API_KEY, synth.get("api_key", "")),
                model=synth.get("model", "default"),
            )
        ),
        base=HttpBackend(
            EndpointConfig(
                base_url=base_url,
                api_key=env.get(ENV_BASE_API_KEY, base.get("api_key", "")),
                model=base.get("model", "default"),
            )
        ),
    )


def _settings_from_config(config: dict) -> SynthesisSettings:
    temps = config.get("temperatures", {})
    return SynthesisSettings(
        question_temperature=temps.get("question", 0.2),
        contrastive_temperature=temps.get("contrastive", 0.7),
        answer_temperature=temps.get("answer", 0.2),
    )


def _library(args):
    if getattr(args, "templates", None):
        return load_templates(args.templates)
    return default_library()


def _emit(args, payload: dict, human_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    try:
        job = SynthesisJob.from_json_file(args.job)
    except (KeyError, ValueError) as exc:
        print(f"invalid job spec: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    gateway = _build_gateway(args, config)
    engine = SynthesisEngine(gateway, library=_library(args), settings=_settings_from_config(config))
    try:
        triplets, report = engine.run_job(job)
    except JobConfigurationError as exc:
        print(f"job configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    concepts = {c.id: c for c in job.concepts}
    if args.store:
        store = CurationStore(args.store)
        for triplet in triplets:
            store.record_dialogue(triplet, concepts[triplet.concept_id], job.weights)
    manifest = None
    if args.export:
        from .dataset import record_from_triplet

        records = [
            record_from_triplet(t, concepts[t.concept_id], job.weights) for t in triplets
        ]
        manifest = dataset_export(records, args.export, mode=job.structure_mode)

    payload = {"report": report.to_dict()}
    lines = [
        f"job {report.job_id}: {report.triplet_count} triplets "
        f"({report.failed_triplets} failed, {report.vote_tie_count} vote ties, "
        f"{report.contrastive_flagged} flagged)",
    ]
    if manifest:
        payload["manifest"] = manifest.to_dict()
        lines.append(f"exported {manifest.record_count} records -> {args.export}")
    if args.store:
        lines.append(f"stored {report.triplet_count} records -> {args.store}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_export(args) -> int:
    store = CurationStore(args.store)
    manifest = dataset_export(
        store.current_records(),
        args.out,
        mode=StructureMode(args.mode),
        approved_only=args.approved_only,
    )
    _emit(
        args,
        {"manifest": manifest.to_dict()},
        [f"exported {manifest.record_count} records -> {args.out}",
         f"content digest {manifest.content_digest}"],
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    violations = dataset_validate(args.dataset)
    payload = {"violations": [str(v) for v in violations], "count": len(violations)}
    lines = [str(v) for v in violations] or ["ok"]
    _emit(args, payload, lines)
    return EXIT_VALIDATION if violations else EXIT_OK


def cmd_eval_recognition(args) -> int:
    config = _load_config(args.config)
    probes = ProbeSet.from_json_file(args.probes)
    gateway = _build_gateway(args, config)
    pos, neg = recognition_eval(probes, gateway)
    report = MetricsReport(
        pos_acc=pos,
        neg_acc=neg,
        weighted_acc=weighted_accuracy(pos, neg),
        counts={"positives": len(probes.positives), "negatives": len(probes.negatives)},
    )
    _emit(args, report.to_dict(), [report.to_markdown()])
    return EXIT_OK


def cmd_eval_qa(args) -> int:
    pairs = json.loads(Path(args.pairs).read_text(encoding="utf-8"))
    answers = [p["answer"] for p in pairs]
    keys = [p["key"] for p in pairs]
    scorer = token_f1 if args.scorer == "fallback" else None
    try:
        accuracy = qa_accuracy(answers, keys, kind=args.kind, scorer=scorer)
    except ScorerUnavailable as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    report = MetricsReport(
        qa_acc=accuracy,
        qa_scorer=args.scorer if args.kind == "open" else None,
        counts={"questions": len(pairs)},
    )
    _emit(args, report.to_dict(), [report.to_markdown()])
    return EXIT_OK


def cmd_eval_retention(args) -> int:
    if args.scores:
        scores = RetentionScores.from_json_file(args.scores)
    elif args.items:
        scores = RetentionScores.from_item_csv(args.items)
    elif None not in (args.pope, args.mme, args.textvqa):
        scores = RetentionScores(pope=args.pope, mme=args.mme, textvqa=args.textvqa)
    else:
        print("provide --pope/--mme/--textvqa, --scores, or --items", file=sys.stderr)
        return EXIT_USAGE
    ratio = None
    if None not in (args.base_pope, args.base_mme, args.base_textvqa):
        base = RetentionScores(args.base_pope, args.base_mme, args.base_textvqa)
        ratio = scores.average / base.average if base.average else None
    report = MetricsReport(retention=scores, retention_ratio_to_base=ratio)
    _emit(
        args,
        report.to_dict(),
        [f"retention average: {scores.average:.3f}"]
        + ([f"ratio to base: {ratio:.3f}"] if ratio is not None else []),
    )
    return EXIT_OK


def cmd_loss_check(args) -> int:
    fixture = json.loads(Path(args.fixture).read_text(encoding="utf-8"))
    weights = TurnWeights(*fixture["weights"])
    per_turn = {}
    try:
        for phase in Phase:
            logprobs = tuple(fixture["turns"][phase.value])
            per_turn[phase.value] = turn_cross_entropy(TurnLossInput(phase, logprobs))
        total = total_loss(
            per_turn["caption"], per_turn["contrastive"], per_turn["target"], weights
        )
    except (EmptyTurn, InvalidWeights, KeyError, ValueError) as exc:
        print(f"invalid fixture: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    payload = {"per_turn": per_turn, "weights": list(weights.as_tuple()), "total": total}
    lines = [f"{phase} cross-entropy: {value!r}" for phase, value in per_turn.items()]
    lines.append(f"total: {total!r}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_loss_mask(args) -> int:
    records = read_records(args.dataset)
    boundaries: dict[str, list[tuple[int, int]]] = {}
    for line in Path(args.boundaries).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            boundaries[row["record_id"]] = [tuple(t) for t in row["tokens"]]
    written = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in records:
            spans = boundaries.get(record.record_id)
            if spans is None:
                continue
            mask = weight_mask(record.record_id, record.turns, spans)
            fh.write(json.dumps(mask.to_dict(), ensure_ascii=False) + "\n")
            written += 1
    _emit(args, {"masks_written": written}, [f"wrote {written} masks -> {args.out}"])
    return EXIT_OK


def cmd_templates_lint(args) -> int:
    try:
        library = load_templates(args.file)
    except TemplateError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    _emit(
        args,
        {"templates": len(library)},
        [f"{args.file}: {len(library)} templates, all valid"],
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    config = _load_config(args.config)
    store = CurationStore(args.store)
    engine = None
    if args.mock_script or os.environ.get(ENV_SYNTH_BASE_URL) or config.get("endpoints"):
        gateway = _build_gateway(args, config)
        engine = SynthesisEngine(
            gateway, library=_library(args), settings=_settings_from_config(config)
        )
    app = create_app(store, engine)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdft", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="stable JSON on stdout")
        p.add_argument("--config", help="JSON config file")
        return p

    p = common(sub.add_parser("synth", help="run a synthesis job"))
    p.add_argument("job", help="job spec JSON file")
    p.add_argument("--templates", help="question template file (default: built-in library)")
    p.add_argument("--store", help="curation store directory to append records to")
    p.add_argument("--export", help="also export all records to this JSONL path")
    p.add_argument("--mock-script", help="mock backend script JSON (offline run)")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("export", help="export a curation store to JSONL"))
    p.add_argument("store", help="curation store directory")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--mode", default="full", choices=[m.value for m in StructureMode])
    p.add_argument("--approved-only", action="store_true")
    p.set_defaults(func=cmd_export)

    p = common(sub.add_parser("validate", help="validate an exported dataset"))
    p.add_argument("dataset", help="JSONL dataset path")
    p.set_defaults(func=cmd_validate)

    p_eval = sub.add_parser("eval", help="metric computation")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p = common(eval_sub.add_parser("recognition", help="probe recognition accuracy"))
    p.add_argument("--probes", required=True, help="probe set JSON")
    p.add_argument("--mock-script", help="mock backend script JSON")
    p.set_defaults(func=cmd_eval_recognition)

    p = common(eval_sub.add_parser("qa", help="QA accuracy over answer/key pairs"))
    p.add_argument("--pairs", required=True, help="JSON list of {answer, key}")
    p.add_argument("--kind", required=True, choices=["closed", "open"])
    p.add_argument("--scorer", choices=["fallback"], help="open-ended similarity scorer")
    p.set_defaults(func=cmd_eval_qa)

    p = common(eval_sub.add_parser("retention", help="general-capability retention"))
    p.add_argument("--pope", type=float)
    p.add_argument("--mme", type=float)
    p.add_argument("--textvqa", type=float)
    p.add_argument("--scores", help="JSON file {pope, mme, textvqa}")
    p.add_argument("--items", help="per-item CSV with columns benchmark,correct")
    p.add_argument("--base-pope", type=float)
    p.add_argument("--base-mme", type=float)
    p.add_argument("--base-textvqa", type=float)
    p.set_defaults(func=cmd_eval_retention)

    p_loss = sub.add_parser("loss", help="loss arithmetic")
    loss_sub = p_loss.add_subparsers(dest="loss_command", required=True)

    p = common(loss_sub.add_parser("check", help="per-turn CE and weighted total"))
    p.add_argument("fixture", help="JSON fixture with per-turn logprobs and weights")
    p.set_defaults(func=cmd_loss_check)

    p = common(loss_sub.add_parser("mask", help="emit per-token weight masks"))
    p.add_argument("dataset", help="JSONL dataset path")
    p.add_argument("--boundaries", required=True, help="JSONL {record_id, tokens:[[s,e],...]}")
    p.add_argument("--out", required=True, help="output mask JSONL")
    p.set_defaults(func=cmd_loss_mask)

    p_templates = sub.add_parser("templates", help="template library tools")
    templates_sub = p_templates.add_subparsers(dest="templates_command", required=True)
    p = common(templates_sub.add_parser("lint", help="validate a template file"))
    p.add_argument("file", help="template file path")
    p.set_defaults(func=cmd_templates_lint)

    p = common(sub.add_parser("serve", help="run the curation HTTP service"))
    p.add_argument("--store", required=True, help="curation store directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--templates", help="question template file")
    p.add_argument("--mock-script", help="mock backend script JSON")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except SystemExit as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except TemplateError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
