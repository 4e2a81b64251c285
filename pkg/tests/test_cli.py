from __future__ import annotations

import json
from pathlib import Path

import pytest

from sdft.cli import main
from sdft.dataset import read_records

from conftest import clean_script_dict, job_spec_dict

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- loss ---------------------------------------------------------------------


def test_loss_check_prints_expected_total(capsys) -> None:
    code, out, _ = run(capsys, "loss", "check", str(FIXTURES / "weighted_loss.json"), "--json")
    assert code == 0
    payload = json.loads(out)
    oracle = 0.2 * 2.0 + 0.3 * 1.0 + 0.5 * 0.5
    assert abs(payload["total"] - oracle) <= 1e-12
    assert payload["per_turn"] == {"caption": 2.0, "contrastive": 1.0, "target": 0.5}


def test_loss_check_human_output(capsys) -> None:
    code, out, _ = run(capsys, "loss", "check", str(FIXTURES / "weighted_loss.json"))
    assert code == 0
    assert "total: 0.95" in out


def test_loss_check_rejects_bad_weights(capsys, tmp_path) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text(
        '{"weights": [0.5, 0.5, 0.5], "turns": {"caption": [-1], "contrastive": [-1], "target": [-1]}}'
    )
    code, _, err = run(capsys, "loss", "check", str(bad))
    assert code == 1
    assert "invalid fixture" in err


# -- templates ---------------------------------------------------------------------


def test_templates_lint_ok(capsys, tmp_path) -> None:
    path = tmp_path / "t.txt"
    path.write_text("Where is [TARGET]?\n# comment\n", encoding="utf-8")
    code, out, _ = run(capsys, "templates", "lint", str(path), "--json")
    assert code == 0
    assert json.loads(out) == {"templates": 1}


def test_templates_lint_failure(capsys, tmp_path) -> None:
    path = tmp_path / "t.txt"
    path.write_text("No placeholder here\n", encoding="utf-8")
    code, _, err = run(capsys, "templates", "lint", str(path))
    assert code == 1
    assert "placeholder count 0" in err


# -- eval ---------------------------------------------------------------------------


def test_eval_retention_cli(capsys) -> None:
    code, out, _ = run(
        capsys, "eval", "retention",
        "--pope", "0.878", "--mme", "0.608", "--textvqa", "0.649", "--json",
    )
    assert code == 0
    payload = json.loads(out)
    assert abs(payload["retention"]["average"] - 0.712) <= 0.0005


def test_eval_retention_with_base_ratio(capsys) -> None:
    code, out, _ = run(
        capsys, "eval", "retention",
        "--pope", "0.878", "--mme", "0.608", "--textvqa", "0.649",
        "--base-pope", "0.872", "--base-mme", "0.612", "--base-textvqa", "0.680",
        "--json",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["retention"]["ratio_to_base"] == pytest.approx(0.7116 / 0.7213, abs=1e-3)


def test_eval_retention_requires_inputs(capsys) -> None:
    code, _, err = run(capsys, "eval", "retention")
    assert code == 2
    assert "provide" in err


def test_eval_qa_closed(capsys, tmp_path) -> None:
    pairs = tmp_path / "pairs.json"
    pairs.write_text(
        json.dumps(
            [
                {"answer": "B. pneumonia", "key": "B"},
                {"answer": "A", "key": "B"},
            ]
        )
    )
    code, out, _ = run(capsys, "eval", "qa", "--pairs", str(pairs), "--kind", "closed", "--json")
    assert code == 0
    assert json.loads(out)["qa"]["accuracy"] == 0.5


def test_eval_qa_open_requires_scorer(capsys, tmp_path) -> None:
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps([{"answer": "x", "key": "x"}]))
    code, _, err = run(capsys, "eval", "qa", "--pairs", str(pairs), "--kind", "open")
    assert code == 1
    assert "scorer" in err

    code, out, _ = run(
        capsys, "eval", "qa", "--pairs", str(pairs), "--kind", "open",
        "--scorer", "fallback", "--json",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["qa"] == {"accuracy": 1.0, "scorer": "fallback"}


def test_eval_recognition_cli(capsys, tmp_path, image_pool) -> None:
    probes = {
        "concept_id": "warming",
        "target": "global warming",
        "question_template": "How does this image relate to [TARGET]?",
        "positives": [
            {"locator": i.locator, "media_type": i.media_type.value, "digest": i.digest}
            for i in image_pool[:2]
        ],
        "negatives": [
            {"locator": i.locator, "media_type": i.media_type.value, "digest": i.digest}
            for i in image_pool[2:4]
        ],
    }
    probes_path = tmp_path / "probes.json"
    probes_path.write_text(json.dumps(probes))
    script = {
        "rules": [
            {"match": "", "image_digest": image_pool[0].digest, "text": "Yes, it does."},
            {"match": "", "text": "No, it does not."},
        ]
    }
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    code, out, _ = run(
        capsys, "eval", "recognition",
        "--probes", str(probes_path), "--mock-script", str(script_path), "--json",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["recognition"] == {"pos_acc": 0.5, "neg_acc": 1.0, "weighted_acc": 0.75}


# -- synth / export / validate ---------------------------------------------------------


@pytest.fixture
def cli_artifacts(tmp_path, clean_job):
    job_path = tmp_path / "job.json"
    job_path.write_text(json.dumps(job_spec_dict(clean_job)))
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(clean_script_dict()))
    return job_path, script_path


def test_synth_store_export_validate_flow(capsys, tmp_path, cli_artifacts) -> None:
    job_path, script_path = cli_artifacts
    store_dir = tmp_path / "store"
    export_path = tmp_path / "all.jsonl"

    code, out, _ = run(
        capsys, "synth", str(job_path),
        "--mock-script", str(script_path),
        "--store", str(store_dir),
        "--export", str(export_path),
        "--json",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["report"]["triplet_count"] == 6
    assert payload["manifest"]["record_count"] == 6
    assert len(read_records(export_path)) == 6

    code, out, _ = run(capsys, "validate", str(export_path))
    assert code == 0
    assert out.strip() == "ok"

    # nothing approved yet: approved-only export is empty
    approved_path = tmp_path / "approved.jsonl"
    code, out, _ = run(
        capsys, "export", str(store_dir), "--out", str(approved_path),
        "--approved-only", "--json",
    )
    assert code == 0
    assert json.loads(out)["manifest"]["record_count"] == 0

    # full export from the store matches the synth-time export digest
    full_path = tmp_path / "full.jsonl"
    code, out, _ = run(capsys, "export", str(store_dir), "--out", str(full_path), "--json")
    assert code == 0
    assert json.loads(out)["manifest"]["record_count"] == 6
    assert full_path.read_bytes() == export_path.read_bytes()


def test_validate_reports_line_numbers(capsys, tmp_path, cli_artifacts) -> None:
    job_path, script_path = cli_artifacts
    export_path = tmp_path / "data.jsonl"
    run(capsys, "synth", str(job_path), "--mock-script", str(script_path),
        "--export", str(export_path))
    content = export_path.read_text(encoding="utf-8")
    lines = content.splitlines()
    lines[1] = lines[1][:-10]  # truncate mid-object
    export_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    code, out, _ = run(capsys, "validate", str(export_path))
    assert code == 1
    assert "line 2" in out


def test_loss_mask_cli(capsys, tmp_path, cli_artifacts) -> None:
    job_path, script_path = cli_artifacts
    export_path = tmp_path / "data.jsonl"
    run(capsys, "synth", str(job_path), "--mock-script", str(script_path),
        "--export", str(export_path))
    records = read_records(export_path)

    from sdft.loss import conversation_layout

    boundary_rows = []
    for record in records[:2]:
        text, _ = conversation_layout(record.turns)
        tokens, start = [], None
        for i, ch in enumerate(text):
            if ch.isspace():
                if start is not None:
                    tokens.append([start, i])
                    start = None
            elif start is None:
                start = i
        if start is not None:
            tokens.append([start, len(text)])
        boundary_rows.append({"record_id": record.record_id, "tokens": tokens})

    boundaries_path = tmp_path / "boundaries.jsonl"
    boundaries_path.write_text("\n".join(json.dumps(r) for r in boundary_rows) + "\n")
    masks_path = tmp_path / "masks.jsonl"
    code, out, _ = run(
        capsys, "loss", "mask", str(export_path),
        "--boundaries", str(boundaries_path), "--out", str(masks_path), "--json",
    )
    assert code == 0
    assert json.loads(out)["masks_written"] == 2
    rows = [json.loads(l) for l in masks_path.read_text().splitlines()]
    weights_seen = {w for row in rows for _, w in row["mask"]}
    assert weights_seen == {0.0, 0.2, 0.3, 0.5}


# -- usage errors -----------------------------------------------------------------------


def test_unknown_command_is_usage_error(capsys) -> None:
    code, _, _ = run(capsys, "frobnicate")
    assert code == 2


def test_version_flag(capsys) -> None:
    code, out, _ = run(capsys, "--version")
    assert code == 0
    assert "sdft" in out
