"""Training-data export format (JSONL, schema "sdft/1") and its enforcement.

Records serialize with a fixed canonical key order, compact separators, and
LF line endings, so identical inputs always produce byte-identical files and
stable content digests. A manifest JSON is written next to every export.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import jsonschema

from .domain import (
    ConceptSpec,
    DialogueTriplet,
    Phase,
    StructureMode,
    PHASES_BY_MODE,
    TurnWeights,
    normalize_text,
)
from .templates import PLACEHOLDER

SCHEMA_VERSION = "sdft/1"

EXPORTABLE_STATUSES = frozenset({"approved", "edited"})


class ValidationFailure(ValueError):
    """Export refused: one or more records are invalid."""

    def __init__(self, record_ids: list[str], details: list[str]):
        self.record_ids = record_ids
        super().__init__(
            f"invalid records: {', '.join(record_ids)}" + (f" ({details[0]})" if details else "")
        )


def _schema() -> dict:
    data = resources.files("sdft").joinpath("schemas/training_record_v1.json").read_text("utf-8")
    return json.loads(data)


_VALIDATOR = jsonschema.Draft202012Validator(_schema())


@dataclass(frozen=True)
class TrainingRecord:
    """One exported conversation with per-turn loss weights and review state.

    Kept as a canonical dict wrapper: the dict is the single source of truth
    for serialization, the accessors below are conveniences.
    """

    data: dict

    @property
    def record_id(self) -> str:
        return self.data["record_id"]

    @property
    def status(self) -> str:
        return self.data["review"]["status"]

    @property
    def concept_id(self) -> str:
        return self.data["concept"]["id"]

    @property
    def turns(self) -> list[dict]:
        return self.data["turns"]

    def schema_errors(self) -> list[str]:
        return [e.message for e in _VALIDATOR.iter_errors(self.data)]

    def to_line(self) -> str:
        return serialize_record(self.data)

    @classmethod
    def from_line(cls, line: str) -> "TrainingRecord":
        return cls(json.loads(line))


def record_from_triplet(
    triplet: DialogueTriplet, concept: ConceptSpec, weights: TurnWeights
) -> TrainingRecord:
    vote = None
    if triplet.vote is not None:
        vote = {
            "m": triplet.vote.m,
            "winner_bucket": triplet.vote.winner_bucket.value,
            "tie_flag": triplet.vote.tie_flag,
        }
    data = {
        "schema_version": SCHEMA_VERSION,
        "record_id": triplet.record_id,
        "images": [
            {
                "locator": triplet.image.locator,
                "media_type": triplet.image.media_type.value,
                "digest": triplet.image.digest,
            }
        ],
        "concept": {
            "id": concept.id,
            "target": concept.target_knowledge,
            "unrelated": concept.unrelated_knowledge,
            "category": concept.category.value,
        },
        "turns": [
            {
                "phase": t.phase.value,
                "question": t.question,
                "answer": t.answer,
                "loss_weight": t.loss_weight,
                "provenance": t.answer_provenance.value,
            }
            for t in triplet.turns
        ],
        "synthesis": {
            "seed": triplet.seed,
            "template_index": triplet.template_index,
            "vote": vote,
            "flags": list(triplet.flags),
        },
        "review": {"status": "pending", "reviewer": None, "timestamp": None, "note": None},
    }
    return TrainingRecord(_canonical(data))


_KEY_ORDER = {
    None: ["schema_version", "record_id", "images", "concept", "turns", "synthesis", "review"],
    "images": ["locator", "media_type", "digest"],
    "concept": ["id", "target", "unrelated", "category"],
    "turns": ["phase", "question", "answer", "loss_weight", "provenance"],
    "synthesis": ["seed", "template_index", "vote", "flags"],
    "vote": ["m", "winner_bucket", "tie_flag"],
    "review": ["status", "reviewer", "timestamp", "note"],
}


def _canonical(data: dict) -> dict:
    """Rebuild the record dict in canonical key order (recursively)."""

    def order(obj, key):
        if isinstance(obj, dict):
            names = _KEY_ORDER.get(key, sorted(obj))
            return {name: order(obj[name], name) for name in names if name in obj}
        if isinstance(obj, list):
            return [order(item, key) for item in obj]
        return obj

    return order(data, None)


def serialize_record(data: dict) -> str:
    return json.dumps(_canonical(data), ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class DatasetViolation:
    rule: str
    record_id: Optional[str] = None
    line: Optional[int] = None

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "dataset"
        rid = f" [{self.record_id}]" if self.record_id else ""
        return f"{where}{rid}: {self.rule}"


def apply_structure_mode(record: TrainingRecord, mode: StructureMode) -> TrainingRecord:
    """Reduce a full three-phase record to the requested dialogue shape.

    Remaining turns keep their original phase coefficients.
    """
    phases = [t["phase"] for t in record.turns]
    if phases != [p.value for p in PHASES_BY_MODE[StructureMode.FULL]]:
        raise ValueError(
            f"structure modes apply to full 3-phase records, got phases {phases}"
        )
    if mode == StructureMode.FULL:
        return record
    keep = {p.value for p in PHASES_BY_MODE[mode]}
    data = dict(record.data)
    data["turns"] = [t for t in record.turns if t["phase"] in keep]
    return TrainingRecord(_canonical(data))


@dataclass(frozen=True)
class DatasetManifest:
    record_count: int
    per_concept: dict[str, int]
    content_digest: str
    weights: dict[str, float]
    structure_mode: str
    created_at: str
    tool_version: str

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "per_concept": dict(self.per_concept),
            "content_digest": self.content_digest,
            "weights": dict(self.weights),
            "structure_mode": self.structure_mode,
            "created_at": self.created_at,
            "tool_version": self.tool_version,
        }


def manifest_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.name
    return p.with_name(f"{stem}.manifest.json")


def export(
    records: Iterable[TrainingRecord],
    out_path: str | Path,
    mode: StructureMode = StructureMode.FULL,
    approved_only: bool = False,
) -> DatasetManifest:
    """Write records as canonical JSONL plus a manifest; atomic via temp-file
    rename. ``approved_only`` keeps only approved and edited records."""
    from sdft import __version__

    out_path = Path(out_path)
    selected: list[TrainingRecord] = []
    bad_ids: list[str] = []
    details: list[str] = []
    for record in records:
        errors = record.schema_errors()
        if errors:
            bad_ids.append(record.record_id if "record_id" in record.data else "<missing id>")
            details.extend(errors)
            continue
        if approved_only and record.status not in EXPORTABLE_STATUSES:
            continue
        selected.append(apply_structure_mode(record, mode))
    if bad_ids:
        raise ValidationFailure(bad_ids, details)

    content = "".join(r.to_line() + "\n" for r in selected).encode("utf-8")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=out_path.parent, prefix=".export-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(content)
        os.replace(tmp_name, out_path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    per_concept: dict[str, int] = {}
    weights: dict[str, float] = {}
    for r in selected:
        per_concept[r.concept_id] = per_concept.get(r.concept_id, 0) + 1
        for t in r.turns:
            weights.setdefault(t["phase"], t["loss_weight"])
    manifest = DatasetManifest(
        record_count=len(selected),
        per_concept=per_concept,
        content_digest=hashlib.sha256(content).hexdigest(),
        weights=weights,
        structure_mode=mode.value,
        created_at=datetime.now(timezone.utc).isoformat(),
        tool_version=__version__,
    )
    manifest_path(out_path).write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


_ALLOWED_PHASE_SHAPES = {
    tuple(p.value for p in phases) for phases in PHASES_BY_MODE.values()
}


def validate(path: str | Path) -> list[DatasetViolation]:
    """Check an exported dataset file. Returns violations, never raises on
    content problems."""
    violations: list[DatasetViolation] = []
    seen_ids: dict[str, int] = {}
    reference_weights: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            violations.append(DatasetViolation("blank line", line=lineno))
            continue
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            violations.append(DatasetViolation(f"invalid JSON: {exc.msg}", line=lineno))
            continue
        record_id = data.get("record_id") if isinstance(data, dict) else None
        for message in (e.message for e in _VALIDATOR.iter_errors(data)):
            violations.append(
                DatasetViolation(f"schema: {message}", record_id=record_id, line=lineno)
            )
        if not isinstance(data, dict) or "turns" not in data:
            continue

        if record_id in seen_ids:
            violations.append(
                DatasetViolation(
                    f"duplicate id (first seen on line {seen_ids[record_id]})",
                    record_id=record_id,
                    line=lineno,
                )
            )
        elif record_id:
            seen_ids[record_id] = lineno

        turns = data.get("turns", [])
        phases = tuple(t.get("phase") for t in turns if isinstance(t, dict))
        if phases not in _ALLOWED_PHASE_SHAPES:
            violations.append(
                DatasetViolation(
                    f"turn phases {list(phases)} are not a valid dialogue shape",
                    record_id=record_id,
                    line=lineno,
                )
            )

        for t in turns:
            if not isinstance(t, dict):
                continue
            phase, weight = t.get("phase"), t.get("loss_weight")
            if phase is None or weight is None:
                continue
            if phase in reference_weights and reference_weights[phase] != weight:
                violations.append(
                    DatasetViolation(
                        f"{phase} weight {weight} differs from {reference_weights[phase]} "
                        "used earlier in the file",
                        record_id=record_id,
                        line=lineno,
                    )
                )
            reference_weights.setdefault(phase, weight)
            for field in ("question", "answer"):
                if PLACEHOLDER in str(t.get(field, "")):
                    violations.append(
                        DatasetViolation(
                            f"residual {PLACEHOLDER} placeholder in {phase} {field}",
                            record_id=record_id,
                            line=lineno,
                        )
                    )

        concept = data.get("concept") or {}
        target = concept.get("target", "")
        for t in turns:
            if isinstance(t, dict) and t.get("phase") == Phase.CONTRASTIVE.value and target:
                if normalize_text(target) in normalize_text(str(t.get("question", ""))):
                    violations.append(
                        DatasetViolation("contrastive leak", record_id=record_id, line=lineno)
                    )
    return violations


def read_records(path: str | Path) -> list[TrainingRecord]:
    return [
        TrainingRecord.from_line(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
