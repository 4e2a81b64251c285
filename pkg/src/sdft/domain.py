"""Shared domain types for the dialogue-synthesis pipeline.

Everything in this module is an immutable value object with no I/O: concepts
to inject, image references, dialogue turns/triplets, per-turn loss weights,
vote records, and job configuration. Validation is total — validators return
violation descriptors instead of raising, so callers can decide which rules
are blocking.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

_WHITESPACE = re.compile(r"\s+")

MIN_RECOMMENDED_IMAGES = 3
MAX_RECOMMENDED_IMAGES = 5


def normalize_text(text: str) -> str:
    """Case-fold, trim, and collapse internal whitespace.

    Idempotent; used for every substring comparison between target and
    unrelated knowledge so those checks are casing- and spacing-robust.
    """
    return _WHITESPACE.sub(" ", text.casefold()).strip()


def stable_hash_hex(*parts: object) -> str:
    """Hex SHA-256 over the given parts, stable across processes."""
    joined = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def derive_seed(*parts: object) -> int:
    """Derive a non-negative 63-bit seed from arbitrary parts.

    Public so that tests and fixtures can precompute the sampling seed a
    pipeline stage will use.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


class ConceptCategory(str, Enum):
    PERSONALIZED_ENTITY = "personalized_entity"
    ABSTRACT_CONCEPT = "abstract_concept"
    DOMAIN_EXPERTISE = "domain_expertise"


class Phase(str, Enum):
    CAPTION = "caption"
    CONTRASTIVE = "contrastive"
    TARGET = "target"


PHASE_ORDER = (Phase.CAPTION, Phase.CONTRASTIVE, Phase.TARGET)


class Provenance(str, Enum):
    BASE_MODEL = "base_model"
    SYNTHESIS_MODEL = "synthesis_model"
    MAJORITY_VOTE = "majority_vote"
    HUMAN_EDIT = "human_edit"


class Stance(str, Enum):
    """Stance bucket a free-text answer is sorted into for voting."""

    NEGATION = "negation"
    AFFIRMATION = "affirmation"
    OTHER = "other"


class MediaType(str, Enum):
    JPEG = "jpeg"
    PNG = "png"
    WEBP = "webp"

    @property
    def mime(self) -> str:
        return f"image/{self.value}"


_EXTENSION_TO_MEDIA = {
    ".jpg": MediaType.JPEG,
    ".jpeg": MediaType.JPEG,
    ".png": MediaType.PNG,
    ".webp": MediaType.WEBP,
}


class DigestMismatch(Exception):
    """Referenced image bytes do not hash to the recorded digest."""


@dataclass(frozen=True)
class Violation:
    """One validation finding. ``severity`` is 'error' or 'warning'."""

    field: str
    rule: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.field}: {self.rule} [{self.severity}]"


def errors_only(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


@dataclass(frozen=True)
class ImageRef:
    """Opaque reference to image bytes: locator plus content identity."""

    locator: str
    media_type: MediaType
    digest: str  # hex SHA-256 of the referenced bytes

    @classmethod
    def from_file(cls, path: str | Path) -> "ImageRef":
        p = Path(path)
        media = _EXTENSION_TO_MEDIA.get(p.suffix.lower())
        if media is None:
            raise ValueError(f"unsupported image extension: {p.suffix!r}")
        data = p.read_bytes()
        return cls(locator=str(p), media_type=media, digest=hashlib.sha256(data).hexdigest())

    def load_bytes(self) -> bytes:
        """Read the referenced bytes, verifying content identity."""
        data = Path(self.locator).read_bytes()
        actual = hashlib.sha256(data).hexdigest()
        if actual != self.digest:
            raise DigestMismatch(
                f"digest mismatch for {self.locator}: expected {self.digest}, got {actual}"
            )
        return data

    def validate(self) -> list[Violation]:
        out = []
        if not self.locator:
            out.append(Violation("locator", "locator must be non-empty"))
        if not re.fullmatch(r"[0-9a-f]{64}", self.digest or ""):
            out.append(Violation("digest", "digest must be 64 lowercase hex chars"))
        return out


@dataclass(frozen=True)
class ConceptSpec:
    """A unit of knowledge to inject: target text, a deliberately unrelated
    counterpart, and the few images that depict the target."""

    id: str
    category: ConceptCategory
    target_knowledge: str
    unrelated_knowledge: str
    images: tuple[ImageRef, ...]

    def validate(self) -> list[Violation]:
        return validate_concept_spec(self)


def validate_concept_spec(spec: ConceptSpec) -> list[Violation]:
    """Total validation; returns every violation, warnings included."""
    out: list[Violation] = []
    if not spec.id.strip():
        out.append(Violation("id", "id must be non-empty"))
    if not spec.target_knowledge.strip():
        out.append(Violation("target_knowledge", "target knowledge must be non-empty"))
    if not spec.unrelated_knowledge.strip():
        out.append(Violation("unrelated_knowledge", "unrelated knowledge must be non-empty"))
    if spec.target_knowledge.strip() and spec.unrelated_knowledge.strip():
        if normalize_text(spec.target_knowledge) == normalize_text(spec.unrelated_knowledge):
            out.append(
                Violation(
                    "unrelated_knowledge",
                    "target equals unrelated after normalization",
                )
            )
    if len(spec.images) < 1:
        out.append(Violation("images", "at least one image is required"))
    elif not MIN_RECOMMENDED_IMAGES <= len(spec.images) <= MAX_RECOMMENDED_IMAGES:
        out.append(
            Violation(
                "images",
                f"image count outside {MIN_RECOMMENDED_IMAGES}-{MAX_RECOMMENDED_IMAGES}",
                severity="warning",
            )
        )
    for i, image in enumerate(spec.images):
        for v in image.validate():
            out.append(Violation(f"images[{i}].{v.field}", v.rule, v.severity))
    return out


@dataclass(frozen=True)
class TurnWeights:
    """Per-phase loss coefficients for the three assistant turns."""

    alpha1: float  # caption
    alpha2: float  # contrastive
    alpha3: float  # target

    SUM_TOLERANCE = 1e-9

    def for_phase(self, phase: Phase) -> float:
        return {
            Phase.CAPTION: self.alpha1,
            Phase.CONTRASTIVE: self.alpha2,
            Phase.TARGET: self.alpha3,
        }[phase]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3)

    def validate(self) -> list[Violation]:
        out = []
        total = self.alpha1 + self.alpha2 + self.alpha3
        if abs(total - 1.0) > self.SUM_TOLERANCE:
            out.append(Violation("weights", f"weights must sum to 1, got {total!r}"))
        for name, value in zip(("alpha1", "alpha2", "alpha3"), self.as_tuple()):
            if value <= 0:
                out.append(Violation(name, "each weight must be > 0"))
        return out


DEFAULT_WEIGHTS = TurnWeights(0.2, 0.3, 0.5)


@dataclass(frozen=True)
class DialogueTurn:
    phase: Phase
    question: str
    answer: str
    answer_provenance: Provenance
    loss_weight: float

    def validate(self, weights: Optional[TurnWeights] = None) -> list[Violation]:
        out = []
        if not self.question.strip():
            out.append(Violation(f"{self.phase.value}.question", "question must be non-empty"))
        if not self.answer.strip():
            out.append(Violation(f"{self.phase.value}.answer", "answer must be non-empty"))
        if not 0 < self.loss_weight <= 1:
            out.append(
                Violation(f"{self.phase.value}.loss_weight", "loss weight must be in (0, 1]")
            )
        if weights is not None and self.loss_weight != weights.for_phase(self.phase):
            out.append(
                Violation(
                    f"{self.phase.value}.loss_weight",
                    f"loss weight {self.loss_weight} does not match the "
                    f"{self.phase.value} coefficient {weights.for_phase(self.phase)}",
                )
            )
        return out


@dataclass(frozen=True)
class VoteRecord:
    """Outcome of stance voting over sampled answers."""

    m: int
    candidates: tuple[str, ...]
    buckets: tuple[Stance, ...]
    winner_bucket: Stance
    winner_index: int
    tie_flag: bool

    def validate(self) -> list[Violation]:
        out = []
        if self.m < 1:
            out.append(Violation("m", "m must be >= 1"))
        if len(self.candidates) != self.m or len(self.buckets) != self.m:
            out.append(Violation("candidates", "candidates and buckets must both have length m"))
            return out
        if not 0 <= self.winner_index < self.m:
            out.append(Violation("winner_index", "winner index out of range"))
            return out
        if self.buckets[self.winner_index] != self.winner_bucket:
            out.append(Violation("winner_bucket", "winner bucket does not match winner candidate"))
        counts: dict[Stance, int] = {}
        for b in self.buckets:
            counts[b] = counts.get(b, 0) + 1
        winner_count = counts.get(self.winner_bucket, 0)
        if not self.tie_flag and any(
            c > winner_count for bucket, c in counts.items() if bucket != self.winner_bucket
        ):
            out.append(
                Violation("winner_bucket", "winner count below another bucket without tie flag")
            )
        return out


# Flags a triplet can carry into curation.
FLAG_CONTRASTIVE_LEAK = "contrastive_leak"
FLAG_VOTE_TIE = "vote_tie"
FLAG_VOTE_AFFIRMATION_WINNER = "vote_affirmation_winner"


@dataclass(frozen=True)
class DialogueTriplet:
    """One image's three-turn dialogue, with synthesis provenance."""

    record_id: str
    concept_id: str
    image: ImageRef
    turns: tuple[DialogueTurn, ...]
    seed: int
    template_index: Optional[int]
    vote: Optional[VoteRecord]
    created_at: str
    flags: tuple[str, ...] = ()

    def turn(self, phase: Phase) -> DialogueTurn:
        for t in self.turns:
            if t.phase == phase:
                return t
        raise KeyError(phase)

    def validate(self, concept: Optional[ConceptSpec] = None,
                 weights: Optional[TurnWeights] = None) -> list[Violation]:
        out: list[Violation] = []
        if not self.record_id:
            out.append(Violation("record_id", "record id must be non-empty"))
        phases = tuple(t.phase for t in self.turns)
        if phases != PHASE_ORDER:
            out.append(
                Violation(
                    "turns",
                    f"turn phases must be exactly {[p.value for p in PHASE_ORDER]}, "
                    f"got {[p.value for p in phases]}",
                )
            )
            return out
        for t in self.turns:
            out.extend(t.validate(weights))
        if concept is not None and FLAG_CONTRASTIVE_LEAK not in self.flags:
            # A flagged leak is a known violation awaiting human review; only
            # unflagged triplets must satisfy the containment rule here.
            q2 = normalize_text(self.turn(Phase.CONTRASTIVE).question)
            if normalize_text(concept.unrelated_knowledge) not in q2:
                out.append(
                    Violation("contrastive.question", "unrelated knowledge missing from question")
                )
            if normalize_text(concept.target_knowledge) in q2:
                out.append(
                    Violation("contrastive.question", "target knowledge leaked into question")
                )
        if self.vote is not None:
            out.extend(self.vote.validate())
        return out


class ResponseSource(str, Enum):
    BASE = "base"
    SYNTHESIZER = "synthesizer"


@dataclass(frozen=True)
class PhaseSources:
    """Which model produces the answer for each phase."""

    caption: ResponseSource = ResponseSource.BASE
    contrastive: ResponseSource = ResponseSource.BASE
    target: ResponseSource = ResponseSource.SYNTHESIZER

    def for_phase(self, phase: Phase) -> ResponseSource:
        return {
            Phase.CAPTION: self.caption,
            Phase.CONTRASTIVE: self.contrastive,
            Phase.TARGET: self.target,
        }[phase]


class StructureMode(str, Enum):
    FULL = "full"
    CAPTION_TARGET = "caption_target"
    TARGET_ONLY = "target_only"


PHASES_BY_MODE = {
    StructureMode.FULL: (Phase.CAPTION, Phase.CONTRASTIVE, Phase.TARGET),
    StructureMode.CAPTION_TARGET: (Phase.CAPTION, Phase.TARGET),
    StructureMode.TARGET_ONLY: (Phase.TARGET,),
}


@dataclass(frozen=True)
class SynthesisJob:
    job_id: str
    concepts: tuple[ConceptSpec, ...]
    vote_m: int = 3
    response_source: PhaseSources = field(default_factory=PhaseSources)
    structure_mode: StructureMode = StructureMode.FULL
    weights: TurnWeights = DEFAULT_WEIGHTS
    seed: int = 0
    max_concurrency: int = 1

    def validate(self) -> list[Violation]:
        out: list[Violation] = []
        if not self.job_id.strip():
            out.append(Violation("job_id", "job id must be non-empty"))
        if self.vote_m < 1:
            out.append(Violation("vote_m", "vote_m must be >= 1"))
        if self.max_concurrency < 1:
            out.append(Violation("max_concurrency", "max_concurrency must be >= 1"))
        out.extend(self.weights.validate())
        seen: set[str] = set()
        for i, concept in enumerate(self.concepts):
            if concept.id in seen:
                out.append(Violation(f"concepts[{i}].id", f"duplicate concept id {concept.id!r}"))
            seen.add(concept.id)
            for v in concept.validate():
                out.append(Violation(f"concepts[{i}].{v.field}", v.rule, v.severity))
        if not self.concepts:
            out.append(Violation("concepts", "at least one concept is required"))
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthesisJob":
        concepts = tuple(
            ConceptSpec(
                id=c["id"],
                category=ConceptCategory(c["category"]),
                target_knowledge=c["target_knowledge"],
                unrelated_knowledge=c["unrelated_knowledge"],
                images=tuple(
                    ImageRef(
                        locator=img["locator"],
                        media_type=MediaType(img["media_type"]),
                        digest=img["digest"],
                    )
                    for img in c["images"]
                ),
            )
            for c in raw["concepts"]
        )
        sources = raw.get("response_source", {})
        weights = raw.get("weights", list(DEFAULT_WEIGHTS.as_tuple()))
        return cls(
            job_id=raw["job_id"],
            concepts=concepts,
            vote_m=raw.get("vote_m", 3),
            response_source=PhaseSources(
                caption=ResponseSource(sources.get("caption", "base")),
                contrastive=ResponseSource(sources.get("contrastive", "base")),
                target=ResponseSource(sources.get("target", "synthesizer")),
            ),
            structure_mode=StructureMode(raw.get("structure_mode", "full")),
            weights=TurnWeights(*weights),
            seed=raw.get("seed", 0),
            max_concurrency=raw.get("max_concurrency", 1),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SynthesisJob":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
