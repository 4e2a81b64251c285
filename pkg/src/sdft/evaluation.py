"""Recognition/QA probing and metric arithmetic.

Recognition probes ask the model a concept question for images that do and
do not depict the concept, map the free-text answers to stances, and report
positive/negative/weighted accuracy. Retention over the three general
benchmarks is their plain mean; a ratio against a base-model mean is also
reported when base scores are supplied, since either reading may be wanted.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .domain import ImageRef, MediaType, Stance, normalize_text
from .gateway import ChatMessage, ChatRequest, Gateway, GatewayError, ModelRole
from .synthesis import classify_response
from .templates import PLACEHOLDER, QuestionTemplate, instantiate

logger = logging.getLogger(__name__)

OPEN_ANSWER_THRESHOLD = 0.85


class ScorerUnavailable(RuntimeError):
    """Open-ended scoring was requested but no scorer is configured."""


def normalize_yes_no(answer: str) -> str:
    """Map a free-text answer to 'positive', 'negative', or 'unknown'.

    Shares the stance machinery used during synthesis voting; unknown always
    counts as incorrect.
    """
    stance = classify_response(answer)
    if stance == Stance.AFFIRMATION:
        return "positive"
    if stance == Stance.NEGATION:
        return "negative"
    return "unknown"


@dataclass(frozen=True)
class ProbeSet:
    concept_id: str
    target: str
    question_template: str  # must contain the [TARGET] placeholder
    positives: tuple[ImageRef, ...]
    negatives: tuple[ImageRef, ...]

    def validate(self) -> None:
        pos = {i.digest for i in self.positives}
        neg = {i.digest for i in self.negatives}
        if pos & neg:
            raise ValueError(f"probe images appear as both positive and negative: {pos & neg}")
        if PLACEHOLDER not in self.question_template:
            raise ValueError(f"question template must contain {PLACEHOLDER}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ProbeSet":
        def refs(items):
            return tuple(
                ImageRef(i["locator"], MediaType(i["media_type"]), i["digest"]) for i in items
            )

        probe = cls(
            concept_id=raw["concept_id"],
            target=raw["target"],
            question_template=raw["question_template"],
            positives=refs(raw["positives"]),
            negatives=refs(raw["negatives"]),
        )
        probe.validate()
        return probe

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ProbeSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def recognition_eval(probes: ProbeSet, gateway: Gateway) -> tuple[float, float]:
    """Ask the concept question for every probe image and score stances.

    Gateway failures for individual probes count as unknown (incorrect).
    """
    probes.validate()
    template = QuestionTemplate(index=1, text=probes.question_template)
    question = instantiate(template, probes.target)

    def ask(image: ImageRef) -> str:
        try:
            response = gateway.complete(
                ChatRequest(
                    role=ModelRole.BASE,
                    messages=(ChatMessage("user", question, (image,)),),
                    temperature=0.0,
                    sampling_seed=0,
                )
            )
        except GatewayError as exc:
            logger.warning("probe for %s failed: %s", image.digest[:12], exc)
            return "unknown"
        return normalize_yes_no(response.text)

    pos_correct = sum(1 for image in probes.positives if ask(image) == "positive")
    neg_correct = sum(1 for image in probes.negatives if ask(image) == "negative")
    pos_acc = pos_correct / len(probes.positives) if probes.positives else 0.0
    neg_acc = neg_correct / len(probes.negatives) if probes.negatives else 0.0
    return pos_acc, neg_acc


def weighted_accuracy(pos_acc: float, neg_acc: float) -> float:
    """Macro mean of positive and negative recognition accuracy."""
    for name, v in (("pos_acc", pos_acc), ("neg_acc", neg_acc)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return (pos_acc + neg_acc) / 2.0


def retention_average(pope: float, mme: float, textvqa: float) -> float:
    """Mean accuracy across the three general-capability benchmarks."""
    for name, v in (("pope", pope), ("mme", mme), ("textvqa", textvqa)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return (pope + mme + textvqa) / 3.0


_TOKEN_SPLIT = re.compile(r"[^\w]+")


def _answer_tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(normalize_text(text)) if t]


def token_f1(answer: str, key: str) -> float:
    """Built-in fallback scorer: token-level F1 over normalized text."""
    a, k = _answer_tokens(answer), _answer_tokens(key)
    if not a or not k:
        return 1.0 if a == k else 0.0
    common: dict[str, int] = {}
    for tok in a:
        common[tok] = common.get(tok, 0) + 1
    overlap = 0
    for tok in k:
        if common.get(tok, 0) > 0:
            common[tok] -= 1
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(a)
    recall = overlap / len(k)
    return 2 * precision * recall / (precision + recall)


def _closed_match(answer: str, key: str) -> bool:
    norm_answer, norm_key = normalize_text(answer), normalize_text(key)
    if norm_answer == norm_key:
        return True
    # Containment with word boundaries: "b. pneumonia" contains option "b".
    return re.search(rf"(?<!\w){re.escape(norm_key)}(?!\w)", norm_answer) is not None


def qa_accuracy(
    answers: Sequence[str],
    keys: Sequence[str],
    kind: str,
    scorer: Optional[Callable[[str, str], float]] = None,
) -> float:
    """Accuracy for closed- or open-ended QA.

    Closed answers count when they match the key after normalization or
    contain the correct option. Open answers count when the scorer's
    similarity clears the threshold; the scorer is pluggable and required.
    """
    if len(answers) != len(keys):
        raise ValueError(f"answers ({len(answers)}) and keys ({len(keys)}) differ in length")
    if kind not in ("closed", "open"):
        raise ValueError(f"kind must be 'closed' or 'open', got {kind!r}")
    if not answers:
        return 0.0
    if kind == "closed":
        correct = sum(1 for a, k in zip(answers, keys) if _closed_match(a, k))
    else:
        if scorer is None:
            raise ScorerUnavailable(
                "open-ended scoring requires a similarity scorer; pass one or use the "
                "built-in token-F1 fallback"
            )
        correct = sum(1 for a, k in zip(answers, keys) if scorer(a, k) >= OPEN_ANSWER_THRESHOLD)
    return correct / len(answers)


@dataclass(frozen=True)
class RetentionScores:
    pope: float
    mme: float
    textvqa: float

    @property
    def average(self) -> float:
        return retention_average(self.pope, self.mme, self.textvqa)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RetentionScores":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(pope=raw["pope"], mme=raw["mme"], textvqa=raw["textvqa"])

    @classmethod
    def from_item_csv(cls, path: str | Path) -> "RetentionScores":
        """Aggregate per-item results: CSV with columns benchmark,correct."""
        totals: dict[str, list[int]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                name = row["benchmark"].strip().lower()
                totals.setdefault(name, []).append(int(row["correct"]))
        missing = {"pope", "mme", "textvqa"} - set(totals)
        if missing:
            raise ValueError(f"per-item results missing benchmarks: {sorted(missing)}")
        mean = {name: sum(vals) / len(vals) for name, vals in totals.items()}
        return cls(pope=mean["pope"], mme=mean["mme"], textvqa=mean["textvqa"])


@dataclass
class MetricsReport:
    pos_acc: Optional[float] = None
    neg_acc: Optional[float] = None
    weighted_acc: Optional[float] = None
    qa_acc: Optional[float] = None
    qa_scorer: Optional[str] = None
    retention: Optional[RetentionScores] = None
    retention_ratio_to_base: Optional[float] = None
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.pos_acc is not None:
            out["recognition"] = {
                "pos_acc": self.pos_acc,
                "neg_acc": self.neg_acc,
                "weighted_acc": self.weighted_acc,
            }
        if self.qa_acc is not None:
            out["qa"] = {"accuracy": self.qa_acc, "scorer": self.qa_scorer}
        if self.retention is not None:
            out["retention"] = {
                "pope": self.retention.pope,
                "mme": self.retention.mme,
                "textvqa": self.retention.textvqa,
                "average": self.retention.average,
            }
            if self.retention_ratio_to_base is not None:
                out["retention"]["ratio_to_base"] = self.retention_ratio_to_base
        if self.counts:
            out["counts"] = dict(self.counts)
        return out

    def to_markdown(self) -> str:
        lines = ["| metric | value |", "| --- | --- |"]
        def row(name, value):
            lines.append(f"| {name} | {value:.3f} |" if isinstance(value, float) else f"| {name} | {value} |")

        if self.pos_acc is not None:
            row("positive recognition", self.pos_acc)
            row("negative recognition", self.neg_acc)
            row("weighted recognition", self.weighted_acc)
        if self.qa_acc is not None:
            row(f"qa accuracy ({self.qa_scorer or 'exact'})", self.qa_acc)
        if self.retention is not None:
            row("pope", self.retention.pope)
            row("mme", self.retention.mme)
            row("textvqa", self.retention.textvqa)
            row("retention average", self.retention.average)
            if self.retention_ratio_to_base is not None:
                row("retention ratio to base", self.retention_ratio_to_base)
        return "\n".join(lines)
