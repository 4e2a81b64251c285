"""Reference arithmetic for the weighted multi-turn training objective.

Per-turn cross-entropy is the token mean of negated logprobs, which keeps a
turn's contribution independent of its length so the phase coefficients carry
their intended relative meaning. The total objective is the convex
combination of the three per-turn losses under the phase weights.

Also emits per-token weight masks for external trainers: question/user tokens
carry weight 0, assistant tokens carry their phase coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .domain import Phase, TurnWeights

WEIGHT_SUM_TOLERANCE = 1e-9


class EmptyTurn(ValueError):
    """A turn with no answer tokens has no defined loss."""


class InvalidWeights(ValueError):
    """Phase weights must be positive and sum to 1."""


class OverlappingSpans(ValueError):
    """Caller-supplied token boundaries overlap or are unordered."""


@dataclass(frozen=True)
class TurnLossInput:
    phase: Phase
    token_logprobs: tuple[float, ...]


def turn_cross_entropy(turn: TurnLossInput) -> float:
    """Mean negated token logprob for one assistant turn."""
    if not turn.token_logprobs:
        raise EmptyTurn(f"{turn.phase.value} turn has no token logprobs")
    if any(lp > 0 for lp in turn.token_logprobs):
        raise ValueError("token logprobs must be <= 0")
    return -sum(turn.token_logprobs) / len(turn.token_logprobs)


def total_loss(
    l_cap: float,
    l_dis: float,
    l_target: float,
    weights: TurnWeights,
    validate_weights: bool = True,
) -> float:
    """Convex combination of the three per-turn losses.

    ``validate_weights=False`` skips the weight checks so component-isolation
    tests can use degenerate weights like (1, 0, 0); production callers leave
    it on.
    """
    if min(l_cap, l_dis, l_target) < 0:
        raise ValueError("per-turn losses must be non-negative")
    if validate_weights:
        total = weights.alpha1 + weights.alpha2 + weights.alpha3
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidWeights(f"weights sum to {total!r}, expected 1")
        if min(weights.as_tuple()) <= 0:
            raise InvalidWeights("each weight must be > 0")
    return weights.alpha1 * l_cap + weights.alpha2 * l_dis + weights.alpha3 * l_target


@dataclass(frozen=True)
class TextSpan:
    """Character span of one turn's question or answer in the rendered
    conversation text. Answer spans carry their turn's loss weight."""

    start: int
    end: int
    phase: Phase
    kind: str  # "question" | "answer"
    weight: float


@dataclass(frozen=True)
class WeightMask:
    record_id: str
    entries: tuple[tuple[int, float], ...]  # (token_index, weight)

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "mask": [[i, w] for i, w in self.entries]}


def conversation_layout(record_turns: Sequence[dict]) -> tuple[str, list[TextSpan]]:
    """Render a record's turns to flat text and report each question/answer
    character span. Turns are joined with single newlines; the separator
    characters belong to no span and therefore weigh 0."""
    parts: list[str] = []
    spans: list[TextSpan] = []
    offset = 0

    def push(text: str, phase: Phase, kind: str, weight: float) -> None:
        nonlocal offset
        spans.append(TextSpan(offset, offset + len(text), phase, kind, weight))
        parts.append(text)
        offset += len(text) + 1  # newline separator

    for turn in record_turns:
        phase = Phase(turn["phase"])
        push(turn["question"], phase, "question", 0.0)
        push(turn["answer"], phase, "answer", float(turn["loss_weight"]))
    return "\n".join(parts), spans


def weight_mask(
    record_id: str,
    record_turns: Sequence[dict],
    token_boundaries: Sequence[tuple[int, int]],
) -> WeightMask:
    """Assign a loss weight to every token of a tokenized record.

    ``token_boundaries`` are (start, end) character offsets over the rendered
    conversation (see ``conversation_layout``), sorted and non-overlapping.
    A token starting inside an answer span carries that turn's coefficient;
    everything else (questions, separators) carries 0. Every token gets
    exactly one entry.
    """
    _, spans = conversation_layout(record_turns)
    previous_end = -1
    for start, end in token_boundaries:
        if start < 0 or end < start:
            raise OverlappingSpans(f"invalid token span ({start}, {end})")
        if start < previous_end:
            raise OverlappingSpans(
                f"token span ({start}, {end}) overlaps the previous span ending at {previous_end}"
            )
        previous_end = end

    answer_spans = [s for s in spans if s.kind == "answer"]
    entries: list[tuple[int, float]] = []
    for index, (start, _end) in enumerate(token_boundaries):
        weight = 0.0
        for span in answer_spans:
            if span.start <= start < span.end:
                weight = span.weight
                break
        entries.append((index, weight))
    return WeightMask(record_id=record_id, entries=tuple(entries))
