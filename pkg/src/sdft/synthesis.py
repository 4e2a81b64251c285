"""Two-stage structured dialogue synthesis.

Stage 1 writes the questions for each image in a fixed order: the caption
question first, then the target-knowledge question, then the contrastive
question derived from it by swapping the target concept for the unrelated
one. Stage 2 fills in the answers: the base model captions its own way,
contrastive answers are sampled several times and resolved by stance voting,
and the synthesis model writes the detailed target answer with the earlier
turns as context.

Questions for personalized-entity and abstract-concept categories come from
the rotating template library (no model call for the target/contrastive
questions); domain-expertise questions are written by the synthesis model.

Everything is deterministic given (job, seed, scripted mock): sampling seeds
are derived per record and per sub-step, template rotation is pre-assigned in
input order before any parallel work starts, and results are assembled in
(concept order, image order) regardless of completion order.
"""

from __future__ import annotations

import logging
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

from .domain import (
    FLAG_CONTRASTIVE_LEAK,
    FLAG_VOTE_AFFIRMATION_WINNER,
    FLAG_VOTE_TIE,
    ConceptCategory,
    ConceptSpec,
    DialogueTriplet,
    DialogueTurn,
    ImageRef,
    Phase,
    Provenance,
    ResponseSource,
    Stance,
    SynthesisJob,
    VoteRecord,
    derive_seed,
    errors_only,
    normalize_text,
    stable_hash_hex,
)
from .gateway import ChatMessage, ChatRequest, Gateway, GatewayError, ModelRole
from .templates import (
    QuestionTemplate,
    RotationState,
    TemplateLibrary,
    instantiate,
    next_template,
)

logger = logging.getLogger(__name__)

CAPTION_QUESTION_INSTRUCTION = "Generate a descriptive caption question for this image."

TARGET_QUESTION_INSTRUCTION = (
    "Generate a specific question that requires analyzing both the image content "
    "and knowledge of {target}. The question should be answerable based on the "
    "image and focus on key domain-specific elements related to {target}."
)

CONTRASTIVE_REWRITE_INSTRUCTION = (
    "Rewrite this question so it asks about something completely unrelated. "
    "Requirements: 1. Replace the key concept with \"{unrelated}\". "
    "2. Keep the question format identical. "
    "3. Ensure the new question cannot be answered by the original image. "
    "Original question: {question}"
)

TARGET_ANSWER_INSTRUCTION = (
    "Answer the following question about this image: {question} "
    "Provide a detailed response that identifies the relevant visual elements in "
    "the image, explains step by step how they connect to {target}, and states "
    "the conclusion."
)

TARGET_ANSWER_CONTEXT_PREFIX = "Here is the contextual information about the image: {context}. "

CONCEPT_EXTRACTION_INSTRUCTION = (
    "List the key domain concepts mentioned in the following text, one per line, "
    "as short noun phrases. Text: {text}"
)

_NEGATION_CUE_PATTERNS = (
    r"\bno\b",
    r"\bnot\b",
    r"n't\b",
    r"\bcannot\b",
    r"\bnever\b",
    r"\bnone\b",
    r"\bnothing\b",
    r"\bunrelated\b",
    r"\bnor\b",
)

_AFFIRMATION_CUE_PATTERNS = (
    r"\byes\b",
    r"\bindeed\b",
    r"\bcertainly\b",
    r"\babsolutely\b",
    r"\bdefinitely\b",
    r"\bclearly\b",
    r"\bsure\b",
    r"\bcorrect\b",
    r"\bof course\b",
)


class JobConfigurationError(ValueError):
    """The job itself is invalid; nothing was synthesized."""


def _first_sentence(text: str) -> str:
    stripped = text.strip()
    for i, ch in enumerate(stripped):
        if ch in ".!?":
            return stripped[: i + 1]
    return stripped


def classify_response(text: str) -> Stance:
    """Sort a free-text answer into a stance bucket.

    Rule order is fixed: negation cues win over affirmation cues, both are
    matched against the normalized first sentence, and anything cue-free is
    ``other``.
    """
    sentence = normalize_text(_first_sentence(text))
    for pattern in _NEGATION_CUE_PATTERNS:
        if re.search(pattern, sentence):
            return Stance.NEGATION
    for pattern in _AFFIRMATION_CUE_PATTERNS:
        if re.search(pattern, sentence):
            return Stance.AFFIRMATION
    return Stance.OTHER


def majority_vote(candidates: Sequence[str], classify=classify_response) -> tuple[str, VoteRecord]:
    """Pick the consensus answer among sampled candidates.

    The winner is the first-generated candidate in the strictly largest
    stance bucket. On a tie the negation bucket is preferred (the contrastive
    turn's expected correct stance); failing that, the earliest-generated
    candidate among the tied buckets wins. ``tie_flag`` is set on any tie.
    """
    if not candidates:
        raise ValueError("majority_vote requires at least one candidate")
    buckets = tuple(classify(c) for c in candidates)
    counts = Counter(buckets)
    max_count = max(counts.values())
    leaders = [s for s in Stance if counts.get(s, 0) == max_count]
    tie_flag = len(leaders) > 1
    if not tie_flag:
        winner_bucket = leaders[0]
    elif Stance.NEGATION in leaders:
        winner_bucket = Stance.NEGATION
    else:
        first = min(i for i, b in enumerate(buckets) if b in leaders)
        winner_bucket = buckets[first]
    winner_index = next(i for i, b in enumerate(buckets) if b == winner_bucket)
    record = VoteRecord(
        m=len(candidates),
        candidates=tuple(candidates),
        buckets=buckets,
        winner_bucket=winner_bucket,
        winner_index=winner_index,
        tie_flag=tie_flag,
    )
    return candidates[winner_index], record


def contrastive_post_check(question: str, concept: ConceptSpec) -> bool:
    """True when the contrastive question names the unrelated concept and
    does not mention the target concept."""
    q = normalize_text(question)
    return (
        normalize_text(concept.unrelated_knowledge) in q
        and normalize_text(concept.target_knowledge) not in q
    )


@dataclass(frozen=True)
class SynthesisSettings:
    """Sampling knobs. Contrastive sampling needs diversity for voting;
    question and target-answer generation favor stability."""

    question_temperature: float = 0.2
    contrastive_temperature: float = 0.7
    answer_temperature: float = 0.2
    max_tokens: int = 512


@dataclass
class SynthesisReport:
    job_id: str
    triplet_count: int = 0
    per_concept: dict[str, int] = field(default_factory=dict)
    vote_tie_count: int = 0
    contrastive_regenerated: int = 0
    contrastive_flagged: int = 0
    failed_triplets: int = 0
    wall_time_s: float = 0.0
    backend_calls: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "triplet_count": self.triplet_count,
            "per_concept": dict(self.per_concept),
            "vote_tie_count": self.vote_tie_count,
            "contrastive_regenerated": self.contrastive_regenerated,
            "contrastive_flagged": self.contrastive_flagged,
            "failed_triplets": self.failed_triplets,
            "wall_time_s": self.wall_time_s,
            "backend_calls": dict(self.backend_calls),
        }


@dataclass(frozen=True)
class _TripletResult:
    triplet: DialogueTriplet
    regenerated: bool


class SynthesisEngine:
    def __init__(
        self,
        gateway: Gateway,
        library: Optional[TemplateLibrary] = None,
        settings: SynthesisSettings = SynthesisSettings(),
    ):
        self.gateway = gateway
        self.library = library
        self.settings = settings

    # -- stage 1: questions ------------------------------------------------

    def gen_caption_question(self, image: ImageRef, seed: int) -> str:
        response = self.gateway.complete(
            ChatRequest(
                role=ModelRole.SYNTHESIZER,
                messages=(ChatMessage("user", CAPTION_QUESTION_INSTRUCTION, (image,)),),
                temperature=self.settings.question_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        return response.text.strip()

    def gen_target_question(
        self,
        image: ImageRef,
        concept: ConceptSpec,
        template: Optional[QuestionTemplate],
        seed: int,
    ) -> str:
        if template is not None:
            return instantiate(template, concept.target_knowledge)
        prompt = TARGET_QUESTION_INSTRUCTION.format(target=concept.target_knowledge)
        response = self.gateway.complete(
            ChatRequest(
                role=ModelRole.SYNTHESIZER,
                messages=(ChatMessage("user", prompt, (image,)),),
                temperature=self.settings.question_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        return response.text.strip()

    def gen_contrastive_question(
        self,
        target_question: str,
        concept: ConceptSpec,
        image: ImageRef,
        template_derived: bool,
        seed_fn,
    ) -> tuple[str, bool, bool]:
        """Derive the contrastive question from the target question.

        Returns (question, leaked, regenerated). Template-derived questions
        are rewritten by direct text substitution; synthesizer-derived ones
        get one regeneration attempt before the leak is flagged.
        """
        if template_derived:
            question = target_question.replace(
                concept.target_knowledge, concept.unrelated_knowledge
            )
            return question, not contrastive_post_check(question, concept), False

        question = self._rewrite_contrastive(target_question, concept, image, seed_fn(1))
        if contrastive_post_check(question, concept):
            return question, False, False
        retry = self._rewrite_contrastive(target_question, concept, image, seed_fn(2))
        if contrastive_post_check(retry, concept):
            return retry, False, True
        return retry, True, True

    def _rewrite_contrastive(
        self, target_question: str, concept: ConceptSpec, image: ImageRef, seed: int
    ) -> str:
        prompt = CONTRASTIVE_REWRITE_INSTRUCTION.format(
            unrelated=concept.unrelated_knowledge, question=target_question
        )
        response = self.gateway.complete(
            ChatRequest(
                role=ModelRole.SYNTHESIZER,
                messages=(ChatMessage("user", prompt, (image,)),),
                temperature=self.settings.question_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        return response.text.strip()

    # -- stage 2: responses ------------------------------------------------

    def _role_for(self, source: ResponseSource) -> str:
        return ModelRole.BASE if source == ResponseSource.BASE else ModelRole.SYNTHESIZER

    def _provenance_for(self, source: ResponseSource) -> Provenance:
        return (
            Provenance.BASE_MODEL
            if source == ResponseSource.BASE
            else Provenance.SYNTHESIS_MODEL
        )

    def gen_caption_response(
        self, image: ImageRef, question: str, job: SynthesisJob, seed: int
    ) -> tuple[str, Provenance]:
        source = job.response_source.caption
        response = self.gateway.complete(
            ChatRequest(
                role=self._role_for(source),
                messages=(ChatMessage("user", question, (image,)),),
                temperature=self.settings.answer_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        return response.text.strip(), self._provenance_for(source)

    def gen_contrastive_response(
        self, image: ImageRef, question: str, job: SynthesisJob, seed_fn
    ) -> tuple[str, VoteRecord, Provenance]:
        source = job.response_source.contrastive
        candidates = []
        for j in range(1, job.vote_m + 1):
            response = self.gateway.complete(
                ChatRequest(
                    role=self._role_for(source),
                    messages=(ChatMessage("user", question, (image,)),),
                    temperature=self.settings.contrastive_temperature,
                    sampling_seed=seed_fn(j),
                    max_tokens=self.settings.max_tokens,
                )
            )
            candidates.append(response.text.strip())
        answer, vote = majority_vote(candidates)
        provenance = (
            Provenance.MAJORITY_VOTE if job.vote_m > 1 else self._provenance_for(source)
        )
        return answer, vote, provenance

    def gen_target_response(
        self,
        image: ImageRef,
        question: str,
        prior_turns: Sequence[tuple[str, str]],
        concept: ConceptSpec,
        job: SynthesisJob,
        seed: int,
    ) -> tuple[str, Provenance]:
        if not prior_turns:
            raise ValueError("target response requires the prior dialogue turns as context")
        prompt = TARGET_ANSWER_INSTRUCTION.format(
            question=question, target=concept.target_knowledge
        )
        if concept.category == ConceptCategory.DOMAIN_EXPERTISE:
            prompt = (
                TARGET_ANSWER_CONTEXT_PREFIX.format(context=concept.target_knowledge) + prompt
            )
        messages: list[ChatMessage] = []
        for i, (q, a) in enumerate(prior_turns):
            messages.append(ChatMessage("user", q, (image,) if i == 0 else ()))
            messages.append(ChatMessage("assistant", a))
        messages.append(ChatMessage("user", prompt))
        source = job.response_source.target
        response = self.gateway.complete(
            ChatRequest(
                role=self._role_for(source),
                messages=tuple(messages),
                temperature=self.settings.answer_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        return response.text.strip(), self._provenance_for(source)

    # -- assembly ----------------------------------------------------------

    def synthesize_triplet(
        self,
        image: ImageRef,
        concept: ConceptSpec,
        job: SynthesisJob,
        template: Optional[QuestionTemplate],
    ) -> _TripletResult:
        record_key = f"{concept.id}/{image.digest}"
        record_seed = derive_seed(job.seed, record_key)
        record_id = "rec-" + stable_hash_hex(job.job_id, concept.id, image.digest, job.seed)[:16]

        q1 = self.gen_caption_question(image, seed=derive_seed(job.seed, record_key, "q1"))
        q3 = self.gen_target_question(
            image, concept, template, seed=derive_seed(job.seed, record_key, "q3")
        )
        q2, leaked, regenerated = self.gen_contrastive_question(
            q3,
            concept,
            image,
            template_derived=template is not None,
            seed_fn=lambda attempt: derive_seed(job.seed, record_key, "q2", attempt),
        )

        a1, a1_prov = self.gen_caption_response(
            image, q1, job, seed=derive_seed(job.seed, record_key, "a1")
        )
        a2, vote, a2_prov = self.gen_contrastive_response(
            image, q2, job, seed_fn=lambda j: derive_seed(job.seed, record_key, "a2", j)
        )
        a3, a3_prov = self.gen_target_response(
            image,
            q3,
            [(q1, a1), (q2, a2)],
            concept,
            job,
            seed=derive_seed(job.seed, record_key, "a3"),
        )

        flags: list[str] = []
        if leaked:
            flags.append(FLAG_CONTRASTIVE_LEAK)
        if vote.tie_flag:
            flags.append(FLAG_VOTE_TIE)
        if vote.winner_bucket == Stance.AFFIRMATION:
            flags.append(FLAG_VOTE_AFFIRMATION_WINNER)

        weights = job.weights
        triplet = DialogueTriplet(
            record_id=record_id,
            concept_id=concept.id,
            image=image,
            turns=(
                DialogueTurn(Phase.CAPTION, q1, a1, a1_prov, weights.alpha1),
                DialogueTurn(Phase.CONTRASTIVE, q2, a2, a2_prov, weights.alpha2),
                DialogueTurn(Phase.TARGET, q3, a3, a3_prov, weights.alpha3),
            ),
            seed=record_seed,
            template_index=template.index if template is not None else None,
            vote=vote,
            created_at=datetime.now(timezone.utc).isoformat(),
            flags=tuple(flags),
        )
        problems = errors_only(triplet.validate(concept, weights))
        if problems:
            raise JobConfigurationError(
                f"synthesized triplet {record_id} failed validation: "
                + "; ".join(str(p) for p in problems)
            )
        return _TripletResult(triplet=triplet, regenerated=regenerated)

    def run_job(self, job: SynthesisJob) -> tuple[list[DialogueTriplet], SynthesisReport]:
        problems = errors_only(job.validate())
        if problems:
            raise JobConfigurationError("; ".join(str(p) for p in problems))

        needs_templates = any(
            c.category != ConceptCategory.DOMAIN_EXPERTISE for c in job.concepts
        )
        if needs_templates and self.library is None:
            raise JobConfigurationError(
                "job contains template-based concepts but no template library is loaded"
            )

        # Template rotation is consumed in input order before any parallel
        # work, so the assignment is independent of completion order.
        tasks: list[tuple[ConceptSpec, ImageRef, Optional[QuestionTemplate]]] = []
        rotation = (
            RotationState.new(derive_seed(job.seed, "template-rotation"), self.library)
            if self.library is not None
            else None
        )
        for concept in job.concepts:
            for image in concept.images:
                template = None
                if concept.category != ConceptCategory.DOMAIN_EXPERTISE:
                    template, rotation = next_template(rotation, self.library)
                tasks.append((concept, image, template))

        started = time.monotonic()
        calls_before = dict(self.gateway.call_counts)
        report = SynthesisReport(job_id=job.job_id)
        results: list[Optional[_TripletResult]] = [None] * len(tasks)

        def run_one(i: int) -> None:
            concept, image, template = tasks[i]
            try:
                results[i] = self.synthesize_triplet(image, concept, job, template)
            except GatewayError as exc:
                logger.warning(
                    "triplet for concept %s image %s aborted: %s",
                    concept.id, image.digest[:12], exc,
                )

        with ThreadPoolExecutor(max_workers=job.max_concurrency) as pool:
            list(pool.map(run_one, range(len(tasks))))

        triplets: list[DialogueTriplet] = []
        for (concept, _image, _template), result in zip(tasks, results):
            if result is None:
                report.failed_triplets += 1
                continue
            triplet = result.triplet
            triplets.append(triplet)
            report.per_concept[concept.id] = report.per_concept.get(concept.id, 0) + 1
            if FLAG_VOTE_TIE in triplet.flags:
                report.vote_tie_count += 1
            if FLAG_CONTRASTIVE_LEAK in triplet.flags:
                report.contrastive_flagged += 1
            if result.regenerated:
                report.contrastive_regenerated += 1
        report.triplet_count = len(triplets)
        report.wall_time_s = time.monotonic() - started
        report.backend_calls = {
            role: self.gateway.call_counts[role] - calls_before.get(role, 0)
            for role in self.gateway.call_counts
        }
        return triplets, report

    # -- corpus bootstrap ----------------------------------------------------

    def extract_concepts(self, text: str, seed: int = 0) -> list[str]:
        """Pull key concept phrases out of a caption or passage, deduplicated
        in first-seen order. Callers pair each phrase with an unrelated
        counterpart from their distractor pool to form concept specs."""
        if not text.strip():
            raise ValueError("text must be non-empty")
        response = self.gateway.complete(
            ChatRequest(
                role=ModelRole.SYNTHESIZER,
                messages=(
                    ChatMessage("user", CONCEPT_EXTRACTION_INSTRUCTION.format(text=text)),
                ),
                temperature=self.settings.question_temperature,
                sampling_seed=seed,
                max_tokens=self.settings.max_tokens,
            )
        )
        phrases: list[str] = []
        seen: set[str] = set()
        for raw_line in response.text.splitlines():
            phrase = raw_line.strip().lstrip("-*0123456789. ").strip()
            if not phrase:
                continue
            key = normalize_text(phrase)
            if key in seen:
                continue
            seen.add(key)
            phrases.append(phrase)
        return phrases
