from __future__ import annotations

from pathlib import Path

import pytest
from PIL import Image

from sdft.domain import (
    ConceptCategory,
    ConceptSpec,
    ImageRef,
    SynthesisJob,
)
from sdft.gateway import MockBackend
from sdft.synthesis import (
    CAPTION_QUESTION_INSTRUCTION,
    CONTRASTIVE_REWRITE_INSTRUCTION,
    TARGET_ANSWER_INSTRUCTION,
    TARGET_QUESTION_INSTRUCTION,
)


def make_image(path: Path, color: tuple[int, int, int]) -> ImageRef:
    Image.new("RGB", (4, 4), color).save(path)
    return ImageRef.from_file(path)


@pytest.fixture(scope="session")
def image_pool(tmp_path_factory) -> list[ImageRef]:
    root = tmp_path_factory.mktemp("images")
    return [
        make_image(root / f"img{i}.png", (20 * i, 10 * i, 255 - 20 * i)) for i in range(12)
    ]


@pytest.fixture
def warming_concept(image_pool) -> ConceptSpec:
    return ConceptSpec(
        id="warming",
        category=ConceptCategory.ABSTRACT_CONCEPT,
        target_knowledge="global warming",
        unrelated_knowledge="transportation",
        images=tuple(image_pool[0:3]),
    )


@pytest.fixture
def pet_concept(image_pool) -> ConceptSpec:
    return ConceptSpec(
        id="pet-max",
        category=ConceptCategory.PERSONALIZED_ENTITY,
        target_knowledge="Max",
        unrelated_knowledge="skyscrapers",
        images=tuple(image_pool[3:6]),
    )


@pytest.fixture
def medical_concept(image_pool) -> ConceptSpec:
    return ConceptSpec(
        id="lung-ca",
        category=ConceptCategory.DOMAIN_EXPERTISE,
        target_knowledge="lung cancer",
        unrelated_knowledge="orchestral music",
        images=tuple(image_pool[6:9]),
    )


@pytest.fixture
def clean_job(warming_concept, pet_concept) -> SynthesisJob:
    return SynthesisJob(
        job_id="job-clean",
        concepts=(warming_concept, pet_concept),
        vote_m=3,
        seed=1234,
        max_concurrency=1,
    )


def clean_mock() -> MockBackend:
    """Scripted answers for the two template-based test concepts.

    Rule order matters: instruction-specific rules first, then rules keyed on
    the question text the earlier stage produced.
    """
    mock = MockBackend()
    mock.add(match=CAPTION_QUESTION_INSTRUCTION[:40], text="Describe this image.")
    mock.add(match="Answer the following question", text=_target_answer())
    mock.add(match="Describe this image.", text="A scene with several prominent elements.")
    mock.add(match="transportation", text="No, this image is not related to transportation.")
    mock.add(match="skyscrapers", text="No, there is no connection to skyscrapers here.")
    return mock


def _target_answer() -> str:
    return (
        "The visual elements point beyond their surface appearance. "
        "Step by step, they connect to the asked concept, so the image "
        "clearly embodies it."
    )


@pytest.fixture
def clean_gateway():
    from sdft.gateway import Gateway

    return Gateway.mock(clean_mock())


# Re-exported instruction constants some tests script against.
INSTRUCTIONS = {
    "caption_question": CAPTION_QUESTION_INSTRUCTION,
    "target_question": TARGET_QUESTION_INSTRUCTION,
    "contrastive_rewrite": CONTRASTIVE_REWRITE_INSTRUCTION,
    "target_answer": TARGET_ANSWER_INSTRUCTION,
}


def clean_script_dict() -> dict:
    """clean_mock() as a JSON-serializable script for CLI-driven runs."""
    return {
        "rules": [
            {"match": r.match, "text": r.text}
            for r in clean_mock().rules
        ]
    }


def job_spec_dict(job) -> dict:
    return {
        "job_id": job.job_id,
        "seed": job.seed,
        "vote_m": job.vote_m,
        "max_concurrency": job.max_concurrency,
        "structure_mode": job.structure_mode.value,
        "concepts": [
            {
                "id": c.id,
                "category": c.category.value,
                "target_knowledge": c.target_knowledge,
                "unrelated_knowledge": c.unrelated_knowledge,
                "images": [
                    {
                        "locator": i.locator,
                        "media_type": i.media_type.value,
                        "digest": i.digest,
                    }
                    for i in c.images
                ],
            }
            for c in job.concepts
        ],
    }
