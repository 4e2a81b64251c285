from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, strategies as st

from sdft.domain import (
    ConceptCategory,
    DigestMismatch,
    ImageRef,
    MediaType,
    Stance,
    TurnWeights,
    VoteRecord,
    derive_seed,
    errors_only,
    normalize_text,
    validate_concept_spec,
)

from conftest import make_image


def test_normalize_collapses_case_and_whitespace() -> None:
    assert normalize_text("  Global\t Warming \n") == "global warming"


@given(st.text(max_size=200))
def test_normalize_is_idempotent(text: str) -> None:
    once = normalize_text(text)
    assert normalize_text(once) == once


def test_valid_concept_has_no_violations(warming_concept) -> None:
    assert validate_concept_spec(warming_concept) == []


def test_target_equal_unrelated_after_normalization_is_error(warming_concept) -> None:
    spec = dataclasses.replace(
        warming_concept, target_knowledge="Cats", unrelated_knowledge="cats"
    )
    violations = validate_concept_spec(spec)
    assert any("target equals unrelated after normalization" in v.rule for v in violations)
    assert all(v.severity == "error" for v in violations)


def test_single_image_is_warning_not_error(warming_concept) -> None:
    spec = dataclasses.replace(warming_concept, images=warming_concept.images[:1])
    violations = validate_concept_spec(spec)
    assert any("image count outside 3-5" in v.rule for v in violations)
    assert errors_only(violations) == []


def test_zero_images_is_error(warming_concept) -> None:
    spec = dataclasses.replace(warming_concept, images=())
    assert errors_only(validate_concept_spec(spec))


def test_image_ref_digest_roundtrip(tmp_path) -> None:
    ref = make_image(tmp_path / "a.png", (1, 2, 3))
    assert len(ref.digest) == 64
    assert ref.media_type == MediaType.PNG
    data = ref.load_bytes()
    assert data  # digest verified inside load_bytes


def test_image_ref_detects_tampering(tmp_path) -> None:
    ref = make_image(tmp_path / "a.png", (1, 2, 3))
    (tmp_path / "a.png").write_bytes(b"not the same bytes")
    with pytest.raises(DigestMismatch):
        ref.load_bytes()


def test_image_ref_rejects_unknown_extension(tmp_path) -> None:
    (tmp_path / "a.gif").write_bytes(b"GIF89a")
    with pytest.raises(ValueError):
        ImageRef.from_file(tmp_path / "a.gif")


def test_default_weights_are_valid() -> None:
    weights = TurnWeights(0.2, 0.3, 0.5)
    assert weights.validate() == []
    assert weights.for_phase.__call__  # accessor exists


@pytest.mark.parametrize(
    "weights",
    [TurnWeights(0.2, 0.3, 0.4), TurnWeights(0.0, 0.5, 0.5), TurnWeights(-0.1, 0.6, 0.5)],
)
def test_bad_weights_are_rejected(weights: TurnWeights) -> None:
    assert weights.validate()


def test_vote_record_winner_must_match_bucket() -> None:
    record = VoteRecord(
        m=2,
        candidates=("No.", "Yes."),
        buckets=(Stance.NEGATION, Stance.AFFIRMATION),
        winner_bucket=Stance.AFFIRMATION,
        winner_index=0,
        tie_flag=True,
    )
    assert record.validate()


def test_vote_record_majority_without_tie_flag_is_invalid() -> None:
    record = VoteRecord(
        m=3,
        candidates=("Yes.", "No.", "No."),
        buckets=(Stance.AFFIRMATION, Stance.NEGATION, Stance.NEGATION),
        winner_bucket=Stance.AFFIRMATION,
        winner_index=0,
        tie_flag=False,
    )
    assert any("winner count" in v.rule for v in record.validate())


def test_duplicate_concept_ids_rejected(clean_job) -> None:
    concepts = clean_job.concepts
    job = dataclasses.replace(
        clean_job,
        concepts=(concepts[0], dataclasses.replace(concepts[1], id=concepts[0].id)),
    )
    assert any("duplicate concept id" in v.rule for v in job.validate())


def test_job_accepts_defaults(clean_job) -> None:
    assert errors_only(clean_job.validate()) == []
    assert clean_job.vote_m == 3
    assert clean_job.structure_mode.value == "full"
    assert clean_job.response_source.caption.value == "base"
    assert clean_job.response_source.target.value == "synthesizer"


def test_derive_seed_is_stable_and_bounded() -> None:
    a = derive_seed(42, "concept/abc", "a2", 1)
    b = derive_seed(42, "concept/abc", "a2", 1)
    c = derive_seed(42, "concept/abc", "a2", 2)
    assert a == b != c
    assert 0 <= a < 2**63


def test_job_from_dict_roundtrip(clean_job, image_pool) -> None:
    raw = {
        "job_id": "j2",
        "seed": 7,
        "vote_m": 1,
        "structure_mode": "target_only",
        "response_source": {"caption": "synthesizer", "contrastive": "synthesizer"},
        "weights": [0.2, 0.3, 0.5],
        "max_concurrency": 4,
        "concepts": [
            {
                "id": "c1",
                "category": "abstract_concept",
                "target_knowledge": "solidarity",
                "unrelated_knowledge": "plumbing",
                "images": [
                    {
                        "locator": ref.locator,
                        "media_type": ref.media_type.value,
                        "digest": ref.digest,
                    }
                    for ref in image_pool[:3]
                ],
            }
        ],
    }
    job = type(clean_job).from_dict(raw)
    assert job.vote_m == 1
    assert job.structure_mode.value == "target_only"
    assert job.response_source.caption.value == "synthesizer"
    assert job.response_source.target.value == "synthesizer"
    assert job.concepts[0].category == ConceptCategory.ABSTRACT_CONCEPT
    assert errors_only(job.validate()) == []
