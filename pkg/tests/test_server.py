from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from sdft.curation import CurationStore
from sdft.gateway import Gateway
from sdft.server import create_app
from sdft.synthesis import SynthesisEngine
from sdft.templates import default_library

from conftest import clean_mock, job_spec_dict as job_spec


@pytest.fixture
def client(tmp_path, clean_job):
    store = CurationStore(tmp_path / "store")
    engine = SynthesisEngine(Gateway.mock(clean_mock()), library=default_library())
    app = create_app(store, engine)
    return TestClient(app)


def wait_for_job(client: TestClient, job_id: str, timeout_s: float = 10.0) -> dict:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        info = client.get(f"/api/v1/jobs/{job_id}").json()
        if info["status"] != "running":
            return info
        time.sleep(0.02)
    raise AssertionError("job did not finish in time")


@pytest.fixture
def ran_job(client, clean_job):
    response = client.post("/api/v1/jobs", json=job_spec(clean_job))
    assert response.status_code == 200, response.text
    job_id = response.json()["job_id"]
    info = wait_for_job(client, job_id)
    assert info["status"] == "done", info
    return info


def test_job_report_totals(ran_job) -> None:
    report = ran_job["report"]
    assert report["triplet_count"] == 6
    assert report["per_concept"] == {"warming": 3, "pet-max": 3}
    assert report["failed_triplets"] == 0


def test_unknown_job_is_404(client) -> None:
    response = client.get("/api/v1/jobs/nope")
    assert response.status_code == 404
    assert response.json()["code"] == "unknown_job"


def test_invalid_job_spec_is_422(client) -> None:
    response = client.post("/api/v1/jobs", json={"job_id": "x", "concepts": []})
    assert response.status_code == 422
    assert response.json()["code"] == "invalid_job"


def test_jobs_require_engine(tmp_path, clean_job) -> None:
    app = create_app(CurationStore(tmp_path / "s2"), engine=None)
    response = TestClient(app).post("/api/v1/jobs", json=job_spec(clean_job))
    assert response.status_code == 422
    assert response.json()["code"] == "no_engine"


def test_list_and_get_dialogues(client, ran_job) -> None:
    page = client.get("/api/v1/dialogues", params={"status": "pending"}).json()
    assert page["total"] == 6
    assert len(page["items"]) == 6
    record_id = page["items"][0]["record_id"]
    one = client.get(f"/api/v1/dialogues/{record_id}")
    assert one.status_code == 200
    assert one.json()["record"]["record_id"] == record_id
    assert client.get("/api/v1/dialogues/rec-missing").status_code == 404


def test_dialogue_filters(client, ran_job) -> None:
    warming = client.get("/api/v1/dialogues", params={"concept": "warming"}).json()
    assert warming["total"] == 3
    unflagged = client.get("/api/v1/dialogues", params={"flagged": "false"}).json()
    assert unflagged["total"] == 6


def test_review_approve_flow(client, ran_job) -> None:
    record_id = client.get("/api/v1/dialogues").json()["items"][0]["record_id"]
    response = client.post(
        f"/api/v1/dialogues/{record_id}/review",
        json={"action": "approve", "reviewer": "ui-tester"},
    )
    assert response.status_code == 200
    assert response.json()["status"] == "approved"
    pending = client.get("/api/v1/dialogues", params={"status": "pending"}).json()
    assert pending["total"] == 5


def test_review_edit_flow(client, ran_job) -> None:
    record_id = client.get("/api/v1/dialogues").json()["items"][1]["record_id"]
    response = client.post(
        f"/api/v1/dialogues/{record_id}/review",
        json={
            "action": "edit",
            "turn_phase": "target",
            "edited_answer": "Edited through the API.",
            "reviewer": "ui-tester",
        },
    )
    assert response.status_code == 200
    body = response.json()
    target = [t for t in body["record"]["turns"] if t["phase"] == "target"][0]
    assert target["provenance"] == "human_edit"
    assert body["status"] == "edited"


def test_review_conflict_and_validation_errors(client, ran_job) -> None:
    items = client.get("/api/v1/dialogues").json()["items"]
    rejected = items[2]["record_id"]
    client.post(
        f"/api/v1/dialogues/{rejected}/review",
        json={"action": "reject", "reviewer": "r"},
    )
    conflict = client.post(
        f"/api/v1/dialogues/{rejected}/review",
        json={"action": "approve", "reviewer": "r"},
    )
    assert conflict.status_code == 409
    assert conflict.json()["code"] == "invalid_transition"

    empty = client.post(
        f"/api/v1/dialogues/{items[3]['record_id']}/review",
        json={"action": "edit", "turn_phase": "target", "edited_answer": " ", "reviewer": "r"},
    )
    assert empty.status_code == 422
    assert empty.json()["code"] == "empty_edit"

    missing = client.post(
        "/api/v1/dialogues/rec-missing/review",
        json={"action": "approve", "reviewer": "r"},
    )
    assert missing.status_code == 404


def test_image_endpoint_serves_bytes(client, ran_job, image_pool) -> None:
    image = image_pool[0]
    response = client.get(f"/api/v1/images/{image.digest}")
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.content == image.load_bytes()
    assert client.get("/api/v1/images/" + "0" * 64).status_code == 404


def test_export_endpoint_streams_approved_records(client, ran_job) -> None:
    items = client.get("/api/v1/dialogues").json()["items"]
    for item in items[:2]:
        client.post(
            f"/api/v1/dialogues/{item['record_id']}/review",
            json={"action": "approve", "reviewer": "r"},
        )
    response = client.get("/api/v1/export", params={"approved_only": "true"})
    assert response.status_code == 200
    lines = [json.loads(l) for l in response.text.splitlines() if l]
    assert len(lines) == 2
    assert {l["review"]["status"] for l in lines} == {"approved"}

    everything = client.get("/api/v1/export", params={"approved_only": "false"})
    assert len(everything.text.splitlines()) == 6

    reduced = client.get(
        "/api/v1/export", params={"approved_only": "true", "mode": "target_only"}
    )
    reduced_lines = [json.loads(l) for l in reduced.text.splitlines() if l]
    assert all(len(l["turns"]) == 1 for l in reduced_lines)
    assert all(l["turns"][0]["phase"] == "target" for l in reduced_lines)

    bad_mode = client.get("/api/v1/export", params={"mode": "bogus"})
    assert bad_mode.status_code == 422
