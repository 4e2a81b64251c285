"""Event-sourced store backing the human quality-control loop.

Every mutation is an event appended to ``events.jsonl`` under the store
directory; the in-memory index is rebuilt by replaying that log on startup,
so the current state of every record is always reproducible from disk.
Mutations are serialized through a single writer lock; reads see committed
state only.

Review state machine: a record enters as ``pending``; approve/reject/edit
move it between ``approved``, ``rejected`` and ``edited``. A rejected record
only re-enters the exportable set through an explicit edit. Only approved and
edited records are exported when filtering for approval.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .dataset import (
    DatasetManifest,
    TrainingRecord,
    export as dataset_export,
    record_from_triplet,
)
from .domain import ConceptSpec, DialogueTriplet, MediaType, StructureMode, TurnWeights

ACTIONS = ("created", "approved", "rejected", "edited")


class CurationError(Exception):
    pass


class UnknownRecord(CurationError):
    pass


class DuplicateRecord(CurationError):
    pass


class InvalidTransition(CurationError):
    pass


class EmptyEdit(CurationError):
    pass


@dataclass
class ReviewEvent:
    event_id: str
    record_id: str
    action: str
    payload: dict
    reviewer: Optional[str]
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "record_id": self.record_id,
            "action": self.action,
            "payload": self.payload,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ReviewEvent":
        return cls(
            event_id=raw["event_id"],
            record_id=raw["record_id"],
            action=raw["action"],
            payload=raw.get("payload", {}),
            reviewer=raw.get("reviewer"),
            timestamp=raw["timestamp"],
        )


@dataclass
class RecordState:
    data: dict
    created_at: str
    updated_at: str

    @property
    def status(self) -> str:
        return self.data["review"]["status"]

    @property
    def flags(self) -> list[str]:
        return list(self.data["synthesis"]["flags"])

    def view(self) -> dict:
        return {
            "record_id": self.data["record_id"],
            "status": self.status,
            "flags": self.flags,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "record": self.data,
        }


@dataclass
class DialoguePage:
    items: list[dict]
    page: int
    page_size: int
    total: int

    def to_dict(self) -> dict:
        return {
            "items": self.items,
            "page": self.page,
            "page_size": self.page_size,
            "total": self.total,
        }


MAX_PAGE_SIZE = 200

# Allowed review actions per current status; rejected records must be
# re-opened through an edit.
_ALLOWED = {
    "pending": {"approve", "reject", "edit"},
    "approved": {"approve", "reject", "edit"},
    "edited": {"approve", "reject", "edit"},
    "rejected": {"edit"},
}

_ACTION_TO_STATUS = {"approve": "approved", "reject": "rejected", "edit": "edited"}


class CurationStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.jsonl"
        self._lock = threading.Lock()
        self._index: dict[str, RecordState] = {}
        self._images: dict[str, dict] = {}
        if self.events_path.exists():
            self._replay()

    # -- event plumbing ----------------------------------------------------

    def _replay(self) -> None:
        for line in self.events_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                self._apply(ReviewEvent.from_dict(json.loads(line)))

    def _append(self, event: ReviewEvent) -> None:
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_dict(), ensure_ascii=False) + "\n")
        self._apply(event)

    def _apply(self, event: ReviewEvent) -> None:
        if event.action == "created":
            data = event.payload["record"]
            self._index[event.record_id] = RecordState(
                data=data, created_at=event.timestamp, updated_at=event.timestamp
            )
            for image in data.get("images", []):
                self._images[image["digest"]] = image
            return
        state = self._index[event.record_id]
        if event.action == "edited":
            phase = event.payload["turn_phase"]
            for turn in state.data["turns"]:
                if turn["phase"] == phase:
                    turn["answer"] = event.payload["edited_answer"]
                    turn["provenance"] = "human_edit"
                    break
        state.data["review"] = {
            "status": event.action,
            "reviewer": event.reviewer,
            "timestamp": event.timestamp,
            "note": event.payload.get("note"),
        }
        state.updated_at = event.timestamp

    @staticmethod
    def _now() -> str:
        return datetime.now(timezone.utc).isoformat()

    # -- public API ----------------------------------------------------------

    def record_dialogue(
        self, triplet: DialogueTriplet, concept: ConceptSpec, weights: TurnWeights
    ) -> str:
        """Persist a synthesized dialogue; it enters review as pending."""
        record = record_from_triplet(triplet, concept, weights)
        return self.record_training_record(record)

    def record_training_record(self, record: TrainingRecord) -> str:
        with self._lock:
            if record.record_id in self._index:
                raise DuplicateRecord(f"record {record.record_id} already stored")
            self._append(
                ReviewEvent(
                    event_id=uuid.uuid4().hex,
                    record_id=record.record_id,
                    action="created",
                    payload={"record": record.data},
                    reviewer=None,
                    timestamp=self._now(),
                )
            )
        return record.record_id

    def get(self, record_id: str) -> dict:
        state = self._index.get(record_id)
        if state is None:
            raise UnknownRecord(record_id)
        return state.view()

    def list_dialogues(
        self,
        status: Optional[str] = None,
        concept_id: Optional[str] = None,
        flagged: Optional[bool] = None,
        page: int = 1,
        page_size: int = 50,
    ) -> DialoguePage:
        if page < 1:
            raise ValueError("page is 1-based")
        page_size = min(max(1, page_size), MAX_PAGE_SIZE)
        states = sorted(
            self._index.values(), key=lambda s: (s.created_at, s.data["record_id"])
        )
        if status is not None:
            states = [s for s in states if s.status == status]
        if concept_id is not None:
            states = [s for s in states if s.data["concept"]["id"] == concept_id]
        if flagged is not None:
            states = [s for s in states if bool(s.flags) == flagged]
        start = (page - 1) * page_size
        return DialoguePage(
            items=[s.view() for s in states[start : start + page_size]],
            page=page,
            page_size=page_size,
            total=len(states),
        )

    def review_dialogue(
        self,
        record_id: str,
        action: str,
        turn_phase: Optional[str] = None,
        edited_answer: Optional[str] = None,
        reviewer: str = "",
        note: Optional[str] = None,
    ) -> dict:
        if action not in _ACTION_TO_STATUS:
            raise ValueError(f"unknown review action {action!r}")
        with self._lock:
            state = self._index.get(record_id)
            if state is None:
                raise UnknownRecord(record_id)
            if action not in _ALLOWED[state.status]:
                raise InvalidTransition(
                    f"cannot {action} a {state.status} record (re-open via edit)"
                )
            payload: dict = {"note": note}
            if action == "edit":
                if not edited_answer or not edited_answer.strip():
                    raise EmptyEdit("edited answer must be non-empty")
                phases = [t["phase"] for t in state.data["turns"]]
                if turn_phase not in phases:
                    raise ValueError(
                        f"record has no {turn_phase!r} turn (phases: {phases})"
                    )
                payload.update({"turn_phase": turn_phase, "edited_answer": edited_answer})
            self._append(
                ReviewEvent(
                    event_id=uuid.uuid4().hex,
                    record_id=record_id,
                    action=_ACTION_TO_STATUS[action],
                    payload=payload,
                    reviewer=reviewer or None,
                    timestamp=self._now(),
                )
            )
            return state.view()

    def current_records(self) -> list[TrainingRecord]:
        states = sorted(
            self._index.values(), key=lambda s: (s.created_at, s.data["record_id"])
        )
        return [TrainingRecord(s.data) for s in states]

    def states_snapshot(self) -> dict[str, dict]:
        """record_id -> current record data + status; used to verify replay."""
        return {
            rid: {"data": json.loads(json.dumps(s.data)), "status": s.status}
            for rid, s in self._index.items()
        }

    def export_approved(
        self, out_path: str | Path, mode: StructureMode = StructureMode.FULL
    ) -> DatasetManifest:
        return dataset_export(
            self.current_records(), out_path, mode=mode, approved_only=True
        )

    def image_bytes(self, digest: str) -> tuple[bytes, str]:
        """Bytes and MIME type for a stored image digest."""
        info = self._images.get(digest)
        if info is None:
            raise UnknownRecord(f"no image with digest {digest}")
        from .domain import ImageRef

        ref = ImageRef(info["locator"], MediaType(info["media_type"]), digest)
        return ref.load_bytes(), ref.media_type.mime
