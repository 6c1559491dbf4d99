"""Persisted website-session records and their object-store layout.

Records are JSON documents stored alongside the images they describe:

    uploads/{upload_id}/original.png + meta.json
    results/{result_id}/{name}.png   + meta.json
    feedback/{result_id}/{entry_id}.json

IDs are 128-bit URL-safe random tokens; unguessable result URLs stand in
for authentication. Uploads and results expire after a TTL sweep;
feedback is retained.
"""

from __future__ import annotations

import json
import secrets
import time
from dataclasses import asdict, dataclass, field

from .errors import NotFound
from .postprocess import PostprocessParams, QuantResult
from .store import ObjectStore

UPLOAD_PREFIX = "uploads/"
RESULT_PREFIX = "results/"
FEEDBACK_PREFIX = "feedback/"

RESULT_IMAGE_NAMES = ("hema", "dapi", "lap2", "marker", "seg", "overlay", "seg_raw")
MAX_FEEDBACK_CHARS = 10_000


def new_id() -> str:
    return secrets.token_urlsafe(16)


def upload_image_key(upload_id: str) -> str:
    return f"uploads/{upload_id}/original.png"


def upload_meta_key(upload_id: str) -> str:
    return f"uploads/{upload_id}/meta.json"


def result_image_key(result_id: str, name: str) -> str:
    return f"results/{result_id}/{name}.png"


def result_meta_key(result_id: str) -> str:
    return f"results/{result_id}/meta.json"


def feedback_key(result_id: str, entry_id: str) -> str:
    return f"feedback/{result_id}/{entry_id}.json"


@dataclass(frozen=True)
class UploadRecord:
    upload_id: str
    object_key: str
    width: int
    height: int
    created_at: float

    def save(self, store: ObjectStore) -> None:
        store.put(upload_meta_key(self.upload_id),
                  json.dumps(asdict(self)).encode("utf-8"), "application/json")

    @staticmethod
    def load(store: ObjectStore, upload_id: str) -> "UploadRecord":
        try:
            raw = store.get(upload_meta_key(upload_id)).data
        except NotFound:
            raise NotFound(f"unknown upload_id {upload_id!r}")
        return UploadRecord(**json.loads(raw))


@dataclass(frozen=True)
class ResultRecord:
    result_id: str
    upload_id: str
    resolution: str
    params: PostprocessParams
    image_keys: dict = field(default_factory=dict)  # name -> object key (7 names)
    original_key: str = ""
    scoring: QuantResult = None
    created_at: float = 0.0

    def __post_init__(self):
        missing = set(RESULT_IMAGE_NAMES) - set(self.image_keys)
        if missing:
            raise ValueError(f"result record missing image keys: {sorted(missing)}")

    def to_json(self) -> bytes:
        doc = {
            "result_id": self.result_id,
            "upload_id": self.upload_id,
            "resolution": self.resolution,
            "params": asdict(self.params),
            "image_keys": dict(self.image_keys),
            "original_key": self.original_key,
            "scoring": self.scoring.as_dict(),
            "created_at": self.created_at,
        }
        return json.dumps(doc).encode("utf-8")

    def save(self, store: ObjectStore) -> None:
        store.put(result_meta_key(self.result_id), self.to_json(), "application/json")

    @staticmethod
    def load(store: ObjectStore, result_id: str) -> "ResultRecord":
        try:
            raw = store.get(result_meta_key(result_id)).data
        except NotFound:
            raise NotFound(f"unknown result_id {result_id!r}")
        doc = json.loads(raw)
        return ResultRecord(
            result_id=doc["result_id"],
            upload_id=doc["upload_id"],
            resolution=doc["resolution"],
            params=PostprocessParams(**doc["params"]),
            image_keys=doc["image_keys"],
            original_key=doc["original_key"],
            scoring=QuantResult(**doc["scoring"]),
            created_at=doc["created_at"],
        )


@dataclass(frozen=True)
class FeedbackRecord:
    result_id: str
    text: str
    created_at: float

    def __post_init__(self):
        if not self.text or len(self.text) > MAX_FEEDBACK_CHARS:
            raise ValueError(f"feedback text must be 1..{MAX_FEEDBACK_CHARS} characters")

    def save(self, store: ObjectStore) -> str:
        entry_id = new_id()
        store.put(feedback_key(self.result_id, entry_id),
                  json.dumps(asdict(self)).encode("utf-8"), "application/json")
        return entry_id


def sweep_expired(store: ObjectStore, ttl_seconds: float, now: float | None = None) -> int:
    """Delete uploads and results older than the TTL; returns records removed."""
    now = time.time() if now is None else now
    removed = 0
    for prefix in (UPLOAD_PREFIX, RESULT_PREFIX):
        meta_keys = [k for k in store.list(prefix) if k.endswith("/meta.json")]
        for meta_key in meta_keys:
            try:
                doc = json.loads(store.get(meta_key).data)
                created = float(doc.get("created_at", 0.0))
            except (NotFound, ValueError, TypeError):
                continue
            if now - created > ttl_seconds:
                record_prefix = meta_key.rsplit("/", 1)[0] + "/"
                store.delete_prefix(record_prefix)
                removed += 1
    return removed
