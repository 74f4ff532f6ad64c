"""Knowledge database: ingestion, snapshots, poison injection, dedup filter.

A database is an immutable ordered collection of text records. Clean
records keep their file order; poison records always sit after them,
sorted by id. Every mutation returns a new snapshot; the snapshot id is a
content hash so value-equal databases share an id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import CorpusParseError, IdConflictError

CLEAN = "clean"
POISON = "poison"


@dataclass(frozen=True)
class TextRecord:
    id: str
    text: str
    origin: str = CLEAN
    source_case: str | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.text:
            raise ValueError(f"record {self.id!r}: text must be non-empty")
        if self.origin not in (CLEAN, POISON):
            raise ValueError(f"record {self.id!r}: unknown origin {self.origin!r}")
        if (self.origin == POISON) != (self.source_case is not None):
            raise ValueError(
                f"record {self.id!r}: source_case must be set exactly when origin is poison"
            )


def _content_hash(records: Iterable[TextRecord]) -> str:
    digest = hashlib.sha256()
    for rec in records:
        digest.update(rec.id.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(rec.text.encode("utf-8"))
        digest.update(b"\x01")
    return digest.hexdigest()


@dataclass(frozen=True)
class KnowledgeDatabase:
    records: tuple[TextRecord, ...]
    snapshot_id: str

    @classmethod
    def from_records(cls, records: Iterable[TextRecord]) -> "KnowledgeDatabase":
        recs = tuple(records)
        seen: set[str] = set()
        for rec in recs:
            if rec.id in seen:
                raise IdConflictError(rec.id)
            seen.add(rec.id)
        return cls(records=recs, snapshot_id=_content_hash(recs))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TextRecord]:
        return iter(self.records)

    def get(self, record_id: str) -> TextRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def ids(self) -> set[str]:
        return {rec.id for rec in self.records}


def ingest_corpus(path: str | Path) -> KnowledgeDatabase:
    """Read a JSONL corpus into a database of clean records.

    Each non-blank line must be a JSON object with string fields "id" and
    "text"; any other fields ride along as opaque metadata.
    """
    path = Path(path)
    records: list[TextRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(str(path), line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusParseError(str(path), line_no, "line is not a JSON object")
            rec_id = obj.get("id")
            text = obj.get("text")
            if not isinstance(rec_id, str) or not isinstance(text, str):
                raise CorpusParseError(
                    str(path), line_no, 'fields "id" and "text" must both be strings'
                )
            if rec_id in seen:
                raise IdConflictError(rec_id)
            seen.add(rec_id)
            extra = {k: v for k, v in obj.items() if k not in ("id", "text")}
            try:
                records.append(TextRecord(id=rec_id, text=text, extra=extra))
            except ValueError as exc:
                raise CorpusParseError(str(path), line_no, str(exc)) from exc
    return KnowledgeDatabase.from_records(records)


def poison_record_id(case_id: str, j: int) -> str:
    return f"poison::{case_id}::{j}"


def inject_poisons(db: KnowledgeDatabase, poisons: Iterable[Any]) -> KnowledgeDatabase:
    """Return a new database with one poison record per crafted text.

    ``poisons`` is any iterable of objects with ``case_id``, ``j`` and
    ``composed`` attributes (duck-typed so the attack module stays
    import-independent). Clean records keep their order; all poison
    records -- pre-existing and new -- are re-sorted by id after them.
    """
    clean = [rec for rec in db.records if rec.origin == CLEAN]
    poisoned = [rec for rec in db.records if rec.origin == POISON]
    existing = db.ids()
    for p in poisons:
        rec_id = poison_record_id(p.case_id, p.j)
        if rec_id in existing:
            raise IdConflictError(rec_id)
        existing.add(rec_id)
        poisoned.append(
            TextRecord(id=rec_id, text=p.composed, origin=POISON, source_case=p.case_id)
        )
    poisoned.sort(key=lambda rec: rec.id)
    return KnowledgeDatabase.from_records(clean + poisoned)


def dedup_filter(db: KnowledgeDatabase) -> tuple[KnowledgeDatabase, list[str]]:
    """Drop records whose exact text bytes duplicate an earlier record.

    Digests are SHA-256 over the raw UTF-8 bytes; no normalization is
    applied, so texts differing only in case or spacing survive.
    """
    seen: set[str] = set()
    kept: list[TextRecord] = []
    removed: list[str] = []
    for rec in db.records:
        digest = hashlib.sha256(rec.text.encode("utf-8")).hexdigest()
        if digest in seen:
            removed.append(rec.id)
        else:
            seen.add(digest)
            kept.append(rec)
    return KnowledgeDatabase.from_records(kept), removed


def save_snapshot(db: KnowledgeDatabase, directory: str | Path) -> Path:
    """Persist a database as {records.jsonl, meta.json} in ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records_path = directory / "records.jsonl"
    with records_path.open("w", encoding="utf-8") as fh:
        for rec in db.records:
            obj: dict[str, Any] = {"id": rec.id, "text": rec.text, "origin": rec.origin}
            if rec.source_case is not None:
                obj["source_case"] = rec.source_case
            obj.update(rec.extra)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    meta_path = directory / "meta.json"
    meta_path.write_text(
        json.dumps({"snapshot_id": db.snapshot_id, "records": len(db)}, indent=2) + "\n",
        encoding="utf-8",
    )
    return directory


def load_snapshot(directory: str | Path) -> KnowledgeDatabase:
    directory = Path(directory)
    records_path = directory / "records.jsonl"
    records: list[TextRecord] = []
    with records_path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(str(records_path), line_no, f"invalid JSON: {exc.msg}") from exc
            extra = {
                k: v for k, v in obj.items() if k not in ("id", "text", "origin", "source_case")
            }
            records.append(
                TextRecord(
                    id=obj["id"],
                    text=obj["text"],
                    origin=obj.get("origin", CLEAN),
                    source_case=obj.get("source_case"),
                    extra=extra,
                )
            )
    db = KnowledgeDatabase.from_records(records)
    meta_path = directory / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        stored = meta.get("snapshot_id")
        if stored is not None and stored != db.snapshot_id:
            raise CorpusParseError(
                str(meta_path), 1, f"snapshot_id mismatch: stored {stored}, computed {db.snapshot_id}"
            )
    return db
