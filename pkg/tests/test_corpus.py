from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragpoison.attack import AttackKind, CompositionOrder, PoisonText
from ragpoison.corpus import (
    KnowledgeDatabase,
    TextRecord,
    dedup_filter,
    ingest_corpus,
    inject_poisons,
    load_snapshot,
    save_snapshot,
)
from ragpoison.errors import CorpusParseError, IdConflictError


def make_poison(case_id: str, j: int, text: str) -> PoisonText:
    return PoisonText(
        case_id=case_id,
        j=j,
        retrieval_text="q",
        payload_text=text,
        composed=text,
        order=CompositionOrder.RETRIEVAL_FIRST,
        attack_kind=AttackKind.BLACKBOX,
    )


def write_jsonl(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


class TestIngest:
    def test_two_records_in_order(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "alpha"}, {"id": "d2", "text": "beta"}])
        db = ingest_corpus(path)
        assert [r.id for r in db.records] == ["d1", "d2"]
        assert all(r.origin == "clean" for r in db.records)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("")
        db = ingest_corpus(path)
        assert len(db) == 0
        assert db.snapshot_id == KnowledgeDatabase.from_records([]).snapshot_id

    def test_duplicate_id_names_offender(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "a"}, {"id": "d1", "text": "b"}])
        with pytest.raises(IdConflictError) as exc:
            ingest_corpus(path)
        assert "d1" in str(exc.value)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"id": "d1", "text": "a"}\n{broken\n', encoding="utf-8")
        with pytest.raises(CorpusParseError) as exc:
            ingest_corpus(path)
        assert exc.value.line_no == 2

    def test_extra_fields_preserved(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "a", "title": "T", "rank": 3}])
        db = ingest_corpus(path)
        assert db.records[0].extra == {"title": "T", "rank": 3}


class TestInject:
    def test_size_arithmetic_and_labels(self):
        db = KnowledgeDatabase.from_records(
            TextRecord(id=f"d{i}", text=f"text {i}") for i in range(100)
        )
        poisons = [make_poison("q1", j, f"poison text {j}") for j in range(1, 6)]
        out = inject_poisons(db, poisons)
        assert len(out) == 105
        tagged = [r for r in out.records if r.origin == "poison"]
        assert len(tagged) == 5
        assert all(r.source_case == "q1" for r in tagged)
        assert {r.id for r in tagged} == {f"poison::q1::{j}" for j in range(1, 6)}
        # input is untouched
        assert len(db) == 100

    def test_poisoning_rate_at_reported_scale(self):
        # five poisons per question against the full-size reference corpus
        rate = 5 / 2_681_468
        assert f"{rate:.4%}" == "0.0002%"

    def test_empty_injection_is_value_identity(self):
        db = KnowledgeDatabase.from_records([TextRecord(id="d1", text="a")])
        out = inject_poisons(db, [])
        assert out == db
        assert out is not db

    def test_purity_equal_inputs_equal_outputs(self):
        db = KnowledgeDatabase.from_records([TextRecord(id="d1", text="a")])
        poisons = [make_poison("q1", 1, "p")]
        assert inject_poisons(db, poisons) == inject_poisons(db, poisons)

    def test_id_collision_rejected(self):
        db = KnowledgeDatabase.from_records([TextRecord(id="poison::q1::1", text="x",
                                                        origin="poison", source_case="q1")])
        with pytest.raises(IdConflictError):
            inject_poisons(db, [make_poison("q1", 1, "p")])

    def test_poisons_sorted_after_clean(self):
        db = KnowledgeDatabase.from_records([TextRecord(id="zz", text="clean last")])
        out = inject_poisons(db, [make_poison("q2", 1, "b"), make_poison("q1", 1, "a")])
        assert [r.id for r in out.records] == ["zz", "poison::q1::1", "poison::q2::1"]


class TestDedup:
    def test_byte_identical_second_removed(self):
        db = KnowledgeDatabase.from_records(
            [TextRecord(id="a", text="same"), TextRecord(id="b", text="same")]
        )
        out, removed = dedup_filter(db)
        assert removed == ["b"]
        assert [r.id for r in out.records] == ["a"]

    def test_all_distinct_is_identity(self):
        db = KnowledgeDatabase.from_records(
            [TextRecord(id="a", text="x"), TextRecord(id="b", text="y")]
        )
        out, removed = dedup_filter(db)
        assert removed == []
        assert out == db

    def test_case_differs_means_kept(self):
        # raw bytes are hashed; no normalization happens first
        db = KnowledgeDatabase.from_records(
            [TextRecord(id="a", text="Same"), TextRecord(id="b", text="same")]
        )
        _, removed = dedup_filter(db)
        assert removed == []

    @given(st.lists(st.text(alphabet="abc", min_size=1, max_size=3), min_size=1, max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, texts):
        db = KnowledgeDatabase.from_records(
            TextRecord(id=f"d{i}", text=t) for i, t in enumerate(texts)
        )
        once, _ = dedup_filter(db)
        twice, removed_again = dedup_filter(once)
        assert removed_again == []
        assert twice == once

    def test_poison_removed_only_on_byte_equal_text(self):
        db = KnowledgeDatabase.from_records(
            [TextRecord(id="d1", text="alpha"), TextRecord(id="d2", text="beta")]
        )
        poisons = [make_poison("q1", 1, "alpha"), make_poison("q1", 2, "unique")]
        out, removed = dedup_filter(inject_poisons(db, poisons))
        assert removed == ["poison::q1::1"]
        assert "poison::q1::2" in out.ids()


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        db = KnowledgeDatabase.from_records(
            [
                TextRecord(id="d1", text="alpha", extra={"k": 1}),
                TextRecord(id="poison::q::1", text="p", origin="poison", source_case="q"),
            ]
        )
        save_snapshot(db, tmp_path / "snap")
        loaded = load_snapshot(tmp_path / "snap")
        assert loaded == db

    def test_snapshot_id_tracks_content(self):
        a = KnowledgeDatabase.from_records([TextRecord(id="d1", text="alpha")])
        b = KnowledgeDatabase.from_records([TextRecord(id="d1", text="alpha")])
        c = KnowledgeDatabase.from_records([TextRecord(id="d1", text="beta")])
        assert a.snapshot_id == b.snapshot_id
        assert a.snapshot_id != c.snapshot_id

    def test_tampered_snapshot_rejected(self, tmp_path):
        db = KnowledgeDatabase.from_records([TextRecord(id="d1", text="alpha")])
        save_snapshot(db, tmp_path / "snap")
        records = tmp_path / "snap" / "records.jsonl"
        records.write_text('{"id": "d1", "text": "tampered"}\n', encoding="utf-8")
        with pytest.raises(CorpusParseError):
            load_snapshot(tmp_path / "snap")
