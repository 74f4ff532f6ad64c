from __future__ import annotations

import pytest

from ragpoison.attack import AttackConfig, AttackKind
from ragpoison.errors import ConfigError
from ragpoison.evaluation import (
    DefenseStack,
    report_from_json,
    report_to_json,
    retrieval_metrics,
    run_experiment,
    run_sweep,
    substring_match,
)
from ragpoison.retrieval import RetrievalResult, RetrievedEntry


class TestSubstringMatch:
    def test_answer_contains_target(self):
        assert substring_match("The CEO of OpenAI is Sam Altman", "Sam Altman")

    def test_hedged_answer_still_matches(self):
        # the matcher's documented divergence from human judgment
        generated = (
            "In an alternate universe, John Williams wrote the music for Phantom of the Opera."
        )
        assert substring_match(generated, "John Williams")

    def test_reflexive(self):
        for text in ("x", "two words", "Punct-uated!"):
            assert substring_match(text, text)

    def test_case_and_whitespace_fold(self):
        assert substring_match("the  ANSWER  is   here", "answer is")

    def test_target_edge_punctuation_stripped(self):
        assert substring_match("the total is 42", '"42."')

    def test_negative(self):
        assert not substring_match("no relation at all", "quartz")


class TestRetrievalMetrics:
    def retrieved(self, ids, k):
        return RetrievalResult(entries=tuple(RetrievedEntry(i, 1.0) for i in ids), k=k)

    def test_all_five_of_five(self):
        result = self.retrieved([f"poison::q::{j}" for j in range(1, 6)], k=5)
        assert retrieval_metrics(result, "q", 5) == (1.0, 1.0, 1.0)

    def test_k_ten_of_five(self):
        ids = [f"poison::q::{j}" for j in range(1, 6)] + [f"doc-{i}" for i in range(5)]
        precision, recall, f1 = retrieval_metrics(self.retrieved(ids, k=10), "q", 5)
        assert precision == 0.5
        assert recall == 1.0
        assert f1 == pytest.approx(2 / 3)

    def test_equal_k_and_budget_collapses_metrics(self):
        # when k equals the poison budget, precision, recall and F1 coincide
        ids = [f"poison::q::{j}" for j in range(1, 4)] + ["doc-1", "doc-2"]
        precision, recall, f1 = retrieval_metrics(self.retrieved(ids, k=5), "q", 5)
        assert precision == recall == f1 == 0.6

    def test_other_cases_poisons_do_not_count(self):
        ids = ["poison::other::1", "poison::q::1"]
        precision, recall, f1 = retrieval_metrics(self.retrieved(ids, k=2), "q", 2)
        assert precision == 0.5

    def test_zero_overlap_gives_zero_f1(self):
        assert retrieval_metrics(self.retrieved(["doc-1"], k=1), "q", 5) == (0.0, 0.0, 0.0)


class TestRunExperiment:
    def test_closed_loop_smoke(self, base_bundle, mock_generator):
        report = run_experiment(
            base_bundle.db,
            base_bundle.cases[:3],
            AttackConfig(),
            base_bundle.encoder,
            base_bundle.metric,
            mock_generator,
            k=5,
            seed=0,
        )
        assert report.asr == 1.0
        assert report.f1 == 1.0
        assert len(report.per_case) == 3
        for transcript in report.per_case:
            assert transcript.retrieved_poison_count == 5
            assert transcript.matched_target

    def test_no_cases_rejected(self, base_bundle, mock_generator):
        with pytest.raises(ConfigError):
            run_experiment(
                base_bundle.db, [], AttackConfig(), base_bundle.encoder,
                base_bundle.metric, mock_generator, seed=0,
            )

    def test_repeats_partition_cases(self, base_bundle, mock_generator):
        report = run_experiment(
            base_bundle.db,
            base_bundle.cases,
            AttackConfig(poisons_per_case=1),
            base_bundle.encoder,
            base_bundle.metric,
            mock_generator,
            k=5,
            repeats=2,
            seed=0,
        )
        assert len(report.per_case) == len(base_bundle.cases)
        assert len({t.case_id for t in report.per_case}) == len(base_bundle.cases)

    def test_too_many_repeats_rejected(self, base_bundle, mock_generator):
        with pytest.raises(ConfigError):
            run_experiment(
                base_bundle.db, base_bundle.cases[:2], AttackConfig(),
                base_bundle.encoder, base_bundle.metric, mock_generator,
                repeats=3, seed=0,
            )

    def test_ppl_filter_records_removals(self, base_bundle, mock_generator):
        defended = run_experiment(
            base_bundle.db,
            base_bundle.cases[:2],
            AttackConfig(),
            base_bundle.encoder,
            base_bundle.metric,
            mock_generator,
            defenses=DefenseStack(ppl_threshold=1.0),  # everything scores above 1
            k=5,
            seed=0,
        )
        for transcript in defended.per_case:
            assert len(transcript.ppl_filtered) == 5
            assert transcript.generated_answer == "I don't know"

    def test_config_echo(self, base_bundle, mock_generator):
        report = run_experiment(
            base_bundle.db, base_bundle.cases[:1], AttackConfig(),
            base_bundle.encoder, base_bundle.metric, mock_generator, k=7, seed=42,
        )
        assert report.config["k"] == 7
        assert report.config["seed"] == 42
        assert report.config["attack_kind"] == "blackbox"
        assert report.config["encoder"]["dim"] == base_bundle.encoder.dim


class TestSweep:
    def test_one_row_per_pair(self, base_bundle, mock_generator):
        rows = run_sweep(
            base_bundle.db,
            base_bundle.cases[:2],
            AttackConfig(),
            base_bundle.encoder,
            base_bundle.metric,
            mock_generator,
            k_values=[1, 5],
            n_values=[1, 2],
            seed=0,
        )
        assert [(r["k"], r["n"]) for r in rows] == [(1, 1), (5, 1), (1, 2), (5, 2)]


class TestReportSerialization:
    def test_round_trip_value_equality(self, base_bundle, mock_generator):
        report = run_experiment(
            base_bundle.db, base_bundle.cases[:2], AttackConfig(),
            base_bundle.encoder, base_bundle.metric, mock_generator, k=5, seed=0,
        )
        assert report_from_json(report_to_json(report)) == report

    def test_json_is_byte_deterministic(self, base_bundle, mock_generator):
        args = (
            base_bundle.db, base_bundle.cases[:2], AttackConfig(),
            base_bundle.encoder, base_bundle.metric, mock_generator,
        )
        a = report_to_json(run_experiment(*args, k=5, seed=1))
        b = report_to_json(run_experiment(*args, k=5, seed=1))
        assert a.encode() == b.encode()
