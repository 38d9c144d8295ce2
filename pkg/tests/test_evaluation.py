"""Metrics against hand fixtures and brute-force oracles; eval harness."""

import json
import math
from collections import Counter

import numpy as np
import pytest

from gends import (TrainingConfig, bleu1, entity_metrics, run_eval,
                   save_checkpoint)
from gends.evaluation import (bleu1_corpus, eval_checkpoints,
                              render_table, run_ablation_suite, suite_to_json)


def oracle_bleu1(pairs):
    """Independent reimplementation: per-token clipped counts via list.count."""
    hyp_len = sum(len(h) for h, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    if hyp_len == 0:
        return 0.0
    clipped = 0
    for hyp, ref in pairs:
        for tok in set(hyp):
            clipped += min(hyp.count(tok), ref.count(tok))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * clipped / hyp_len


def oracle_entity_metrics(predicted, gold):
    hits = 0
    remaining = list(gold)
    for p in predicted:
        if p in remaining:
            remaining.remove(p)
            hits += 1
    precision = hits / len(predicted) if predicted else 0.0
    return precision, hits / len(gold)


class TestBleu1:
    def test_half_overlap(self):
        assert bleu1(["a", "b"], ["a", "c"]) == pytest.approx(0.5)

    def test_clipping(self):
        assert bleu1(["a", "a", "a"], ["a"]) == pytest.approx(1 / 3)

    def test_brevity_penalty(self):
        assert bleu1(["a"], ["a", "b"]) == pytest.approx(math.exp(-1.0))

    def test_perfect_and_empty(self):
        assert bleu1(["x", "y"], ["x", "y"]) == pytest.approx(1.0)
        assert bleu1([], ["x"]) == 0.0
        assert bleu1_corpus([]) == 0.0

    def test_corpus_pools_counts_not_scores(self):
        pairs = [(["a"], ["a"]), (["b"] * 4, ["c"] * 4)]
        assert bleu1_corpus(pairs) == pytest.approx(0.2)
        per_pair_mean = (bleu1(*pairs[0]) + bleu1(*pairs[1])) / 2
        assert per_pair_mean == pytest.approx(0.5)

    def test_matches_oracle_on_random_fixtures(self):
        rng = np.random.default_rng(23)
        alphabet = list("abcdef")
        for _ in range(300):
            n_pairs = int(rng.integers(1, 4))
            pairs = []
            for _ in range(n_pairs):
                hyp = [alphabet[i] for i in
                       rng.integers(0, 6, size=int(rng.integers(0, 7)))]
                ref = [alphabet[i] for i in
                       rng.integers(0, 6, size=int(rng.integers(1, 7)))]
                pairs.append((hyp, ref))
            assert bleu1_corpus(pairs) == pytest.approx(oracle_bleu1(pairs),
                                                        abs=1e-12)


class TestEntityMetrics:
    def test_partial_overlap(self):
        assert entity_metrics(["e1", "e2", "e9"], ["e1", "e2", "e3"]) == \
            pytest.approx((2 / 3, 2 / 3))

    def test_duplicate_predictions_clipped(self):
        assert entity_metrics(["e1", "e1"], ["e1"]) == pytest.approx((0.5, 1.0))

    def test_duplicate_gold_requires_duplicates(self):
        assert entity_metrics(["e1"], ["e1", "e1"]) == pytest.approx((1.0, 0.5))

    def test_empty_prediction(self):
        assert entity_metrics([], ["e1"]) == (0.0, 0.0)

    def test_empty_gold_rejected(self):
        with pytest.raises(ValueError, match="non-empty gold"):
            entity_metrics(["e1"], [])

    def test_matches_oracle_on_random_fixtures(self):
        rng = np.random.default_rng(29)
        ids = [f"e{i}" for i in range(5)]
        for _ in range(300):
            pred = [ids[i] for i in
                    rng.integers(0, 5, size=int(rng.integers(0, 6)))]
            gold = [ids[i] for i in
                    rng.integers(0, 5, size=int(rng.integers(1, 6)))]
            assert entity_metrics(pred, gold) == \
                pytest.approx(oracle_entity_metrics(pred, gold), abs=1e-12)


@pytest.fixture(scope="module")
def report(trained_small):
    kb, dataset, vocab, result = trained_small
    return run_eval(result.params, vocab, kb, dataset), dataset


class TestRunEval:
    def test_sample_bookkeeping(self, report):
        rep, dataset = report
        assert rep.n_samples == len(dataset)
        expected_eligible = sum(1 for p in dataset if p.response_spans)
        assert rep.n_eligible == expected_eligible
        assert 0.0 <= rep.bleu1 <= 1.0

    def test_per_sample_metrics_recomputable(self, report):
        rep, _ = report
        for sample in rep.samples:
            if not sample.eligible:
                assert sample.precision is None and sample.recall is None
                continue
            p, r = entity_metrics(sample.predicted_entities,
                                  sample.gold_entities)
            assert sample.precision == pytest.approx(p)
            assert sample.recall == pytest.approx(r)

    def test_aggregates_match_samples(self, report):
        rep, _ = report
        precisions = [s.precision for s in rep.samples if s.eligible]
        assert rep.precision_mean == pytest.approx(float(np.mean(precisions)))
        assert rep.precision_std == pytest.approx(float(np.std(precisions)))
        pairs = [(s.hypothesis, s.reference) for s in rep.samples]
        assert rep.bleu1 == pytest.approx(bleu1_corpus(pairs))

    def test_json_dict_keys(self, report):
        rep, _ = report
        payload = rep.to_json_dict()
        assert set(payload) == {"bleu1", "precision_mean", "precision_std",
                                "recall_mean", "recall_std", "n_eligible"}


class TestAblationAndCheckpoints:
    def test_suite_structure_and_s2sa_floor(self, small_world):
        kb, dataset, vocab = small_world
        config = TrainingConfig(epochs_phase1=1, epochs_phase2=0, batch_size=8,
                                seed=0)
        suite = run_ablation_suite(dataset, dataset, kb, vocab, config,
                                   model_config=None,
                                   variants=("full", "s2sa"))
        assert set(suite) == {"full", "s2sa"}
        # the plain seq2seq variant cannot emit entity surfaces at all
        assert suite["s2sa"].precision_mean == 0.0
        assert suite["s2sa"].recall_mean == 0.0

    def test_eval_checkpoints_tolerates_missing(self, trained_small, tmp_path):
        kb, dataset, vocab, result = trained_small
        good = tmp_path / "full.npz"
        save_checkpoint(result.params, vocab, good)
        suite = eval_checkpoints({"full": str(good),
                                  "static": str(tmp_path / "missing.npz")},
                                 kb, dataset)
        assert suite["static"] is None
        assert suite["full"] is not None
        assert suite["full"].n_samples == len(dataset)

    def test_render_table_marks_absent_rows(self, trained_small, tmp_path):
        kb, dataset, vocab, result = trained_small
        good = tmp_path / "full.npz"
        save_checkpoint(result.params, vocab, good)
        suite = eval_checkpoints({"full": str(good),
                                  "static": str(tmp_path / "missing.npz")},
                                 kb, dataset)
        table = render_table(suite)
        assert "full" in table and "static" in table
        assert "(no checkpoint)" in table

    def test_suite_to_json_roundtrip(self, trained_small, tmp_path):
        kb, dataset, vocab, result = trained_small
        good = tmp_path / "full.npz"
        save_checkpoint(result.params, vocab, good)
        suite = eval_checkpoints({"full": str(good), "static": "absent.npz"},
                                 kb, dataset)
        payload = json.loads(suite_to_json(suite))
        assert payload["static"] is None
        assert payload["full"]["bleu1"] == pytest.approx(suite["full"].bleu1)
