"""Synthetic corpus generator: determinism, mix guarantees, KB extension."""

import io

import pytest

from gends import (ValidationError, detect_entities, make_synthetic_corpus,
                   make_unseen_extension, save_dialogues)


def corpus_fingerprint(kb, dataset):
    buf = io.StringIO()
    for eid in sorted(kb.entities):
        ent = kb.entities[eid]
        buf.write(f"{eid}|{ent.entity_type}|{ent.surface_forms}\n")
    for fact in kb.facts:
        buf.write(f"{fact.subject}|{fact.predicate}|{fact.object}\n")
    for pair in dataset:
        buf.write(f"{pair.message_tokens}|{pair.response_tokens}\n")
    return buf.getvalue()


class TestGenerator:
    def test_deterministic_per_seed(self):
        a = make_synthetic_corpus(seed=3, n_entities=20, n_facts=15, n_pairs=25)
        b = make_synthetic_corpus(seed=3, n_entities=20, n_facts=15, n_pairs=25)
        assert corpus_fingerprint(*a) == corpus_fingerprint(*b)
        c = make_synthetic_corpus(seed=4, n_entities=20, n_facts=15, n_pairs=25)
        assert corpus_fingerprint(*a) != corpus_fingerprint(*c)

    def test_requested_sizes(self):
        kb, dataset = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                            n_pairs=30)
        assert len(kb.entities) == 20
        assert len(kb.facts) == 15
        assert len(dataset) == 30

    def test_response_entity_mix(self):
        _, dataset = make_synthetic_corpus(seed=1, n_entities=140,
                                           n_facts=120, n_pairs=200)
        n = len(dataset)
        multi = sum(1 for p in dataset if len(p.response_spans) >= 2)
        zero = sum(1 for p in dataset if len(p.response_spans) == 0)
        assert multi >= 0.2 * n
        assert zero >= 0.2 * n

    def test_annotations_validate_and_detect(self):
        kb, dataset = make_synthetic_corpus(seed=2, n_entities=20, n_facts=15,
                                            n_pairs=30)
        for pair in dataset:
            detected = detect_entities(list(pair.message_tokens), kb)
            assert detected == list(pair.message_spans)

    def test_gold_facts_touch_annotations(self):
        kb, dataset = make_synthetic_corpus(seed=2, n_entities=20, n_facts=15,
                                            n_pairs=30)
        for pair in dataset:
            annotated = pair.span_entities()
            for fact in pair.gold_facts:
                assert fact.subject in annotated or fact.object in annotated

    def test_serializable(self, tmp_path):
        _, dataset = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                           n_pairs=10)
        save_dialogues(tmp_path / "out.jsonl", dataset)
        assert (tmp_path / "out.jsonl").read_text().count("\n") == 10

    def test_facts_not_multiple_of_three_rejected(self):
        with pytest.raises(ValidationError):
            make_synthetic_corpus(seed=0, n_entities=20, n_facts=14, n_pairs=10)

    def test_inconsistent_entity_count_rejected(self):
        # 15 facts = 5 units = 15 fact entities; years would be 30 - 15 = 15 > 5
        with pytest.raises(ValidationError):
            make_synthetic_corpus(seed=0, n_entities=30, n_facts=15, n_pairs=10)


class TestUnseenExtension:
    def test_new_entities_disjoint_from_base(self):
        kb, _ = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                      n_pairs=10)
        ext_kb, queries = make_unseen_extension(kb, seed=9, n_units=4)
        new_ids = set(ext_kb.entities) - set(kb.entities)
        assert len(new_ids) == 12  # 4 units x (person, song, album)
        assert all(eid.startswith("new_") for eid in new_ids)
        # base KB is untouched inside the extension
        for eid in kb.entities:
            assert ext_kb.entities[eid] == kb.entities[eid]

    def test_queries_target_only_new_entities(self):
        kb, _ = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                      n_pairs=10)
        ext_kb, queries = make_unseen_extension(kb, seed=9, n_units=4)
        new_ids = set(ext_kb.entities) - set(kb.entities)
        assert len(queries) > 0
        for pair in queries:
            gold = {s.entity_id for s in pair.response_spans}
            assert gold and gold <= new_ids

    def test_new_surfaces_detectable_in_extended_kb(self):
        kb, _ = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                      n_pairs=10)
        ext_kb, queries = make_unseen_extension(kb, seed=9, n_units=4)
        for pair in queries:
            assert detect_entities(list(pair.message_tokens), ext_kb) == \
                list(pair.message_spans)

    def test_deterministic(self):
        kb, _ = make_synthetic_corpus(seed=0, n_entities=20, n_facts=15,
                                      n_pairs=10)
        a = make_unseen_extension(kb, seed=5, n_units=3)
        b = make_unseen_extension(kb, seed=5, n_units=3)
        assert corpus_fingerprint(*a) == corpus_fingerprint(*b)
