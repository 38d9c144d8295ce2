"""Model core: variants, candidate scoring, decode-step algebra, sequence NLL."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import build_flip_setup, hand_kb, hand_vocab, rng_for
from gends import ConfigError, ModelConfig, ValidationError
from gends.kb import (FROM_QO_SUBJECT, FROM_QS_OBJECT, Candidate, Entity,
                      KnowledgeBase, retrieve_facts, detect_entities)
from gends.corpus import substitute_types
from gends.model import (COMMON, ENTITY, DecoderContext, ModelParams,
                         PrevToken, ScoringCandidate, build_scoring_candidates,
                         decode_step, encode, entity_dist, init_params,
                         knowledge_gate, matching_scores, mix_distributions,
                         run_sequence, variant_behavior)


class TestVariants:
    def test_behavior_table(self):
        assert variant_behavior("full").uses_retriever
        assert not variant_behavior("full").single_task
        assert variant_behavior("static").static_entity_dist
        assert variant_behavior("single").single_task
        s2sa = variant_behavior("s2sa")
        assert not s2sa.uses_retriever
        assert s2sa.gate_forced_zero and s2sa.single_task

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            variant_behavior("transformer")
        with pytest.raises(ConfigError):
            ModelConfig(variant="bogus")

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_emb=0)
        with pytest.raises(ConfigError):
            ModelConfig(candidate_cap=0)
        assert ModelConfig(candidate_cap=None).candidate_cap is None

    def test_with_variant_shares_tensors(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=4))
        other = params.with_variant("static")
        assert other.config.variant == "static"
        other.tensors["out_b"][0] = 7.5
        assert params["out_b"][0] == 7.5


class TestInitParams:
    def test_shapes_and_determinism(self, vocab):
        cfg = ModelConfig(d_emb=6, d_h=5)
        a = init_params(vocab, cfg, seed=3)
        b = init_params(vocab, cfg, seed=3)
        c = init_params(vocab, cfg, seed=4)
        assert a["emb"].shape == (vocab.size_common, 6)
        assert a["out_W"].shape == (5, vocab.size_common)
        assert a["match_W1"].shape == (5 + 12, 5)
        for name in a.tensors:
            assert np.array_equal(a[name], b[name])
        assert not np.array_equal(a["emb"], c["emb"])
        assert a.vocab_hash == vocab.content_hash()

    def test_biases_zero_embeddings_bounded(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=8, d_h=8))
        assert np.all(params["enc_b"] == 0.0)
        assert np.all(params["out_b"] == 0.0)
        assert np.all(np.abs(params["emb"]) <= 0.08)

    def test_no_entity_identity_rows(self, vocab):
        # Every tensor dimension is a function of vocab/common size, never of
        # the entity inventory size.
        params = init_params(vocab, ModelConfig(d_emb=6, d_h=6))
        n_entities = len(vocab.entity_ids)
        for name, arr in params.tensors.items():
            assert n_entities not in arr.shape, name


class TestScoringCandidates:
    def test_collapse_by_entity_predicate(self, vocab):
        raw = [
            Candidate("song_001", "Song", "sing", FROM_QS_OBJECT),
            Candidate("song_001", "Song", "sing", FROM_QO_SUBJECT),
            Candidate("song_002", "Song", "sing", FROM_QS_OBJECT),
            Candidate("song_001", "Song", "album_of", FROM_QS_OBJECT),
        ]
        out = build_scoring_candidates(raw, vocab)
        assert [(c.entity_id, c.predicate) for c in out] == [
            ("song_001", "sing"), ("song_002", "sing"),
            ("song_001", "album_of")]
        assert all(not c.injected for c in out)

    def test_accepts_candidate_set(self, kb, vocab):
        cset = retrieve_facts(["person_001"], kb)
        out = build_scoring_candidates(cset, vocab)
        assert {c.entity_id for c in out} == {"song_001", "song_002"}

    def test_missing_type_token_rejected(self, vocab):
        raw = [Candidate("y_1", "Year", "sing", FROM_QS_OBJECT)]
        with pytest.raises(ValidationError, match="Year"):
            build_scoring_candidates(raw, vocab)

    def test_missing_relation_token_rejected(self, vocab):
        raw = [Candidate("song_001", "Song", "release_year", FROM_QS_OBJECT)]
        with pytest.raises(ValidationError, match="release_year"):
            build_scoring_candidates(raw, vocab)


class TestEncode:
    def test_shapes_and_last_state(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=5))
        enc = encode(params, [1, 2, 3])
        assert enc.H.shape == (3, 5)
        assert np.array_equal(enc.last_state, enc.H[-1])
        assert enc.ids == [1, 2, 3]

    def test_empty_message_rejected(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=5))
        with pytest.raises(ValidationError):
            encode(params, [])

    def test_state_depends_on_order(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=5))
        assert not np.allclose(encode(params, [1, 2]).last_state,
                               encode(params, [2, 1]).last_state)


class TestEntityDist:
    def test_hand_values(self):
        p = entity_dist(np.array([1.0, 1.0]), 2.0, np.array([1.0, 3.0]))
        assert np.allclose(p, [0.25, 0.75])

    def test_scalar_update_cancels(self):
        r = np.array([0.3, 1.2, 0.5])
        u = np.array([2.0, 0.1, 1.0])
        assert np.allclose(entity_dist(r, 7.0, u), entity_dist(r, 0.01, u))

    def test_uniform_fallback_on_zero_mass(self):
        p = entity_dist(np.zeros(4), 1.0, np.ones(4))
        assert np.allclose(p, 0.25)

    def test_empty_stays_empty(self):
        assert entity_dist(np.zeros(0), 1.0, np.zeros(0)).size == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            entity_dist(np.ones(2), 1.0, np.ones(3))


class TestGateAndMixture:
    def test_gate_exactly_zero_without_candidates(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=4), seed=1)
        g = knowledge_gate(params, np.ones(4), np.ones(4), PrevToken(1), 0)
        assert g == 0.0

    def test_gate_half_at_zero_weights(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=4, d_h=4))
        for arr in params.tensors.values():
            arr[:] = 0.0
        g = knowledge_gate(params, np.ones(4), np.ones(4), PrevToken(1), 3)
        assert g == pytest.approx(0.5)

    def test_mix_layout_and_mass(self):
        p_c = np.array([0.5, 0.5])
        p_e = np.array([0.25, 0.75])
        mixed = mix_distributions(p_c, p_e, 0.2)
        assert np.allclose(mixed, [0.4, 0.4, 0.05, 0.15])
        assert mixed.sum() == pytest.approx(1.0)


def random_candidates(rng, n):
    pool = [("person_001", "Person"), ("song_001", "Song"),
            ("song_002", "Song"), ("album_001", "Album")]
    preds = ["sing", "album_of"]
    out = []
    for i in range(n):
        eid, etype = pool[rng.integers(len(pool))]
        out.append(ScoringCandidate(f"{eid}#{i}", etype,
                                    preds[rng.integers(2)]))
    return out


class TestDecodeStepNormalization:
    def test_distributions_sum_to_one(self, vocab):
        rng = rng_for(11)
        for trial in range(25):
            params = init_params(vocab, ModelConfig(d_emb=6, d_h=6),
                                 seed=int(rng.integers(10_000)))
            msg = list(rng.integers(0, vocab.size_common,
                                    size=int(rng.integers(1, 6))))
            enc = encode(params, msg)
            cands = random_candidates(rng, int(rng.integers(0, 5)))
            ctx = DecoderContext(params, vocab, enc, cands)
            s = enc.last_state
            prev2 = PrevToken(vocab.bos_id)
            for _ in range(3):
                prev1 = PrevToken(int(rng.integers(vocab.size_common)))
                step = decode_step(params, ctx, s, prev1, prev2)
                assert step.attention.sum() == pytest.approx(1.0, abs=1e-9)
                assert step.common_dist.sum() == pytest.approx(1.0, abs=1e-9)
                if ctx.size:
                    assert step.entity_dist.sum() == pytest.approx(1.0, abs=1e-9)
                assert step.mixed_dist.sum() == pytest.approx(1.0, abs=1e-9)
                assert step.mixed_dist.shape == (vocab.size_common + ctx.size,)
                s, prev2 = step.state, prev1

    def test_match_scores_fixed_across_steps(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=6, d_h=6), seed=2)
        enc = encode(params, [1, 2])
        ctx = DecoderContext(params, vocab, enc, random_candidates(rng_for(3), 3))
        s = enc.last_state
        first = None
        for tok in [1, 5, 2]:
            step = decode_step(params, ctx, s, PrevToken(tok), PrevToken(1))
            if first is None:
                first = step.match_scores
            assert step.match_scores is first  # same array, computed once
            s = step.state


class TestCandidateCap:
    def test_cap_keeps_top_r_in_original_order(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=6, d_h=6), seed=5)
        enc = encode(params, [1, 2, 3])
        cands = random_candidates(rng_for(9), 6)
        full_ctx = DecoderContext(params, vocab, enc, cands)
        expect_keep = np.sort(np.argsort(-full_ctx.r, kind="stable")[:3])
        capped = ModelParams(replace(params.config, candidate_cap=3),
                             params.vocab_hash, params.tensors)
        ctx = DecoderContext(capped, vocab, enc, cands)
        assert ctx.size == 3
        assert [c.entity_id for c in ctx.candidates] == \
            [cands[i].entity_id for i in expect_keep]
        assert np.array_equal(ctx.r, full_ctx.r[expect_keep])

    def test_extend_appends_slots(self, vocab):
        params = init_params(vocab, ModelConfig(d_emb=6, d_h=6), seed=5)
        enc = encode(params, [1, 2])
        ctx = DecoderContext(params, vocab, enc, random_candidates(rng_for(1), 2))
        extra = ScoringCandidate("album_001", "Album", "album_of", injected=True)
        ctx.extend(params, [extra])
        assert ctx.size == 3
        assert ctx.candidates[-1].injected
        solo = matching_scores(params, vocab, enc, [extra])
        assert ctx.r[-1] == solo[0]


class TestSequenceLoss:
    def zero_params(self, vocab, d=4):
        params = init_params(vocab, ModelConfig(d_emb=d, d_h=d))
        for arr in params.tensors.values():
            arr[:] = 0.0
        return params

    def empty_ctx(self, params, vocab):
        return DecoderContext(params, vocab, encode(params, [1, 2]), [])

    def test_uniform_loss_without_mixture(self, vocab):
        params = self.zero_params(vocab)
        ctx = self.empty_ctx(params, vocab)
        targets = [(COMMON, 3), (COMMON, 5), (COMMON, vocab.eos_id)]
        fed = [PrevToken(vocab.bos_id), PrevToken(3), PrevToken(5)]
        run = run_sequence(params, ctx, targets, fed, use_mixture=False)
        assert run.loss == pytest.approx(3 * np.log(vocab.size_common))

    def test_mixture_without_candidates_has_no_gate_term(self, vocab):
        params = self.zero_params(vocab)
        ctx = self.empty_ctx(params, vocab)
        targets = [(COMMON, 3), (COMMON, 5)]
        fed = [PrevToken(vocab.bos_id), PrevToken(3)]
        run = run_sequence(params, ctx, targets, fed, use_mixture=True)
        assert run.loss == pytest.approx(2 * np.log(vocab.size_common))

    def test_mixture_with_candidates_adds_log2_gate_terms(self, vocab):
        params = self.zero_params(vocab)
        ctx = DecoderContext(params, vocab, encode(params, [1, 2]),
                             random_candidates(rng_for(4), 2))
        targets = [(COMMON, 3), (COMMON, 5)]
        fed = [PrevToken(vocab.bos_id), PrevToken(3)]
        run = run_sequence(params, ctx, targets, fed, use_mixture=True)
        expect = 2 * (np.log(vocab.size_common) + np.log(2.0))
        assert run.loss == pytest.approx(expect)

    def test_engineered_zero_common_loss(self, vocab):
        params = self.zero_params(vocab)
        params.tensors["out_b"][7] = 500.0
        ctx = self.empty_ctx(params, vocab)
        run = run_sequence(params, ctx, [(COMMON, 7)],
                           [PrevToken(vocab.bos_id)])
        assert run.loss == pytest.approx(0.0, abs=1e-12)

    def test_engineered_zero_entity_loss(self, vocab):
        params = self.zero_params(vocab)
        params.tensors["gate_b"][0] = 500.0
        ctx = DecoderContext(params, vocab, encode(params, [1, 2]),
                             [ScoringCandidate("song_001", "Song", "sing")])
        run = run_sequence(params, ctx, [(ENTITY, 0)],
                           [PrevToken(vocab.bos_id)])
        assert run.loss == pytest.approx(0.0, abs=1e-12)

    def test_fed_length_must_match(self, vocab):
        params = self.zero_params(vocab)
        ctx = self.empty_ctx(params, vocab)
        with pytest.raises(ValueError, match="equal length"):
            run_sequence(params, ctx, [(COMMON, 3)],
                         [PrevToken(vocab.bos_id), PrevToken(3)])

    def test_entity_target_needs_channel(self, vocab):
        params = self.zero_params(vocab)
        ctx = self.empty_ctx(params, vocab)
        with pytest.raises(ValueError, match="entity target"):
            run_sequence(params, ctx, [(ENTITY, 0)], [PrevToken(vocab.bos_id)])

    def test_unknown_target_kind(self, vocab):
        params = self.zero_params(vocab)
        ctx = self.empty_ctx(params, vocab)
        with pytest.raises(ValueError, match="target kind"):
            run_sequence(params, ctx, [("weird", 0)], [PrevToken(vocab.bos_id)])


def renamed_hand_kb() -> KnowledgeBase:
    base = hand_kb()
    new_surfaces = {
        "person_001": (("kun", "li"), ("kun",)),
        "song_001": (("gray", "dawn"),),
        "song_002": (("tall", "pines"),),
        "album_001": (("night", "garden"),),
    }
    entities = {eid: Entity(eid, ent.entity_type, new_surfaces[eid])
                for eid, ent in base.entities.items()}
    return KnowledgeBase(entities, base.relations, base.facts)


class TestSurfaceFormIndependence:
    def test_scores_bitwise_equal_after_renaming(self):
        vocab = hand_vocab()
        params = init_params(vocab, ModelConfig(d_emb=8, d_h=8), seed=6)
        outputs = []
        for kb, surface in ((hand_kb(), ["blue", "storm"]),
                            (renamed_hand_kb(), ["gray", "dawn"])):
            tokens = ["who", "sings"] + surface
            spans = detect_entities(tokens, kb)
            assert [s.entity_id for s in spans] == ["song_001"]
            typed = substitute_types(tokens, spans, kb)
            ids = [vocab.common_index[t] for t in typed.tokens]
            enc = encode(params, ids)
            cset = retrieve_facts(["song_001"], kb)
            ctx = DecoderContext(params, vocab, enc,
                                 build_scoring_candidates(cset, vocab))
            step = decode_step(params, ctx, enc.last_state,
                               PrevToken(vocab.bos_id), PrevToken(vocab.bos_id))
            outputs.append((ids, ctx.r, step.type_scores, step.entity_dist,
                            step.mixed_dist,
                            [c.entity_id for c in ctx.candidates]))
        (ids_a, r_a, u_a, pe_a, mix_a, slots_a) = outputs[0]
        (ids_b, r_b, u_b, pe_b, mix_b, slots_b) = outputs[1]
        assert ids_a == ids_b
        assert np.array_equal(r_a, r_b)
        assert np.array_equal(u_a, u_b)
        assert np.array_equal(pe_a, pe_b)
        assert np.array_equal(mix_a, mix_b)
        assert slots_a == slots_b


class TestStaticAndFlip:
    def test_static_entity_dist_constant_across_steps(self):
        params, vocab, candidates, album_tok = build_flip_setup()
        static = params.with_variant("static")
        enc = encode(static, [vocab.common_index["who"]])
        ctx = DecoderContext(static, vocab, enc, candidates)
        s = enc.last_state
        prev2 = PrevToken(vocab.bos_id)
        dists = []
        for prev1 in (PrevToken(vocab.bos_id), PrevToken(album_tok, slot=1),
                      PrevToken(3)):
            step = decode_step(static, ctx, s, prev1, prev2)
            dists.append(step.entity_dist)
            s, prev2 = step.state, prev1
        assert np.array_equal(dists[0], dists[1])
        assert np.array_equal(dists[1], dists[2])
        assert np.allclose(dists[0], ctx.r / ctx.r.sum())

    def test_full_variant_argmax_flips(self):
        params, vocab, candidates, album_tok = build_flip_setup()
        enc = encode(params, [vocab.common_index["who"]])
        ctx = DecoderContext(params, vocab, enc, candidates)
        step1 = decode_step(params, ctx, enc.last_state,
                            PrevToken(vocab.bos_id), PrevToken(vocab.bos_id))
        assert int(np.argmax(step1.entity_dist)) == 1  # album first
        step2 = decode_step(params, ctx, step1.state,
                            PrevToken(album_tok, slot=1), PrevToken(vocab.bos_id))
        assert int(np.argmax(step2.entity_dist)) == 0  # then the song

    def test_s2sa_step_has_no_entity_channel(self):
        params, vocab, candidates, _ = build_flip_setup()
        s2sa = params.with_variant("s2sa")
        enc = encode(s2sa, [vocab.common_index["who"]])
        ctx = DecoderContext(s2sa, vocab, enc, candidates)
        step = decode_step(s2sa, ctx, enc.last_state,
                           PrevToken(vocab.bos_id), PrevToken(vocab.bos_id))
        assert step.gate_prob == 0.0
        assert step.entity_dist.size == 0
        # with the gate hard-zero the mixture collapses to the common words
        assert step.mixed_dist.shape == (vocab.size_common,)
        assert np.array_equal(step.mixed_dist, step.common_dist)
