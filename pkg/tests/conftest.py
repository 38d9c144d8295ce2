"""Shared fixtures: a hand-built KB and vocabulary plus a small trained model."""

import numpy as np
import pytest

from gends import (Dataset, DialoguePair, Entity, EntitySpan, FactTriple,
                   KnowledgeBase, ModelConfig, TrainingConfig, Vocabulary,
                   build_vocab, make_synthetic_corpus, train)
from gends.corpus import relation_token, type_token

CONTROLS = ["<pad>", "<bos>", "<eos>", "<unk>"]


def hand_kb() -> KnowledgeBase:
    entities = {
        "person_001": Entity("person_001", "Person", (("jay", "chou"), ("jay",))),
        "song_001": Entity("song_001", "Song", (("blue", "storm"),)),
        "song_002": Entity("song_002", "Song", (("red", "river"),)),
        "album_001": Entity("album_001", "Album", (("first", "light"),)),
    }
    facts = [
        FactTriple("person_001", "sing", "song_001"),
        FactTriple("person_001", "sing", "song_002"),
        FactTriple("song_001", "album_of", "album_001"),
    ]
    return KnowledgeBase(entities, {"sing", "album_of"}, facts)


def hand_vocab() -> Vocabulary:
    words = CONTROLS + [
        "i", "like", "music", "try", "you", "can", "sings", "it", "who",
        "from", "is", "the",
        type_token("Person"), type_token("Song"), type_token("Album"),
        relation_token("sing"), relation_token("album_of"),
    ]
    return Vocabulary(words, sorted(hand_kb().entities))


@pytest.fixture
def kb() -> KnowledgeBase:
    return hand_kb()


@pytest.fixture
def vocab() -> Vocabulary:
    return hand_vocab()


@pytest.fixture(scope="session")
def small_world():
    """Synthetic corpus small enough for quick training in unit tests."""
    kb, dataset = make_synthetic_corpus(seed=7, n_entities=20, n_facts=15,
                                        n_pairs=40)
    vocab = build_vocab(dataset, kb)
    return kb, dataset, vocab


@pytest.fixture(scope="session")
def trained_small(small_world):
    """A briefly trained full-variant model for inference-level tests."""
    kb, dataset, vocab = small_world
    config = TrainingConfig(seed=0, epochs_phase1=4, epochs_phase2=2,
                            batch_size=8, variant="full")
    result = train(dataset, kb, vocab, config, ModelConfig(d_emb=32, d_h=32))
    return kb, dataset, vocab, result


def make_pair(message, response, m_spans=(), r_spans=(), facts=()) -> DialoguePair:
    return DialoguePair(tuple(message), tuple(response),
                        tuple(EntitySpan(*s) for s in m_spans),
                        tuple(EntitySpan(*s) for s in r_spans),
                        tuple(facts))


def dataset_of(*pairs) -> Dataset:
    return Dataset(list(pairs))


def rng_for(test_seed: int) -> np.random.Generator:
    return np.random.default_rng(test_seed)


def build_flip_setup():
    """Zero-weight params with a few hand-set entries that drive the entity
    argmax of the full variant to flip between decode steps.

    Construction: the sing candidate gets the larger matching score r, the
    album candidate the larger type score u.  At the first step the shared
    update input is 0, so softplus is in its exponential regime and the type
    gap dominates (argmax = album).  Feeding the album type token pushes the
    shared input to +50, the softplus turns linear, the type gap shrinks to a
    ratio near 1, and the matching-score ordering takes over (argmax = song).

    Returns (params, vocab, candidates, album_type_id).
    """
    from gends import ModelConfig
    from gends.model import ScoringCandidate, init_params

    vocab = hand_vocab()
    params = init_params(vocab, ModelConfig(d_emb=4, d_h=3, variant="full"))
    for arr in params.tensors.values():
        arr[:] = 0.0
    t = params.tensors
    sing_tok = vocab.common_index[relation_token("sing")]
    album_tok = vocab.common_index[type_token("Album")]
    t["emb"][sing_tok, 0] = 1.0
    pred_block = params.config.d_h + params.config.d_emb
    t["match_W1"][pred_block + 0, 0] = 1.0
    t["match_w2"][0] = 2.0
    t["emb"][album_tok, 1] = 1.0
    t["u_wtype"][1] = 10.0
    t["u_wmu"][1] = 50.0
    candidates = [ScoringCandidate("song_001", "Song", "sing"),
                  ScoringCandidate("album_001", "Album", "album_of")]
    return params, vocab, candidates, album_tok
