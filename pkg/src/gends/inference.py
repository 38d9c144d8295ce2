"""Response generation: greedy and beam decoding over the mixed distribution.

Decoding operates on the same per-step machinery as training.  A chosen
candidate slot is realized as the entity's first surface form in the output,
while the decoder itself is fed the entity's type token, so generation over a
swapped-in knowledge base needs no new parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary, substitute_types, tokenize, type_token, relation_token
from .errors import ValidationError
from .kb import KnowledgeBase, detect_entities, retrieve_facts
from .model import (DecoderContext, DecoderStep, ModelParams, PrevToken,
                    build_scoring_candidates, decode_step, encode)


@dataclass(frozen=True)
class EntityEmission:
    """One knowledge word in a generated response."""

    position: int
    entity_id: str
    predicate: str
    prob: float
    gate: float


@dataclass
class GenerationResult:
    tokens: tuple[str, ...]
    entity_emissions: list[EntityEmission]
    gate_trace: list[float]
    score: float
    steps: int
    trace: list[DecoderStep] = field(default_factory=list, repr=False)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def prepare_context(params: ModelParams, vocab: Vocabulary, kb: KnowledgeBase,
                    message_tokens: list[str]) -> DecoderContext:
    """Detect entities, type-substitute, encode, and score candidates."""
    if not message_tokens:
        raise ValidationError("cannot generate a reply to an empty message")
    spans = detect_entities(message_tokens, kb)
    typed = substitute_types(message_tokens, spans, kb)
    enc = encode(params, vocab.encode_sequence(typed.tokens))
    if params.config.behavior.uses_retriever:
        cset = retrieve_facts([s.entity_id for s in spans], kb)
        cands = build_scoring_candidates(cset, vocab)
    else:
        cands = []
    return DecoderContext(params, vocab, enc, cands)


def _log_mixed(step: DecoderStep) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(step.mixed_dist)


def _apply_choice(choice: int, step: DecoderStep, ctx: DecoderContext,
                  vocab: Vocabulary, kb: KnowledgeBase, tokens: list[str],
                  emissions: list[EntityEmission],
                  prev1: PrevToken) -> tuple[PrevToken, PrevToken, bool]:
    """Realize one decoding choice; returns (prev1, prev2, is_eos)."""
    prev2 = prev1
    if choice < vocab.size_common:
        if choice == vocab.eos_id:
            return prev1, prev2, True
        tokens.append(vocab.word(choice))
        return PrevToken(choice), prev2, False
    slot = choice - vocab.size_common
    cand = ctx.candidates[slot]
    emissions.append(EntityEmission(
        position=len(tokens), entity_id=cand.entity_id,
        predicate=cand.predicate, prob=float(step.entity_dist[slot]),
        gate=float(step.gate_prob)))
    tokens.extend(kb.first_surface(cand.entity_id))
    return PrevToken(vocab.encode_common(type_token(cand.entity_type)),
                     slot=slot), prev2, False


def greedy_decode(params: ModelParams, vocab: Vocabulary, kb: KnowledgeBase,
                  ctx: DecoderContext, max_len: int = 30,
                  no_repeat_entity: bool = False,
                  keep_trace: bool = False) -> GenerationResult:
    s = ctx.enc.last_state
    prev1 = PrevToken(vocab.bos_id)
    prev2 = PrevToken(vocab.bos_id)
    tokens: list[str] = []
    emissions: list[EntityEmission] = []
    gates: list[float] = []
    trace: list[DecoderStep] = []
    score = 0.0
    n_steps = 0
    for _ in range(max_len):
        step = decode_step(params, ctx, s, prev1, prev2)
        n_steps += 1
        gates.append(float(step.gate_prob))
        if keep_trace:
            trace.append(step)
        logp = _log_mixed(step)
        if no_repeat_entity and emissions:
            used = {e.entity_id for e in emissions}
            for k, cand in enumerate(ctx.candidates):
                if cand.entity_id in used:
                    logp[vocab.size_common + k] = -np.inf
        choice = int(np.argmax(logp))
        score += float(logp[choice])
        prev1, prev2, done = _apply_choice(choice, step, ctx, vocab, kb,
                                           tokens, emissions, prev1)
        s = step.state
        if done:
            break
    return GenerationResult(tuple(tokens), emissions, gates, score, n_steps,
                            trace)


@dataclass
class _Hyp:
    logp: float
    state: np.ndarray
    prev1: PrevToken
    prev2: PrevToken
    tokens: tuple[str, ...]
    emissions: tuple[EntityEmission, ...]
    gates: tuple[float, ...]
    steps: int
    done: bool = False


def beam_decode(params: ModelParams, vocab: Vocabulary, kb: KnowledgeBase,
                ctx: DecoderContext, beam_width: int = 4, max_len: int = 30,
                no_repeat_entity: bool = False) -> GenerationResult:
    """Beam search over the mixed distribution.

    The returned hypothesis is the better of the best beam final and the
    greedy decode, so widening the beam can never score below greedy.
    """
    if beam_width < 1:
        raise ValidationError("beam_width must be at least 1")
    start = _Hyp(0.0, ctx.enc.last_state, PrevToken(vocab.bos_id),
                 PrevToken(vocab.bos_id), (), (), (), 0)
    live = [start]
    finished: list[_Hyp] = []
    while live and live[0].steps < max_len:
        pool: list[_Hyp] = list(finished)
        for hyp in live:
            step = decode_step(params, ctx, hyp.state, hyp.prev1, hyp.prev2)
            logp = _log_mixed(step)
            if no_repeat_entity and hyp.emissions:
                used = {e.entity_id for e in hyp.emissions}
                for k, cand in enumerate(ctx.candidates):
                    if cand.entity_id in used:
                        logp[vocab.size_common + k] = -np.inf
            for choice in np.argsort(-logp, kind="stable")[:beam_width]:
                choice = int(choice)
                tokens = list(hyp.tokens)
                emissions = list(hyp.emissions)
                prev1, prev2, done = _apply_choice(
                    choice, step, ctx, vocab, kb, tokens, emissions, hyp.prev1)
                pool.append(_Hyp(
                    hyp.logp + float(logp[choice]), step.state, prev1, prev2,
                    tuple(tokens), tuple(emissions),
                    hyp.gates + (float(step.gate_prob),),
                    hyp.steps + 1, done))
        # Stable sort keeps first-come order on ties, matching greedy argmax.
        pool.sort(key=lambda h: -h.logp)
        selected = pool[:beam_width]
        finished = [h for h in selected if h.done]
        live = [h for h in selected if not h.done]
    finals = finished + live
    best = max(finals, key=lambda h: h.logp)
    greedy = greedy_decode(params, vocab, kb, ctx, max_len=max_len,
                           no_repeat_entity=no_repeat_entity)
    if greedy.score > best.logp:
        return greedy
    return GenerationResult(best.tokens, list(best.emissions),
                            list(best.gates), best.logp, best.steps)


def generate(params: ModelParams, vocab: Vocabulary, kb: KnowledgeBase,
             message, mode: str = "greedy", beam_width: int = 4,
             max_len: int = 30, no_repeat_entity: bool = False,
             keep_trace: bool = False) -> GenerationResult:
    """Generate a reply to a message (raw string or pre-tokenized list)."""
    message_tokens = tokenize(message) if isinstance(message, str) else list(message)
    ctx = prepare_context(params, vocab, kb, message_tokens)
    if mode == "greedy":
        return greedy_decode(params, vocab, kb, ctx, max_len=max_len,
                             no_repeat_entity=no_repeat_entity,
                             keep_trace=keep_trace)
    if mode == "beam":
        return beam_decode(params, vocab, kb, ctx, beam_width=beam_width,
                           max_len=max_len, no_repeat_entity=no_repeat_entity)
    raise ValidationError(f"unknown decoding mode {mode!r}")


def validate_kb_compatible(kb: KnowledgeBase, vocab: Vocabulary) -> None:
    """Check that every KB type and relation has a vocabulary token.

    A model can score entities it never saw, but only through their type and
    predicate embeddings; a brand-new type or relation has none.
    """
    for entity_type in kb.entity_types:
        if type_token(entity_type) not in vocab.common_index:
            raise ValidationError(
                f"entity type {entity_type!r} is not in the model vocabulary")
    for relation in sorted(kb.relations):
        if relation_token(relation) not in vocab.common_index:
            raise ValidationError(
                f"relation {relation!r} is not in the model vocabulary")


def generate_with_new_kb(params: ModelParams, vocab: Vocabulary,
                         kb: KnowledgeBase, message, **kwargs) -> GenerationResult:
    """Generate against a swapped or extended knowledge base.

    Validates up front that the KB only uses types and relations known to
    the model; entity identities themselves may all be new.
    """
    validate_kb_compatible(kb, vocab)
    return generate(params, vocab, kb, message, **kwargs)
