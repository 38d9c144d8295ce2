"""Tokenization, vocabularies, type substitution, and dialogue datasets.

Two word inventories drive the decoder.  Common words (including every
entity-type token, every relation token, and the control tokens) live in an
indexed vocabulary; knowledge words are KB entities and are kept in a separate
registry so the two index spaces can never collide, even when an entity
surface spells the same as a common word.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .kb import EntitySpan, FactTriple, KnowledgeBase

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
CONTROL_TOKENS = (PAD, BOS, EOS, UNK)

_TOKEN_RE = re.compile(r"'[a-z]+|[a-z0-9]+|[^\sa-z0-9']")


def tokenize(text: str) -> list[str]:
    """Lowercasing whitespace-and-punctuation split.

    Clitics keep their apostrophe ("jay's" -> "jay", "'s"); other punctuation
    becomes single-character tokens.  Idempotent over join-with-spaces.
    """
    return _TOKEN_RE.findall(text.lower())


def type_token(entity_type: str) -> str:
    """Vocabulary token standing in for all entities of one type."""
    return f"<{entity_type}>"


def relation_token(relation_id: str) -> str:
    return f"<rel:{relation_id}>"


@dataclass(frozen=True)
class DialoguePair:
    """One message/response pair with span annotations and supporting facts."""

    message_tokens: tuple[str, ...]
    response_tokens: tuple[str, ...]
    message_spans: tuple[EntitySpan, ...]
    response_spans: tuple[EntitySpan, ...]
    gold_facts: tuple[FactTriple, ...]

    def span_entities(self) -> set[str]:
        return {s.entity_id for s in self.message_spans + self.response_spans}


@dataclass
class Dataset:
    pairs: list[DialoguePair]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class TypedSequence:
    """Token sequence with entity spans collapsed to their type tokens.

    ``alignment[i]`` is the original span behind typed position i, or None for
    untouched tokens.  ``source_tokens`` is kept so the substitution can be
    undone exactly.
    """

    tokens: tuple[str, ...]
    alignment: tuple[EntitySpan | None, ...]
    source_tokens: tuple[str, ...]

    def restore(self) -> tuple[str, ...]:
        out: list[str] = []
        for tok, span in zip(self.tokens, self.alignment):
            if span is None:
                out.append(tok)
            else:
                out.extend(self.source_tokens[span.start:span.end])
        return tuple(out)


def substitute_types(tokens, spans, kb: KnowledgeBase) -> TypedSequence:
    """Collapse each entity span to a single type token, recording alignment."""
    tokens = tuple(tokens)
    ordered = sorted(spans, key=lambda s: s.start)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start < prev.end:
            raise ValidationError(f"overlapping entity spans: {prev} / {cur}")
    typed: list[str] = []
    alignment: list[EntitySpan | None] = []
    pos = 0
    for span in ordered:
        if not (0 <= span.start < span.end <= len(tokens)):
            raise ValidationError(f"span {span} out of range for {len(tokens)} tokens")
        if span.entity_id not in kb.entities:
            raise ValidationError(f"span references unknown entity {span.entity_id!r}")
        for i in range(pos, span.start):
            typed.append(tokens[i])
            alignment.append(None)
        typed.append(type_token(kb.entity_type_of(span.entity_id)))
        alignment.append(span)
        pos = span.end
    for i in range(pos, len(tokens)):
        typed.append(tokens[i])
        alignment.append(None)
    return TypedSequence(tuple(typed), tuple(alignment), tokens)


class Vocabulary:
    """Common-word index plus the disjoint entity registry.

    Common-word indices are dense and start with the control tokens; entity
    ids get their own index space that never overlaps the common one.
    """

    def __init__(self, common_words: list[str], entity_ids: list[str]):
        self.common_words = list(common_words)
        self.common_index = {w: i for i, w in enumerate(self.common_words)}
        if len(self.common_index) != len(self.common_words):
            raise ValidationError("duplicate common-word entries")
        self.entity_ids = list(entity_ids)
        self.entity_index = {e: i for i, e in enumerate(self.entity_ids)}

    @property
    def size_common(self) -> int:
        return len(self.common_words)

    @property
    def size_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def pad_id(self) -> int:
        return self.common_index[PAD]

    @property
    def bos_id(self) -> int:
        return self.common_index[BOS]

    @property
    def eos_id(self) -> int:
        return self.common_index[EOS]

    @property
    def unk_id(self) -> int:
        return self.common_index[UNK]

    def encode_common(self, token: str) -> int:
        return self.common_index.get(token, self.unk_id)

    def encode_sequence(self, tokens) -> list[int]:
        return [self.encode_common(t) for t in tokens]

    def word(self, index: int) -> str:
        return self.common_words[index]

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for word in self.common_words:
            digest.update(word.encode("utf-8") + b"\x00")
        digest.update(b"\x01")
        for eid in self.entity_ids:
            digest.update(eid.encode("utf-8") + b"\x00")
        return digest.hexdigest()


def build_vocab(dataset: Dataset, kb: KnowledgeBase, min_count: int = 1) -> Vocabulary:
    """Count non-entity tokens over the corpus and build both inventories.

    Tokens under ``min_count`` fall back to the unknown token at encode time.
    Type and relation tokens are always included regardless of frequency.
    """
    counts: Counter[str] = Counter()
    for pair in dataset:
        for tokens, spans in ((pair.message_tokens, pair.message_spans),
                              (pair.response_tokens, pair.response_spans)):
            covered = {i for s in spans for i in range(s.start, s.end)}
            counts.update(t for i, t in enumerate(tokens) if i not in covered)
    words = [w for w, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
             if c >= min_count]
    forced = [type_token(t) for t in kb.entity_types]
    forced += [relation_token(r) for r in sorted(kb.relations)]
    common = list(CONTROL_TOKENS) + forced + [w for w in words if w not in set(forced)]
    return Vocabulary(common, sorted(kb.entities))


def _parse_spans(raw, line_ref) -> tuple[EntitySpan, ...]:
    spans = []
    for item in raw:
        if not (isinstance(item, list) and len(item) == 3):
            raise ValueError(f"bad span {item!r} in {line_ref}")
        spans.append(EntitySpan(int(item[0]), int(item[1]), str(item[2])))
    return tuple(spans)


def _validate_pair(pair: DialoguePair, kb: KnowledgeBase) -> None:
    for tokens, spans in ((pair.message_tokens, pair.message_spans),
                          (pair.response_tokens, pair.response_spans)):
        for span in spans:
            if not (0 <= span.start < span.end <= len(tokens)):
                raise ValidationError(f"span {span} out of range")
            surface = tuple(tokens[span.start:span.end])
            ent = kb.entities.get(span.entity_id)
            if ent is None:
                raise ValidationError(f"span references unknown entity {span.entity_id!r}")
            if surface not in ent.surface_forms:
                raise ValidationError(
                    f"span surface {surface!r} is not a registered form of {span.entity_id!r}")
    annotated = pair.span_entities()
    for fact in pair.gold_facts:
        if fact.subject not in annotated and fact.object not in annotated:
            raise ValidationError(
                f"gold fact {fact} touches no annotated entity of the pair")


def load_dialogues(path, kb: KnowledgeBase) -> Dataset:
    """Load message/response pairs from JSONL, validating span annotations."""
    path = Path(path)
    pairs: list[DialoguePair] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"bad JSON: {exc.msg}") from exc
            try:
                pair = DialoguePair(
                    message_tokens=tuple(tokenize(record["message"])),
                    response_tokens=tuple(tokenize(record["response"])),
                    message_spans=_parse_spans(record.get("message_entities", []), line_no),
                    response_spans=_parse_spans(record.get("response_entities", []), line_no),
                    gold_facts=tuple(FactTriple(str(s), str(p), str(o))
                                     for s, p, o in record.get("facts", [])),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, line_no, f"bad record: {exc}") from exc
            try:
                _validate_pair(pair, kb)
            except ValidationError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
            pairs.append(pair)
    return Dataset(pairs)


def save_dialogues(path, dataset: Dataset) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for pair in dataset:
            handle.write(json.dumps({
                "message": " ".join(pair.message_tokens),
                "response": " ".join(pair.response_tokens),
                "message_entities": [[s.start, s.end, s.entity_id]
                                     for s in pair.message_spans],
                "response_entities": [[s.start, s.end, s.entity_id]
                                      for s in pair.response_spans],
                "facts": [[f.subject, f.predicate, f.object] for f in pair.gold_facts],
            }) + "\n")


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; no pair lands in both halves."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(dataset.pairs))
    cut = int(round(len(order) * ratio))
    train = [dataset.pairs[i] for i in order[:cut]]
    test = [dataset.pairs[i] for i in order[cut:]]
    return Dataset(train), Dataset(test)
