"""Structured knowledge store: typed entities, relation triples, and retrieval.

The store is loaded once from a line-delimited JSON file and is immutable
afterwards, so concurrent readers need no locking.  Retrieval follows the
two-sided rule used throughout the package: facts whose subject matches a
message entity and facts whose object matches a message entity are both
candidate evidence, because in open conversation either side of a triple can
show up in a message or a reply.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

# Direction tags for candidate entities: the object of a subject-matched fact,
# or the subject of an object-matched fact.
FROM_QS_OBJECT = "from_qs_object"
FROM_QO_SUBJECT = "from_qo_subject"


@dataclass(frozen=True)
class FactTriple:
    """(subject, predicate, object) with entity ids on both ends."""

    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class Entity:
    id: str
    entity_type: str
    surface_forms: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class EntitySpan:
    """Half-open token span [start, end) resolved to an entity id."""

    start: int
    end: int
    entity_id: str


@dataclass(frozen=True)
class Candidate:
    """One answer-entity candidate produced by retrieval."""

    entity_id: str
    entity_type: str
    predicate: str
    direction: str  # FROM_QS_OBJECT or FROM_QO_SUBJECT


@dataclass
class CandidateSet:
    """Retrieved facts split by match side, plus the deduplicated candidates.

    ``candidates`` holds the objects of subject-matched facts followed by the
    subjects of object-matched facts, deduplicated by
    (entity, predicate, direction) with first occurrence kept.
    """

    facts_qs: list[FactTriple] = field(default_factory=list)
    facts_qo: list[FactTriple] = field(default_factory=list)
    candidates: list[Candidate] = field(default_factory=list)

    @property
    def facts(self) -> list[FactTriple]:
        """All retrieved facts, subject matches first; may contain overlaps."""
        return self.facts_qs + self.facts_qo

    def is_empty(self) -> bool:
        return not self.candidates


class KnowledgeBase:
    """Immutable registry of entities, relations, and facts with indexes."""

    def __init__(self, entities: dict[str, Entity], relations: set[str],
                 facts: list[FactTriple]):
        self.entities = dict(entities)
        self.relations = set(relations)
        self.facts = list(facts)
        self.subject_index: dict[str, list[int]] = {}
        self.object_index: dict[str, list[int]] = {}
        for i, fact in enumerate(self.facts):
            self.subject_index.setdefault(fact.subject, []).append(i)
            self.object_index.setdefault(fact.object, []).append(i)
        # Surface collisions resolve to the lowest entity id so longest-match
        # detection stays deterministic; sorted iteration makes first-set win.
        self.surface_index: dict[tuple[str, ...], str] = {}
        for eid in sorted(self.entities):
            for form in self.entities[eid].surface_forms:
                self.surface_index.setdefault(form, eid)
        self.entity_types = sorted({e.entity_type for e in self.entities.values()})
        self.max_surface_len = max(
            (len(f) for f in self.surface_index), default=0)

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    def entity_type_of(self, entity_id: str) -> str:
        try:
            return self.entities[entity_id].entity_type
        except KeyError:
            raise ValidationError(f"unknown entity id: {entity_id!r}") from None

    def first_surface(self, entity_id: str) -> tuple[str, ...]:
        ent = self.entities.get(entity_id)
        if ent is None:
            raise ValidationError(f"unknown entity id: {entity_id!r}")
        return ent.surface_forms[0]


def _normalize_surface(form) -> tuple[str, ...]:
    # KB files may carry arbitrary case; matching happens in tokenizer space.
    from .corpus import tokenize

    if not isinstance(form, list) or not form:
        raise ValueError("surface form must be a non-empty token list")
    toks = tokenize(" ".join(str(t) for t in form))
    if not toks:
        raise ValueError(f"surface form {form!r} normalizes to nothing")
    return tuple(toks)


def load_kb(path) -> KnowledgeBase:
    """Load a KB from a JSONL file of entity / relation / fact records.

    Entities and relations must precede the facts that use them.  Duplicate
    facts are dropped silently; a fact referencing an unregistered entity or
    relation raises :class:`ValidationError`.
    """
    path = Path(path)
    entities: dict[str, Entity] = {}
    relations: set[str] = set()
    facts: list[FactTriple] = []
    seen: set[tuple[str, str, str]] = set()
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"bad JSON: {exc.msg}") from exc
            if not isinstance(record, dict) or "kind" not in record:
                raise ParseError(path, line_no, "record must be an object with a 'kind'")
            kind = record["kind"]
            try:
                if kind == "entity":
                    eid = str(record["id"])
                    if eid in entities:
                        raise ValidationError(f"duplicate entity id: {eid!r}")
                    forms = tuple(_normalize_surface(f) for f in record["surface"])
                    entities[eid] = Entity(eid, str(record["type"]), forms)
                elif kind == "relation":
                    relations.add(str(record["id"]))
                elif kind == "fact":
                    s, p, o = str(record["s"]), str(record["p"]), str(record["o"])
                    for end in (s, o):
                        if end not in entities:
                            raise ValidationError(
                                f"fact references unregistered entity {end!r}")
                    if p not in relations:
                        raise ValidationError(
                            f"fact references unregistered relation {p!r}")
                    if (s, p, o) not in seen:
                        seen.add((s, p, o))
                        facts.append(FactTriple(s, p, o))
                else:
                    raise ParseError(path, line_no, f"unknown record kind {kind!r}")
            except KeyError as exc:
                raise ParseError(path, line_no, f"missing field {exc}") from exc
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
    kb = KnowledgeBase(entities, relations, facts)
    logger.info("loaded KB %s: %d entities, %d relations, %d facts",
                path, len(kb.entities), len(kb.relations), kb.num_facts)
    return kb


def detect_entities(message_tokens: list[str], kb: KnowledgeBase) -> list[EntitySpan]:
    """Greedy longest-match left-to-right scan over the surface index.

    Matched spans never overlap.  Equal-length collisions were already broken
    toward the lowest entity id when the surface index was built.
    """
    spans: list[EntitySpan] = []
    i = 0
    n = len(message_tokens)
    while i < n:
        match = None
        longest = min(kb.max_surface_len, n - i)
        for length in range(longest, 0, -1):
            eid = kb.surface_index.get(tuple(message_tokens[i:i + length]))
            if eid is not None:
                match = EntitySpan(i, i + length, eid)
                break
        if match is None:
            i += 1
        else:
            spans.append(match)
            i = match.end
    return spans


def retrieve_facts(entities: list[str], kb: KnowledgeBase) -> CandidateSet:
    """Retrieve every fact whose subject or object is a message entity.

    No cap is applied here; candidate pruning, if any, is a model concern.
    """
    wanted = set()
    for eid in entities:
        if eid not in kb.entities:
            raise ValidationError(f"unknown entity id: {eid!r}")
        wanted.add(eid)
    qs_idx = sorted({i for e in wanted for i in kb.subject_index.get(e, [])})
    qo_idx = sorted({i for e in wanted for i in kb.object_index.get(e, [])})
    facts_qs = [kb.facts[i] for i in qs_idx]
    facts_qo = [kb.facts[i] for i in qo_idx]

    candidates: list[Candidate] = []
    dedup: set[tuple[str, str, str]] = set()
    for fact in facts_qs:
        key = (fact.object, fact.predicate, FROM_QS_OBJECT)
        if key not in dedup:
            dedup.add(key)
            candidates.append(Candidate(fact.object, kb.entity_type_of(fact.object),
                                        fact.predicate, FROM_QS_OBJECT))
    for fact in facts_qo:
        key = (fact.subject, fact.predicate, FROM_QO_SUBJECT)
        if key not in dedup:
            dedup.add(key)
            candidates.append(Candidate(fact.subject, kb.entity_type_of(fact.subject),
                                        fact.predicate, FROM_QO_SUBJECT))
    return CandidateSet(facts_qs=facts_qs, facts_qo=facts_qo, candidates=candidates)


def write_kb_jsonl(path, entities: list[Entity], relations: list[str],
                   facts: list[FactTriple]) -> None:
    """Serialize a KB in load order: entities, relations, then facts."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for ent in entities:
            handle.write(json.dumps({
                "kind": "entity", "id": ent.id, "type": ent.entity_type,
                "surface": [list(f) for f in ent.surface_forms]}) + "\n")
        for rel in relations:
            handle.write(json.dumps({"kind": "relation", "id": rel}) + "\n")
        for fact in facts:
            handle.write(json.dumps({
                "kind": "fact", "s": fact.subject, "p": fact.predicate,
                "o": fact.object}) + "\n")
