"""Seeded synthetic music-domain corpus for desk-scale experiments.

The generator builds a KB of person/song/album/year entities wired up as
``person -sing-> song -album_of-> album -release_year-> year`` units, then
renders templated dialogues over it.  Three behaviors are covered on purpose:
responses carrying two entities of different types, single-entity QA, and
chit-chat with no entity at all.  Every gold response entity is retrievable
from the message entities, so the corpus is answerable by construction.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from .corpus import Dataset, DialoguePair, tokenize
from .errors import ValidationError
from .kb import Entity, EntitySpan, FactTriple, KnowledgeBase

PERSON, SONG, ALBUM, YEAR = "Person", "Song", "Album", "Year"
SING, ALBUM_OF, RELEASE_YEAR = "sing", "album_of", "release_year"
RELATIONS = [SING, ALBUM_OF, RELEASE_YEAR]

# Name pools are disjoint from every template word below, so entity detection
# can never fire inside plain template text.
_FIRST = ["mona", "arlo", "vera", "silas", "nadia", "orin", "tessa", "bruno",
          "celia", "dorian", "elif", "gunnar", "hazel", "ivo", "juna", "kiran",
          "lena", "marek", "noor", "otis", "priya", "rosa", "sven", "talia"]
_LAST = ["frost", "vance", "moss", "hale", "stone", "birch", "wolfe", "marsh",
         "thorn", "gale", "ryder", "sloane", "pike", "fenn", "cole", "drake"]
_SONG_A = ["silver", "crimson", "velvet", "golden", "hollow", "distant",
           "electric", "paper", "neon", "quiet", "broken", "amber", "frozen",
           "scarlet", "hidden", "lunar", "rusty", "midnight"]
_SONG_N = ["river", "echo", "harbor", "lantern", "meadow", "canyon", "tide",
           "mirror", "sparrow", "comet", "valley", "thunder", "willow",
           "beacon", "delta", "aurora"]
_ALBUM_A = ["violet", "indigo", "coral", "ivory", "onyx", "jade", "sable",
            "pearl", "cobalt", "topaz", "umber", "slate"]
_ALBUM_N = ["sessions", "tapes", "anthology", "chronicles", "reveries",
            "horizons", "postcards", "sketches", "memoirs", "voyages"]

# Reserved pools for the unseen-entity extension; never used by the base KB.
_U_FIRST = ["zane", "wanda", "ugo", "yara", "xeno", "quill"]
_U_LAST = ["ember", "reed", "lake", "ash"]
_U_SONG_A = ["wandering", "winter", "copper", "emerald", "shattered", "pale"]
_U_SONG_N = ["summit", "ridge", "ocean", "grove", "prairie", "dune"]
_U_ALBUM_A = ["garnet", "opal", "quartz", "cedar"]
_U_ALBUM_N = ["diaries", "letters", "fragments", "echoes"]

_CHITCHAT = [
    ("hello", "hi there"),
    ("how are you", "i am fine thanks"),
    ("nice to meet you", "nice to meet you too"),
    ("do you enjoy music", "yes i really enjoy talking about music"),
    ("what did you do today", "not much just listening to some records"),
    ("see you later", "sure bye"),
    ("that sounds great", "glad you think so"),
    ("i had a long day", "take some rest then"),
]


@dataclass(frozen=True)
class _Unit:
    person: Entity
    song: Entity
    album: Entity
    year: Entity


def _pick_names(rng: random.Random, pool_a, pool_b, count, taken):
    """Draw ``count`` unique two-token names from shuffled pool products."""
    combos = [(a, b) for a in pool_a for b in pool_b]
    rng.shuffle(combos)
    names = []
    for a, b in combos:
        form = (a, b)
        if form in taken:
            continue
        taken.add(form)
        names.append(form)
        if len(names) == count:
            return names
    # Pools exhausted: disambiguate with a numeric token.
    for i in itertools.count():
        a, b = combos[i % len(combos)]
        form = (a, b, str(i))
        if form not in taken:
            taken.add(form)
            names.append(form)
            if len(names) == count:
                return names
    raise AssertionError("unreachable")


def _build_units(rng: random.Random, n_units: int, years: list[Entity],
                 pools, id_prefix: str = "") -> list[_Unit]:
    first, last, song_a, song_n, album_a, album_n = pools
    taken: set[tuple[str, ...]] = set()
    persons = _pick_names(rng, first, last, n_units, taken)
    songs = _pick_names(rng, song_a, song_n, n_units, taken)
    albums = _pick_names(rng, album_a, album_n, n_units, taken)
    units = []
    for i in range(n_units):
        person = Entity(f"{id_prefix}person_{i:03d}", PERSON, (persons[i],))
        song = Entity(f"{id_prefix}song_{i:03d}", SONG, (songs[i],))
        album = Entity(f"{id_prefix}album_{i:03d}", ALBUM, (albums[i],))
        units.append(_Unit(person, song, album, rng.choice(years)))
    return units


def _unit_facts(units: list[_Unit]) -> list[FactTriple]:
    facts = []
    for u in units:
        facts.append(FactTriple(u.person.id, SING, u.song.id))
        facts.append(FactTriple(u.song.id, ALBUM_OF, u.album.id))
        facts.append(FactTriple(u.album.id, RELEASE_YEAR, u.year.id))
    return facts


def _render(parts) -> tuple[tuple[str, ...], tuple[EntitySpan, ...]]:
    """Assemble token/span lists from literal strings and Entity slots."""
    tokens: list[str] = []
    spans: list[EntitySpan] = []
    for part in parts:
        if isinstance(part, Entity):
            surface = part.surface_forms[0]
            spans.append(EntitySpan(len(tokens), len(tokens) + len(surface), part.id))
            tokens.extend(surface)
        else:
            tokens.extend(tokenize(part))
    return tuple(tokens), tuple(spans)


def _make_pair(message_parts, response_parts, facts) -> DialoguePair:
    m_tokens, m_spans = _render(message_parts)
    r_tokens, r_spans = _render(response_parts)
    return DialoguePair(m_tokens, r_tokens, m_spans, r_spans, tuple(facts))


def _tell_about(rng: random.Random, u: _Unit) -> DialoguePair:
    msg = rng.choice([
        ("tell me about", u.song),
        ("do you know the song", u.song),
    ])
    rsp = rng.choice([
        ("well", u.person, "sings it and it is from", u.album),
        ("sure", u.person, "sang it on the album", u.album),
    ])
    return _make_pair(msg, rsp, [FactTriple(u.person.id, SING, u.song.id),
                                 FactTriple(u.song.id, ALBUM_OF, u.album.id)])


def _recommend(rng: random.Random, u: _Unit) -> DialoguePair:
    msg = rng.choice([
        ("recommend me songs of", u.person),
        ("i like", u.person, "any recommendation"),
    ])
    rsp = rng.choice([
        ("you can try", u.song),
        ("maybe listen to", u.song),
    ])
    return _make_pair(msg, rsp, [FactTriple(u.person.id, SING, u.song.id)])


def _album_qa(rng: random.Random, u: _Unit) -> DialoguePair:
    return _make_pair(("which album is", u.song, "from"),
                      ("it is from", u.album),
                      [FactTriple(u.song.id, ALBUM_OF, u.album.id)])


def _singer_qa(rng: random.Random, u: _Unit) -> DialoguePair:
    return _make_pair(("who sings", u.song),
                      (u.person, "sings it"),
                      [FactTriple(u.person.id, SING, u.song.id)])


def _year_qa(rng: random.Random, u: _Unit) -> DialoguePair:
    return _make_pair(("when was", u.album, "released"),
                      ("it was released in", u.year),
                      [FactTriple(u.album.id, RELEASE_YEAR, u.year.id)])


def _chitchat(rng: random.Random, _u) -> DialoguePair:
    msg, rsp = rng.choice(_CHITCHAT)
    return _make_pair((msg,), (rsp,), [])


def _plan_kinds(n_pairs: int) -> list:
    """Fixed template mix: >=20% two-entity and >=20% zero-entity replies."""
    n_tell = max(1, round(0.30 * n_pairs))
    n_chat = max(1, round(0.25 * n_pairs))
    rest = n_pairs - n_tell - n_chat
    qa_kinds = [_recommend, _album_qa, _singer_qa, _year_qa]
    kinds = [_tell_about] * n_tell + [_chitchat] * n_chat
    kinds += [qa_kinds[i % len(qa_kinds)] for i in range(max(0, rest))]
    return kinds[:n_pairs]


def make_synthetic_corpus(seed: int, n_entities: int, n_facts: int,
                          n_pairs: int) -> tuple[KnowledgeBase, Dataset]:
    """Generate a KB and dialogue set; byte-identical given the same seed.

    The KB is organized in units of one person, one song, and one album
    (three facts each) plus a shared year pool, so ``n_facts`` must be a
    multiple of 3 with ``n_entities = n_facts + n_years`` for some
    ``1 <= n_years <= n_facts / 3``.
    """
    if min(n_entities, n_facts, n_pairs) <= 0:
        raise ValidationError("corpus sizes must be positive")
    if n_facts % 3 != 0:
        raise ValidationError(f"n_facts must be a multiple of 3, got {n_facts}")
    n_units = n_facts // 3
    if n_units < 2:
        raise ValidationError("need at least 2 units (6 facts)")
    n_years = n_entities - 3 * n_units
    if not 1 <= n_years <= n_units:
        raise ValidationError(
            f"n_entities={n_entities} inconsistent with n_facts={n_facts}: "
            f"need 3*{n_units} + years with 1 <= years <= {n_units}")
    rng = random.Random(seed)
    pools = (_FIRST, _LAST, _SONG_A, _SONG_N, _ALBUM_A, _ALBUM_N)
    year_values = rng.sample(range(1960, 2030), n_years)
    years = [Entity(f"year_{v}", YEAR, ((str(v),),)) for v in year_values]
    units = _build_units(rng, n_units, years, pools)
    entities = {}
    for u in units:
        for ent in (u.person, u.song, u.album):
            entities[ent.id] = ent
    for y in years:
        entities[y.id] = y
    kb = KnowledgeBase(entities, set(RELATIONS), _unit_facts(units))

    kinds = _plan_kinds(n_pairs)
    rng.shuffle(kinds)
    pairs = [kind(rng, rng.choice(units)) for kind in kinds]
    return kb, Dataset(pairs)


def make_unseen_extension(kb: KnowledgeBase, seed: int,
                          n_units: int = 8) -> tuple[KnowledgeBase, Dataset]:
    """Extend a KB with fresh units over the existing types and relations.

    Returns the extended KB and a templated test slice whose gold entities
    never occur in the base KB, for held-out-entity evaluation.
    """
    if n_units <= 0:
        raise ValidationError("n_units must be positive")
    rng = random.Random(seed)
    pools = (_U_FIRST, _U_LAST, _U_SONG_A, _U_SONG_N, _U_ALBUM_A, _U_ALBUM_N)
    base_years = sorted((e for e in kb.entities.values() if e.entity_type == YEAR),
                        key=lambda e: e.id)
    if not base_years:
        raise ValidationError("base KB has no year entities to reuse")
    units = _build_units(rng, n_units, base_years, pools, id_prefix="new_")
    entities = dict(kb.entities)
    for u in units:
        for ent in (u.person, u.song, u.album):
            if ent.id in entities:
                raise ValidationError(f"extension id collides: {ent.id}")
            entities[ent.id] = ent
    extended = KnowledgeBase(entities, set(kb.relations),
                             kb.facts + _unit_facts(units))

    queries = []
    for u in units:
        queries.append(_tell_about(rng, u))
        queries.append(_recommend(rng, u))
        queries.append(_singer_qa(rng, u))
    return extended, Dataset(queries)
