"""Walk one message through the knowledge side of the pipeline.

Builds the synthetic music corpus, then takes a single dialogue pair and
shows each stage the model sees before decoding starts: entity detection by
longest surface match, type substitution of the detected spans, and
candidate fact retrieval (facts whose subject or object was mentioned).
"""

from gends import make_synthetic_corpus
from gends.corpus import substitute_types
from gends.kb import detect_entities, retrieve_facts


def main():
    kb, dataset = make_synthetic_corpus(seed=0, n_entities=140, n_facts=120,
                                        n_pairs=200)
    print(f"KB: {len(kb.entities)} entities, {len(kb.facts)} facts, "
          f"relations {sorted(kb.relations)}")
    print(f"dialogues: {len(dataset)} pairs")

    pair = next(p for p in dataset.pairs
                if p.message_spans and len(p.response_spans) >= 2)
    print(f"\nmessage:  {' '.join(pair.message_tokens)}")
    print(f"response: {' '.join(pair.response_tokens)}")

    spans = detect_entities(list(pair.message_tokens), kb)
    print("\ndetected entities:")
    for span in spans:
        ent = kb.entities[span.entity_id]
        surface = " ".join(pair.message_tokens[span.start:span.end])
        print(f"  [{span.start}:{span.end}] {surface!r} -> "
              f"{ent.id} ({ent.entity_type})")

    typed = substitute_types(list(pair.message_tokens), spans, kb)
    print(f"\ntyped message: {' '.join(typed.tokens)}")

    cset = retrieve_facts([s.entity_id for s in spans], kb)
    print(f"\n{len(cset.candidates)} candidate entities "
          f"(subject-matched and object-matched facts):")
    for cand in cset.candidates:
        surface = " ".join(kb.first_surface(cand.entity_id))
        print(f"  {cand.entity_id:<12} {cand.entity_type:<7} "
              f"via {cand.predicate:<13} ({cand.direction})  {surface!r}")

    gold = {f for f in pair.gold_facts}
    print(f"\ngold facts for this pair: "
          f"{[(f.subject, f.predicate, f.object) for f in gold]}")


if __name__ == "__main__":
    main()
