"""Reply with entities the model never saw during training.

The model scores candidates only through their type and relation embeddings
-- entity identities have no learned vectors -- so swapping in an extended
KB is enough to make brand-new songs and albums generable.  This demo grows
the KB with new artist/song/album units, asks recommendation questions
about the new artists, and marks every never-trained entity in the output.

Run demos/02_train_and_checkpoint.py first to produce demos/out/.
"""

import sys
from pathlib import Path

from gends import (generate_with_new_kb, load_checkpoint, load_kb,
                   make_synthetic_corpus, make_unseen_extension)

OUT = Path(__file__).parent / "out"


def main():
    if not (OUT / "model.npz").exists():
        sys.exit("no checkpoint found; run demos/02_train_and_checkpoint.py")
    params, vocab = load_checkpoint(OUT / "model.npz")
    load_kb(OUT / "kb.jsonl")  # the served KB; rebuilt below for extension

    # the corpus generator is deterministic, so this is the training KB
    kb, _ = make_synthetic_corpus(seed=0, n_entities=140, n_facts=120,
                                  n_pairs=200)
    ext_kb, queries = make_unseen_extension(kb, seed=1)
    new_ids = set(ext_kb.entities) - set(kb.entities)
    print(f"extended KB: {len(kb.entities)} -> {len(ext_kb.entities)} "
          f"entities ({len(new_ids)} never seen in training)")

    n_new_emitted = 0
    for pair in queries.pairs[:6]:
        msg = " ".join(pair.message_tokens)
        out = generate_with_new_kb(params, vocab, ext_kb, msg)
        print(f"\nmessage: {msg!r}")
        print(f"  reply: {' '.join(out.tokens)!r}")
        for em in out.entity_emissions:
            tag = "NEW" if em.entity_id in new_ids else "old"
            n_new_emitted += em.entity_id in new_ids
            print(f"    [{tag}] {em.entity_id} via {em.predicate}")
    print(f"\n{n_new_emitted} never-trained entities emitted "
          f"across {len(queries.pairs[:6])} queries")


if __name__ == "__main__":
    main()
