"""Exercise the HTTP reply API end to end, in process.

Trains a small model, wraps it in the service app, and talks to it through
a test client -- the same JSON contract a browser UI would use: POST /reply
for generation (with entity spans located by token position and length) and
GET /kb/entities for prefix search.  To serve on a real port instead, run
``gends serve --model <ckpt> --kb <kb.jsonl>``.
"""

import json

from fastapi.testclient import TestClient

from gends import (ModelConfig, TrainingConfig, build_vocab,
                   make_synthetic_corpus, train)
from gends.service import ModelBundle, create_app


def main():
    kb, dataset = make_synthetic_corpus(seed=7, n_entities=20, n_facts=15,
                                        n_pairs=40)
    vocab = build_vocab(dataset, kb)
    result = train(dataset, kb, vocab,
                   TrainingConfig(seed=0, epochs_phase1=4, epochs_phase2=2,
                                  batch_size=8, variant="full"),
                   ModelConfig(d_emb=32, d_h=32))
    bundle = ModelBundle(result.params, vocab, kb)
    app = create_app(bundle=bundle)

    with TestClient(app) as client:
        print(f"health: {client.get('/health').json()}")

        message = " ".join(dataset.pairs[0].message_tokens)
        reply = client.post("/reply", json={"message": message}).json()
        print(f"\nPOST /reply {message!r}")
        print(json.dumps(reply, indent=2)[:1200])

        # re-highlight the reply from the declared span positions
        tokens = list(reply["tokens"])
        for ent in reply["entities"]:
            pos, length = ent["position"], ent["length"]
            tokens[pos:pos + length] = [
                t.upper() for t in tokens[pos:pos + length]]
        print(f"\nhighlighted: {' '.join(tokens)}")

        some_prefix = sorted(kb.entities.values(),
                             key=lambda e: e.id)[0].surface_forms[0][0][:3]
        found = client.get("/kb/entities",
                           params={"q": some_prefix}).json()
        print(f"\nGET /kb/entities?q={some_prefix} -> "
              f"{len(found['entities'])} matches")
        for ent in found["entities"][:3]:
            print(f"  {ent}")


if __name__ == "__main__":
    main()
