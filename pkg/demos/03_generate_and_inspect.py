"""Load the trained checkpoint and inspect how replies are decoded.

For a few messages this prints the generated reply, marks which words came
from the knowledge channel, and shows the per-step knowledge-gate trace --
the probability, at each decoding step, that the model hands the step to
the entity scorer instead of the common-word generator.  Also contrasts
greedy decoding with beam search on the same message.

Run demos/02_train_and_checkpoint.py first to produce demos/out/.
"""

import sys
from pathlib import Path

from gends import generate, load_checkpoint, load_kb

OUT = Path(__file__).parent / "out"

MESSAGES = [
    "can you recommend some songs",
    "who sings it",
    "hello there",
]


def show(result):
    print(f"  reply: {' '.join(result.tokens)!r}  (score {result.score:.2f})")
    if result.entity_emissions:
        for em in result.entity_emissions:
            print(f"    knowledge word at token {em.position}: "
                  f"{em.entity_id} via {em.predicate} "
                  f"(p_e {em.prob:.2f}, gate {em.gate:.2f})")
    else:
        print("    no knowledge words")
    gates = " ".join(f"{g:.2f}" for g in result.gate_trace)
    print(f"    gate trace: {gates}")


def main():
    if not (OUT / "model.npz").exists():
        sys.exit("no checkpoint found; run demos/02_train_and_checkpoint.py")
    params, vocab = load_checkpoint(OUT / "model.npz")
    kb = load_kb(OUT / "kb.jsonl")
    print(f"loaded {params.config.variant} model "
          f"(d={params.config.d_h}, vocab {vocab.size_common})")

    # seed a message with a real entity surface so retrieval has something
    some_song = " ".join(kb.first_surface(sorted(
        e for e, ent in kb.entities.items()
        if ent.entity_type == "Song")[0]))
    messages = MESSAGES + [f"who sings {some_song}",
                           f"which album is {some_song} from"]

    for msg in messages:
        print(f"\nmessage: {msg!r}")
        show(generate(params, vocab, kb, msg))

    print(f"\ngreedy vs beam on {messages[-1]!r}:")
    for mode in ("greedy", "beam"):
        result = generate(params, vocab, kb, messages[-1], mode=mode,
                          beam_width=4)
        print(f"  {mode:<6} ({result.score:7.2f}): {' '.join(result.tokens)}")


if __name__ == "__main__":
    main()
