"""Multi-task training: mixture decoding plus a type-substituted auxiliary task.

Task 1 maximizes the mixed-distribution likelihood of the gold response,
where each gold entity is labeled by its candidate slot.  Task 2 trains the
same encoder and common-word generator as a plain attention seq2seq on the
type-substituted response, which keeps the generator fluent even when gold
entities dominate the data.  Total loss is ``task1 + task2_weight * task2``.

Optimization is Adam with a two-phase learning-rate schedule expressed as
multipliers (1.0 then decayed) over a base step size, and global gradient
norm clipping.  Pairs are processed one at a time with gradient accumulation
over a batch window; no padding or masking is involved.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Dataset, DialoguePair, Vocabulary, substitute_types, type_token
from .errors import (AlignmentError, CheckpointError, ConfigError,
                     TrainingDivergedError)
from .kb import KnowledgeBase, retrieve_facts
from .model import (COMMON, ENTITY, DecoderContext, ModelConfig, ModelParams,
                    PrevToken, ScoringCandidate, build_scoring_candidates,
                    encode, encoder_backward, init_params, run_sequence,
                    sequence_backward, variant_behavior)

logger = logging.getLogger(__name__)

ALIGN_POLICIES = ("inject", "skip")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters; learning rates are multipliers over ``adam_base``."""

    lr_initial: float = 1.0
    epochs_phase1: int = 5
    lr_decay: float = 0.5
    epochs_phase2: int = 5
    grad_clip: float = 5.0
    batch_size: int = 16
    seed: int = 0
    task2_weight: float = 1.0
    variant: str = "full"
    adam_base: float = 5e-3
    align_policy: str = "inject"

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_decay <= 0 or self.adam_base <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs_phase1 < 1 or self.epochs_phase2 < 0:
            raise ConfigError("epoch counts must be positive")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.task2_weight < 0:
            raise ConfigError("task2_weight must be non-negative")
        if self.align_policy not in ALIGN_POLICIES:
            raise ConfigError(f"align_policy must be one of {ALIGN_POLICIES}")
        variant_behavior(self.variant)
        if variant_behavior(self.variant).single_task and self.task2_weight != 0.0:
            # Single-task variants have no second objective by definition.
            object.__setattr__(self, "task2_weight", 0.0)

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def lr_at(self, epoch: int) -> float:
        """Learning-rate multiplier for a zero-based epoch index."""
        if epoch < self.epochs_phase1:
            return self.lr_initial
        return self.lr_initial * self.lr_decay

    def lr_trace(self) -> list[float]:
        return [self.lr_at(e) for e in range(self.total_epochs)]

    def to_file(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        kwargs = {}
        casts = {"lr_initial": float, "lr_decay": float, "grad_clip": float,
                 "task2_weight": float, "adam_base": float,
                 "epochs_phase1": int, "epochs_phase2": int,
                 "batch_size": int, "seed": int,
                 "variant": str, "align_policy": str}
        for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in casts:
                raise ConfigError(f"{path}:{line_no}: unknown option {key!r}")
            try:
                kwargs[key] = casts[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{line_no}: bad value for {key}: {exc}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Gold alignment


@dataclass
class AlignedTarget:
    """Gold response mapped onto decoder steps.

    ``labels[t]`` is ``(kind, index)``: a common-vocabulary index or a
    candidate slot.  Multi-word entities occupy a single step.  ``typed``
    holds the task-2 targets (entities replaced by their type token).
    ``candidates`` is the possibly gold-extended candidate list the slots
    refer to.
    """

    labels: list[tuple[str, int]]
    typed: list[int]
    candidates: list[ScoringCandidate]
    n_injected: int = 0

    def with_eos(self, vocab: Vocabulary) -> "AlignedTarget":
        return AlignedTarget(self.labels + [(COMMON, vocab.eos_id)],
                             self.typed + [vocab.eos_id],
                             self.candidates, self.n_injected)

    def fed_tokens(self, vocab: Vocabulary) -> list[PrevToken]:
        """Teacher-forcing inputs: BOS then the gold word at each prior step."""
        fed = [PrevToken(vocab.bos_id)]
        for kind, idx in self.labels[:-1]:
            if kind == COMMON:
                fed.append(PrevToken(idx))
            else:
                cand = self.candidates[idx]
                fed.append(PrevToken(
                    vocab.encode_common(type_token(cand.entity_type)), slot=idx))
        return fed


def _injected_candidate(entity_id: str, pair: DialoguePair,
                        kb: KnowledgeBase) -> ScoringCandidate:
    entity_type = kb.entity_type_of(entity_id)
    for fact in pair.gold_facts:
        if entity_id in (fact.subject, fact.object):
            return ScoringCandidate(entity_id, entity_type, fact.predicate,
                                    injected=True)
    fact_ids = sorted(set(kb.subject_index.get(entity_id, ()))
                      | set(kb.object_index.get(entity_id, ())))
    if not fact_ids:
        raise AlignmentError(
            f"gold entity {entity_id!r} appears in no fact; cannot align")
    return ScoringCandidate(entity_id, entity_type,
                            kb.facts[fact_ids[0]].predicate, injected=True)


def align_gold(pair: DialoguePair, candidates: list[ScoringCandidate],
               kb: KnowledgeBase, vocab: Vocabulary,
               policy: str = "inject") -> AlignedTarget | None:
    """Map a gold response onto per-step labels against a candidate list.

    A gold entity missing from the candidates is appended (``inject``) or
    the whole pair is dropped by returning None (``skip``).  When several
    candidate slots share the entity, a slot whose predicate occurs in the
    pair's gold facts wins, then the lowest slot index.
    """
    if policy not in ALIGN_POLICIES:
        raise ConfigError(f"unknown alignment policy {policy!r}")
    cands = list(candidates)
    n_injected = 0
    gold_preds: dict[str, set[str]] = {}
    for fact in pair.gold_facts:
        gold_preds.setdefault(fact.subject, set()).add(fact.predicate)
        gold_preds.setdefault(fact.object, set()).add(fact.predicate)

    labels: list[tuple[str, int]] = []
    typed: list[int] = []
    spans = {s.start: s for s in pair.response_spans}
    pos = 0
    while pos < len(pair.response_tokens):
        span = spans.get(pos)
        if span is None:
            tok = pair.response_tokens[pos]
            labels.append((COMMON, vocab.encode_common(tok)))
            typed.append(vocab.encode_common(tok))
            pos += 1
            continue
        matches = [i for i, c in enumerate(cands) if c.entity_id == span.entity_id]
        if not matches:
            if policy == "skip":
                return None
            cands.append(_injected_candidate(span.entity_id, pair, kb))
            n_injected += 1
            slot = len(cands) - 1
        else:
            preferred = [i for i in matches
                         if cands[i].predicate in gold_preds.get(span.entity_id, ())]
            slot = min(preferred) if preferred else min(matches)
        labels.append((ENTITY, slot))
        typed.append(vocab.encode_common(
            type_token(kb.entity_type_of(span.entity_id))))
        pos = span.end
    return AlignedTarget(labels, typed, cands, n_injected)


# ---------------------------------------------------------------------------
# Per-pair training examples (parameter-independent parts, built once)


@dataclass
class TrainExample:
    message_ids: list[int]
    aligned: AlignedTarget
    fed: list[PrevToken]
    typed_targets: list[tuple[str, int]]


def build_examples(dataset: Dataset, kb: KnowledgeBase, vocab: Vocabulary,
                   variant: str, policy: str = "inject") -> list[TrainExample]:
    """Precompute encoder inputs, candidates and aligned targets per pair.

    The plain seq2seq variant trains on type-substituted targets with no
    candidates at all; other variants retrieve facts for the message
    entities and align gold entities to candidate slots.
    """
    behavior = variant_behavior(variant)
    examples: list[TrainExample] = []
    n_skipped = 0
    for pair in dataset:
        typed_msg = substitute_types(pair.message_tokens, pair.message_spans, kb)
        message_ids = vocab.encode_sequence(typed_msg.tokens)
        if behavior.uses_retriever:
            cset = retrieve_facts([s.entity_id for s in pair.message_spans], kb)
            cands = build_scoring_candidates(cset, vocab)
            aligned = align_gold(pair, cands, kb, vocab, policy)
            if aligned is None:
                n_skipped += 1
                continue
        else:
            typed_resp = substitute_types(pair.response_tokens,
                                          pair.response_spans, kb)
            labels = [(COMMON, vocab.encode_common(t)) for t in typed_resp.tokens]
            aligned = AlignedTarget(labels, [i for _, i in labels], [])
        aligned = aligned.with_eos(vocab)
        examples.append(TrainExample(
            message_ids=message_ids, aligned=aligned,
            fed=aligned.fed_tokens(vocab),
            typed_targets=[(COMMON, i) for i in aligned.typed]))
    if n_skipped:
        logger.info("alignment skipped %d pairs with unmatchable gold entities",
                    n_skipped)
    return examples


def pair_loss_and_grads(params: ModelParams, vocab: Vocabulary,
                        example: TrainExample, task2_weight: float):
    """Loss terms and total gradient dict for one dialogue pair."""
    enc = encode(params, example.message_ids)
    ctx = DecoderContext(params, vocab, enc, example.aligned.candidates)
    if ctx.size != len(example.aligned.candidates):
        raise AlignmentError(
            "candidate cap truncated an aligned candidate list; "
            "raise candidate_cap above the retrieved set size for training")
    run1 = run_sequence(params, ctx, example.aligned.labels, example.fed,
                        use_mixture=True)
    grads = params.zeros_like()
    dH = sequence_backward(params, grads, ctx, run1)
    encoder_backward(params, grads, enc, dH)
    loss2 = 0.0
    if task2_weight > 0.0:
        run2 = run_sequence(params, ctx, example.typed_targets, example.fed,
                            use_mixture=False)
        loss2 = run2.loss
        grads2 = params.zeros_like()
        dH2 = sequence_backward(params, grads2, ctx, run2)
        encoder_backward(params, grads2, enc, dH2)
        for name, g in grads.items():
            g += task2_weight * grads2[name]
    return run1.loss, loss2, grads


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adam over named tensors; effective step = adam_base * lr multiplier."""

    def __init__(self, params: ModelParams, base: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.base = base
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ModelParams, grads, lr_mult: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        step_size = self.base * lr_mult
        for name, tensor in params.tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            tensor -= step_size * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``.

    Returns the post-clip global norm, recomputed after scaling so the
    value reported is the exact norm of what the optimizer consumes.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
        total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    return total


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochStats:
    epoch: int
    task1_nll: float
    task2_nll: float
    lr: float
    grad_norm: float
    grad_norms: list[float] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {"epoch": self.epoch, "task1_nll": self.task1_nll,
                "task2_nll": self.task2_nll, "lr": self.lr,
                "grad_norm": self.grad_norm}


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats]

    @property
    def lr_trace(self) -> list[float]:
        return [h.lr for h in self.history]


def save_metrics(history: list[EpochStats], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for stats in history:
            fh.write(json.dumps(stats.to_json_dict()) + "\n")


def train(dataset: Dataset, kb: KnowledgeBase, vocab: Vocabulary,
          config: TrainingConfig, model_config: ModelConfig | None = None,
          callback=None) -> TrainResult:
    """Train a model variant from scratch on a dialogue dataset.

    ``callback`` (if given) receives each epoch's :class:`EpochStats`.
    Raises :class:`TrainingDivergedError` on a non-finite loss or gradient.
    """
    if model_config is None:
        model_config = ModelConfig()
    model_config = replace(model_config, variant=config.variant)
    examples = build_examples(dataset, kb, vocab, config.variant,
                              config.align_policy)
    if not examples:
        raise ConfigError("no trainable pairs after alignment")
    params = init_params(vocab, model_config, seed=config.seed)
    adam = Adam(params, base=config.adam_base)
    rng = np.random.default_rng(config.seed)
    history: list[EpochStats] = []
    for epoch in range(config.total_epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(examples))
        sum1 = sum2 = 0.0
        n_steps1 = n_steps2 = 0
        norms: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            acc = params.zeros_like()
            for idx in batch:
                ex = examples[idx]
                loss1, loss2, grads = pair_loss_and_grads(
                    params, vocab, ex, config.task2_weight)
                if not (np.isfinite(loss1) and np.isfinite(loss2)):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}")
                sum1 += loss1
                sum2 += loss2
                n_steps1 += len(ex.aligned.labels)
                n_steps2 += len(ex.typed_targets)
                for name, g in acc.items():
                    g += grads[name]
            inv = 1.0 / len(batch)
            for g in acc.values():
                g *= inv
            norm = clip_global_norm(acc, config.grad_clip)
            if not np.isfinite(norm):
                raise TrainingDivergedError(
                    f"non-finite gradient norm at epoch {epoch}")
            norms.append(norm)
            adam.step(params, acc, lr)
        stats = EpochStats(
            epoch=epoch,
            task1_nll=sum1 / max(n_steps1, 1),
            task2_nll=(sum2 / max(n_steps2, 1)) if config.task2_weight > 0 else 0.0,
            lr=lr, grad_norm=max(norms), grad_norms=norms)
        history.append(stats)
        logger.info("epoch %d: task1 %.4f task2 %.4f lr %.2f |g| %.3f",
                    epoch, stats.task1_nll, stats.task2_nll, lr, stats.grad_norm)
        if callback is not None:
            callback(stats)
    return TrainResult(params, history)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(params: ModelParams, vocab: Vocabulary, path) -> None:
    """Serialize parameters plus the vocabulary they are bound to."""
    if params.vocab_hash != vocab.content_hash():
        raise CheckpointError("parameters were built for a different vocabulary")
    cfg = params.config
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": {"d_emb": cfg.d_emb, "d_h": cfg.d_h, "variant": cfg.variant,
                   "candidate_cap": cfg.candidate_cap,
                   "entity_buckets": cfg.entity_buckets},
        "vocab_hash": params.vocab_hash,
        "common_words": vocab.common_words,
        "entity_ids": vocab.entity_ids,
    }
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, __meta__=blob, **params.tensors)


def load_checkpoint(path, expected_vocab: Vocabulary | None = None):
    """Load ``(params, vocab)``; refuses foreign or damaged files."""
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: not a model checkpoint")
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            tensors = {k: np.asarray(data[k], dtype=np.float64)
                       for k in data.files if k != "__meta__"}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})")
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format version {version!r}")
    vocab = Vocabulary(meta["common_words"], meta["entity_ids"])
    if vocab.content_hash() != meta["vocab_hash"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch (corrupt file)")
    if expected_vocab is not None and \
            expected_vocab.content_hash() != meta["vocab_hash"]:
        raise CheckpointError(
            f"{path}: checkpoint was built for a different vocabulary")
    config = ModelConfig(**meta["config"])
    params = ModelParams(config, meta["vocab_hash"], tensors)
    return params, vocab
