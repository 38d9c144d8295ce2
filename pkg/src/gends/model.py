"""Mixture decoder over common words and retrieved candidate entities.

The network follows a strict separation: entity identities never get learned
embeddings.  Messages are encoded after type substitution, and candidate
entities are scored purely from their type and predicate embeddings plus the
decoding context, which is what lets a trained model emit entities it has
never seen.

Per decode step the model produces
  * a common-word distribution from the recurrent generator state,
  * a candidate-entity distribution from three multiplicative scores
    (message matching, a scalar last-word update, a per-type update),
  * a scalar knowledge gate mixing the two blocks into one distribution.

Forward and backward passes are written out explicitly in numpy; the test
suite checks every parameter group against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Vocabulary, relation_token, type_token
from .errors import ConfigError, ValidationError
from .kb import Candidate, CandidateSet
from .layers import (DenseCache, GRUCache, dense_tanh, dense_tanh_backward,
                     gru_backward, gru_forward, log_softmax, sigmoid, softmax,
                     softmax_backward, softplus)

VARIANTS = ("full", "static", "single", "s2sa")


@dataclass(frozen=True)
class VariantBehavior:
    """What a model variant switches off relative to the full system."""

    uses_retriever: bool
    gate_forced_zero: bool
    static_entity_dist: bool
    single_task: bool


def variant_behavior(kind: str) -> VariantBehavior:
    if kind == "full":
        return VariantBehavior(True, False, False, False)
    if kind == "static":
        return VariantBehavior(True, False, True, False)
    if kind == "single":
        return VariantBehavior(True, False, False, True)
    if kind == "s2sa":
        return VariantBehavior(False, True, False, True)
    raise ConfigError(f"unknown model variant {kind!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 160
    d_h: int = 160
    variant: str = "full"
    candidate_cap: int | None = 512
    entity_buckets: int = 512

    def __post_init__(self):
        variant_behavior(self.variant)
        if min(self.d_emb, self.d_h, self.entity_buckets) <= 0:
            raise ConfigError("model dimensions must be positive")
        if self.candidate_cap is not None and self.candidate_cap <= 0:
            raise ConfigError("candidate_cap must be positive or None")

    @property
    def behavior(self) -> VariantBehavior:
        return variant_behavior(self.variant)


class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    def __init__(self, config: ModelConfig, vocab_hash: str,
                 tensors: dict[str, np.ndarray]):
        self.config = config
        self.vocab_hash = vocab_hash
        self.tensors = tensors

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vocab_hash,
                           {k: v.copy() for k, v in self.tensors.items()})

    def with_variant(self, kind: str) -> "ModelParams":
        """Same tensors viewed as another variant (shapes are shared)."""
        return ModelParams(replace(self.config, variant=kind), self.vocab_hash,
                           self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _glorot(rng, shape):
    limit = np.sqrt(6.0 / (shape[0] + (shape[1] if len(shape) > 1 else 1)))
    return rng.uniform(-limit, limit, size=shape)


def init_params(vocab: Vocabulary, config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh parameters; no rows exist for entity identities anywhere."""
    rng = np.random.default_rng(seed)
    De, H = config.d_emb, config.d_h
    Vc = vocab.size_common
    t: dict[str, np.ndarray] = {}
    t["emb"] = rng.uniform(-0.08, 0.08, size=(Vc, De))
    t["enc_Wx"] = _glorot(rng, (De, 3 * H))
    t["enc_Wh"] = _glorot(rng, (H, 3 * H))
    t["enc_b"] = np.zeros(3 * H)
    t["att_W"] = _glorot(rng, (2 * H, H))
    t["att_b"] = np.zeros(H)
    t["att_v"] = _glorot(rng, (H,))
    t["su_W"] = _glorot(rng, (2 * H, H))
    t["su_b"] = np.zeros(H)
    t["fuse_W"] = _glorot(rng, (2 * De, De))
    t["fuse_b"] = np.zeros(De)
    t["dec_Wx"] = _glorot(rng, (De, 3 * H))
    t["dec_Wh"] = _glorot(rng, (H, 3 * H))
    t["dec_b"] = np.zeros(3 * H)
    t["out_W"] = _glorot(rng, (H, Vc))
    t["out_b"] = np.zeros(Vc)
    t["match_W1"] = _glorot(rng, (H + 2 * De, H))
    t["match_b1"] = np.zeros(H)
    t["match_w2"] = _glorot(rng, (H,))
    t["match_b2"] = np.zeros(1)
    t["f_ws"] = _glorot(rng, (H,))
    t["f_wmu"] = _glorot(rng, (De,))
    t["f_oh_common"] = np.zeros(Vc)
    t["f_oh_entity"] = np.zeros(config.entity_buckets)
    t["f_b"] = np.zeros(1)
    t["u_ws"] = _glorot(rng, (H,))
    t["u_wmu"] = _glorot(rng, (De,))
    t["u_wtype"] = _glorot(rng, (De,))
    t["u_b"] = np.zeros(1)
    t["gate_ws"] = _glorot(rng, (H,))
    t["gate_wc"] = _glorot(rng, (H,))
    t["gate_wmu"] = _glorot(rng, (De,))
    t["gate_b"] = np.zeros(1)
    for arr in t.values():
        arr.setflags(write=True)
    return ModelParams(config, vocab.content_hash(), {k: np.asarray(v, dtype=np.float64)
                                                      for k, v in t.items()})


# ---------------------------------------------------------------------------
# Candidates as the model sees them


@dataclass(frozen=True)
class ScoringCandidate:
    """One slot of the entity distribution, scored by type and predicate."""

    entity_id: str
    entity_type: str
    predicate: str
    injected: bool = False


def build_scoring_candidates(cset: CandidateSet | list[Candidate],
                             vocab: Vocabulary) -> list[ScoringCandidate]:
    """Collapse retrieved candidates to one slot per (entity, predicate).

    Raises if a candidate's type or predicate has no vocabulary token; those
    embeddings are the only handles the scorer has on a candidate.
    """
    raw = cset.candidates if isinstance(cset, CandidateSet) else list(cset)
    out: list[ScoringCandidate] = []
    seen: set[tuple[str, str]] = set()
    for cand in raw:
        key = (cand.entity_id, cand.predicate)
        if key in seen:
            continue
        seen.add(key)
        _require_token(vocab, type_token(cand.entity_type),
                       f"entity type {cand.entity_type!r}")
        _require_token(vocab, relation_token(cand.predicate),
                       f"relation {cand.predicate!r}")
        out.append(ScoringCandidate(cand.entity_id, cand.entity_type, cand.predicate))
    return out


def _require_token(vocab: Vocabulary, token: str, what: str) -> int:
    idx = vocab.common_index.get(token)
    if idx is None:
        raise ValidationError(f"{what} has no vocabulary token; "
                              "the model cannot score it")
    return idx


# ---------------------------------------------------------------------------
# Encoder


class EncodeResult:
    """Hidden states for a typed message plus caches for backprop."""

    __slots__ = ("ids", "H", "caches")

    def __init__(self, ids, H, caches):
        self.ids = ids
        self.H = H
        self.caches = caches

    @property
    def last_state(self) -> np.ndarray:
        return self.H[-1]


def encode(params: ModelParams, token_ids: list[int]) -> EncodeResult:
    """Run the recurrent encoder over an already type-substituted message."""
    if len(token_ids) == 0:
        raise ValidationError("cannot encode an empty message")
    t = params.tensors
    H = params.config.d_h
    h = np.zeros(H)
    rows = []
    caches: list[GRUCache] = []
    for idx in token_ids:
        h = gru_forward(t["emb"][idx], h, t["enc_Wx"], t["enc_Wh"], t["enc_b"],
                        caches)
        rows.append(h)
    return EncodeResult(list(token_ids), np.array(rows), caches)


def encoder_backward(params: ModelParams, grads, enc: EncodeResult, dH) -> None:
    t = params.tensors
    carry = np.zeros(params.config.d_h)
    for step in range(len(enc.ids) - 1, -1, -1):
        dx, carry = gru_backward(dH[step] + carry, enc.caches[step],
                                 t["enc_Wx"], t["enc_Wh"],
                                 grads["enc_Wx"], grads["enc_Wh"], grads["enc_b"])
        grads["emb"][enc.ids[step]] += dx


# ---------------------------------------------------------------------------
# Candidate scoring context (fixed per message)


class DecoderContext:
    """Everything the decoder needs that is fixed across steps of one message.

    The message matching scores are computed once here and reused at every
    step; only the per-step update scores vary during decoding.
    """

    def __init__(self, params: ModelParams, vocab: Vocabulary,
                 enc: EncodeResult, candidates: list[ScoringCandidate]):
        self.enc = enc
        self.H = enc.H
        self.vocab = vocab
        self.candidates: list[ScoringCandidate] = []
        K0 = len(candidates)
        self.type_ids = np.zeros(0, dtype=int)
        self.pred_ids = np.zeros(0, dtype=int)
        self.r = np.zeros(0)
        self._match_X = np.zeros((0, 0))
        self._match_hidden = np.zeros((0, 0))
        self._match_a2 = np.zeros(0)
        if K0:
            self._append_candidates(params, candidates)
            cap = params.config.candidate_cap
            if cap is not None and len(self.candidates) > cap:
                keep = np.sort(np.argsort(-self.r, kind="stable")[:cap])
                self._select(keep)

    @property
    def size(self) -> int:
        return len(self.candidates)

    def _append_candidates(self, params: ModelParams, cands: list[ScoringCandidate]):
        t = params.tensors
        vocab = self.vocab
        type_ids = np.array([_require_token(vocab, type_token(c.entity_type),
                                            f"entity type {c.entity_type!r}")
                             for c in cands], dtype=int)
        pred_ids = np.array([_require_token(vocab, relation_token(c.predicate),
                                            f"relation {c.predicate!r}")
                             for c in cands], dtype=int)
        h_last = self.enc.last_state
        X = np.concatenate([np.tile(h_last, (len(cands), 1)),
                            t["emb"][type_ids], t["emb"][pred_ids]], axis=1)
        hidden = np.tanh(X @ t["match_W1"] + t["match_b1"])
        a2 = hidden @ t["match_w2"] + t["match_b2"][0]
        r = softplus(a2)
        self.candidates = self.candidates + list(cands)
        self.type_ids = np.concatenate([self.type_ids, type_ids])
        self.pred_ids = np.concatenate([self.pred_ids, pred_ids])
        self.r = np.concatenate([self.r, r])
        self._match_X = X if self._match_X.size == 0 else np.vstack([self._match_X, X])
        self._match_hidden = (hidden if self._match_hidden.size == 0
                              else np.vstack([self._match_hidden, hidden]))
        self._match_a2 = np.concatenate([self._match_a2, a2])

    def _select(self, keep: np.ndarray) -> None:
        self.candidates = [self.candidates[i] for i in keep]
        self.type_ids = self.type_ids[keep]
        self.pred_ids = self.pred_ids[keep]
        self.r = self.r[keep]
        self._match_X = self._match_X[keep]
        self._match_hidden = self._match_hidden[keep]
        self._match_a2 = self._match_a2[keep]

    def extend(self, params: ModelParams, extra: list[ScoringCandidate]) -> None:
        """Append candidates (gold injection during training alignment)."""
        if extra:
            self._append_candidates(params, extra)

    def matching_backward(self, params: ModelParams, grads, dr) -> np.ndarray:
        """Backprop the accumulated matching-score gradient; returns dh_last."""
        H = params.config.d_h
        De = params.config.d_emb
        t = params.tensors
        if self.size == 0:
            return np.zeros(H)
        da2 = dr * sigmoid(self._match_a2)
        grads["match_w2"] += self._match_hidden.T @ da2
        grads["match_b2"][0] += da2.sum()
        dhidden = np.outer(da2, t["match_w2"])
        dz = dhidden * (1.0 - self._match_hidden ** 2)
        grads["match_W1"] += self._match_X.T @ dz
        grads["match_b1"] += dz.sum(axis=0)
        dX = dz @ t["match_W1"].T
        np.add.at(grads["emb"], self.type_ids, dX[:, H:H + De])
        np.add.at(grads["emb"], self.pred_ids, dX[:, H + De:])
        return dX[:, :H].sum(axis=0)


def matching_scores(params: ModelParams, vocab: Vocabulary, enc: EncodeResult,
                    candidates: list[ScoringCandidate]) -> np.ndarray:
    """Per-candidate message matching scores (empty array for no candidates)."""
    return DecoderContext(params, vocab, enc, candidates).r


# ---------------------------------------------------------------------------
# Single decode step


@dataclass(frozen=True)
class PrevToken:
    """Teacher-forced or generated previous word.

    ``tok`` is the common-vocabulary id (an entity is represented by its type
    token); ``slot`` is the candidate index when the word was an entity.
    """

    tok: int
    slot: int | None = None


@dataclass
class DecoderStep:
    """All quantities of one decode step, exposed for tests and inspection."""

    state: np.ndarray
    context: np.ndarray
    attention: np.ndarray
    gate_prob: float
    common_dist: np.ndarray
    log_common: np.ndarray
    match_scores: np.ndarray
    update_scalar: float
    type_scores: np.ndarray
    entity_dist: np.ndarray
    mixed_dist: np.ndarray
    # backward caches
    _fuse: DenseCache | None = None
    _att_T: np.ndarray | None = None
    _att_cat: np.ndarray | None = None
    _su: DenseCache | None = None
    _gru: GRUCache | None = None
    _s_prev: np.ndarray | None = None
    _prev1: PrevToken | None = None
    _prev2: PrevToken | None = None
    _a_f: float = 0.0
    _a_u: np.ndarray | None = None
    _a_g: float = 0.0


def fuse_prev(params: ModelParams, tok1: int, tok2: int,
              caches=None) -> np.ndarray:
    """Fuse embeddings of the two previous words into one decoder input."""
    t = params.tensors
    x = np.concatenate([t["emb"][tok1], t["emb"][tok2]])
    return dense_tanh(x, t["fuse_W"], t["fuse_b"], caches)


def attend(params: ModelParams, s_prev: np.ndarray, H: np.ndarray):
    """Additive attention over encoder states; returns (context, weights)."""
    c, alpha, _, _ = _attend_cached(params, s_prev, H)
    return c, alpha


def _attend_cached(params: ModelParams, s_prev, H):
    t = params.tensors
    cat = np.concatenate([np.tile(s_prev, (H.shape[0], 1)), H], axis=1)
    T = np.tanh(cat @ t["att_W"] + t["att_b"])
    alpha = softmax(T @ t["att_v"])
    return alpha @ H, alpha, T, cat


def update_state(params: ModelParams, s_prev, c, fused, caches_su=None,
                 caches_gru=None) -> np.ndarray:
    """Recurrent state update: gated cell over a merged (state, context) input."""
    t = params.tensors
    pre = dense_tanh(np.concatenate([s_prev, c]), t["su_W"], t["su_b"], caches_su)
    return gru_forward(fused, pre, t["dec_Wx"], t["dec_Wh"], t["dec_b"], caches_gru)


def common_word_dist(params: ModelParams, state) -> np.ndarray:
    t = params.tensors
    return softmax(state @ t["out_W"] + t["out_b"])


def entity_update_score(params: ModelParams, state, prev: PrevToken) -> float:
    """Scalar last-word update score, broadcast over all candidates.

    The identity of the previous word enters through a per-word weight: a
    common-vocabulary weight for common words, a per-slot bucket weight for
    entities, so no entity-identity embedding is ever learned.
    """
    f, _ = _entity_update_cached(params, state, prev)
    return f


def _entity_update_cached(params: ModelParams, state, prev: PrevToken):
    t = params.tensors
    if prev.slot is None:
        oh = t["f_oh_common"][prev.tok]
    else:
        oh = t["f_oh_entity"][min(prev.slot, t["f_oh_entity"].shape[0] - 1)]
    a = (t["f_ws"] @ state + t["f_wmu"] @ t["emb"][prev.tok] + oh + t["f_b"][0])
    return float(softplus(np.asarray(a))), float(a)


def type_update_scores(params: ModelParams, state, prev: PrevToken,
                       ctx: DecoderContext) -> np.ndarray:
    u, _ = _type_update_cached(params, state, prev, ctx)
    return u


def _type_update_cached(params: ModelParams, state, prev: PrevToken,
                        ctx: DecoderContext):
    t = params.tensors
    a = (t["u_ws"] @ state + t["u_wmu"] @ t["emb"][prev.tok]
         + t["emb"][ctx.type_ids] @ t["u_wtype"] + t["u_b"][0])
    return softplus(a), a


def entity_dist(r: np.ndarray, f: float, u: np.ndarray) -> np.ndarray:
    """Normalized elementwise product of the three candidate scores."""
    if r.shape != u.shape:
        raise ValueError(f"score length mismatch: r{r.shape} vs u{u.shape}")
    w = r * f * u
    total = w.sum()
    if total <= 0.0:
        return np.full(w.shape, 1.0 / w.shape[0]) if w.size else w
    return w / total


def knowledge_gate(params: ModelParams, state, c, prev: PrevToken,
                   n_candidates: int) -> float:
    """P(knowledge word at this step); exactly 0 without candidates."""
    if n_candidates == 0:
        return 0.0
    g, _ = _gate_cached(params, state, c, prev)
    return g


def _gate_cached(params: ModelParams, state, c, prev: PrevToken):
    t = params.tensors
    a = (t["gate_ws"] @ state + t["gate_wc"] @ c
         + t["gate_wmu"] @ t["emb"][prev.tok] + t["gate_b"][0])
    return float(sigmoid(np.asarray([a]))[0]), float(a)


def mix_distributions(p_c: np.ndarray, p_e: np.ndarray, gate: float) -> np.ndarray:
    """Joint distribution over common words followed by candidate slots."""
    return np.concatenate([(1.0 - gate) * p_c, gate * p_e])


def decode_step(params: ModelParams, ctx: DecoderContext, s_prev: np.ndarray,
                prev1: PrevToken, prev2: PrevToken,
                need_mixture: bool = True) -> DecoderStep:
    """One full decoder step: attention, state update, both word channels."""
    t = params.tensors
    behavior = params.config.behavior
    fuse_c: list[DenseCache] = []
    su_c: list[DenseCache] = []
    gru_c: list[GRUCache] = []
    fused = fuse_prev(params, prev1.tok, prev2.tok, fuse_c)
    c, alpha, att_T, att_cat = _attend_cached(params, s_prev, ctx.H)
    s = update_state(params, s_prev, c, fused, su_c, gru_c)
    logits = s @ t["out_W"] + t["out_b"]
    log_pc = log_softmax(logits)
    p_c = np.exp(log_pc)

    K = ctx.size
    f_val, a_f = 1.0, 0.0
    u = np.zeros(0)
    a_u = np.zeros(0)
    p_e = np.zeros(0)
    gate, a_g = 0.0, 0.0
    if need_mixture and K > 0 and not behavior.gate_forced_zero:
        if behavior.static_entity_dist:
            p_e = entity_dist(ctx.r, 1.0, np.ones(K))
        else:
            f_val, a_f = _entity_update_cached(params, s, prev1)
            u, a_u = _type_update_cached(params, s, prev1, ctx)
            p_e = entity_dist(ctx.r, f_val, u)
        gate, a_g = _gate_cached(params, s, c, prev1)
    mixed = mix_distributions(p_c, p_e, gate) if need_mixture else p_c

    return DecoderStep(
        state=s, context=c, attention=alpha, gate_prob=gate,
        common_dist=p_c, log_common=log_pc, match_scores=ctx.r,
        update_scalar=f_val, type_scores=u, entity_dist=p_e, mixed_dist=mixed,
        _fuse=fuse_c[0], _att_T=att_T, _att_cat=att_cat, _su=su_c[0],
        _gru=gru_c[0], _s_prev=s_prev, _prev1=prev1, _prev2=prev2,
        _a_f=a_f, _a_u=a_u, _a_g=a_g)


# ---------------------------------------------------------------------------
# Sequence loss (teacher forcing) and its backward pass


COMMON, ENTITY = "common", "entity"


@dataclass
class SequenceRun:
    loss: float
    steps: list[DecoderStep]
    targets: list[tuple[str, int]]
    use_mixture: bool


def log_gate(a_g: float):
    """(log g, log (1-g)) computed stably from the gate preactivation."""
    return -softplus(np.asarray(-a_g)), -softplus(np.asarray(a_g))


def run_sequence(params: ModelParams, ctx: DecoderContext,
                 targets: list[tuple[str, int]], fed: list[PrevToken],
                 use_mixture: bool = True) -> SequenceRun:
    """Teacher-forced pass over a target sequence, returning total NLL.

    ``fed[t]`` is the gold previous word for step t (``fed[0]`` is BOS).
    Common targets contribute -log((1-g) p_c); entity targets -log(g p_e).
    Without the mixture (the type-substituted auxiliary task and the plain
    seq2seq variant) the loss is the common cross entropy alone.
    """
    if len(fed) != len(targets):
        raise ValueError("fed and targets must have equal length "
                         "(fed[t] is the gold word preceding target t)")
    s = ctx.enc.last_state
    loss = 0.0
    steps: list[DecoderStep] = []
    for t_i, (kind, idx) in enumerate(targets):
        prev1 = fed[t_i]
        prev2 = fed[t_i - 1] if t_i >= 1 else PrevToken(ctx.vocab.bos_id)
        step = decode_step(params, ctx, s, prev1, prev2, need_mixture=use_mixture)
        if kind == COMMON:
            loss -= step.log_common[idx]
            if use_mixture and step.gate_prob > 0.0:
                loss -= float(log_gate(step._a_g)[1])
        elif kind == ENTITY:
            if not use_mixture or ctx.size == 0:
                raise ValueError("entity target without an entity channel")
            loss -= float(log_gate(step._a_g)[0])
            loss -= np.log(step.entity_dist[idx])
        else:
            raise ValueError(f"unknown target kind {kind!r}")
        steps.append(step)
        s = step.state
    return SequenceRun(float(loss), steps, list(targets), use_mixture)


def sequence_backward(params: ModelParams, grads, ctx: DecoderContext,
                      run: SequenceRun) -> np.ndarray:
    """Backprop :func:`run_sequence`; returns dH for the encoder.

    Accumulates unscaled parameter gradients including the matching-network
    path, and folds the gradient of the initial decoder state and the last
    encoder state into the returned dH.
    """
    t = params.tensors
    behavior = params.config.behavior
    H_dim = params.config.d_h
    dH = np.zeros_like(ctx.H)
    dr_total = np.zeros(ctx.size)
    ds_next = np.zeros(H_dim)
    for t_i in range(len(run.steps) - 1, -1, -1):
        step = run.steps[t_i]
        kind, idx = run.targets[t_i]
        ds = ds_next.copy()
        dc = np.zeros(H_dim)
        dmu = np.zeros(params.config.d_emb)
        prev1 = step._prev1

        dlogits = np.zeros_like(step.common_dist)
        dg = 0.0
        dpe = np.zeros(ctx.size)
        if kind == COMMON:
            # -log softmax cross entropy shortcut.
            dlogits = step.common_dist.copy()
            dlogits[idx] -= 1.0
            if run.use_mixture and step.gate_prob > 0.0:
                dg = 1.0 / (1.0 - step.gate_prob)
        else:
            dg = -1.0 / step.gate_prob
            dpe[idx] = -1.0 / step.entity_dist[idx]

        if dg != 0.0:
            da_g = dg * step.gate_prob * (1.0 - step.gate_prob)
            grads["gate_ws"] += da_g * step.state
            grads["gate_wc"] += da_g * step.context
            grads["gate_wmu"] += da_g * t["emb"][prev1.tok]
            grads["gate_b"][0] += da_g
            ds += da_g * t["gate_ws"]
            dc += da_g * t["gate_wc"]
            dmu += da_g * t["gate_wmu"]

        if dpe.any():
            p_e = step.entity_dist
            w_total = (ctx.r.sum() if behavior.static_entity_dist
                       else (ctx.r * step.update_scalar * step.type_scores).sum())
            if behavior.static_entity_dist:
                dr_total += (dpe - np.dot(dpe, p_e)) / w_total
            elif w_total > 0.0:
                dw = (dpe - np.dot(dpe, p_e)) / w_total
                dr_total += dw * step.update_scalar * step.type_scores
                df = float(np.dot(dw, ctx.r * step.type_scores))
                du = dw * ctx.r * step.update_scalar
                # scalar last-word update score
                da_f = df * float(sigmoid(np.asarray([step._a_f]))[0])
                grads["f_ws"] += da_f * step.state
                grads["f_wmu"] += da_f * t["emb"][prev1.tok]
                if prev1.slot is None:
                    grads["f_oh_common"][prev1.tok] += da_f
                else:
                    bucket = min(prev1.slot, t["f_oh_entity"].shape[0] - 1)
                    grads["f_oh_entity"][bucket] += da_f
                grads["f_b"][0] += da_f
                ds += da_f * t["f_ws"]
                dmu += da_f * t["f_wmu"]
                # per-type update scores
                da_u = du * sigmoid(step._a_u)
                grads["u_ws"] += da_u.sum() * step.state
                grads["u_wmu"] += da_u.sum() * t["emb"][prev1.tok]
                grads["u_wtype"] += t["emb"][ctx.type_ids].T @ da_u
                grads["u_b"][0] += da_u.sum()
                np.add.at(grads["emb"], ctx.type_ids, np.outer(da_u, t["u_wtype"]))
                ds += da_u.sum() * t["u_ws"]
                dmu += da_u.sum() * t["u_wmu"]

        if dlogits.any():
            grads["out_W"] += np.outer(step.state, dlogits)
            grads["out_b"] += dlogits
            ds += t["out_W"] @ dlogits

        # Uniform-fallback entity dist (underflowed weights) is constant in
        # the parameters, so its gradient contribution is legitimately zero.

        dfused, dpre = _gru_step_backward(params, grads, step, ds)
        dcat = dense_tanh_backward(dpre, step._su, t["su_W"], grads["su_W"],
                                   grads["su_b"])
        ds_prev = dcat[:H_dim].copy()
        dc += dcat[H_dim:]

        ds_prev += _attention_backward(params, grads, step, dc, dH)

        dxf = dense_tanh_backward(dfused, step._fuse, t["fuse_W"],
                                  grads["fuse_W"], grads["fuse_b"])
        De = params.config.d_emb
        grads["emb"][prev1.tok] += dxf[:De]
        grads["emb"][step._prev2.tok] += dxf[De:]
        grads["emb"][prev1.tok] += dmu
        ds_next = ds_prev

    dh_last = ctx.matching_backward(params, grads, dr_total)
    dH[-1] += dh_last + ds_next
    return dH


def _gru_step_backward(params: ModelParams, grads, step: DecoderStep, ds):
    t = params.tensors
    dx, dpre = gru_backward(ds, step._gru, t["dec_Wx"], t["dec_Wh"],
                            grads["dec_Wx"], grads["dec_Wh"], grads["dec_b"])
    return dx, dpre


def _attention_backward(params: ModelParams, grads, step: DecoderStep, dc, dH):
    t = params.tensors
    H_mat = step._att_cat[:, params.config.d_h:]
    alpha = step.attention
    dalpha = H_mat @ dc
    dH += np.outer(alpha, dc)
    dscores = softmax_backward(alpha, dalpha)
    grads["att_v"] += step._att_T.T @ dscores
    dT = np.outer(dscores, t["att_v"])
    dZ = dT * (1.0 - step._att_T ** 2)
    grads["att_W"] += step._att_cat.T @ dZ
    grads["att_b"] += dZ.sum(axis=0)
    dcat = dZ @ t["att_W"].T
    dH += dcat[:, params.config.d_h:]
    return dcat[:, :params.config.d_h].sum(axis=0)


def sequence_nll(params: ModelParams, ctx: DecoderContext,
                 targets: list[tuple[str, int]], fed: list[PrevToken],
                 use_mixture: bool = True) -> float:
    """Teacher-forced negative log likelihood of a target sequence."""
    return run_sequence(params, ctx, targets, fed, use_mixture).loss
