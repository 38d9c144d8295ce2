"""Corpus metrics and the ablation harness.

BLEU-1 is corpus level: one clipped-precision ratio over all hypothesis
tokens with the standard brevity penalty.  Entity precision and recall are
per-response clipped multiset ratios, averaged (with population std) over
the eligible responses, where a response is eligible when its reference
contains at least one entity.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, Vocabulary
from .errors import CheckpointError
from .inference import generate
from .kb import KnowledgeBase
from .model import ModelConfig, ModelParams, VARIANTS

logger = logging.getLogger(__name__)


def bleu1_corpus(pairs: list[tuple[list[str], list[str]]]) -> float:
    """Corpus-level unigram BLEU with brevity penalty.

    ``pairs`` holds (hypothesis, reference) token lists.  Counts are clipped
    per pair, then pooled; an empty corpus or empty hypotheses score 0.
    """
    hyp_len = 0
    ref_len = 0
    clipped = 0
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        overlap = Counter(hyp) & Counter(ref)
        clipped += sum(overlap.values())
    if hyp_len == 0:
        return 0.0
    precision = clipped / hyp_len
    brevity = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return brevity * precision


def bleu1(hypothesis: list[str], reference: list[str]) -> float:
    """Single-pair unigram BLEU (corpus formula on one pair)."""
    return bleu1_corpus([(list(hypothesis), list(reference))])


def entity_metrics(predicted: list[str], gold: list[str]) -> tuple[float, float]:
    """Clipped multiset precision and recall over entity ids.

    ``gold`` must be non-empty (the eligibility rule filters before calling).
    An empty prediction scores zero precision by convention.
    """
    if not gold:
        raise ValueError("entity_metrics requires a non-empty gold list")
    overlap = sum((Counter(predicted) & Counter(gold)).values())
    precision = overlap / len(predicted) if predicted else 0.0
    recall = overlap / len(gold)
    return precision, recall


@dataclass
class EvalSample:
    message: list[str]
    reference: list[str]
    hypothesis: list[str]
    predicted_entities: list[str]
    gold_entities: list[str]
    precision: float | None
    recall: float | None

    @property
    def eligible(self) -> bool:
        return bool(self.gold_entities)


@dataclass
class EvalReport:
    bleu1: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    n_samples: int
    n_eligible: int
    samples: list[EvalSample] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {"bleu1": self.bleu1,
                "precision_mean": self.precision_mean,
                "precision_std": self.precision_std,
                "recall_mean": self.recall_mean,
                "recall_std": self.recall_std,
                "n_eligible": self.n_eligible}


def run_eval(params: ModelParams, vocab: Vocabulary, kb: KnowledgeBase,
             dataset: Dataset, mode: str = "greedy", beam_width: int = 4,
             max_len: int = 30) -> EvalReport:
    """Generate a reply per pair and score BLEU-1 and entity metrics."""
    samples: list[EvalSample] = []
    bleu_pairs = []
    for pair in dataset:
        result = generate(params, vocab, kb, list(pair.message_tokens),
                          mode=mode, beam_width=beam_width, max_len=max_len)
        hyp = list(result.tokens)
        ref = list(pair.response_tokens)
        predicted = [e.entity_id for e in result.entity_emissions]
        gold = [s.entity_id for s in pair.response_spans]
        bleu_pairs.append((hyp, ref))
        if gold:
            precision, recall = entity_metrics(predicted, gold)
        else:
            precision = recall = None
        samples.append(EvalSample(list(pair.message_tokens), ref, hyp,
                                  predicted, gold, precision, recall))
    eligible = [s for s in samples if s.eligible]
    precisions = np.array([s.precision for s in eligible], dtype=float)
    recalls = np.array([s.recall for s in eligible], dtype=float)
    return EvalReport(
        bleu1=bleu1_corpus(bleu_pairs),
        precision_mean=float(precisions.mean()) if eligible else 0.0,
        precision_std=float(precisions.std()) if eligible else 0.0,
        recall_mean=float(recalls.mean()) if eligible else 0.0,
        recall_std=float(recalls.std()) if eligible else 0.0,
        n_samples=len(samples), n_eligible=len(eligible), samples=samples)


def run_ablation_suite(train_set: Dataset, test_set: Dataset,
                       kb: KnowledgeBase, vocab: Vocabulary, config,
                       model_config: ModelConfig | None = None,
                       variants=VARIANTS) -> dict[str, EvalReport]:
    """Train every variant under one config and evaluate on the test split."""
    from dataclasses import replace

    from .training import train
    suite: dict[str, EvalReport] = {}
    for variant in variants:
        cfg = replace(config, variant=variant)
        logger.info("ablation: training variant %r", variant)
        result = train(train_set, kb, vocab, cfg, model_config)
        suite[variant] = run_eval(result.params, vocab, kb, test_set)
    return suite


def eval_checkpoints(checkpoints: dict[str, str], kb: KnowledgeBase,
                     dataset: Dataset) -> dict[str, EvalReport | None]:
    """Evaluate saved variant checkpoints; absent or broken files yield None.

    The suite keeps going so one missing ablation row never hides the rest.
    """
    from .training import load_checkpoint
    suite: dict[str, EvalReport | None] = {}
    for variant, path in checkpoints.items():
        try:
            params, vocab = load_checkpoint(path)
        except (CheckpointError, FileNotFoundError) as exc:
            logger.warning("skipping %r: %s", variant, exc)
            suite[variant] = None
            continue
        suite[variant] = run_eval(params, vocab, kb, dataset)
    return suite


def suite_to_json(suite: dict[str, EvalReport | None]) -> str:
    payload = {variant: (report.to_json_dict() if report is not None else None)
               for variant, report in suite.items()}
    return json.dumps(payload, indent=2, sort_keys=True)


def render_table(suite: dict[str, EvalReport | None]) -> str:
    """Fixed-width text table of the ablation results."""
    header = f"{'variant':<10} {'BLEU-1':>8} {'precision':>18} {'recall':>18} {'n':>5}"
    lines = [header, "-" * len(header)]
    for variant, report in suite.items():
        if report is None:
            lines.append(f"{variant:<10} {'(no checkpoint)':>8}")
            continue
        prec = f"{report.precision_mean:.3f} +/- {report.precision_std:.3f}"
        rec = f"{report.recall_mean:.3f} +/- {report.recall_std:.3f}"
        lines.append(f"{variant:<10} {report.bleu1:>8.3f} {prec:>18} {rec:>18} "
                     f"{report.n_eligible:>5}")
    return "\n".join(lines)
