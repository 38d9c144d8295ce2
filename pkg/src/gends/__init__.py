"""Knowledge-grounded dialogue generation with a gated mixture decoder.

The package trains a small recurrent dialogue model that mixes a common-word
generator with a dynamic distribution over knowledge-base candidates, so
replies can name entities, including entities added to the KB after training.
Everything runs on a desk-scale synthetic corpus in double-precision numpy.
"""

from .corpus import (Dataset, DialoguePair, Vocabulary, build_vocab,
                     load_dialogues, save_dialogues, split, substitute_types,
                     tokenize)
from .errors import (AlignmentError, CheckpointError, ConfigError, GendsError,
                     ParseError, TrainingDivergedError, ValidationError)
from .evaluation import (EvalReport, bleu1, bleu1_corpus, entity_metrics,
                         run_ablation_suite, run_eval)
from .inference import (GenerationResult, generate, generate_with_new_kb,
                        validate_kb_compatible)
from .kb import (Candidate, CandidateSet, Entity, EntitySpan, FactTriple,
                 KnowledgeBase, detect_entities, load_kb, retrieve_facts,
                 write_kb_jsonl)
from .model import (VARIANTS, ModelConfig, ModelParams, init_params,
                    variant_behavior)
from .synthetic import make_synthetic_corpus, make_unseen_extension
from .training import (TrainingConfig, TrainResult, align_gold,
                       load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "Candidate", "CandidateSet", "CheckpointError",
    "ConfigError", "Dataset", "DialoguePair", "Entity", "EntitySpan",
    "EvalReport", "FactTriple", "GendsError", "GenerationResult",
    "KnowledgeBase", "ModelConfig", "ModelParams", "ParseError",
    "TrainingConfig", "TrainingDivergedError", "TrainResult",
    "ValidationError", "VARIANTS", "Vocabulary", "align_gold", "bleu1",
    "bleu1_corpus", "build_vocab", "detect_entities", "entity_metrics",
    "generate", "generate_with_new_kb", "init_params", "load_checkpoint",
    "load_dialogues", "load_kb", "make_synthetic_corpus",
    "make_unseen_extension", "retrieve_facts", "run_ablation_suite",
    "run_eval", "save_checkpoint", "save_dialogues", "split",
    "substitute_types", "tokenize", "train", "validate_kb_compatible",
    "variant_behavior", "write_kb_jsonl",
]
