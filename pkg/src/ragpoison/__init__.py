"""Knowledge-base poisoning testbed for retrieval-augmented generation.

Library surface: a corpus store with snapshot semantics, two reference
encoders (feature hashing, and a linear token table with exact swap
gradients), exact top-k retrieval, a deterministic mock reader plus an
HTTP LLM client, poison-crafting attacks with baselines and variants,
defenses (paraphrasing, perplexity detection, duplicate filtering,
knowledge expansion), and an evaluation pipeline with report emission.
"""

from .attack import (
    AttackConfig,
    AttackKind,
    CompositionOrder,
    FlipPositions,
    PoisonText,
    TargetCase,
    WhiteboxConfig,
    craft_blackbox,
    craft_corpus_poisoning,
    craft_effectiveness_text,
    craft_prompt_injection,
    craft_whitebox,
    optimize_retrieval_text,
    slice_variant,
)
from .corpus import (
    KnowledgeDatabase,
    TextRecord,
    dedup_filter,
    ingest_corpus,
    inject_poisons,
    load_snapshot,
    save_snapshot,
)
from .defense import NgramLM, RocCurve, paraphrase_question, perplexity, roc_auc, train_lm
from .embedding import (
    Encoder,
    EncoderKind,
    embed,
    feature_hash_encoder,
    linear_table_encoder,
    load_precomputed,
    swap_gradient,
    tokenize,
)
from .evaluation import (
    CaseTranscript,
    DefenseStack,
    EvalReport,
    retrieval_metrics,
    run_experiment,
    run_sweep,
    substring_match,
)
from .generation import DEFAULT_SYSTEM_PROMPT, GeneratorConfig, answer, render_prompt
from .retrieval import RetrievalResult, SimilarityMetric, retrieve_top_k

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackKind",
    "CaseTranscript",
    "CompositionOrder",
    "DEFAULT_SYSTEM_PROMPT",
    "DefenseStack",
    "Encoder",
    "EncoderKind",
    "EvalReport",
    "FlipPositions",
    "GeneratorConfig",
    "KnowledgeDatabase",
    "NgramLM",
    "PoisonText",
    "RetrievalResult",
    "RocCurve",
    "SimilarityMetric",
    "TargetCase",
    "TextRecord",
    "WhiteboxConfig",
    "answer",
    "craft_blackbox",
    "craft_corpus_poisoning",
    "craft_effectiveness_text",
    "craft_prompt_injection",
    "craft_whitebox",
    "dedup_filter",
    "embed",
    "feature_hash_encoder",
    "ingest_corpus",
    "inject_poisons",
    "linear_table_encoder",
    "load_precomputed",
    "load_snapshot",
    "optimize_retrieval_text",
    "paraphrase_question",
    "perplexity",
    "render_prompt",
    "retrieval_metrics",
    "retrieve_top_k",
    "roc_auc",
    "run_experiment",
    "run_sweep",
    "save_snapshot",
    "slice_variant",
    "substring_match",
    "swap_gradient",
    "tokenize",
    "train_lm",
]
