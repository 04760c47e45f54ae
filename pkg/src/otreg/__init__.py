"""Optimal-transport regularization for aligning speech-like embedding sequences
to unique transcript embeddings: Sinkhorn plans, OT losses, OT-based
compression and a two-stage toy training harness."""

__version__ = "0.1.0"

from .autodiff import Tape, Var, backward, cosine_similarity_matrix, grad_check
from .corpus import CorpusConfig, EmbeddingTable, SplitMix64, make_corpus, make_embedding_table
from .losses import OtLossBreakdown, ot_loss, row_normalize, sparsity_loss, transport_cost
from .ot import SinkhornConfig, TransportPlan, build_cost, entropy, exact_uniform_ot_oracle, sinkhorn
from .sequence import (
    AdapterParams,
    CompressionReport,
    UniqueTargetSet,
    adapter_forward,
    ot_compress,
    pairwise_distance_map,
    stack_frames,
    unique_targets,
)
from .trainer import EvalReport, ExperimentConfig, StepReport, TrainConfig, evaluate, run_experiment

__all__ = [
    "Tape", "Var", "backward", "cosine_similarity_matrix", "grad_check",
    "CorpusConfig", "EmbeddingTable", "SplitMix64", "make_corpus", "make_embedding_table",
    "OtLossBreakdown", "ot_loss", "row_normalize", "sparsity_loss", "transport_cost",
    "SinkhornConfig", "TransportPlan", "build_cost", "entropy", "exact_uniform_ot_oracle", "sinkhorn",
    "AdapterParams", "CompressionReport", "UniqueTargetSet", "adapter_forward", "ot_compress",
    "pairwise_distance_map", "stack_frames", "unique_targets",
    "EvalReport", "ExperimentConfig", "StepReport", "TrainConfig", "evaluate", "run_experiment",
]
