"""Aspect-sentiment-multiple-opinion triplet extraction."""

from .corpus import (
    AspectAnnotation, AsmoteTriplet, CONFLICT, CorpusError, DatasetSplit, Sentence, Sentiment, Span,
    build_dataset, gold_triplets, load_dataset, load_split, merge_aste, remove_conflict, save_split,
    split_stats,
)
from .estimator import AspectGuidedExtractor
from .evaluation import MetricReport, atsa_accuracy, export_attention, towe_f1, triplet_prf
from .tagging import decode_bio, encode_bio, mark_aspect
from .training import ModelVariant, RunManifest, TrainConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AspectAnnotation", "AsmoteTriplet", "AspectGuidedExtractor", "CONFLICT", "CorpusError",
    "DatasetSplit", "MetricReport", "ModelVariant", "RunManifest", "Sentence", "Sentiment", "Span",
    "TrainConfig", "atsa_accuracy", "build_dataset", "decode_bio", "encode_bio", "export_attention",
    "gold_triplets", "load_dataset", "load_split", "mark_aspect", "merge_aste", "remove_conflict",
    "run_experiment", "save_split", "split_stats", "towe_f1", "triplet_prf",
]
