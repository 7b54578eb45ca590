"""Python bindings for the cmt retrieval toolkit."""

from ._core import (
    ConfigError,
    DependencyError,
    Document,
    Error,
    InvalidInput,
    InvertedIndex,
    NumericError,
    ParseError,
    SubwordVocab,
    analyze,
    make_fixture,
    mask_count,
    ndcg_at_k,
    precision_at_k,
    preprocess_query,
    reciprocal_rank_fusion,
    run_pipeline,
    subword_ratio,
    tokenize,
    train_subword_vocab,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "Document",
    "Error",
    "InvalidInput",
    "InvertedIndex",
    "NumericError",
    "ParseError",
    "SubwordVocab",
    "analyze",
    "make_fixture",
    "mask_count",
    "ndcg_at_k",
    "precision_at_k",
    "preprocess_query",
    "reciprocal_rank_fusion",
    "run_pipeline",
    "subword_ratio",
    "tokenize",
    "train_subword_vocab",
]
