"""Behavioral malware detection from API-call n-grams with tree learners."""

from callgram.exceptions import (
    ConfigError,
    EmptyTraceError,
    ReportParseError,
    SchemaError,
    CallgramError,
    VocabularyError,
)
from callgram.trace import ApiCall, Dataset, Label, Trace, load_dataset, parse_report
from callgram.featurize import (
    FeatureMatrix,
    NGramVectorizer,
    NGramVocab,
    build_vocab,
    encode,
    encode_dataset,
    extract_ngrams,
)
from callgram.tree import (
    AdaBoostClassifier,
    DecisionTreeClassifier,
    RandomForestClassifier,
    gini_impurity,
)
from callgram.evaluation import Metrics, Split, compute_metrics, evaluate_unseen, stratified_split
from callgram.selection import (
    FeatureSet,
    IncrementalSelector,
    Ranking,
    SelectionTrajectory,
    incremental_select,
    intersect_top,
    rank_features,
    reduced_retrain,
)

__version__ = "0.1.0"

__all__ = [
    "AdaBoostClassifier",
    "ApiCall",
    "ConfigError",
    "Dataset",
    "DecisionTreeClassifier",
    "EmptyTraceError",
    "FeatureMatrix",
    "FeatureSet",
    "IncrementalSelector",
    "Label",
    "Metrics",
    "NGramVectorizer",
    "NGramVocab",
    "RandomForestClassifier",
    "Ranking",
    "ReportParseError",
    "SchemaError",
    "SelectionTrajectory",
    "CallgramError",
    "Split",
    "Trace",
    "VocabularyError",
    "build_vocab",
    "compute_metrics",
    "encode",
    "encode_dataset",
    "evaluate_unseen",
    "extract_ngrams",
    "gini_impurity",
    "incremental_select",
    "intersect_top",
    "load_dataset",
    "parse_report",
    "rank_features",
    "reduced_retrain",
    "stratified_split",
]
