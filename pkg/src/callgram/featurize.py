"""N-gram vocabularies and binary presence encoding of API-call traces."""

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from callgram.exceptions import SchemaError, VocabularyError
from callgram.trace import Dataset, Label, Trace

NGram = Tuple[str, ...]


def extract_ngrams(calls: Sequence[str], n: int) -> List[NGram]:
    """Contiguous ``n``-grams of ``calls`` in sequence order, duplicates kept."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    calls = list(calls)
    return [tuple(calls[i : i + n]) for i in range(len(calls) - n + 1)]


def _names(trace) -> List[str]:
    return trace.names if isinstance(trace, Trace) else list(trace)


class NGramVocab:
    """Bijective map from n-gram to a contiguous feature index."""

    def __init__(self, n: int, grams: Sequence[NGram] = ()):
        if n < 2:
            raise ValueError(f"n must be >= 2, got {n}")
        self.n = n
        self.grams: List[NGram] = []
        self.index_of: Dict[NGram, int] = {}
        for g in grams:
            self.add(tuple(g))

    def add(self, gram: NGram) -> int:
        idx = self.index_of.get(gram)
        if idx is None:
            if len(gram) != self.n or not all(isinstance(t, str) and t for t in gram):
                raise VocabularyError(f"invalid {self.n}-gram {gram!r}")
            idx = len(self.grams)
            self.grams.append(gram)
            self.index_of[gram] = idx
        return idx

    def __len__(self):
        return len(self.grams)

    def __contains__(self, gram):
        return tuple(gram) in self.index_of

    def __eq__(self, other):
        return isinstance(other, NGramVocab) and self.n == other.n and self.grams == other.grams

    @property
    def size(self) -> int:
        return len(self.grams)

    @property
    def vocab_id(self) -> str:
        payload = json.dumps([list(g) for g in self.grams], separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def decode(self, indices) -> List[NGram]:
        return [self.grams[int(i)] for i in indices]

    def to_json(self) -> str:
        return json.dumps([list(g) for g in self.grams])

    @classmethod
    def from_json(cls, text: str) -> "NGramVocab":
        grams = json.loads(text)
        if not isinstance(grams, list) or not grams:
            raise VocabularyError("vocabulary file must be a non-empty JSON array of grams")
        return cls(len(grams[0]), [tuple(g) for g in grams])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramVocab":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_vocab(training_traces, n: int) -> NGramVocab:
    """Vocabulary of all distinct n-grams, indexed by first occurrence."""
    vocab = NGramVocab(n)
    for trace in training_traces:
        for gram in extract_ngrams(_names(trace), n):
            vocab.add(gram)
    if not len(vocab):
        raise VocabularyError(f"no training trace has at least {n} calls")
    return vocab


def _indices(trace, vocab: NGramVocab) -> Tuple[np.ndarray, int]:
    present, oov = set(), 0
    for gram in extract_ngrams(_names(trace), vocab.n):
        idx = vocab.index_of.get(gram)
        if idx is None:
            oov += 1
        else:
            present.add(idx)
    return np.array(sorted(present), dtype=np.int64), oov


def encode(trace, vocab: NGramVocab) -> np.ndarray:
    """Dense 0/1 presence vector of length ``len(vocab)``."""
    if not len(vocab):
        raise VocabularyError("cannot encode with an empty vocabulary")
    out = np.zeros(len(vocab), dtype=np.uint8)
    idx, _ = _indices(trace, vocab)
    out[idx] = 1
    return out


@dataclass
class FeatureMatrix:
    """Binary presence matrix with aligned labels and sample ids.

    ``X`` is a CSR matrix of uint8; each row stores the sorted indices of the
    grams present in that sample.
    """

    X: sp.csr_matrix
    labels: np.ndarray
    sample_ids: List[str]
    vocab_id: str
    n: int
    oov_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=np.uint8)
        self.X.sort_indices()
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.oov_counts is None:
            self.oov_counts = np.zeros(len(self.labels), dtype=np.int64)
        if not (self.X.shape[0] == len(self.labels) == len(self.sample_ids)):
            raise SchemaError("rows, labels and sample_ids must have equal length")
        if self.X.nnz and not np.all(self.X.data == 1):
            raise SchemaError("feature matrix entries must be 0 or 1")

    @property
    def shape(self):
        return self.X.shape

    def dense(self) -> np.ndarray:
        return self.X.toarray()

    def rows(self, positions) -> "FeatureMatrix":
        positions = np.asarray(positions, dtype=np.int64)
        return FeatureMatrix(
            self.X[positions],
            self.labels[positions],
            [self.sample_ids[i] for i in positions],
            self.vocab_id,
            self.n,
            self.oov_counts[positions],
        )

    def select_ids(self, sample_ids) -> "FeatureMatrix":
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        return self.rows([pos[s] for s in sample_ids])

    def to_text(self) -> str:
        header = {"vocab_id": self.vocab_id, "n": self.n, "V": self.X.shape[1], "R": self.X.shape[0]}
        buf = io.StringIO()
        buf.write(json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        for r, sid in enumerate(self.sample_ids):
            cols = self.X.indices[self.X.indptr[r] : self.X.indptr[r + 1]]
            writer.writerow([sid, Label(int(self.labels[r])).token, " ".join(map(str, cols))])
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "FeatureMatrix":
        lines = text.splitlines()
        if not lines:
            raise SchemaError("empty feature matrix file")
        header = json.loads(lines[0])
        ids, labels, indptr, indices = [], [], [0], []
        for row in csv.reader(lines[1:]):
            ids.append(row[0])
            labels.append(int(Label.parse(row[1])))
            cols = [int(c) for c in row[2].split()] if row[2] else []
            indices.extend(cols)
            indptr.append(len(indices))
        if len(ids) != header["R"]:
            raise SchemaError(f"header says {header['R']} rows, found {len(ids)}")
        X = sp.csr_matrix(
            (np.ones(len(indices), dtype=np.uint8), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(header["R"], header["V"]),
        )
        return cls(X, np.array(labels, dtype=np.int64), ids, header["vocab_id"], header["n"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _encode_rows(traces, vocab: NGramVocab):
    indptr, indices, oov = [0], [], []
    for trace in traces:
        idx, n_oov = _indices(trace, vocab)
        indices.append(idx)
        indptr.append(indptr[-1] + len(idx))
        oov.append(n_oov)
    flat = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
    X = sp.csr_matrix(
        (np.ones(len(flat), dtype=np.uint8), flat, np.array(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, len(vocab)),
    )
    return X, np.array(oov, dtype=np.int64)


def encode_dataset(dataset: Dataset, vocab: NGramVocab) -> FeatureMatrix:
    """Encode every trace of ``dataset`` in order; OOV gram counts are kept per row."""
    if not len(dataset):
        raise SchemaError("cannot encode an empty dataset")
    if not len(vocab):
        raise VocabularyError("cannot encode with an empty vocabulary")
    X, oov = _encode_rows(dataset.traces, vocab)
    return FeatureMatrix(X, dataset.labels, dataset.sample_ids, vocab.vocab_id, vocab.n, oov)


class NGramVectorizer(TransformerMixin, BaseEstimator):
    """Fit an n-gram vocabulary on traces and transform traces to sparse 0/1 rows.

    Accepts :class:`Trace` objects or plain sequences of API names.

    Attributes
    ----------
    vocabulary_ : NGramVocab
    oov_counts_ : ndarray
        Out-of-vocabulary gram counts per row of the last ``transform`` call.
    """

    def __init__(self, n=2):
        self.n = n

    def fit(self, traces, y=None):
        self.vocabulary_ = build_vocab(traces, self.n)
        self.n_features_out_ = len(self.vocabulary_)
        return self

    def transform(self, traces):
        check_is_fitted(self, "vocabulary_")
        X, self.oov_counts_ = _encode_rows(traces, self.vocabulary_)
        return X

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.array([" ".join(g) for g in self.vocabulary_.grams], dtype=object)
