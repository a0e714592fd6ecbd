"""Synthetic labeled API traces and trace-level metamorphic mutation.

Background activity comes from a sparse first-order Markov chain over a
benign API pool: each API has a few preferred successors, with occasional
uniform jumps and immediate repeats. By default every consecutive pair inside
a pattern of three or more calls is also a benign transition, so only the
complete pattern is indicative. The chain never completes a configured
malicious pattern, so benign traces are pattern-free. A malicious trace is
background with whole patterns spliced in at random positions. Pattern spans
are recorded in ``trace.meta["pattern_spans"]``.

Mutation inserts calls from a no-op pool into the gaps between calls, never
inside a pattern span. Generation ``g`` mutates generation ``g - 1``.
"""

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from callgram.exceptions import ConfigError
from callgram.trace import Dataset, Label, Trace

# Rootkit-indicative call sequences planted into malicious traces by default.
DEFAULT_PATTERNS: List[Tuple[str, ...]] = [
    ("GetTempPathW", "DeviceIoControl"),
    ("GetTempPathW", "NtCreateFile"),
    ("GetSystemTimeAsFileTime", "NtQueryKey"),
    ("GetSystemDirectoryW", "RegOpenKeyExW"),
    ("HttpQueryInfoA", "RegOpenKeyExW"),
    ("IsDebuggerPresent", "DeviceIoControl", "NtQuerySystemInformation"),
    ("IsDebuggerPresent", "CreateDirectoryW", "DeviceIoControl"),
    ("IsDebuggerPresent", "CreateThread", "NtCreateFile"),
    ("LdrGetProcedureAddress", "NtAllocateVirtualMemory", "NtProtectVirtualMemory"),
    ("IsDebuggerPresent", "GetSystemDirectoryW", "NtAllocateVirtualMemory"),
]

DEFAULT_NOOPS = [
    "GetTickCount",
    "GetCurrentProcessId",
    "GetCurrentThreadId",
    "QueryPerformanceCounter",
    "GetLastError",
    "SetLastError",
    "NtDelayExecution",
    "GetProcessHeap",
]


def default_benign_pool() -> List[str]:
    text = resources.files("callgram").joinpath("data/benign_apis.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


@dataclass
class GenConfig:
    n_benign: int = 300
    n_malicious: int = 310
    trace_length_range: Tuple[int, int] = (80, 200)
    benign_api_pool: List[str] = field(default_factory=default_benign_pool)
    malicious_patterns: List[Tuple[str, ...]] = field(default_factory=lambda: list(DEFAULT_PATTERNS))
    pattern_insertions_per_trace: Tuple[int, int] = (2, 4)
    # every malicious trace gets at least one pattern of each distinct pattern length
    cover_pattern_lengths: bool = True
    # consecutive pairs inside longer patterns are also ordinary benign transitions
    benign_pattern_fragments: bool = True
    branching: int = 4
    jump_rate: float = 0.05
    repeat_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.trace_length_range = tuple(self.trace_length_range)
        self.pattern_insertions_per_trace = tuple(self.pattern_insertions_per_trace)
        self.malicious_patterns = [tuple(p) for p in self.malicious_patterns]
        self.validate()

    def validate(self):
        lo, hi = self.trace_length_range
        if not self.benign_api_pool:
            raise ConfigError("benign_api_pool is empty")
        if not self.malicious_patterns and self.n_malicious:
            raise ConfigError("malicious_patterns is empty")
        if lo > hi or lo < 1:
            raise ConfigError(f"bad trace_length_range {self.trace_length_range}")
        if any(len(p) < 2 for p in self.malicious_patterns):
            raise ConfigError("patterns must have at least 2 calls")
        ilo, ihi = self.pattern_insertions_per_trace
        if ilo < 1 or ilo > ihi:
            raise ConfigError(f"bad pattern_insertions_per_trace {self.pattern_insertions_per_trace}")
        longest = max((len(p) for p in self.malicious_patterns), default=0)
        if longest > lo:
            raise ConfigError(f"pattern of length {longest} exceeds minimum trace length {lo}")
        if self.n_benign < 0 or self.n_malicious < 0:
            raise ConfigError("sample counts must be non-negative")
        if self.branching < 1 or not 0 <= self.jump_rate <= 1 or not 0 <= self.repeat_rate < 1:
            raise ConfigError("bad Markov chain parameters")

    def to_dict(self):
        d = asdict(self)
        d["malicious_patterns"] = [list(p) for p in self.malicious_patterns]
        d["trace_length_range"] = list(self.trace_length_range)
        d["pattern_insertions_per_trace"] = list(self.pattern_insertions_per_trace)
        return d

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class MutationConfig:
    generations: int = 10
    noop_insertion_rate: float = 0.05
    benign_noop_pool: List[str] = field(default_factory=lambda: list(DEFAULT_NOOPS))
    seed: int = 0

    def __post_init__(self):
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if not 0 <= self.noop_insertion_rate < 1:
            raise ConfigError("noop_insertion_rate must be in [0, 1)")
        if not self.benign_noop_pool:
            raise ConfigError("benign_noop_pool is empty")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown mutation config keys: {sorted(unknown)}")
        return cls(**doc)


class _Background:
    """Pattern-avoiding Markov chain over the benign pool."""

    def __init__(self, config: GenConfig):
        self.pool = list(config.benign_api_pool)
        self.config = config
        rng = np.random.default_rng([config.seed, 0x5EED])
        size = len(self.pool)
        k = min(config.branching, size)
        self.succ = [rng.choice(size, size=k, replace=False) for _ in range(size)]
        self.succ_p = [rng.dirichlet(np.ones(k)) for _ in range(size)]
        self.index = {name: i for i, name in enumerate(self.pool)}
        if config.benign_pattern_fragments:
            for p in config.malicious_patterns:
                if len(p) < 3:
                    continue
                for a, b in zip(p, p[1:]):
                    if a in self.index and b in self.index and self.index[b] not in self.succ[self.index[a]]:
                        i = self.index[a]
                        self.succ[i] = np.append(self.succ[i], self.index[b])
                        self.succ_p[i] = np.append(self.succ_p[i] * k / (k + 1), 1.0 / (k + 1))
        # prefix -> final calls that would complete a pattern
        self.forbidden = {}
        for p in config.malicious_patterns:
            self.forbidden.setdefault(tuple(p[:-1]), set()).add(p[-1])

    def _completes(self, seq, name):
        for prefix, finals in self.forbidden.items():
            if name in finals and len(seq) >= len(prefix) and tuple(seq[len(seq) - len(prefix):]) == prefix:
                return True
        return False

    def _draw(self, rng, prev):
        c = self.config
        u = rng.random()
        if prev is None or u < c.jump_rate:
            return self.pool[rng.integers(len(self.pool))]
        if u < c.jump_rate + c.repeat_rate:
            return prev
        i = self.index[prev]
        return self.pool[self.succ[i][rng.choice(len(self.succ[i]), p=self.succ_p[i])]]

    def sequence(self, rng, length) -> List[str]:
        seq = []
        while len(seq) < length:
            prev = seq[-1] if seq else None
            for _ in range(20):
                name = self._draw(rng, prev)
                if not self._completes(seq, name):
                    break
            else:
                name = next(n for n in self.pool if not self._completes(seq, n))
            seq.append(name)
        return seq


def _malicious_names(bg: _Background, config: GenConfig, rng) -> Tuple[List[str], List[List[int]], List[int]]:
    patterns = config.malicious_patterns
    ilo, ihi = config.pattern_insertions_per_trace
    count = int(rng.integers(ilo, ihi + 1))
    chosen = []
    if config.cover_pattern_lengths:
        for length in sorted({len(p) for p in patterns}):
            group = [j for j, p in enumerate(patterns) if len(p) == length]
            chosen.append(int(group[rng.integers(len(group))]))
    while len(chosen) < count:
        chosen.append(int(rng.integers(len(patterns))))
    rng.shuffle(chosen)

    lo, hi = config.trace_length_range
    total = int(rng.integers(lo, hi + 1))
    planted = sum(len(patterns[j]) for j in chosen)
    background = bg.sequence(rng, max(total - planted, 0))
    gaps = np.sort(rng.integers(0, len(background) + 1, size=len(chosen)))

    names, spans, pos = [], [], 0
    for gap, j in zip(gaps, chosen):
        names.extend(background[pos:gap])
        pos = gap
        spans.append([len(names), len(names) + len(patterns[j])])
        names.extend(patterns[j])
    names.extend(background[pos:])
    return names, spans, chosen


def generate_base(config: GenConfig, label, index: int, prefix: Optional[str] = None,
                  background: Optional[_Background] = None) -> Trace:
    """The ``index``-th synthetic trace of a class; RNG seeded by (seed, class, index)."""
    label = Label.parse(label)
    bg = background or _Background(config)
    rng = np.random.default_rng([config.seed, int(label), index])
    sample_id = f"{prefix or label.token}-{index:04d}"
    if label is Label.BENIGN:
        lo, hi = config.trace_length_range
        names = bg.sequence(rng, int(rng.integers(lo, hi + 1)))
        return Trace.from_names(sample_id, label, names, meta={"base_id": sample_id, "generation": 0})
    names, spans, chosen = _malicious_names(bg, config, rng)
    meta = {"base_id": sample_id, "generation": 0, "pattern_spans": spans, "patterns": chosen}
    return Trace.from_names(sample_id, label, names, meta=meta)


def generate_dataset(config: GenConfig) -> Dataset:
    """``n_benign`` benign then ``n_malicious`` malicious traces, deterministic under ``seed``."""
    config.validate()
    bg = _Background(config)
    traces = [generate_base(config, Label.BENIGN, i, background=bg) for i in range(config.n_benign)]
    traces += [generate_base(config, Label.MALICIOUS, i, background=bg) for i in range(config.n_malicious)]
    return Dataset(traces, {"generator": "callgram.synth", "seed": config.seed})


def mutate_trace(trace: Trace, config: MutationConfig, generation: int) -> Trace:
    """One mutation step producing generation ``generation`` from ``trace``.

    Every gap between calls that is not strictly inside a pattern span
    receives a no-op call with probability ``noop_insertion_rate``. When the
    rate is positive but no gap was drawn, one insertable gap is forced so the
    output always differs from the input.
    """
    if not 1 <= generation <= config.generations:
        raise ConfigError(f"generation must be in [1, {config.generations}], got {generation}")
    names = trace.names
    spans = [list(s) for s in trace.meta.get("pattern_spans", [])]
    base_id = trace.meta.get("base_id", trace.sample_id)
    rng = np.random.default_rng([config.seed, generation, zlib.crc32(base_id.encode("utf-8"))])

    inside = np.zeros(len(names) + 1, dtype=bool)
    for start, end in spans:
        inside[start + 1 : end] = True
    gaps = np.flatnonzero(~inside)
    rate = config.noop_insertion_rate
    chosen = gaps[rng.random(len(gaps)) < rate] if rate > 0 else gaps[:0]
    if rate > 0 and chosen.size == 0 and gaps.size:
        chosen = gaps[[rng.integers(gaps.size)]]
    noops = rng.choice(len(config.benign_noop_pool), size=chosen.size)

    out, last = [], 0
    for gap, j in zip(chosen, noops):
        out.extend(names[last:gap])
        out.append(config.benign_noop_pool[j])
        last = gap
    out.extend(names[last:])
    new_spans = [[s + int(np.sum(chosen <= s)), e + int(np.sum(chosen <= s))] for s, e in spans]

    meta = dict(trace.meta)
    meta.update({"base_id": base_id, "generation": generation, "pattern_spans": new_spans,
                 "insertions": int(chosen.size)})
    return Trace.from_names(f"{base_id}-g{generation:02d}", trace.label, out, meta=meta)


def mutation_lineage(trace: Trace, config: MutationConfig) -> List[Trace]:
    """Generations 1..G of ``trace``, each derived from the previous one."""
    out, cur = [], trace
    for g in range(1, config.generations + 1):
        cur = mutate_trace(cur, config, g)
        out.append(cur)
    return out


def make_unseen_set(base_malicious: Sequence[Trace], config: MutationConfig, count: int = 90) -> Dataset:
    """``count`` mutants taken lineage by lineage from ``base_malicious``."""
    if count == 0:
        return Dataset([], {"kind": "unseen"})
    needed = math.ceil(count / config.generations)
    if len(base_malicious) < needed:
        raise ConfigError(f"{count} unseen samples need {needed} base traces, got {len(base_malicious)}")
    traces = []
    for base in base_malicious[:needed]:
        traces.extend(mutation_lineage(base, config))
    traces = traces[:count]
    for t in traces:
        t.label = Label.MALICIOUS
    return Dataset(traces, {"kind": "unseen", "bases": [b.sample_id for b in base_malicious[:needed]]})


@dataclass
class Corpus:
    """A training corpus plus an unseen set built from held-out bases."""

    dataset: Dataset
    unseen: Dataset
    train_bases: List[str]
    unseen_bases: List[str]


def make_corpus(config: GenConfig, mutation: MutationConfig, n_unseen: int = 90) -> Corpus:
    """Benign traces plus mutated malicious lineages, mirroring the mutate-then-split design.

    ``config.n_malicious`` mutants are drawn from ``ceil(n_malicious /
    generations)`` base traces; ``n_unseen`` further mutants come from
    distinct bases that never reach the training corpus.
    """
    config.validate()
    g = mutation.generations
    n_train_bases = math.ceil(config.n_malicious / g)
    n_unseen_bases = math.ceil(n_unseen / g) if n_unseen else 0
    bg = _Background(config)
    bases = [generate_base(config, Label.MALICIOUS, i, prefix="rk", background=bg)
             for i in range(n_train_bases + n_unseen_bases)]
    benign = [generate_base(config, Label.BENIGN, i, background=bg) for i in range(config.n_benign)]
    malicious = []
    for b in bases[:n_train_bases]:
        malicious.extend(mutation_lineage(b, mutation))
    malicious = malicious[: config.n_malicious]
    unseen = make_unseen_set(bases[n_train_bases:], mutation, n_unseen)
    provenance = {"generator": "callgram.synth", "seed": config.seed, "mutation_seed": mutation.seed}
    return Corpus(
        Dataset(benign + malicious, provenance),
        unseen,
        [b.sample_id for b in bases[:n_train_bases]],
        [b.sample_id for b in bases[n_train_bases:]],
    )


def load_config(path) -> Tuple[GenConfig, MutationConfig]:
    """Read a JSON file with optional ``generator`` and ``mutation`` sections."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return GenConfig.from_dict(doc.get("generator", {})), MutationConfig.from_dict(doc.get("mutation", {}))
