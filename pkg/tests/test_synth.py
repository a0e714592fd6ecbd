import itertools

import pytest
from hypothesis import given, settings, strategies as st

from callgram.exceptions import ConfigError
from callgram.synth import (DEFAULT_PATTERNS, GenConfig, MutationConfig, generate_base, generate_dataset,
                            make_corpus, make_unseen_set, mutate_trace, mutation_lineage)
from callgram.trace import Label

SMALL = dict(n_benign=20, n_malicious=20, trace_length_range=(30, 60))


def occurs(seq, pattern):
    """Brute-force contiguous substring search."""
    k = len(pattern)
    return any(tuple(seq[i : i + k]) == tuple(pattern) for i in range(len(seq) - k + 1))


def test_corpus_scale_counts():
    ds = generate_dataset(GenConfig(seed=1))
    assert ds.class_counts() == {"benign": 300, "malicious": 310}


def test_no_malicious():
    ds = generate_dataset(GenConfig(n_malicious=0, n_benign=5))
    assert ds.class_counts() == {"benign": 5, "malicious": 0}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_patterns_present_and_tracked(seed):
    cfg = GenConfig(seed=seed, **SMALL)
    for t in generate_dataset(cfg):
        names = t.names
        lo, hi = cfg.trace_length_range
        if t.label is Label.BENIGN:
            assert lo <= len(names) <= hi
            assert not any(occurs(names, p) for p in cfg.malicious_patterns)
            continue
        assert any(occurs(names, p) for p in cfg.malicious_patterns)
        for (s, e), j in zip(t.meta["pattern_spans"], t.meta["patterns"]):
            assert tuple(names[s:e]) == cfg.malicious_patterns[j]
        # one pattern of each configured length
        assert {len(cfg.malicious_patterns[j]) for j in t.meta["patterns"]} == {2, 3}


def test_generation_deterministic():
    a = generate_dataset(GenConfig(seed=4, **SMALL))
    b = generate_dataset(GenConfig(seed=4, **SMALL))
    c = generate_dataset(GenConfig(seed=5, **SMALL))
    assert [t.to_dict() for t in a] == [t.to_dict() for t in b]
    assert [t.names for t in a] != [t.names for t in c]


def test_config_validation():
    with pytest.raises(ConfigError):
        GenConfig(trace_length_range=(2, 10))  # trigram patterns do not fit
    with pytest.raises(ConfigError):
        GenConfig(benign_api_pool=[])
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"n_benign": 3, "colour": "red"})
    with pytest.raises(ConfigError):
        MutationConfig(noop_insertion_rate=1.5)
    assert GenConfig.from_dict(GenConfig(seed=3).to_dict()) == GenConfig(seed=3)


def _base(i=0, seed=0):
    return generate_base(GenConfig(seed=seed, **SMALL), "malicious", i, prefix="rk")


def test_rate_zero_is_identity():
    t = _base()
    m = mutate_trace(t, MutationConfig(noop_insertion_rate=0.0), 1)
    assert m.names == t.names
    assert m.sample_id == "rk-0000-g01"


@given(st.integers(0, 50), st.floats(0.01, 0.9), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_mutation_preserves_patterns(index, rate, seed):
    cfg = MutationConfig(noop_insertion_rate=rate, seed=seed)
    base = _base(index)
    prev = base
    for child in mutation_lineage(base, cfg):
        assert len(child.names) > len(prev.names)
        # removing the inserted no-ops recovers the parent: insertion only
        it = iter(child.names)
        assert all(any(x == y for y in it) for x in prev.names)
        for (s, e), j in zip(child.meta["pattern_spans"], child.meta["patterns"]):
            assert tuple(child.names[s:e]) == DEFAULT_PATTERNS[j]
        prev = child


def test_lineage_pairwise_distinct():
    lineage = mutation_lineage(_base(3), MutationConfig(noop_insertion_rate=0.1, seed=2))
    assert len(lineage) == 10
    for a, b in itertools.combinations(lineage, 2):
        assert a.names != b.names
    assert [t.meta["generation"] for t in lineage] == list(range(1, 11))


def test_generation_range_checked():
    with pytest.raises(ConfigError):
        mutate_trace(_base(), MutationConfig(), 11)


def test_unseen_set():
    bases = [_base(i) for i in range(9)]
    unseen = make_unseen_set(bases, MutationConfig(), 90)
    assert len(unseen) == 90
    assert all(t.label is Label.MALICIOUS for t in unseen)
    assert len(make_unseen_set(bases, MutationConfig(), 0)) == 0
    with pytest.raises(ConfigError):
        make_unseen_set(bases[:8], MutationConfig(), 90)


def test_corpus_keeps_unseen_bases_out_of_training():
    corpus = make_corpus(GenConfig(seed=2, n_benign=30, n_malicious=40, trace_length_range=(30, 60)),
                         MutationConfig(seed=2), n_unseen=20)
    train_bases = {t.meta["base_id"] for t in corpus.dataset if t.label is Label.MALICIOUS}
    unseen_bases = {t.meta["base_id"] for t in corpus.unseen}
    assert train_bases == set(corpus.train_bases) and unseen_bases == set(corpus.unseen_bases)
    assert not train_bases & unseen_bases
    assert corpus.dataset.class_counts() == {"benign": 30, "malicious": 40}
    assert len(corpus.unseen) == 20
