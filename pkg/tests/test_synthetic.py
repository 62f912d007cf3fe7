from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdenoise.synthetic import GeneratorSpec, InfeasibleSpecError, generate


class TestGenerator:
    def test_no_noise(self):
        corpus = generate(GeneratorSpec(n_users=20, noise_rate=0.0))
        assert not any(e.is_noise for e in corpus.events)

    def test_byte_identical(self):
        a = generate(GeneratorSpec(n_users=30, seed=4))
        b = generate(GeneratorSpec(n_users=30, seed=4))
        assert a.to_tsv().encode() == b.to_tsv().encode()
        assert a.labels_tsv() == b.labels_tsv()
        assert a.to_tsv() != generate(GeneratorSpec(n_users=30, seed=5)).to_tsv()

    def test_noise_fraction(self):
        corpus = generate(GeneratorSpec(n_users=500, n_items=1000, noise_rate=0.1, seed=1))
        assert len(corpus.events) >= 10_000
        frac = sum(e.is_noise for e in corpus.events) / len(corpus.events)
        assert abs(frac - 0.1) <= 0.02

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.5))
    def test_label_soundness(self, seed, rate):
        spec = GeneratorSpec(n_users=15, noise_rate=rate, seed=seed)
        corpus = generate(spec)
        for e in corpus.events:
            inside = e.cluster in corpus.user_clusters[e.user]
            assert e.is_noise != inside
            assert e.cluster == spec.cluster_of(int(e.item[1:]))

    def test_lengths_distinct_and_ordered(self):
        spec = GeneratorSpec(n_users=25, seed=2)
        corpus = generate(spec)
        by_user = {}
        for e in corpus.events:
            by_user.setdefault(e.user, []).append(e)
        for evs in by_user.values():
            assert spec.min_len <= len(evs) <= spec.max_len
            assert len({e.item for e in evs}) == len(evs)
            assert [e.timestamp for e in evs] == sorted(e.timestamp for e in evs)

    def test_event_log_roundtrip(self):
        corpus = generate(GeneratorSpec(n_users=5))
        assert len(corpus.event_log().events) == len(corpus.events)


class TestInfeasible:
    @pytest.mark.parametrize("kw", [
        {"n_clusters": 100, "n_items": 50},
        {"interests_per_user": 30, "n_clusters": 20},
        {"min_len": 10, "max_len": 5},
        {"n_items": 100, "n_clusters": 20, "max_len": 30},
        {"noise_rate": 1.5},
        {"n_users": 0},
    ])
    def test_raises(self, kw):
        with pytest.raises(InfeasibleSpecError):
            generate(GeneratorSpec(**kw))
