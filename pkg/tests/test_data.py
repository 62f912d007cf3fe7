from __future__ import annotations

import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdenoise.data import (
    PAD,
    EventLog,
    InteractionEvent,
    SplitBundle,
    UserSequence,
    augment_with_noise,
    build_sequences,
    dataset_stats,
    filter_inactive,
    ingest_events,
    leave_one_out_split,
    prepare_bundle,
    split_all,
    truncate_pad,
    user_rng,
)
from seqdenoise.errors import AugmentationError, DataError, EmptyDatasetError


def _log(rows):
    return EventLog.from_events([InteractionEvent(u, i, t) for u, i, t in rows])


class TestIngest:
    def test_single_record(self):
        log = ingest_events(b"u1\ti9\t100\n")
        assert log.events == [InteractionEvent("u1", "i9", 100)]
        assert log.user_index == {"u1": 1} and log.item_index == {"i9": 1}

    def test_blank_line_skipped(self):
        log = ingest_events(b"u1\ti1\t1\n\nu1\ti2\t2\n")
        assert len(log) == 2

    def test_delimiter_violation_reports_line(self):
        with pytest.raises(DataError, match="line 1"):
            ingest_events(b"u1,i9\n")

    def test_error_line_counts_blank_lines(self):
        with pytest.raises(DataError, match="line 3"):
            ingest_events(b"u1\ti1\t1\n\nu2\ti2\n")

    def test_header_autodetected(self):
        log = ingest_events(b"user\titem\ttimestamp\nu1\ti1\t5\n")
        assert log.events == [InteractionEvent("u1", "i1", 5)]

    def test_non_numeric_timestamp_after_header_is_error(self):
        with pytest.raises(DataError, match="line 2"):
            ingest_events(b"u1\ti1\t5\nu1\ti2\tlater\n")

    def test_stream_and_float_stamps(self):
        log = ingest_events(io.BytesIO(b"a\tb\t1.5\n"))
        assert log.events[0].timestamp == 1.5

    def test_empty_input(self):
        with pytest.raises(EmptyDatasetError):
            ingest_events(b"\n\n")


def _brute_force_fixed_point(rows, k):
    """Independent oracle: drop one offending row at a time until stable."""
    rows = list(rows)
    changed = True
    while changed:
        changed = False
        u = Counter(r[0] for r in rows)
        i = Counter(r[1] for r in rows)
        for r in rows:
            if u[r[0]] < k or i[r[1]] < k:
                rows.remove(r)
                changed = True
                break
    return rows


class TestFilter:
    def test_user_below_threshold_removed(self):
        rows = [(f"u{u}", f"i{i}", i) for u in range(5) for i in range(5)]
        rows += [("lazy", f"i{i}", i) for i in range(4)]
        out = filter_inactive(_log(rows), 5)
        assert "lazy" not in out.user_index
        assert len(out) == 25

    def test_unchanged_when_all_active(self):
        rows = [(f"u{u}", f"i{i}", i) for u in range(5) for i in range(5)]
        assert filter_inactive(_log(rows), 5).events == _log(rows).events

    def test_chain_removal_matches_brute_force(self):
        # 10 users; item i9 is rated by only 4 users, and u0 has exactly 5 events including i9,
        # so dropping i9 pushes u0 below the threshold.
        rows = [(f"u{u}", f"i{i}", 10 * u + i) for u in range(10) for i in range(5)]
        rows += [(f"u{u}", "i9", 100 + u) for u in range(4)]
        rows = [r for r in rows if not (r[0] == "u0" and r[1] == "i4")]
        out = filter_inactive(_log(rows), 5)
        expect = _brute_force_fixed_point(rows, 5)
        assert [tuple(e) for e in out.events] == expect
        assert "i9" not in out.item_index and "u0" not in out.user_index

    def test_everything_removed(self):
        with pytest.raises(EmptyDatasetError):
            filter_inactive(_log([("u", "i", 1)]), 2)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=80),
           st.integers(1, 4))
    def test_fixed_point_property(self, pairs, k):
        rows = [(f"u{u}", f"i{i}", n) for n, (u, i) in enumerate(pairs)]
        try:
            out = filter_inactive(_log(rows), k)
        except EmptyDatasetError:
            assert _brute_force_fixed_point(rows, k) == []
            return
        u = Counter(e.user for e in out.events)
        i = Counter(e.item for e in out.events)
        assert min(u.values()) >= k and min(i.values()) >= k
        assert filter_inactive(out, k).events == out.events
        assert [tuple(e) for e in out.events] == _brute_force_fixed_point(rows, k)


class TestSequences:
    def test_sorted_by_time(self):
        seqs = build_sequences(_log([("u", "a", 2), ("u", "b", 1)]))
        # a was seen first so it is item 1, b is item 2
        assert seqs == [UserSequence(1, [2, 1])]

    def test_ties_keep_input_order(self):
        seqs = build_sequences(_log([("u", "a", 1), ("u", "b", 1), ("u", "c", 0)]))
        assert seqs[0].items == [3, 1, 2]


class TestSplit:
    def test_five_items(self):
        e = leave_one_out_split(UserSequence(1, [1, 2, 3, 4, 5]))
        assert e.test == ([1, 2, 3, 4], 5)
        assert e.valid == ([1, 2, 3], 4)
        assert e.train == [([1, 2], 3)]

    def test_all_prefix_pairs(self):
        e = leave_one_out_split(UserSequence(1, [1, 2, 3, 4, 5]), "all")
        assert e.train == [([1], 2), ([1, 2], 3)]

    def test_three_items_minimal(self):
        e = leave_one_out_split(UserSequence(1, [1, 2, 3]))
        assert e.test == ([1, 2], 3)
        assert e.valid == ([1], 2)
        assert e.train == []

    def test_two_items_skipped(self, caplog):
        entries, skipped = split_all([UserSequence(1, [1, 2]), UserSequence(2, [1, 2, 3])])
        assert skipped == 1 and len(entries) == 1
        assert "skipped 1" in caplog.text

    @given(st.lists(st.integers(1, 1000), min_size=3, max_size=40, unique=True))
    def test_targets_not_in_inputs(self, items):
        e = leave_one_out_split(UserSequence(1, items), "all")
        assert e.test[1] not in e.test[0]
        assert e.valid[1] not in e.valid[0]
        for inp, tgt in e.train:
            assert tgt not in inp and inp == items[: len(inp)]


class TestTruncatePad:
    def test_long_sequence_keeps_recent(self):
        items, mask = truncate_pad(list(range(1, 61)), 50)
        assert items == list(range(11, 61)) and mask == [1] * 50

    def test_short_sequence_left_padded(self):
        assert truncate_pad([7, 8, 9], 5) == ([PAD, PAD, 7, 8, 9], [0, 0, 1, 1, 1])

    def test_exact_length_identity(self):
        assert truncate_pad([1, 2, 3], 3) == ([1, 2, 3], [1, 1, 1])


class TestAugment:
    def test_t_zero_identity(self):
        aug = augment_with_noise([1, 2, 3], 4, 0, 10, user_rng(0, 1))
        assert aug.items == [1, 2, 3] and aug.noise_labels == [1, 1, 1]

    def test_window_five(self):
        aug = augment_with_noise([1, 2, 3, 4, 5], 6, 2, 30, user_rng(3, 1), max_len=5)
        assert len(aug.items) == 5
        assert aug.noise_labels.count(0) <= 2
        genuine = [it for it, z in zip(aug.items, aug.noise_labels) if z]
        assert genuine == [1, 2, 3, 4, 5][5 - len(genuine):]

    def test_deterministic(self):
        a = augment_with_noise(list(range(1, 9)), 9, 3, 50, user_rng(11, 2))
        b = augment_with_noise(list(range(1, 9)), 9, 3, 50, user_rng(11, 2))
        assert a == b

    def test_too_few_candidates(self):
        with pytest.raises(AugmentationError):
            augment_with_noise([1, 2, 3], 4, 2, 6, user_rng(0))

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(1, 60), min_size=1, max_size=20, unique=True),
           st.integers(0, 5), st.integers(0, 2**31 - 1), st.integers(1, 25))
    def test_label_soundness(self, items, t, seed, max_len):
        target = 61
        aug = augment_with_noise(items, target, t, 80, user_rng(seed), max_len)
        assert len(aug.items) == min(len(items), max_len)
        injected = set(aug.injected)
        for it, z in zip(aug.items, aug.noise_labels):
            if z == 0:
                assert it in injected and it not in items and it not in (target, PAD)
            else:
                assert it in items
        genuine = [it for it, z in zip(aug.items, aug.noise_labels) if z]
        # relative order of genuine items is a contiguous suffix of the source
        assert genuine == items[len(items) - len(genuine):]


class TestStats:
    def test_single_event_real_counts(self):
        s = dataset_stats([UserSequence(1, [1])], count_reserved=False)
        assert s.sparsity == 0.0

    def test_two_disjoint_users(self):
        s = dataset_stats([UserSequence(1, [1, 2]), UserSequence(2, [3, 4])], count_reserved=False)
        assert s.sparsity == pytest.approx(0.5, abs=1e-15)
        assert (s.user_count, s.item_count, s.sequence_count, s.avg_length) == (2, 4, 4, 2.0)

    def test_reserved_index_convention(self):
        s = dataset_stats([UserSequence(1, [1, 2]), UserSequence(2, [3, 4])])
        assert (s.user_count, s.item_count) == (3, 5)
        assert s.avg_length == 2.0
        assert s.sparsity == pytest.approx(1 - 4 / 15)


def _toy_log(seed=0, users=12, items=15):
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(users):
        for k, i in enumerate(rng.choice(items, size=rng.integers(6, 10), replace=False)):
            rows.append((f"u{u}", f"i{i}", 10 * k))
    return _log(rows)


class TestBundle:
    def test_roundtrip(self):
        bundle, _ = prepare_bundle(_toy_log(), min_count=1, max_len=6, t=2, seed=5)
        again = SplitBundle.from_json(bundle.to_json())
        assert again.to_json() == bundle.to_json()

    def test_deterministic(self):
        a, _ = prepare_bundle(_toy_log(), min_count=1, max_len=6, t=2, seed=5)
        b, _ = prepare_bundle(_toy_log(), min_count=1, max_len=6, t=2, seed=5)
        c, _ = prepare_bundle(_toy_log(), min_count=1, max_len=6, t=2, seed=6)
        assert a.to_json() == b.to_json()
        assert a.to_json() != c.to_json()

    def test_augmentations_align_with_train(self):
        bundle, _ = prepare_bundle(_toy_log(), min_count=1, max_len=6, t=2, seed=5, train_pairs="all")
        assert len(bundle.augmentations) == len(bundle.train)
        for (u, inp, tgt), (au, items, labels, atgt, orig) in zip(bundle.train, bundle.augmentations):
            assert (u, tgt, orig) == (au, atgt, len(inp))
            assert len(items) == len(labels) == min(len(inp), 6)

    def test_rejects_foreign_json(self):
        with pytest.raises(DataError):
            SplitBundle.from_json('{"format": "other", "version": 1}')
