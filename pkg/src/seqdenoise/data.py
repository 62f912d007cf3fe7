"""Interaction-log ingestion, filtering, leave-one-out splitting and noise injection."""

from __future__ import annotations

import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import AugmentationError, DataError, EmptyDatasetError

log = logging.getLogger(__name__)

PAD = 0
BUNDLE_FORMAT = "seqdenoise-split-bundle"
BUNDLE_VERSION = 1


class InteractionEvent(NamedTuple):
    user: str
    item: str
    timestamp: int | float


@dataclass
class EventLog:
    events: list[InteractionEvent]
    # raw id -> internal index, in order of first occurrence, starting at 1 (0 = pad)
    user_index: dict[str, int] = field(default_factory=dict)
    item_index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_events(cls, events: list[InteractionEvent]) -> "EventLog":
        users: dict[str, int] = {}
        items: dict[str, int] = {}
        for ev in events:
            users.setdefault(ev.user, len(users) + 1)
            items.setdefault(ev.item, len(items) + 1)
        return cls(events, users, items)

    def __len__(self):
        return len(self.events)


@dataclass
class UserSequence:
    user: int
    items: list[int]


@dataclass
class AugmentedSequence:
    items: list[int]
    noise_labels: list[int]  # 1 = genuine, 0 = injected
    target_item: int
    original_length: int
    injected: list[int] = field(default_factory=list)


@dataclass
class SplitEntry:
    user: int
    train: list[tuple[list[int], int]]
    valid: tuple[list[int], int]
    test: tuple[list[int], int]


@dataclass
class DatasetStats:
    sequence_count: int
    user_count: int
    item_count: int
    avg_length: float
    sparsity: float

    def to_dict(self):
        return {
            "sequence_count": self.sequence_count,
            "user_count": self.user_count,
            "item_count": self.item_count,
            "avg_length": self.avg_length,
            "sparsity": self.sparsity,
        }


# ---------------------------------------------------------------------------
# ingestion


def _parse_stamp(raw: str):
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def ingest_events(source: IO[bytes] | bytes | Iterable[bytes]) -> EventLog:
    """Parse ``user<TAB>item<TAB>timestamp`` lines.

    Blank lines are skipped.  The first non-blank line is treated as a header
    when its timestamp column is not numeric.  Extra trailing columns are not
    allowed: a line must have exactly three fields.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    events = []
    seen_content = False
    for lineno, raw in enumerate(source, 1):
        try:
            line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        except UnicodeDecodeError as exc:
            raise DataError("not valid UTF-8", line=lineno) from exc
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        first = not seen_content
        seen_content = True
        if len(parts) != 3:
            raise DataError(f"expected 3 tab-separated fields, got {len(parts)}", line=lineno)
        user, item, stamp = (p.strip() for p in parts)
        try:
            ts = _parse_stamp(stamp)
        except ValueError:
            if first:
                continue  # header
            raise DataError(f"bad timestamp {stamp!r}", line=lineno) from None
        if not user or not item:
            raise DataError("empty user or item id", line=lineno)
        events.append(InteractionEvent(user, item, ts))
    if not events:
        raise EmptyDatasetError("no interaction events in input")
    return EventLog.from_events(events)


def filter_inactive(events: EventLog | list[InteractionEvent], min_count: int = 5) -> EventLog:
    """Drop users and items with fewer than ``min_count`` events until nothing changes."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    evs = list(events.events if isinstance(events, EventLog) else events)
    while True:
        users = Counter(e.user for e in evs)
        items = Counter(e.item for e in evs)
        kept = [e for e in evs if users[e.user] >= min_count and items[e.item] >= min_count]
        if len(kept) == len(evs):
            break
        evs = kept
    if not evs:
        raise EmptyDatasetError(f"filtering with min_count={min_count} removed every event")
    return EventLog.from_events(evs)


def build_sequences(log_: EventLog) -> list[UserSequence]:
    """Chronological per-user item sequences; equal timestamps keep file order."""
    per_user: dict[int, list[tuple]] = {}
    for pos, ev in enumerate(log_.events):
        uid = log_.user_index[ev.user]
        per_user.setdefault(uid, []).append((ev.timestamp, pos, log_.item_index[ev.item]))
    seqs = []
    for uid in sorted(per_user):
        rows = sorted(per_user[uid], key=lambda r: (r[0], r[1]))
        seqs.append(UserSequence(uid, [r[2] for r in rows]))
    return seqs


# ---------------------------------------------------------------------------
# splitting


def leave_one_out_split(seq: UserSequence, train_pairs: str = "last") -> SplitEntry | None:
    """Last item to test, second-to-last to valid, the earlier prefix to train.

    Returns ``None`` for sequences shorter than 3.  The training region is
    ``items[:n-2]``; ``train_pairs="last"`` emits its final next-item pair only,
    ``"all"`` emits every prefix pair with a non-empty input.
    """
    items = seq.items
    n = len(items)
    if n < 3:
        return None
    if train_pairs == "last":
        train = [(items[: n - 3], items[n - 3])] if n > 3 else []
    elif train_pairs == "all":
        train = [(items[:k], items[k]) for k in range(1, n - 2)]
    else:
        raise ValueError(f"unknown train_pairs scheme {train_pairs!r}")
    return SplitEntry(
        user=seq.user,
        train=train,
        valid=(items[: n - 2], items[n - 2]),
        test=(items[: n - 1], items[n - 1]),
    )


def split_all(seqs: Sequence[UserSequence], train_pairs: str = "last"):
    """Split every sequence; returns (entries, skipped_count)."""
    entries, skipped = [], 0
    for s in seqs:
        e = leave_one_out_split(s, train_pairs)
        if e is None:
            skipped += 1
        else:
            entries.append(e)
    if skipped:
        log.warning("skipped %d user(s) with fewer than 3 interactions", skipped)
    return entries, skipped


def truncate_pad(items: Sequence[int], max_len: int) -> tuple[list[int], list[int]]:
    """Keep the most recent ``max_len`` items, left-pad with ``PAD``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    kept = list(items[-max_len:]) if items else []
    pad = max_len - len(kept)
    return [PAD] * pad + kept, [0] * pad + [1] * len(kept)


# ---------------------------------------------------------------------------
# weak supervision


def user_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one (seed, stream...) key, e.g. (seed, user, epoch)."""
    return np.random.default_rng([seed, *stream])


def augment_with_noise(
    items: Sequence[int],
    target: int,
    t: int,
    n_items: int,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> AugmentedSequence:
    """Insert ``t`` distinct foreign items at random positions and label them 0.

    ``n_items`` is the vocabulary size including the pad index, so real items
    are ``1..n_items-1``.  Candidates exclude the user's own items and the
    target.  The result is cut back (oldest first) to the original length,
    itself capped at ``max_len``.
    """
    if t < 0:
        raise AugmentationError("t must be non-negative")
    items = list(items)
    window = len(items) if max_len is None else min(len(items), max_len)
    if t == 0:
        kept = items[len(items) - window:]
        return AugmentedSequence(kept, [1] * len(kept), target, len(items), [])
    forbidden = set(items)
    forbidden.add(target)
    forbidden.add(PAD)
    candidates = np.setdiff1d(np.arange(n_items), np.fromiter(forbidden, dtype=np.int64))
    if len(candidates) < t:
        raise AugmentationError(
            f"only {len(candidates)} items outside the sequence; cannot inject t={t}"
        )
    noise = rng.choice(candidates, size=t, replace=False)
    merged = [(it, 1) for it in items]
    for v in noise:
        pos = int(rng.integers(0, len(merged) + 1))
        merged.insert(pos, (int(v), 0))
    merged = merged[len(merged) - window:] if window else []
    return AugmentedSequence(
        items=[m[0] for m in merged],
        noise_labels=[m[1] for m in merged],
        target_item=target,
        original_length=len(items),
        injected=[int(v) for v in noise],
    )


# ---------------------------------------------------------------------------
# statistics


def dataset_stats(seqs: Sequence[UserSequence], count_reserved: bool = True) -> DatasetStats:
    """Corpus statistics, by default counting the reserved index.

    With ``count_reserved`` the user and item counts include the reserved
    index 0 (vocabulary sizes) and sparsity is computed from those counts,
    while the average length is taken over real users.  Without it every
    field uses the real counts.
    """
    if not seqs:
        raise EmptyDatasetError("no sequences")
    n_events = sum(len(s.items) for s in seqs)
    n_users = len(seqs)
    n_items = len({i for s in seqs for i in s.items})
    extra = 1 if count_reserved else 0
    users, items = n_users + extra, n_items + extra
    return DatasetStats(
        sequence_count=n_events,
        user_count=users,
        item_count=items,
        avg_length=n_events / n_users,
        sparsity=1.0 - n_events / (users * items),
    )


# ---------------------------------------------------------------------------
# split bundle


@dataclass
class SplitBundle:
    """Everything downstream steps need, serialised as versioned JSON.

    Layout (``format``/``version`` identify the schema)::

        users, items          raw ids; list position + 1 is the internal index
        params                prepare-time parameters (max_len, min_count, t, seed, train_pairs)
        train                 [[user, input_items, target], ...]
        valid, test           same layout, one row per user
        augmentations         [[user, items, noise_labels, target, original_length], ...]
                              aligned with ``train``
        skipped_users         count of users with < 3 events
    """

    users: list[str]
    items: list[str]
    params: dict
    train: list[tuple[int, list[int], int]]
    valid: list[tuple[int, list[int], int]]
    test: list[tuple[int, list[int], int]]
    augmentations: list[tuple[int, list[int], list[int], int, int]]
    skipped_users: int = 0

    @property
    def n_items(self) -> int:
        """Vocabulary size including the pad index."""
        return len(self.items) + 1

    def to_json(self) -> str:
        doc = {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "users": self.users,
            "items": self.items,
            "params": self.params,
            "skipped_users": self.skipped_users,
            "train": [list(r) for r in self.train],
            "valid": [list(r) for r in self.valid],
            "test": [list(r) for r in self.test],
            "augmentations": [list(r) for r in self.augmentations],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SplitBundle":
        doc = json.loads(text)
        if doc.get("format") != BUNDLE_FORMAT:
            raise DataError(f"not a split bundle (format={doc.get('format')!r})")
        if doc.get("version") != BUNDLE_VERSION:
            raise DataError(f"unsupported bundle version {doc.get('version')}")
        return cls(
            users=doc["users"],
            items=doc["items"],
            params=doc["params"],
            train=[tuple(r) for r in doc["train"]],
            valid=[tuple(r) for r in doc["valid"]],
            test=[tuple(r) for r in doc["test"]],
            augmentations=[tuple(r) for r in doc["augmentations"]],
            skipped_users=doc.get("skipped_users", 0),
        )


def prepare_bundle(
    log_: EventLog,
    min_count: int = 5,
    max_len: int = 50,
    t: int = 2,
    seed: int = 2024,
    train_pairs: str = "last",
) -> tuple[SplitBundle, DatasetStats]:
    """Filter, sequence, split and augment; the whole offline protocol in one call."""
    filtered = filter_inactive(log_, min_count)
    seqs = build_sequences(filtered)
    stats = dataset_stats(seqs)
    entries, skipped = split_all(seqs, train_pairs)
    n_items = len(filtered.item_index) + 1
    train, augs = [], []
    for e in entries:
        for k, (inp, tgt) in enumerate(e.train):
            inp = inp[-max_len:]
            train.append((e.user, inp, tgt))
            aug = augment_with_noise(inp, tgt, t, n_items, user_rng(seed, e.user, k), max_len)
            augs.append((e.user, aug.items, aug.noise_labels, tgt, aug.original_length))
    bundle = SplitBundle(
        users=list(filtered.user_index),
        items=list(filtered.item_index),
        params={
            "max_len": max_len,
            "min_count": min_count,
            "t": t,
            "seed": seed,
            "train_pairs": train_pairs,
        },
        train=train,
        valid=[(e.user, e.valid[0][-max_len:], e.valid[1]) for e in entries],
        test=[(e.user, e.test[0][-max_len:], e.test[1]) for e in entries],
        augmentations=augs,
        skipped_users=skipped,
    )
    return bundle, stats
