"""Ranking metrics, noise-detection scoring and analysis splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_KS = (5, 10, 20)


def rank_target(scores, target: int, exclude_pad: bool = True) -> int:
    """1-based rank of ``target``; equal scores are ordered by ascending item index."""
    s = np.asarray(scores, dtype=np.float64)
    t = s[target]
    idx = np.arange(len(s))
    ahead = (s > t) | ((s == t) & (idx < target))
    if exclude_pad:
        ahead[0] = False
    return int(ahead.sum()) + 1


def rank_targets(scores: np.ndarray, targets: Sequence[int], exclude_pad: bool = True) -> np.ndarray:
    """Vectorised :func:`rank_target` over rows of a (B, V) score matrix."""
    s = np.asarray(scores, dtype=np.float64)
    tgt = np.asarray(targets)
    ts = s[np.arange(len(tgt)), tgt][:, None]
    idx = np.arange(s.shape[1])[None, :]
    ahead = (s > ts) | ((s == ts) & (idx < tgt[:, None]))
    if exclude_pad:
        ahead[:, 0] = False
    return ahead.sum(1) + 1


def rank_among_sampled(scores, target: int, negatives: Sequence[int]) -> int:
    """Rank of ``target`` against ``negatives`` only, with the same tie rule."""
    s = np.asarray(scores, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.int64)
    t = s[target]
    return int(((s[neg] > t) | ((s[neg] == t) & (neg < target))).sum()) + 1


def sample_negatives(n_items: int, exclude, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct real items (1..n_items-1) outside ``exclude``."""
    pool = np.setdiff1d(np.arange(1, n_items), np.asarray(list(exclude), dtype=np.int64))
    return rng.choice(pool, size=min(count, len(pool)), replace=False)


def hr_at_k(ranks, k: int) -> float:
    r = np.asarray(ranks)
    return float(np.mean(r <= k)) if len(r) else 0.0


def ndcg_at_k(ranks, k: int) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if not len(r):
        return 0.0
    return float(np.mean(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)))


def mrr_at_k(ranks, k: int) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if not len(r):
        return 0.0
    return float(np.mean(np.where(r <= k, 1.0 / r, 0.0)))


@dataclass
class RankingReport:
    ranks: np.ndarray
    ks: tuple = DEFAULT_KS
    users: np.ndarray | None = None
    buckets: dict = field(default_factory=dict)

    @property
    def metrics(self) -> dict[str, float]:
        out = {}
        for k in self.ks:
            out[f"hr@{k}"] = hr_at_k(self.ranks, k)
        for k in self.ks:
            out[f"ndcg@{k}"] = ndcg_at_k(self.ranks, k)
        kmax = max(self.ks)
        out[f"mrr@{kmax}"] = mrr_at_k(self.ranks, kmax)
        return out

    def to_dict(self):
        doc = {"count": int(len(self.ranks)), **self.metrics}
        if self.buckets:
            doc["buckets"] = {name: rep.to_dict() for name, rep in self.buckets.items()}
        return doc

    def rows(self):
        """Long-format (bucket, metric, K, score) rows."""
        def emit(name, rep):
            for key, val in rep.metrics.items():
                metric, k = key.split("@")
                yield name, metric, int(k), val

        yield from emit("all", self)
        for name, rep in self.buckets.items():
            yield from emit(name, rep)


# ---------------------------------------------------------------------------
# noise detection


def auc_score(scores, labels) -> float | None:
    """P(score of a positive > score of a negative), ties counted half.

    Computed from average ranks (Mann-Whitney U).  ``None`` when only one
    class is present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class NoiseDetectionReport:
    precision: float
    recall: float
    f1: float
    auc: float | None
    n_positions: int
    n_noise: int

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "n_positions": self.n_positions,
            "n_noise": self.n_noise,
        }


def noise_detection_report(keep_gates, p_genuine, labels) -> NoiseDetectionReport:
    """Score gates against oracle labels (1 genuine, 0 noise).

    Noise is the positive class for precision/recall: predicted noise means
    a dropped item (gate 0).  AUC ranks genuine above noise by beta^0.
    Empty denominators give 0.
    """
    keep = np.asarray(keep_gates).astype(bool)
    y = np.asarray(labels).astype(bool)
    pred_noise, true_noise = ~keep, ~y
    tp = int((pred_noise & true_noise).sum())
    fp = int((pred_noise & ~true_noise).sum())
    fn = int((~pred_noise & true_noise).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return NoiseDetectionReport(
        precision, recall, f1, auc_score(p_genuine, y), int(len(y)), int(true_noise.sum())
    )


# ---------------------------------------------------------------------------
# analysis axes


def length_buckets(lengths: Sequence[int], scheme: str = "terciles") -> dict[str, np.ndarray]:
    """Partition row indices into long / medium / short groups.

    ``terciles``: sort by length (descending, ties by row order) and cut into
    three near-equal groups, larger groups first.  ``saturated``: rows at the
    maximum length form the long group; the rest is halved by length into
    medium and short.
    """
    lengths = np.asarray(lengths)
    order = np.argsort(-lengths, kind="stable")
    n = len(order)
    if scheme == "terciles":
        base, extra = divmod(n, 3)
        sizes = [base + (1 if i < extra else 0) for i in range(3)]
        cuts = np.cumsum([0] + sizes)
        groups = [order[cuts[i] : cuts[i + 1]] for i in range(3)]
    elif scheme == "saturated":
        top = lengths.max() if n else 0
        long_ = order[lengths[order] == top]
        rest = order[lengths[order] != top]
        half = (len(rest) + 1) // 2
        groups = [long_, rest[:half], rest[half:]]
    else:
        raise ValueError(f"unknown bucket scheme {scheme!r}")
    return {name: np.sort(g) for name, g in zip(("long", "medium", "short"), groups)}


def bucketed_eval(lengths: Sequence[int], report: RankingReport, scheme: str = "terciles") -> dict[str, RankingReport]:
    buckets = {}
    for name, rows in length_buckets(lengths, scheme).items():
        users = report.users[rows] if report.users is not None else None
        buckets[name] = RankingReport(report.ranks[rows], report.ks, users)
    return buckets


def subsample_train(train: list, ratio: float, seed: int) -> list:
    """Seeded subset of ``round(ratio * n)`` training pairs, original order kept."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    n = len(train)
    keep = int(math.floor(ratio * n + 0.5))
    if keep >= n:
        return list(train)
    rng = np.random.default_rng([seed, 7])
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return [train[i] for i in chosen]
