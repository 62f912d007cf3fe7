"""Synthetic interaction logs with planted interest clusters and cross-cluster noise."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .data import EventLog, InteractionEvent


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    n_users: int = 200
    n_items: int = 500
    n_clusters: int = 20
    interests_per_user: int = 2
    min_len: int = 15
    max_len: int = 30
    noise_rate: float = 0.1
    zipf: float = 0.0  # within-cluster popularity exponent; 0 is uniform
    seed: int = 0

    def cluster_of(self, item: int) -> int:
        """Items 0..n_items-1 are split into contiguous, near-equal clusters."""
        return int(item * self.n_clusters // self.n_items)

    def validate(self):
        if min(self.n_users, self.n_items, self.n_clusters, self.interests_per_user) < 1:
            raise InfeasibleSpecError("counts must be positive")
        if self.n_clusters > self.n_items:
            raise InfeasibleSpecError("more clusters than items")
        if self.interests_per_user > self.n_clusters:
            raise InfeasibleSpecError("more interests per user than clusters")
        if not 0 <= self.noise_rate <= 1:
            raise InfeasibleSpecError("noise_rate must be in [0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise InfeasibleSpecError("need 1 <= min_len <= max_len")
        smallest = self.n_items // self.n_clusters
        if self.max_len > self.interests_per_user * smallest:
            raise InfeasibleSpecError(
                f"clusters too small: {self.interests_per_user} x {smallest} items cannot supply "
                f"{self.max_len} distinct genuine interactions"
            )
        outside = self.n_items - self.interests_per_user * (-(-self.n_items // self.n_clusters))
        if self.noise_rate > 0 and outside < self.max_len:
            raise InfeasibleSpecError("too few items outside a user's clusters to draw noise from")


@dataclass
class LabeledEvent:
    user: str
    item: str
    timestamp: int
    is_noise: bool
    cluster: int


@dataclass
class SyntheticCorpus:
    spec: GeneratorSpec
    events: list[LabeledEvent]
    user_clusters: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def event_log(self) -> EventLog:
        return EventLog.from_events([InteractionEvent(e.user, e.item, e.timestamp) for e in self.events])

    def to_tsv(self) -> str:
        buf = io.StringIO()
        for e in self.events:
            buf.write(f"{e.user}\t{e.item}\t{e.timestamp}\n")
        return buf.getvalue()

    def labels_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("user\titem\ttimestamp\tis_noise\tcluster\n")
        for e in self.events:
            buf.write(f"{e.user}\t{e.item}\t{e.timestamp}\t{int(e.is_noise)}\t{e.cluster}\n")
        return buf.getvalue()

    def noise_lookup(self) -> dict[tuple[str, str], bool]:
        return {(e.user, e.item): e.is_noise for e in self.events}


def generate(spec: GeneratorSpec) -> SyntheticCorpus:
    """Each user draws distinct items from a few clusters, with cross-cluster noise at ``noise_rate``."""
    spec.validate()
    members = [np.array([i for i in range(spec.n_items) if spec.cluster_of(i) == c])
               for c in range(spec.n_clusters)]
    events, clusters_by_user = [], {}
    for u in range(spec.n_users):
        rng = np.random.default_rng([spec.seed, u])
        mine = np.sort(rng.choice(spec.n_clusters, size=spec.interests_per_user, replace=False))
        inside = np.concatenate([members[c] for c in mine])
        outside = np.setdiff1d(np.arange(spec.n_items), inside)
        # popularity rank is the item's position inside its cluster
        rank = np.concatenate([np.arange(len(members[c])) for c in mine])
        w = 1.0 / (rank + 1.0) ** spec.zipf
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        is_noise = rng.random(length) < spec.noise_rate
        n_noise = int(is_noise.sum())
        genuine = rng.choice(inside, size=length - n_noise, replace=False, p=w / w.sum())
        noise = rng.choice(outside, size=n_noise, replace=False)
        gi = ni = 0
        user = f"u{u}"
        clusters_by_user[user] = tuple(int(c) for c in mine)
        for pos in range(length):
            if is_noise[pos]:
                item = int(noise[ni])
                ni += 1
            else:
                item = int(genuine[gi])
                gi += 1
            events.append(LabeledEvent(user, f"i{item}", 1_000_000 + 100 * u + pos,
                                       bool(is_noise[pos]), spec.cluster_of(item)))
    return SyntheticCorpus(spec, events, clusters_by_user)
