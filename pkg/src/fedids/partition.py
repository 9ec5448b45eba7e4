"""Splitting a training set across simulated clients, IID or Dirichlet label-skewed."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod


@dataclass
class PartitionPlan:
    num_clients: int
    alpha: float | None  # None for IID
    seed: int
    shards: list[np.ndarray]  # sorted index arrays, one per client

    def __post_init__(self):
        if len(self.shards) != self.num_clients:
            raise ValueError(f"plan has {len(self.shards)} shards for {self.num_clients} clients")

    def histograms(self, labels: Sequence[int], num_classes: int | None = None) -> np.ndarray:
        labels = np.asarray(labels)
        c = int(num_classes if num_classes is not None else labels.max() + 1)
        return np.stack([np.bincount(labels[s], minlength=c) for s in self.shards])

    def to_dict(self) -> dict:
        return {
            "K": self.num_clients,
            "alpha": self.alpha,
            "seed": self.seed,
            "shards": [s.tolist() for s in self.shards],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionPlan":
        return cls(d["K"], d["alpha"], d["seed"], [np.asarray(s, dtype=np.int64) for s in d["shards"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PartitionPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def split_iid(n: int, num_clients: int, seed: int = 0, labels: Sequence[int] | None = None) -> PartitionPlan:
    """Seeded shuffle, dealt round-robin; shard sizes differ by at most one.

    With ``labels``, the shuffled indices are grouped by class before dealing,
    so each client's per-class count is within one of every other client's.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if n < num_clients:
        raise ValueError(f"cannot give {num_clients} clients at least one of {n} samples")
    perm = rngmod.stream(seed, rngmod.PARTITION, 0).permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} samples")
        perm = perm[np.argsort(labels[perm], kind="stable")]
    shards = [np.sort(perm[k::num_clients]).astype(np.int64) for k in range(num_clients)]
    return PartitionPlan(num_clients, None, seed, shards)


def _largest_remainder(total: int, props: np.ndarray) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort so equal remainders go to the lower client id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def split_dirichlet(labels: Sequence[int], num_clients: int, alpha: float, seed: int = 0) -> PartitionPlan:
    """Per class, draw client proportions from Dirichlet(alpha * 1_K) and deal
    the class's shuffled indices out in contiguous runs sized by
    largest-remainder rounding. A client left empty takes one sample from the
    currently largest shard."""
    if num_clients < 1:
        raise ValueError("need at least one client")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    labels = np.asarray(labels)
    if len(labels) < num_clients:
        raise ValueError(f"cannot give {num_clients} clients at least one of {len(labels)} samples")
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    for ci, c in enumerate(np.unique(labels)):
        idx = np.flatnonzero(labels == c)
        g = rngmod.stream(seed, rngmod.PARTITION, 1, ci)
        idx = idx[g.permutation(len(idx))]
        props = rngmod.dirichlet(g, alpha, num_clients)
        counts = _largest_remainder(len(idx), props)
        start = 0
        for k, n_k in enumerate(counts):
            buckets[k].extend(idx[start : start + n_k].tolist())
            start += n_k
    for k in range(num_clients):
        if not buckets[k]:
            donor = max(range(num_clients), key=lambda j: (len(buckets[j]), -j))
            # give away the donor's largest index, deterministic
            buckets[donor].sort()
            buckets[k].append(buckets[donor].pop())
    shards = [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    return PartitionPlan(num_clients, float(alpha), seed, shards)


@dataclass
class PartitionStats:
    histograms: np.ndarray  # (K, C)
    l1_from_global: np.ndarray  # (K,)

    @property
    def mean_l1(self) -> float:
        return float(self.l1_from_global.mean())

    def to_dict(self) -> dict:
        return {
            "histograms": self.histograms.tolist(),
            "l1_from_global": self.l1_from_global.tolist(),
            "mean_l1": self.mean_l1,
        }


def partition_stats(plan: PartitionPlan, labels: Sequence[int], num_classes: int | None = None) -> PartitionStats:
    labels = np.asarray(labels)
    all_idx = np.concatenate(plan.shards) if plan.shards else np.zeros(0, np.int64)
    if all_idx.size and (all_idx.min() < 0 or all_idx.max() >= len(labels)):
        raise ValueError("plan references indices outside the label array")
    hist = plan.histograms(labels, num_classes)
    glob = hist.sum(axis=0) / hist.sum()
    local = hist / np.maximum(hist.sum(axis=1, keepdims=True), 1)
    return PartitionStats(hist, np.abs(local - glob).sum(axis=1))
