"""Local training, FedAvg aggregation and the simulated federated loop.

Centralized training is the single-client case of the same loop: client 0
training on every sample. Each epoch's batch order and dropout masks come
from ``rng.stream(seed, purpose, client_id, global_epoch)``, where the global
epoch of local epoch ``e`` in round ``r`` is ``r * E + e``. Clients keep
their optimizer state between rounds. Together these make a one-client run of
R rounds x E epochs bit-identical to R * E centralized epochs.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import checkpoint as ckptmod
from . import rng as rngmod
from .flows import ExampleArrays
from .metrics import accuracy
from .model import ModelConfig, forward, init_model, loss_and_grads, predict
from .optim import AdamState, adam_step
from .partition import PartitionPlan
from .tensor_core import cross_entropy

log = logging.getLogger(__name__)

Weights = dict[str, np.ndarray]


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-5
    weight_decay: float = 1e-3
    batch_size: int = 32

    def new_state(self) -> AdamState:
        return AdamState(lr=self.lr, weight_decay=self.weight_decay)


@dataclass(frozen=True)
class RoundConfig:
    clients: int = 10
    rounds: int = 10
    local_epochs: int = 1
    optim: OptimConfig = OptimConfig()
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("need at least one client")
        if self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("rounds and local_epochs must be at least 1")
        if self.optim.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class ClientUpdate:
    client_id: int
    weights: Weights
    n_k: int
    final_loss: float = float("nan")
    opt_state: AdamState | None = None


@dataclass
class RoundReport:
    round: int
    acc_global: float
    loss_by_client: dict[int, float]
    seconds: float

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "acc_global": self.acc_global,
            "loss_by_client": {str(k): v for k, v in sorted(self.loss_by_client.items())},
            "seconds": self.seconds,
        }


def copy_weights(w: Mapping[str, np.ndarray]) -> Weights:
    return {k: np.array(v, copy=True) for k, v in w.items()}


def train_epochs(
    weights: Weights,
    cfg: ModelConfig,
    data: ExampleArrays,
    epochs: int,
    opt: AdamState,
    batch_size: int,
    seed: int,
    stream_id: int = 0,
    first_epoch: int = 0,
) -> list[float]:
    """Train ``weights`` in place; returns the mean training loss of each epoch."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    losses = []
    for e in range(first_epoch, first_epoch + epochs):
        order = rngmod.stream(seed, rngmod.SHUFFLE, stream_id, e).permutation(n)
        drop = rngmod.stream(seed, rngmod.DROPOUT, stream_id, e)
        total = 0.0
        for start in range(0, n, batch_size):
            b = order[start : start + batch_size]
            loss, grads = loss_and_grads(weights, cfg, data.token_ids[b], data.mask[b], data.labels[b], True, drop)
            adam_step(weights, grads, opt)
            total += loss * len(b)
        losses.append(total / n)
    return losses


def local_train(
    global_weights: Mapping[str, np.ndarray],
    shard: ExampleArrays,
    cfg: ModelConfig,
    local_epochs: int,
    optim: OptimConfig,
    seed: int,
    client_id: int = 0,
    round_index: int = 0,
    opt_state: AdamState | None = None,
) -> ClientUpdate:
    """Train a private replica for ``local_epochs`` epochs of round ``round_index``
    (0-based). ``opt_state`` is the client's optimizer state from its previous
    round, or None for a fresh one; the caller's copy is not mutated."""
    if len(shard) == 0:
        raise ValueError(f"client {client_id} has an empty shard")
    weights = copy_weights(global_weights)
    opt = opt_state.copy() if opt_state is not None else optim.new_state()
    losses = train_epochs(
        weights, cfg, shard, local_epochs, opt, optim.batch_size, seed, client_id, round_index * local_epochs
    )
    return ClientUpdate(client_id, weights, len(shard), losses[-1], opt)


def fedavg(updates: Sequence[ClientUpdate]) -> Weights:
    """Sample-weighted mean of client weights, accumulated in float64 in
    client-id order."""
    if not updates:
        raise ValueError("fedavg needs at least one update")
    updates = sorted(updates, key=lambda u: u.client_id)
    ref = updates[0].weights
    for u in updates:
        if u.n_k < 1:
            raise ValueError(f"client {u.client_id} reported n_k={u.n_k}")
        if set(u.weights) != set(ref):
            raise ValueError(f"client {u.client_id} sent a different set of tensors")
        for k, v in u.weights.items():
            if v.shape != ref[k].shape:
                raise ValueError(f"client {u.client_id}: {k} has shape {v.shape}, expected {ref[k].shape}")
    if len(updates) == 1:
        return copy_weights(ref)
    total = float(sum(u.n_k for u in updates))
    out = {}
    for k, v0 in ref.items():
        acc = np.zeros(v0.shape, dtype=np.float64)
        for u in updates:
            acc += (u.n_k / total) * u.weights[k].astype(np.float64)
        out[k] = acc.astype(v0.dtype)
    return out


def evaluate(weights: Mapping[str, np.ndarray], cfg: ModelConfig, data: ExampleArrays) -> float:
    return accuracy(predict(weights, cfg, data.token_ids, data.mask), data.labels)


@dataclass
class FedState:
    weights: Weights
    round: int = 0  # rounds completed so far
    client_opt: dict[int, AdamState] = field(default_factory=dict)


def run_round(
    state: FedState,
    cfg: ModelConfig,
    rcfg: RoundConfig,
    shards: Sequence[ExampleArrays],
    test: ExampleArrays,
) -> tuple[Weights, RoundReport]:
    """Broadcast, train every client, aggregate, evaluate. Advances ``state``."""
    t0 = time.perf_counter()
    r = state.round

    def work(k: int) -> ClientUpdate:
        return local_train(
            state.weights, shards[k], cfg, rcfg.local_epochs, rcfg.optim, rcfg.seed, k, r, state.client_opt.get(k)
        )

    ids = range(len(shards))
    if rcfg.workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=rcfg.workers) as pool:
            updates = list(pool.map(work, ids))
    else:
        updates = [work(k) for k in ids]
    new_weights = fedavg(updates)
    for u in updates:
        state.client_opt[u.client_id] = u.opt_state
    state.weights = new_weights
    state.round = r + 1
    acc = evaluate(new_weights, cfg, test)
    report = RoundReport(r + 1, acc, {u.client_id: u.final_loss for u in updates}, time.perf_counter() - t0)
    return new_weights, report


@dataclass
class SimulationResult:
    reports: list[RoundReport]
    weights: Weights
    checkpoint_path: Path | None = None


def run_simulation(
    cfg: ModelConfig,
    rcfg: RoundConfig,
    train: ExampleArrays,
    test: ExampleArrays,
    plan: PartitionPlan,
    out_dir: str | Path | None = None,
    meta: dict | None = None,
    initial_weights: Mapping[str, np.ndarray] | None = None,
    on_report: Callable[[RoundReport], None] | None = None,
) -> SimulationResult:
    """Round 0 evaluates the initial model; rounds 1..R follow. With
    ``out_dir``, writes ``rounds.jsonl`` as it goes and ``model.fids`` at the end."""
    if plan.num_clients != rcfg.clients:
        raise ValueError(f"plan has {plan.num_clients} clients, config asks for {rcfg.clients}")
    shards = [train.subset(s) for s in plan.shards]
    weights = copy_weights(initial_weights) if initial_weights is not None else init_model(cfg, rcfg.seed)
    state = FedState(weights)
    out = Path(out_dir) if out_dir is not None else None
    stream_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stream_fh = open(out / "rounds.jsonl", "w", encoding="utf-8")
    reports: list[RoundReport] = []

    def emit(rep: RoundReport) -> None:
        reports.append(rep)
        if stream_fh is not None:
            stream_fh.write(json.dumps(rep.to_dict()) + "\n")
            stream_fh.flush()
        if on_report is not None:
            on_report(rep)

    try:
        t0 = time.perf_counter()
        emit(RoundReport(0, evaluate(weights, cfg, test), {}, time.perf_counter() - t0))
        for _ in range(rcfg.rounds):
            _, rep = run_round(state, cfg, rcfg, shards, test)
            log.info("round %d acc=%.4f (%.1fs)", rep.round, rep.acc_global, rep.seconds)
            emit(rep)
    finally:
        if stream_fh is not None:
            stream_fh.close()
    path = None
    if out is not None:
        path = out / "model.fids"
        ckptmod.save(ckptmod.Checkpoint(cfg.to_dict(), state.weights, dict(meta or {})), path)
    return SimulationResult(reports, state.weights, path)


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    train_acc: float
    eval_loss: float
    eval_acc: float
    seconds: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mean_loss(weights: Mapping[str, np.ndarray], cfg: ModelConfig, data: ExampleArrays, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        logits = forward(weights, cfg, data.token_ids[sl], data.mask[sl])
        total += float(cross_entropy(logits, data.labels[sl]).data) * len(data.labels[sl])
    return total / max(len(data), 1)


def train_centralized(
    cfg: ModelConfig,
    optim: OptimConfig,
    train: ExampleArrays,
    test: ExampleArrays,
    epochs: int,
    seed: int,
    initial_weights: Mapping[str, np.ndarray] | None = None,
    on_epoch: Callable[[EpochReport], None] | None = None,
) -> tuple[Weights, list[EpochReport]]:
    weights = copy_weights(initial_weights) if initial_weights is not None else init_model(cfg, seed)
    opt = optim.new_state()
    reports = []
    for e in range(epochs):
        t0 = time.perf_counter()
        train_epochs(weights, cfg, train, 1, opt, optim.batch_size, seed, 0, e)
        rep = EpochReport(
            epoch=e + 1,
            train_loss=mean_loss(weights, cfg, train),
            train_acc=evaluate(weights, cfg, train),
            eval_loss=mean_loss(weights, cfg, test),
            eval_acc=evaluate(weights, cfg, test),
            seconds=time.perf_counter() - t0,
        )
        log.info("epoch %d train_acc=%.4f eval_acc=%.4f", rep.epoch, rep.train_acc, rep.eval_acc)
        reports.append(rep)
        if on_epoch is not None:
            on_epoch(rep)
    return weights, reports
