"""Accuracy, confusion matrices, per-class scores and an inference timer."""

from __future__ import annotations

import csv
import platform
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# reference latencies (seconds per flow) for the full-size model
REFERENCE_LATENCY_S = {
    "Quadro RTX": 0.00263,
    "Intel Xeon(R) @ 3.40GHz": 0.03523,
    "Intel(R) Core(TM) i5 @ 2.40GHz": 0.0874,
    "Raspberry Pi 4 @ 1.5GHz": 0.450,
}


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"{p.shape[0] if p.ndim else 0} predictions for {y.shape[0] if y.ndim else 0} labels")
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float((p == y).sum()) / p.size


def confusion(predictions: Sequence[int], labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    for name, arr in (("prediction", p), ("label", y)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    return float(np.trace(cm)) / float(cm.sum())


def per_class_metrics(cm: np.ndarray) -> dict:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "support": row.astype(int).tolist(),
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
    }


def metrics_document(predictions, labels, class_names: Sequence[str]) -> dict:
    cm = confusion(predictions, labels, len(class_names))
    return {
        "accuracy": accuracy_from_confusion(cm),
        "n": int(cm.sum()),
        "class_names": list(class_names),
        "confusion": cm.tolist(),
        "per_class": per_class_metrics(cm),
    }


def write_confusion_csv(cm: np.ndarray, class_names: Sequence[str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, np.asarray(cm).tolist()):
            w.writerow([name, *row])


@dataclass
class TimingReport:
    batch_size: int
    repetitions: int
    warmup: int
    median_s: float
    p95_s: float
    hardware: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference_latency_s"] = REFERENCE_LATENCY_S
        return d


def host_description() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu} ({platform.system()} {platform.release()}, python {platform.python_version()})"


def time_callable(run, reps: int = 30, warmup: int = 3, hardware: str | None = None) -> TimingReport:
    """Time ``run()`` (one single-example forward pass) ``reps`` times after
    ``warmup`` untimed calls, on a monotonic clock."""
    if reps < 10:
        raise ValueError(f"need at least 10 repetitions, got {reps}")
    if warmup < 3:
        raise ValueError(f"need at least 3 warmup runs, got {warmup}")
    for _ in range(warmup):
        run()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run()
        samples.append(time.perf_counter() - t0)
    p95 = float(np.percentile(samples, 95))
    median = float(statistics.median(samples))
    return TimingReport(1, reps, warmup, median, max(p95, median), hardware or host_description())


def time_inference(weights, cfg, example, reps: int = 30, warmup: int = 3, hardware: str | None = None) -> TimingReport:
    """Single-example forward-pass latency of the model on this host.

    ``example`` is a ``(token_ids, mask)`` pair for one sequence.
    """
    from .model import forward

    ids, mask = (np.asarray(a).reshape(1, -1) for a in example)
    return time_callable(lambda: forward(weights, cfg, ids, mask), reps, warmup, hardware)
