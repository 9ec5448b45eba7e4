"""CSV flow ingestion, per-field privacy hashing, stratified splits and a
synthetic flow generator."""

from __future__ import annotations

import csv
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .tokenizer import CLS, TokenizerModel, encode, train_vocab

DEFAULT_LABEL_COLUMN = "Attack_type"
# the sibling label column of Edge-IIoTset would leak the target
DEFAULT_DROP = ("Timestamp", "Attack_label", "Attack_type")

# Edge-IIoTset class names; used to label the first synthetic classes
EDGE_IIOT_CLASSES = (
    "Normal",
    "DDoS_UDP",
    "DDoS_ICMP",
    "SQL_injection",
    "Password",
    "Vulnerability_scanner",
    "DDoS_TCP",
    "DDoS_HTTP",
)


class SchemaError(ValueError):
    pass


class CSVParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class FlowRecord:
    fields: tuple[tuple[str, str], ...]
    label: str


@dataclass(frozen=True)
class LabeledExample:
    token_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    label_id: int


@dataclass
class DatasetManifest:
    class_names: list[str]
    train_counts: dict[str, int]
    test_counts: dict[str, int]
    seed: int
    train_fraction: float = 0.8
    source_sha256: str | None = None
    extra: dict = field(default_factory=dict)

    def total(self, name: str) -> int:
        return self.train_counts[name] + self.test_counts[name]

    def to_dict(self) -> dict:
        d = {
            "class_names": list(self.class_names),
            "train_counts": dict(self.train_counts),
            "test_counts": dict(self.test_counts),
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "source_sha256": self.source_sha256,
        }
        d.update(self.extra)
        return d


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dropped(name: str, label_column: str, drop: Sequence[str], time_rule: bool) -> bool:
    return name == label_column or name in drop or (time_rule and "time" in name.lower())


def _take_count(fraction, n: int) -> int:
    return math.floor(Fraction(str(fraction)) * n)


def load_csv(
    path: str | Path,
    label_column: str = DEFAULT_LABEL_COLUMN,
    drop_columns: Sequence[str] | None = None,
    fraction: float = 1.0,
    seed: int = 0,
) -> list[FlowRecord]:
    """Read flows from a headered CSV.

    The label column and every column in ``drop_columns`` are excluded from
    the record fields. The default drop list is Timestamp, the Edge-IIoTset
    label columns, and any column whose name contains "time". ``fraction < 1`` keeps a
    seeded per-class subsample of ``floor(fraction * n_c)`` rows in file order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    drop = DEFAULT_DROP if drop_columns is None else tuple(drop_columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise SchemaError(f"{path}: label column {label_column!r} not in header")
        label_idx = header.index(label_column)
        keep = [i for i, h in enumerate(header) if not _dropped(h, label_column, drop, drop_columns is None)]
        names = [header[i] for i in keep]
        width = len(header)
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != width:
                raise CSVParseError(f"expected {width} fields, got {len(row)}", reader.line_num)
            records.append(FlowRecord(tuple(zip(names, (row[i] for i in keep))), row[label_idx]))
    if fraction < 1.0:
        records = _subsample(records, fraction, seed)
    return records


def _subsample(records: list[FlowRecord], fraction: float, seed: int) -> list[FlowRecord]:
    by_class = _indices_by_class(r.label for r in records)
    chosen = []
    for ci, name in enumerate(sorted(by_class)):
        idx = np.asarray(by_class[name])
        k = max(1, _take_count(fraction, len(idx)))
        perm = rngmod.stream(seed, rngmod.SUBSAMPLE, ci).permutation(len(idx))
        chosen.extend(idx[perm[:k]].tolist())
    chosen.sort()
    return [records[i] for i in chosen]


def _indices_by_class(labels: Iterable[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        out[lab].append(i)
    return out


def hash_encode(record: FlowRecord) -> bytes:
    """Space-joined first 8 hex chars of SHA-256(``name=value``) per field."""
    if not record.fields:
        raise ValueError("record has no fields to encode")
    blocks = [hashlib.sha256(f"{k}={v}".encode("utf-8")).hexdigest()[:8] for k, v in record.fields]
    return " ".join(blocks).encode("ascii")


def split_indices(labels: Sequence[str], train_fraction: float = 0.8, seed: int = 0):
    """Stratified index split; returns (train_idx, test_idx, class_names, train_counts, test_counts).

    Each class contributes ``floor(train_fraction * n_c)`` samples to train
    after a seeded shuffle; indices come back in ascending order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    by_class = _indices_by_class(labels)
    if not by_class:
        raise ValueError("cannot split an empty dataset")
    class_names = sorted(by_class)
    train, test = [], []
    train_counts, test_counts = {}, {}
    for ci, name in enumerate(class_names):
        idx = np.asarray(by_class[name])
        n_train = _take_count(train_fraction, len(idx))
        perm = rngmod.stream(seed, rngmod.SPLIT, ci).permutation(len(idx))
        train.extend(idx[perm[:n_train]].tolist())
        test.extend(idx[perm[n_train:]].tolist())
        train_counts[name] = n_train
        test_counts[name] = len(idx) - n_train
    train.sort()
    test.sort()
    return train, test, class_names, train_counts, test_counts


def split_train_test(
    records: Sequence[FlowRecord],
    train_fraction: float = 0.8,
    seed: int = 0,
    source_sha256: str | None = None,
) -> tuple[list[FlowRecord], list[FlowRecord], DatasetManifest]:
    train_idx, test_idx, names, train_counts, test_counts = split_indices(
        [r.label for r in records], train_fraction, seed
    )
    manifest = DatasetManifest(names, train_counts, test_counts, seed, train_fraction, source_sha256)
    return [records[i] for i in train_idx], [records[i] for i in test_idx], manifest


def build_examples(
    records: Sequence[FlowRecord], tokenizer: TokenizerModel, class_map: Sequence[str], seq_len: int
) -> list[LabeledExample]:
    index = {name: i for i, name in enumerate(class_map)}
    out = []
    for r in records:
        if r.label not in index:
            raise KeyError(f"unknown label {r.label!r}")
        ids, mask = encode(hash_encode(r), tokenizer, seq_len)
        out.append(LabeledExample(tuple(ids), tuple(mask), index[r.label]))
    return out


@dataclass
class ExampleArrays:
    """Column-stacked examples, the form the model consumes."""

    token_ids: np.ndarray  # (N, S) int32
    mask: np.ndarray  # (N, S) int8
    labels: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ExampleArrays":
        idx = np.asarray(idx, dtype=np.int64)
        return ExampleArrays(self.token_ids[idx], self.mask[idx], self.labels[idx])


def stack_examples(examples: Sequence[LabeledExample], seq_len: int | None = None) -> ExampleArrays:
    if not examples:
        s = seq_len or 1
        return ExampleArrays(np.zeros((0, s), np.int32), np.zeros((0, s), np.int8), np.zeros(0, np.int64))
    ids = np.asarray([e.token_ids for e in examples], dtype=np.int32)
    mask = np.asarray([e.attention_mask for e in examples], dtype=np.int8)
    labels = np.asarray([e.label_id for e in examples], dtype=np.int64)
    assert (ids[:, 0] == CLS).all()
    return ExampleArrays(ids, mask, labels)


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 8
    fields: int = 12
    rows_per_class: int = 500
    noise: float = 0.1
    seed: int = 0
    values_per_field: int = 10

    def __post_init__(self):
        if self.classes < 2 or self.fields < 2:
            raise ValueError("synthetic data needs at least 2 classes and 2 fields")
        if self.rows_per_class < 1:
            raise ValueError("rows_per_class must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must be in [0, 1], got {self.noise}")
        if self.values_per_field < 2:
            raise ValueError("values_per_field must be at least 2")


def class_names_for(n: int) -> list[str]:
    return [EDGE_IIOT_CLASSES[c] if c < len(EDGE_IIOT_CLASSES) else f"Attack_{c}" for c in range(n)]


def synthetic_signatures(spec: SyntheticSpec) -> np.ndarray:
    """(C, F) value codes. Each class fixes a random subset of about two
    thirds of the fields; the rest share a class-independent background code
    (0). Signatures are pairwise distinct."""
    g = rngmod.stream(spec.seed, rngmod.SYNTH, 0)
    n_sig = max(1, math.ceil(2 * spec.fields / 3))
    sigs = np.zeros((spec.classes, spec.fields), dtype=np.int64)
    seen: set[tuple[int, ...]] = set()
    for c in range(spec.classes):
        while True:
            row = np.zeros(spec.fields, dtype=np.int64)
            cols = g.choice(spec.fields, size=n_sig, replace=False)
            row[cols] = g.integers(1, spec.values_per_field, size=n_sig)
            key = tuple(row.tolist())
            if key not in seen:
                seen.add(key)
                sigs[c] = row
                break
    return sigs


def generate_synthetic(spec: SyntheticSpec, out: str | Path | None = None) -> tuple[list[str], list[list[str]]]:
    """Rows of ``f0..f{F-1},Attack_type``. Every field of a row starts at the
    class signature and, with probability ``noise``, is redrawn uniformly from
    the field's value set. Rows are shuffled across classes.

    Writes the CSV to ``out`` when given; returns (header, rows) either way.
    """
    sigs = synthetic_signatures(spec)
    names = class_names_for(spec.classes)
    g = rngmod.stream(spec.seed, rngmod.SYNTH, 1)
    n = spec.classes * spec.rows_per_class
    labels = np.repeat(np.arange(spec.classes), spec.rows_per_class)
    codes = sigs[labels].copy()
    flip = g.random((n, spec.fields)) < spec.noise
    codes[flip] = g.integers(0, spec.values_per_field, size=int(flip.sum()))
    order = g.permutation(n)
    header = [f"f{j}" for j in range(spec.fields)] + [DEFAULT_LABEL_COLUMN]
    rows = [[_value_text(j, int(v)) for j, v in enumerate(codes[i])] + [names[labels[i]]] for i in order]
    if out is not None:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return header, rows


def _value_text(field_idx: int, code: int) -> str:
    # flow-ish literals; only equality matters after hashing
    return str(1000 * (field_idx + 1) + code)


@dataclass
class PreparedData:
    tokenizer: TokenizerModel
    manifest: DatasetManifest
    train: ExampleArrays
    test: ExampleArrays


def prepare_dataset(
    path: str | Path,
    seq_len: int,
    vocab_size: int = 5000,
    tokenizer: TokenizerModel | None = None,
    label_column: str = DEFAULT_LABEL_COLUMN,
    drop_columns: Sequence[str] | None = None,
    fraction: float = 1.0,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> PreparedData:
    """Load, split, fit the tokenizer on the training split (unless one is
    given) and encode both splits."""
    records = load_csv(path, label_column, drop_columns, fraction, seed)
    train, test, manifest = split_train_test(records, train_fraction, seed, file_sha256(path))
    if tokenizer is None:
        tokenizer = train_vocab([hash_encode(r) for r in train], vocab_size)
    names = manifest.class_names
    return PreparedData(
        tokenizer,
        manifest,
        stack_examples(build_examples(train, tokenizer, names, seq_len), seq_len),
        stack_examples(build_examples(test, tokenizer, names, seq_len), seq_len),
    )
