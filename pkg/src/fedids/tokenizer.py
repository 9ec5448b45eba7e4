"""Byte-level BPE over hashed flow strings."""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, CLS, SEP, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")
BYTE_OFFSET = 4
FIRST_MERGE_ID = BYTE_OFFSET + 256  # 260
UNK_BYTES = "�".encode("utf-8")
FORMAT_TAG = "bbpe-v1"


@dataclass
class TokenizerModel:
    target_vocab_size: int
    merges: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.target_vocab_size < FIRST_MERGE_ID:
            raise ValueError(f"vocab size must be at least {FIRST_MERGE_ID}, got {self.target_vocab_size}")
        if self.vocab_size > self.target_vocab_size:
            raise ValueError(f"{len(self.merges)} merges exceed vocab size {self.target_vocab_size}")
        for i, (left, right) in enumerate(self.merges):
            new_id = FIRST_MERGE_ID + i
            if not (BYTE_OFFSET <= left < new_id and BYTE_OFFSET <= right < new_id):
                raise ValueError(f"merge {i} ({left}, {right}) references a token that does not exist yet")
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._bytes = [b""] * BYTE_OFFSET + [bytes([b]) for b in range(256)]
        for left, right in self.merges:
            self._bytes.append(self._bytes[left] + self._bytes[right])
        self._cache: dict[bytes, list[int]] = {}

    @property
    def vocab_size(self) -> int:
        return FIRST_MERGE_ID + len(self.merges)

    def token_bytes(self, token_id: int) -> bytes:
        return self._bytes[token_id]

    def tokenize(self, text: bytes) -> list[int]:
        """Byte tokens with every merge applied, no specials or padding."""
        hit = self._cache.get(text)
        if hit is not None:
            return list(hit)
        ids = _apply_merges([b + BYTE_OFFSET for b in text], self._ranks)
        if len(self._cache) < 200_000:
            self._cache[bytes(text)] = list(ids)
        return ids

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps(self), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TokenizerModel":
        return loads(Path(path).read_text(encoding="utf-8"))


def _apply_merges(ids: list[int], ranks: dict[tuple[int, int], int]) -> list[int]:
    """Repeatedly merge the lowest-ranked adjacent pair (leftmost first).

    Equivalent to applying each merge exhaustively in training order: merge
    ``i`` only creates pairs containing token ``260 + i``, and those rank
    after ``i``.
    """
    n = len(ids)
    if n < 2:
        return ids
    tok = list(ids)
    nxt = list(range(1, n + 1))
    nxt[-1] = -1
    prv = list(range(-1, n - 1))
    heap = []
    for p in range(n - 1):
        r = ranks.get((tok[p], tok[p + 1]))
        if r is not None:
            heap.append((r, p))
    heapq.heapify(heap)
    while heap:
        r, p = heapq.heappop(heap)
        q = nxt[p]
        if tok[p] < 0 or q == -1 or ranks.get((tok[p], tok[q])) != r:
            continue
        tok[p] = FIRST_MERGE_ID + r
        tok[q] = -1
        nxt[p] = nxt[q]
        if nxt[p] != -1:
            prv[nxt[p]] = p
            nr = ranks.get((tok[p], tok[nxt[p]]))
            if nr is not None:
                heapq.heappush(heap, (nr, p))
        lp = prv[p]
        if lp != -1:
            nr = ranks.get((tok[lp], tok[p]))
            if nr is not None:
                heapq.heappush(heap, (nr, lp))
    return [t for t in tok if t >= 0]


def train_vocab(corpus: Iterable[bytes], target_vocab_size: int) -> TokenizerModel:
    """Greedy BPE: merge the most frequent adjacent pair until the vocabulary
    is full or no pair occurs at least twice. Equal counts go to the smallest
    ``(left_id, right_id)``."""
    if target_vocab_size < FIRST_MERGE_ID:
        raise ValueError(f"vocab size must be at least {FIRST_MERGE_ID}, got {target_vocab_size}")
    words: dict[bytes, int] = defaultdict(int)
    for text in corpus:
        words[bytes(text)] += 1
    if not words:
        raise ValueError("cannot train a tokenizer on an empty corpus")

    # all distinct strings laid end to end as doubly linked token lists;
    # nxt/prv are -1 at string boundaries
    tok: list[int] = []
    weight: list[int] = []
    for w, f in words.items():
        tok.extend(b + BYTE_OFFSET for b in w)
        weight.extend([f] * len(w))
    n = len(tok)
    nxt = list(range(1, n + 1))
    prv = list(range(-1, n - 1))
    start = 0
    for w in words:
        if w:
            prv[start] = -1
            nxt[start + len(w) - 1] = -1
        start += len(w)

    counts: dict[tuple[int, int], int] = defaultdict(int)
    occ: dict[tuple[int, int], set[int]] = defaultdict(set)
    for p in range(n):
        q = nxt[p]
        if q != -1:
            pair = (tok[p], tok[q])
            counts[pair] += weight[p]
            occ[pair].add(p)
    heap = [(-c, pair) for pair, c in counts.items()]
    heapq.heapify(heap)

    def drop(pair, p):
        counts[pair] -= weight[p]
        occ[pair].discard(p)
        touched.add(pair)

    def put(pair, p):
        counts[pair] += weight[p]
        occ[pair].add(p)
        touched.add(pair)

    merges: list[tuple[int, int]] = []
    while FIRST_MERGE_ID + len(merges) < target_vocab_size and heap:
        neg, pair = heapq.heappop(heap)
        current = counts.get(pair, 0)
        if -neg != current:
            if current > 0:
                heapq.heappush(heap, (-current, pair))
            continue
        if current < 2:
            break
        new_id = FIRST_MERGE_ID + len(merges)
        merges.append(pair)
        left, right = pair
        touched: set[tuple[int, int]] = set()
        for p in sorted(occ.pop(pair)):
            q = nxt[p]
            # an overlapping occurrence (e.g. "aaa") may already be consumed
            if q == -1 or tok[p] != left or tok[q] != right:
                continue
            counts[pair] -= weight[p]
            lp, r = prv[p], nxt[q]
            if lp != -1:
                drop((tok[lp], left), lp)
            if r != -1:
                drop((right, tok[r]), q)
            tok[p] = new_id
            tok[q] = -1
            nxt[p] = r
            if r != -1:
                prv[r] = p
            if lp != -1:
                put((tok[lp], new_id), lp)
            if r != -1:
                put((new_id, tok[r]), p)
        counts.pop(pair, None)
        occ.pop(pair, None)
        for t in touched:
            c = counts.get(t, 0)
            if c > 0:
                heapq.heappush(heap, (-c, t))
            else:
                counts.pop(t, None)
                occ.pop(t, None)
    return TokenizerModel(target_vocab_size=target_vocab_size, merges=merges)


def encode(text: bytes, model: TokenizerModel, max_len: int) -> tuple[list[int], list[int]]:
    """``[CLS] + tokens``, truncated then padded to ``max_len``; returns (ids, mask)."""
    if max_len < 2:
        raise ValueError(f"max_len must be at least 2, got {max_len}")
    ids = [CLS] + model.tokenize(text)
    ids = ids[:max_len]
    n = len(ids)
    return ids + [PAD] * (max_len - n), [1] * n + [0] * (max_len - n)


def decode(ids: Iterable[int], model: TokenizerModel) -> bytes:
    out = bytearray()
    for t in ids:
        t = int(t)
        if t in (PAD, CLS, SEP):
            continue
        if t == UNK or not 0 <= t < model.vocab_size:
            out += UNK_BYTES
        else:
            out += model.token_bytes(t)
    return bytes(out)


def encode_batch(texts: Sequence[bytes], model: TokenizerModel, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(texts), max_len), dtype=np.int32)
    mask = np.zeros((len(texts), max_len), dtype=np.int8)
    for i, t in enumerate(texts):
        row, m = encode(t, model, max_len)
        ids[i] = row
        mask[i] = m
    return ids, mask


def dumps(model: TokenizerModel) -> str:
    lines = [f"{FORMAT_TAG} {model.target_vocab_size}"]
    for i, (left, right) in enumerate(model.merges):
        lines.append(f"{left} {right} {FIRST_MERGE_ID + i}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> TokenizerModel:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty tokenizer file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} tokenizer file: {lines[0]!r}")
    merges = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'left right new_id'")
        left, right, new_id = map(int, parts)
        if new_id != FIRST_MERGE_ID + len(merges):
            raise ValueError(f"line {lineno}: merge ids must be sequential from {FIRST_MERGE_ID}")
        merges.append((left, right))
    return TokenizerModel(target_vocab_size=int(head[1]), merges=merges)
