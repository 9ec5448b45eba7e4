from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedids import tokenizer as tk
from fedids.tokenizer import TokenizerModel, decode, encode, train_vocab


def naive_train(corpus, target):
    """Recount-everything greedy BPE, the slow reference."""
    seqs = [[b + 4 for b in s] for s in corpus]
    merges = []
    while 260 + len(merges) < target:
        counts = Counter()
        for s in seqs:
            for pair in zip(s, s[1:]):
                counts[pair] += 1
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        new = 260 + len(merges)
        merges.append(best)
        seqs = [naive_merge(s, best, new) for s in seqs]
    return merges


def naive_merge(seq, pair, new):
    out, i = [], 0
    while i < len(seq):
        if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
            out.append(new)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def naive_tokenize(text, merges):
    seq = [b + 4 for b in text]
    for i, pair in enumerate(merges):
        seq = naive_merge(seq, pair, 260 + i)
    return seq


def byte_strings(alphabet: bytes, max_size: int):
    return st.lists(st.sampled_from(list(alphabet)), max_size=max_size).map(bytes)


small_corpus = st.lists(byte_strings(b"abc", 12), min_size=1, max_size=12)


class TestTraining:
    def test_aaaa(self):
        m = train_vocab([b"aaaa"], 261)
        assert m.merges == [(ord("a") + 4, ord("a") + 4)]

    def test_distinct_single_bytes_no_merges(self):
        assert train_vocab([bytes([b]) for b in range(50)], 300).merges == []

    def test_abab_trace(self):
        m = train_vocab([b"abab", b"abab"], 262)
        a, b = ord("a") + 4, ord("b") + 4
        assert m.merges == [(a, b), (260, 260)]
        assert m.vocab_size == 262

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train_vocab([], 300)

    def test_target_below_byte_floor_rejected(self):
        with pytest.raises(ValueError):
            train_vocab([b"ab"], 259)

    def test_deterministic(self):
        corpus = [bytes(np.random.default_rng(s).integers(97, 103, size=30).tolist()) for s in range(40)]
        assert train_vocab(corpus, 400).merges == train_vocab(list(corpus), 400).merges

    @settings(max_examples=150, deadline=None)
    @given(small_corpus, st.integers(260, 300))
    def test_matches_naive_reference(self, corpus, target):
        assert train_vocab(corpus, target).merges == naive_train(corpus, target)


class TestEncoding:
    def test_no_merges_offsets(self):
        m = TokenizerModel(260)
        ids, mask = encode(b"ab", m, 5)
        assert ids == [1, 101, 102, 0, 0]
        assert mask == [1, 1, 1, 0, 0]

    def test_empty_string(self):
        ids, mask = encode(b"", TokenizerModel(260), 6)
        assert ids == [1, 0, 0, 0, 0, 0]
        assert mask == [1, 0, 0, 0, 0, 0]

    def test_abab_with_trained_merges(self):
        m = train_vocab([b"abab", b"abab"], 262)
        assert encode(b"abab", m, 4)[0] == [1, 261, 0, 0]

    def test_truncation(self):
        ids, mask = encode(b"abcdefgh", TokenizerModel(260), 4)
        assert ids == [1, 101, 102, 103] and mask == [1, 1, 1, 1]

    def test_decode_examples(self):
        m = TokenizerModel(260)
        assert decode([1, 0, 0], m) == b""
        assert decode([101], m) == b"a"
        assert decode([3], m) == tk.UNK_BYTES
        assert decode([9999], m) == tk.UNK_BYTES

    @settings(max_examples=200, deadline=None)
    @given(small_corpus, byte_strings(b"abcd", 20))
    def test_tokenize_matches_in_order_merges(self, corpus, text):
        m = train_vocab(corpus, 290)
        assert m.tokenize(text) == naive_tokenize(text, m.merges)


def test_round_trip_1000_random_strings():
    g = np.random.default_rng(0)
    corpus = [bytes(g.integers(0, 256, size=g.integers(0, 40)).tolist()) for _ in range(200)]
    corpus += [b"a1b2c3 " * 5] * 20
    m = train_vocab(corpus, 600)
    for _ in range(1000):
        s = bytes(g.integers(0, 256, size=g.integers(0, 60)).tolist())
        ids, _ = encode(s, m, len(s) + 2)
        assert decode(ids, m) == s


def test_monotone_compression():
    g = np.random.default_rng(1)
    corpus = [bytes(g.choice(list(b"0123456789abcdef "), size=40).tolist()) for _ in range(100)]
    full = train_vocab(corpus, 360)
    probes = corpus[:20] + [bytes(g.choice(list(b"0123456789abcdef "), size=50).tolist()) for _ in range(20)]
    for s in probes:
        lengths = [len(TokenizerModel(360, full.merges[:k]).tokenize(s)) for k in range(len(full.merges) + 1)]
        assert all(b <= a for a, b in zip(lengths, lengths[1:]))


def test_serialization_round_trip(tmp_path):
    m = train_vocab([b"abab", b"abab", b"abc abc"], 270)
    path = tmp_path / "t.bbpe"
    m.save(path)
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == "bbpe-v1 270"
    assert text.splitlines()[1] == "101 102 260"
    again = TokenizerModel.load(path)
    assert again.merges == m.merges and again.target_vocab_size == 270


@pytest.mark.parametrize(
    "text",
    ["", "bpe-v1 300\n", "bbpe-v1 300\n1 2\n", "bbpe-v1 300\n101 102 261\n", "bbpe-v1 300\n101 999 260\n"],
)
def test_bad_files_rejected(text):
    with pytest.raises(ValueError):
        tk.loads(text)
