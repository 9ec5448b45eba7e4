import math

import numpy as np
import pytest
from conftest import MINI, TINY
from hypothesis import given, settings
from hypothesis import strategies as st

from fedids import flows
from fedids import rng as rngmod
from fedids import tensor_core as tc
from fedids.federated import OptimConfig, mean_loss, train_epochs
from fedids.model import (
    PUBLISHED_PARAM_COUNT,
    ConfigError,
    ModelConfig,
    argmax_lowest,
    count_params,
    forward,
    init_model,
    loss_and_grads,
    param_shapes,
    predict,
    validate_config,
)
from fedids.tokenizer import train_vocab


def brute_force_count(cfg):
    return sum(a.size for a in init_model(cfg, 0).values())


def random_batch(cfg, b, seed, min_len=2):
    g = np.random.default_rng(seed)
    ids = np.zeros((b, cfg.seq_len), dtype=np.int32)
    mask = np.zeros((b, cfg.seq_len), dtype=np.int8)
    for i in range(b):
        n = int(g.integers(min_len, cfg.seq_len + 1))
        ids[i, 0] = 1
        ids[i, 1:n] = g.integers(4, cfg.vocab, size=n - 1)
        mask[i, :n] = 1
    return ids, mask, g.integers(0, cfg.num_classes, size=b)


def model_grad_error(cfg, seed, per_tensor=5):
    weights = init_model(cfg, seed, dtype=np.float64)
    g = np.random.default_rng(seed)
    # widen the init so every path carries a visible gradient
    for k in weights:
        weights[k] = weights[k] + g.standard_normal(weights[k].shape) * 0.3
    ids, mask, labels = random_batch(cfg, 3, seed)
    _, grads = loss_and_grads(weights, cfg, ids, mask, labels, training=False)

    def f():
        return float(tc.cross_entropy(forward(weights, cfg, ids, mask), labels).data)

    worst = 0.0
    for name, w in weights.items():
        flat = list(np.ndindex(w.shape))
        for i in g.choice(len(flat), min(per_tensor, len(flat)), replace=False):
            num = tc.numerical_grad(f, w, flat[i])
            worst = max(worst, tc.relative_error(grads[name][flat[i]], num, floor=1e-6))
    return worst


class TestConfig:
    def test_full_size_valid(self):
        assert validate_config(ModelConfig()) == ModelConfig()
        d = ModelConfig()
        assert (d.num_layers, d.hidden, d.heads, d.intermediate, d.seq_len, d.vocab, d.dropout) == (
            4, 256, 4, 1024, 512, 5000, 0.1,
        )

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError, match="H mod A != 0"):
            validate_config(ModelConfig(hidden=256, heads=3))

    def test_ffn_rule(self):
        with pytest.raises(ConfigError, match="FFN != 4H"):
            validate_config(ModelConfig(hidden=256, intermediate=512))

    def test_round_trip_dict(self):
        assert ModelConfig.from_dict(MINI.to_dict()) == MINI


class TestParamCount:
    def test_tiny_brute_force(self):
        # the closed form and the enumeration agree on 334 for this config
        assert count_params(TINY) == brute_force_count(TINY) == 334

    def test_linear_in_classes(self):
        a = ModelConfig(num_classes=8)
        b = ModelConfig(num_classes=16)
        assert count_params(b) - count_params(a) == a.hidden * 8 + 8

    def test_full_size_c15(self):
        cfg = ModelConfig(num_classes=15)
        assert count_params(cfg) == brute_force_count(cfg) == 4_574_479
        assert count_params(cfg) != PUBLISHED_PARAM_COUNT

    @settings(max_examples=20, deadline=None)
    @given(
        st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(2, 12), st.integers(5, 40), st.integers(2, 9)
    )
    def test_closed_form_matches_shapes(self, layers, heads, head_dim, seq, vocab, classes):
        h = heads * head_dim
        cfg = ModelConfig(layers, h, heads, 4 * h, seq, vocab, classes)
        assert count_params(cfg) == sum(math.prod(s) for s in param_shapes(cfg).values())


class TestInit:
    def test_deterministic(self):
        a, b = init_model(TINY, 3), init_model(TINY, 3)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_seed_changes_weights(self):
        a, b = init_model(TINY, 3), init_model(TINY, 4)
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_statistics(self):
        w = init_model(MINI, 0)
        tok = w["embeddings.token"]
        assert -0.005 <= tok.mean() <= 0.005
        assert 0.015 <= tok.std() <= 0.025
        assert np.abs(tok).max() <= 0.04 + 1e-7
        assert all(np.all(w[k] == 0) for k in w if k.endswith(".bias"))
        assert all(np.all(w[k] == 1) for k in w if k.endswith(".gain"))
        assert all(w[k].dtype == np.float32 for k in w)


class TestForward:
    def test_shape(self):
        ids, mask, _ = random_batch(MINI, 5, 0)
        assert forward(init_model(MINI, 0), MINI, ids, mask).shape == (5, MINI.num_classes)

    def test_token_id_out_of_range(self):
        ids, mask, _ = random_batch(TINY, 2, 0)
        ids[0, 1] = TINY.vocab
        with pytest.raises(ValueError):
            forward(init_model(TINY, 0), TINY, ids, mask)

    def test_pad_ids_do_not_matter(self):
        w = init_model(MINI, 1)
        ids, mask, _ = random_batch(MINI, 4, 1, min_len=3)
        mask[:, 40:] = 0
        ids[:, 40:] = 0
        base = forward(w, MINI, ids, mask).data
        g = np.random.default_rng(0)
        ids2 = ids.copy()
        ids2[mask == 0] = g.integers(0, MINI.vocab, size=int((mask == 0).sum()))
        np.testing.assert_allclose(forward(w, MINI, ids2, mask).data, base, atol=1e-6)

    def test_pad_tail_permutation_invariant(self):
        w = init_model(MINI, 2)
        ids, mask, _ = random_batch(MINI, 3, 2)
        ids[:, 30:], mask[:, 30:] = 5, 0
        ids[:, 30:] = np.random.default_rng(1).integers(4, MINI.vocab, size=(3, MINI.seq_len - 30))
        perm = 30 + np.random.default_rng(2).permutation(MINI.seq_len - 30)
        ids2 = ids.copy()
        ids2[:, 30:] = ids[:, perm]
        np.testing.assert_allclose(forward(w, MINI, ids2, mask).data, forward(w, MINI, ids, mask).data, atol=1e-6)

    def test_attention_rows_sum_to_one(self):
        w = init_model(TINY, 0, dtype=np.float64)
        ids = np.array([[1, 7, 0, 0]])
        mask = np.array([[1, 1, 0, 0]])
        trace = []
        forward(w, TINY, ids, mask, trace=trace)
        for probs in trace:
            np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
            assert np.all(probs[..., 2:] == 0)

    def test_eval_mode_deterministic_training_mode_seeded(self):
        w = init_model(MINI, 0)
        ids, mask, _ = random_batch(MINI, 4, 0)
        assert forward(w, MINI, ids, mask).data.tobytes() == forward(w, MINI, ids, mask).data.tobytes()
        a = forward(w, MINI, ids, mask, True, rngmod.stream(1)).data
        b = forward(w, MINI, ids, mask, True, rngmod.stream(1)).data
        c = forward(w, MINI, ids, mask, True, rngmod.stream(2)).data
        assert a.tobytes() == b.tobytes() and not np.array_equal(a, c)

    def test_init_loss_near_ln_c(self):
        w = init_model(MINI, 0)
        ids, mask, _ = random_batch(MINI, 64, 5)
        labels = np.arange(64) % MINI.num_classes
        loss = float(tc.cross_entropy(forward(w, MINI, ids, mask), labels).data)
        assert abs(loss - math.log(MINI.num_classes)) < 0.1


class TestPredict:
    def test_argmax_and_ties(self):
        assert argmax_lowest(np.array([[0.1, 0.9], [0.5, 0.5]])).tolist() == [1, 0]

    def test_shift_invariant(self):
        z = np.random.default_rng(0).standard_normal((20, 5))
        assert np.array_equal(argmax_lowest(z), argmax_lowest(z + np.arange(20)[:, None] * 7.0))

    def test_batched_equals_full(self):
        w = init_model(MINI, 0)
        ids, mask, _ = random_batch(MINI, 10, 0)
        assert np.array_equal(predict(w, MINI, ids, mask, batch_size=3), predict(w, MINI, ids, mask))


@pytest.mark.parametrize("seed", [0, 1])
def test_full_model_gradient_check(seed):
    assert model_grad_error(TINY, seed) < 1e-4


def test_one_epoch_reduces_loss_on_separable_data():
    spec = flows.SyntheticSpec(classes=4, fields=6, rows_per_class=40, noise=0.0, seed=1)
    header, rows = flows.generate_synthetic(spec)
    records = [flows.FlowRecord(tuple(zip(header[:-1], r[:-1])), r[-1]) for r in rows]
    tok = train_vocab([flows.hash_encode(r) for r in records], 300)
    names = sorted({r.label for r in records})
    data = flows.stack_examples(flows.build_examples(records, tok, names, 64), 64)
    cfg = ModelConfig(2, 64, 2, 256, 64, 300, 4, 0.1)
    w = init_model(cfg, 0)
    before = mean_loss(w, cfg, data)
    opt = OptimConfig(lr=1e-3).new_state()
    train_epochs(w, cfg, data, 1, opt, 32, seed=0)
    assert mean_loss(w, cfg, data) < before
