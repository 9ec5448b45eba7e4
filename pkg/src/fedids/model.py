"""Truncated BERT-style encoder with a CLS linear head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import rng as rngmod
from . import tensor_core as tc
from .tensor_core import Tensor

PUBLISHED_PARAM_COUNT = 11_174_415  # published count for the full-size 4-layer configuration


class ConfigError(ValueError):
    """Invalid configuration or user input (exit code 2 on the command line)."""


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    hidden: int = 256
    heads: int = 4
    intermediate: int = 1024
    seq_len: int = 512
    vocab: int = 5000
    num_classes: int = 15
    dropout: float = 0.1

    def validate(self) -> "ModelConfig":
        for name in ("num_layers", "hidden", "heads", "intermediate", "seq_len", "vocab", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"H mod A != 0 (H={self.hidden}, A={self.heads})")
        if self.intermediate != 4 * self.hidden:
            raise ConfigError(f"FFN != 4H (FFN={self.intermediate}, H={self.hidden})")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def validate_config(cfg: ModelConfig) -> ModelConfig:
    return cfg.validate()


# BERT-base dimensions, used only for size comparisons in reports
BERT_BASE = ModelConfig(num_layers=12, hidden=768, heads=12, intermediate=3072, seq_len=512, vocab=30522)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor, in canonical (checkpoint) order."""
    H, F = cfg.hidden, cfg.intermediate
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (cfg.vocab, H),
        "embeddings.position": (cfg.seq_len, H),
        "embeddings.ln.gain": (H,),
        "embeddings.ln.bias": (H,),
    }
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (H, H)
            shapes[p + f"attn.{proj}.bias"] = (H,)
        shapes[p + "attn.ln.gain"] = (H,)
        shapes[p + "attn.ln.bias"] = (H,)
        shapes[p + "ffn.up.weight"] = (H, F)
        shapes[p + "ffn.up.bias"] = (F,)
        shapes[p + "ffn.down.weight"] = (F, H)
        shapes[p + "ffn.down.bias"] = (H,)
        shapes[p + "ffn.ln.gain"] = (H,)
        shapes[p + "ffn.ln.bias"] = (H,)
    shapes["classifier.weight"] = (H, cfg.num_classes)
    shapes["classifier.bias"] = (cfg.num_classes,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    V, S, H, F, L, C = cfg.vocab, cfg.seq_len, cfg.hidden, cfg.intermediate, cfg.num_layers, cfg.num_classes
    per_layer = 4 * (H * H + H) + 2 * 2 * H + H * F + F + F * H + H
    return V * H + S * H + 2 * H + L * per_layer + H * C + C


def size_on_disk_estimate(cfg: ModelConfig, overhead: int = 0) -> int:
    return 4 * count_params(cfg) + overhead


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """N(0, 0.02^2) truncated at 2 sigma for matrices and embeddings; zero
    biases; unit layernorm gains."""
    cfg.validate()
    g = rngmod.stream(seed, rngmod.INIT)
    weights = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            weights[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            weights[name] = np.zeros(shape, dtype=dtype)
        else:
            weights[name] = _truncated_normal(g, shape, 0.02).astype(dtype)
    return weights


def _truncated_normal(g: np.random.Generator, shape, std: float) -> np.ndarray:
    n = math.prod(shape)
    out = g.standard_normal(n)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = g.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).reshape(shape)


def check_weights(weights: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(weights) != set(expected):
        missing = sorted(set(expected) - set(weights))
        extra = sorted(set(weights) - set(expected))
        raise ConfigError(f"weights do not match config: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise ConfigError(f"{name}: expected shape {shape}, got {tuple(weights[name].shape)}")


# ------------------------------------------------------------------- forward


def _as_params(weights: Mapping[str, np.ndarray | Tensor], requires_grad: bool) -> dict[str, Tensor]:
    out = {}
    for k, w in weights.items():
        out[k] = w if isinstance(w, Tensor) else Tensor(w, requires_grad=requires_grad)
    return out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, s, h = x.shape
    return tc.transpose(tc.reshape(x, (b, s, heads, h // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, a, s, d = x.shape
    return tc.reshape(tc.transpose(x, (0, 2, 1, 3)), (b, s, a * d))


def _encoder_layer(p, prefix, x, keep, cfg, training, g, cls_only, trace):
    def w(name):
        return p[prefix + name]

    xq = tc.select(x, (slice(None), slice(0, 1))) if cls_only else x
    q = _split_heads(tc.linear(xq, w("attn.q.weight"), w("attn.q.bias")), cfg.heads)
    k = _split_heads(tc.linear(x, w("attn.k.weight"), w("attn.k.bias")), cfg.heads)
    v = _split_heads(tc.linear(x, w("attn.v.weight"), w("attn.v.bias")), cfg.heads)
    scores = tc.mul(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(cfg.head_dim))
    probs = tc.masked_softmax(scores, keep[:, None, None, :])
    if trace is not None:
        trace.append(probs.data)
    ctx = _merge_heads(tc.matmul(probs, v))
    attn = tc.linear(ctx, w("attn.o.weight"), w("attn.o.bias"))
    attn = tc.dropout(attn, cfg.dropout, training, g)
    h = tc.layer_norm(tc.add(xq, attn), w("attn.ln.gain"), w("attn.ln.bias"))
    up = tc.gelu(tc.linear(h, w("ffn.up.weight"), w("ffn.up.bias")))
    down = tc.dropout(tc.linear(up, w("ffn.down.weight"), w("ffn.down.bias")), cfg.dropout, training, g)
    return tc.layer_norm(tc.add(h, down), w("ffn.ln.gain"), w("ffn.ln.bias"))


def forward(
    weights: Mapping[str, np.ndarray | Tensor],
    cfg: ModelConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> Tensor:
    """Logits (B, C). Pass Tensors with ``requires_grad`` in ``weights`` to
    train; plain arrays give an inference-only graph.

    Trailing columns that are padding in every row are dropped before the
    encoder runs; masked keys get zero attention weight, so this cannot change
    the logits. The last layer only computes the CLS query row. When
    ``trace`` is a list, each layer's attention probabilities are appended.
    """
    token_ids = np.asarray(token_ids)
    mask = np.asarray(mask)
    if token_ids.ndim != 2 or token_ids.shape != mask.shape:
        raise ValueError(f"token_ids {token_ids.shape} and mask {mask.shape} must be equal 2-D shapes")
    if token_ids.shape[1] > cfg.seq_len:
        raise ValueError(f"sequence length {token_ids.shape[1]} exceeds model maximum {cfg.seq_len}")
    if token_ids.size and (token_ids.max() >= cfg.vocab or token_ids.min() < 0):
        raise ValueError(f"token id out of range [0, {cfg.vocab})")
    p = _as_params(weights, requires_grad=False)
    keep = mask.astype(bool)
    width = max(1, int(keep.any(axis=0).nonzero()[0].max(initial=0)) + 1)
    ids, keep = token_ids[:, :width], keep[:, :width]

    x = tc.add(tc.embedding(p["embeddings.token"], ids), tc.select(p["embeddings.position"], slice(0, width)))
    x = tc.layer_norm(x, p["embeddings.ln.gain"], p["embeddings.ln.bias"])
    x = tc.dropout(x, cfg.dropout, training, rng)
    for i in range(cfg.num_layers):
        x = _encoder_layer(p, f"layers.{i}.", x, keep, cfg, training, rng, i == cfg.num_layers - 1, trace)
    cls = tc.select(x, (slice(None), 0))
    return tc.linear(cls, p["classifier.weight"], p["classifier.bias"])


def loss_and_grads(
    weights: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    token_ids: np.ndarray,
    mask: np.ndarray,
    labels: np.ndarray,
    training: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    params = _as_params(weights, requires_grad=True)
    loss = tc.cross_entropy(forward(params, cfg, token_ids, mask, training, rng), labels)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    return float(loss.data), grads


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(np.asarray(logits), axis=1)


def predict(
    weights: Mapping[str, np.ndarray], cfg: ModelConfig, token_ids: np.ndarray, mask: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    out = []
    for start in range(0, len(token_ids), batch_size):
        sl = slice(start, start + batch_size)
        out.append(argmax_lowest(forward(weights, cfg, token_ids[sl], mask[sl]).data))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
