"""Post-training symmetric per-channel int8 weight quantization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckptmod
from .checkpoint import Checkpoint, QuantizedTensor
from .model import BERT_BASE, ModelConfig, count_params

QMAX = 127

# reference figures for the full-scale model, echoed in reports for comparison
PUBLISHED_SIZE_REDUCTION_PCT = 28.74
PUBLISHED_ACCURACY_DROP_PCT = 0.02


def _channel_view(w: np.ndarray, axis: int) -> np.ndarray:
    """(channels, rest) view with channels along ``axis``."""
    return np.moveaxis(w, axis, 0).reshape(w.shape[axis], -1)


def quantize_per_channel(w: np.ndarray, axis: int = -1) -> QuantizedTensor:
    """scale_c = max|w_c| / 127 (1 for an all-zero channel), stored at float32
    precision; q = clamp(round_half_even(w / scale_c), -127, 127)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim < 1:
        raise ValueError("cannot quantize a scalar")
    if not -w.ndim <= axis < w.ndim:
        raise ValueError(f"axis {axis} invalid for shape {w.shape}")
    axis = axis % w.ndim
    if not np.isfinite(w).all():
        raise ValueError("cannot quantize non-finite values")
    absmax = np.abs(_channel_view(w, axis)).max(axis=1)
    scales = np.where(absmax > 0, absmax / QMAX, 1.0).astype(np.float32).astype(np.float64)
    q = _quantize_with(w, scales, axis)
    return QuantizedTensor(q, scales, axis)


def _quantize_with(w: np.ndarray, scales: np.ndarray, axis: int) -> np.ndarray:
    shape = [1] * w.ndim
    shape[axis] = -1
    q = np.rint(w / scales.reshape(shape))  # rint rounds half to even
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def requantize(w: np.ndarray, like: QuantizedTensor) -> QuantizedTensor:
    """Quantize ``w`` reusing the scales and axis of ``like``."""
    w = np.asarray(w, dtype=np.float64)
    return QuantizedTensor(_quantize_with(w, like.scales, like.axis), like.scales.copy(), like.axis)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    shape = [1] * qt.q_values.ndim
    shape[qt.axis] = -1
    return qt.q_values.astype(np.float64) * np.asarray(qt.scales, dtype=np.float64).reshape(shape)


def quantize_per_tensor(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-scale baseline, for comparison against the per-channel scheme."""
    w = np.asarray(w, dtype=np.float64)
    m = float(np.abs(w).max())
    scale = m / QMAX if m > 0 else 1.0
    q = np.clip(np.rint(w / scale), -QMAX, QMAX).astype(np.int8)
    return q, scale


# ------------------------------------------------------------------- models


def default_policy(name: str, arr: np.ndarray) -> bool:
    """Quantize 2-D weight matrices; keep embeddings, layernorms and biases."""
    return arr.ndim == 2 and name.endswith(".weight") and not name.startswith("embeddings.")


@dataclass
class QuantizationReport:
    policy: dict[str, str]
    bytes_before: int
    bytes_after: int
    quantized_payload_before: int
    quantized_payload_after: int
    accuracy_before: float | None = None
    accuracy_after: float | None = None
    size_comparison: dict = field(default_factory=dict)

    @property
    def size_reduction_pct(self) -> float:
        return 100.0 * (self.bytes_before - self.bytes_after) / self.bytes_before

    @property
    def quantized_payload_reduction_pct(self) -> float:
        if self.quantized_payload_before == 0:
            return 0.0
        return 100.0 * (self.quantized_payload_before - self.quantized_payload_after) / self.quantized_payload_before

    def to_dict(self) -> dict:
        d = {
            "policy": self.policy,
            "bytes_before": self.bytes_before,
            "bytes_after": self.bytes_after,
            "size_reduction_pct": self.size_reduction_pct,
            "quantized_payload_before": self.quantized_payload_before,
            "quantized_payload_after": self.quantized_payload_after,
            "quantized_payload_reduction_pct": self.quantized_payload_reduction_pct,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "accuracy_delta_points": None,
            "size_comparison": self.size_comparison,
            "reference": {
                "published_size_reduction_pct": PUBLISHED_SIZE_REDUCTION_PCT,
                "published_accuracy_drop_pct": PUBLISHED_ACCURACY_DROP_PCT,
            },
        }
        if self.accuracy_before is not None and self.accuracy_after is not None:
            d["accuracy_delta_points"] = 100.0 * (self.accuracy_after - self.accuracy_before)
        return d


def _select(policy, tensors) -> dict[str, bool]:
    if policy in (None, "default"):
        return {n: isinstance(t, np.ndarray) and default_policy(n, t) for n, t in tensors.items()}
    if policy == "none":
        return {n: False for n in tensors}
    if isinstance(policy, str):
        raise ValueError(f"unknown quantization policy {policy!r}")
    names = list(policy)
    unknown = [n for n in names if n not in tensors]
    if unknown:
        raise KeyError(f"policy names unknown tensors: {', '.join(unknown)}")
    return {n: n in names for n in tensors}


def quantize_model(
    ckpt: Checkpoint,
    policy: str | Sequence[str] | None = "default",
    evaluate: Callable[[dict[str, np.ndarray]], float] | None = None,
) -> tuple[Checkpoint, QuantizationReport]:
    """Quantize selected matrices along their output-channel axis (last axis,
    since weights are stored input x output).

    ``evaluate`` maps float weights to an accuracy; when given, the report
    carries accuracy before and after (dequantize-on-load inference).
    """
    chosen = _select(policy, ckpt.tensors)
    tensors: dict[str, np.ndarray | QuantizedTensor] = {}
    labels = {}
    for name, t in ckpt.tensors.items():
        if chosen[name]:
            if isinstance(t, QuantizedTensor):
                raise ValueError(f"{name} is already quantized")
            tensors[name] = quantize_per_channel(t, axis=t.ndim - 1)
            labels[name] = "quantized"
        else:
            tensors[name] = t
            labels[name] = "quantized" if isinstance(t, QuantizedTensor) else "full-precision"
    out = Checkpoint(dict(ckpt.config), tensors, dict(ckpt.meta))
    out.meta["quantization"] = {"scheme": "symmetric-int8-per-channel", "quantized": sorted(n for n in chosen if chosen[n])}

    before_sizes = ckptmod.payload_bytes(ckpt)
    after_sizes = ckptmod.payload_bytes(out)
    qnames = [n for n in chosen if chosen[n]]
    bytes_before = len(ckptmod.to_bytes(ckpt))
    bytes_after = len(ckptmod.to_bytes(out)) if qnames else bytes_before
    if not qnames:
        out = Checkpoint(dict(ckpt.config), dict(ckpt.tensors), dict(ckpt.meta))
    report = QuantizationReport(
        policy=labels,
        bytes_before=bytes_before,
        bytes_after=bytes_after,
        quantized_payload_before=sum(before_sizes[n] for n in qnames),
        quantized_payload_after=sum(after_sizes[n] for n in qnames),
    )
    cfg = ModelConfig.from_dict(ckpt.config)
    bert_base = ModelConfig(**{**BERT_BASE.to_dict(), "num_classes": cfg.num_classes})
    report.size_comparison = {
        "bert_base_fp32_bytes": 4 * count_params(bert_base),
        "truncated_fp32_bytes": bytes_before,
        "quantized_bytes": bytes_after,
    }
    if evaluate is not None:
        report.accuracy_before = float(evaluate(ckpt.float_weights()))
        report.accuracy_after = float(evaluate(out.float_weights()))
    return out, report
