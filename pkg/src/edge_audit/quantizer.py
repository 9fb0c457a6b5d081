"""Post-training 8-bit affine quantization.

Weights are quantized symmetrically per tensor, activations asymmetrically
per tensor from ranges observed while running float inference over a
calibration set. Rounding is half away from zero everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyCalibration, GraphError
from .model_ir import ModelGraph, validate

QMIN, QMAX = -128, 127
SCHEMES = ("symmetric", "asymmetric")

# Layers whose output uses the input's quantization parameters unchanged.
PASSTHROUGH_KINDS = frozenset({"MaxPool2D", "AvgPool2D", "Flatten", "Dropout"})


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    scheme: str = "asymmetric"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown quantization scheme {self.scheme!r}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        if int(self.zero_point) != self.zero_point or not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero_point must be an integer in [{QMIN}, {QMAX}], got {self.zero_point!r}")
        if self.scheme == "symmetric" and self.zero_point != 0:
            raise ValueError("symmetric quantization requires zero_point = 0")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def qmin(self) -> int:
        return -127 if self.scheme == "symmetric" else QMIN


@dataclass
class CalibrationStats:
    """Running extrema of one tensor."""

    min: float = np.inf
    max: float = -np.inf
    count: int = 0

    def update(self, values) -> None:
        arr = np.asarray(values)
        if arr.size == 0:
            return
        self.min = min(self.min, float(arr.min()))
        self.max = max(self.max, float(arr.max()))
        self.count += 1


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def compute_qparams(min_val: float, max_val: float, scheme: str = "asymmetric") -> QuantParams:
    """Scale and zero point covering ``[min_val, max_val]``.

    The asymmetric range is widened to contain zero so that real zero (and
    therefore zero padding) is exactly representable.
    """
    if min_val > max_val:
        raise ValueError(f"min {min_val} exceeds max {max_val}")
    if scheme == "symmetric":
        bound = max(abs(min_val), abs(max_val))
        if bound == 0:
            return QuantParams(1.0, 0, scheme)
        return QuantParams(bound / 127.0, 0, scheme)
    if scheme != "asymmetric":
        raise ValueError(f"unknown quantization scheme {scheme!r}")
    lo, hi = min(min_val, 0.0), max(max_val, 0.0)
    if lo == hi:
        return QuantParams(1.0, 0, scheme)
    scale = (hi - lo) / 255.0
    zp = int(np.clip(round_half_away(-128.0 - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp, scheme)


def quantize_tensor(values, qp: QuantParams) -> np.ndarray:
    q = round_half_away(np.asarray(values, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, qp.qmin, QMAX).astype(np.int8)


def dequantize_tensor(q, qp: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


def weight_key(layer: str, tensor: str) -> str:
    return f"{layer}/{tensor}"


def act_key(layer: str | None) -> str:
    return "act:input" if layer is None else f"act:{layer}"


def calibrate(graph: ModelGraph, inputs: Iterable) -> dict[str, CalibrationStats]:
    """Observed activation extrema, keyed like the activation qparams."""
    from .inference import trace_float

    stats: dict[str, CalibrationStats] = {act_key(None): CalibrationStats()}
    for layer in graph.layers:
        stats[act_key(layer.name)] = CalibrationStats()
    seen = 0
    for x in inputs:
        outs = trace_float(graph, x)
        stats[act_key(None)].update(outs[0])
        for layer, act in zip(graph.layers, outs[1:]):
            stats[act_key(layer.name)].update(act)
        seen += 1
    if seen == 0:
        raise EmptyCalibration("calibration set is empty")
    return stats


def quantize_model(graph: ModelGraph, calibration: Iterable) -> ModelGraph:
    """Float model to int8 model carrying per-tensor quantization parameters."""
    result = validate(graph)
    if not result.ok:
        raise GraphError("; ".join(str(v) for v in result.violations))
    if not graph.has_weights:
        raise GraphError("cannot quantize a graph without weights")
    if graph.precision != "float32":
        raise GraphError(f"expected a float32 graph, got {graph.precision}")

    stats = calibrate(graph, calibration)
    qparams: dict[str, QuantParams] = {}

    weights = {}
    for layer_name, tensors in graph.weights.items():
        qtensors = {}
        for name, values in tensors.items():
            qp = compute_qparams(float(values.min()), float(values.max()), "symmetric")
            qparams[weight_key(layer_name, name)] = qp
            qtensors[name] = quantize_tensor(values, qp)
        weights[layer_name] = qtensors

    prev = act_key(None)
    s = stats[prev]
    qparams[prev] = compute_qparams(s.min, s.max, "asymmetric")
    for layer in graph.layers:
        key = act_key(layer.name)
        if layer.kind == "Softmax":
            break
        if layer.kind in PASSTHROUGH_KINDS:
            qparams[key] = qparams[prev]
        else:
            s = stats[key]
            qparams[key] = compute_qparams(s.min, s.max, "asymmetric")
        prev = key
    return graph.evolve(weights=weights, precision="int8", qparams=qparams)
