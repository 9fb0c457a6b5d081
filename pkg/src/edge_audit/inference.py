"""Forward passes over a ModelGraph in float and in 8-bit integer arithmetic.

Activations are ``(height, width, channels)`` arrays. Convolution is
cross-correlation (no kernel flip). Both passes return the network's final
output as a flat vector, which is a probability vector for graphs ending in
Softmax.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AccumulatorOverflow, GraphError, MissingQuantParams, ShapeMismatch
from .labels import SCENE_CLASSES
from .model_ir import LayerSpec, ModelGraph, same_padding
from .quantizer import (
    PASSTHROUGH_KINDS,
    QMAX,
    QuantParams,
    act_key,
    dequantize_tensor,
    quantize_tensor,
    round_half_away,
    weight_key,
)

INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    e = np.exp(z - z.max())
    return e / e.sum()


def predict(probs, classes: Sequence[str] = SCENE_CLASSES) -> str:
    """Label of the most probable class; ties go to the lowest index."""
    return classes[int(np.argmax(np.asarray(probs)))]


def _as_input(graph: ModelGraph, x) -> np.ndarray:
    arr = np.asarray(x)
    expected = graph.input_shape.as_tuple()
    if arr.ndim == 2 and expected[2] == 1:
        arr = arr[:, :, None]
    elif arr.ndim == 1 and expected[:2] == (1, 1):
        arr = arr[None, None, :]
    if arr.shape != expected:
        raise ShapeMismatch(f"input shape {np.asarray(x).shape} does not match model input {expected}")
    return arr


def _pad(x: np.ndarray, layer: LayerSpec, value) -> np.ndarray:
    if layer.padding != "same":
        return x
    top, bottom = same_padding(x.shape[0], layer.kernel_h, layer.stride_h)
    left, right = same_padding(x.shape[1], layer.kernel_w, layer.stride_w)
    return np.pad(x, ((top, bottom), (left, right), (0, 0)), constant_values=value)


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # -> (out_h, out_w, channels, kh, kw)
    return sliding_window_view(x, (kh, kw), axis=(0, 1))[::sh, ::sw]


def _conv(x: np.ndarray, layer: LayerSpec, kernel: np.ndarray) -> np.ndarray:
    win = _windows(x, layer.kernel_h, layer.kernel_w, layer.stride_h, layer.stride_w)
    if layer.kind == "Conv2D":
        return np.tensordot(win, kernel, axes=([2, 3, 4], [2, 0, 1]))
    return np.einsum("hwcij,ijc->hwc", win, kernel)


def _pool(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    win = _windows(x, layer.pool_h, layer.pool_w, layer.stride_h, layer.stride_w)
    if layer.kind == "MaxPool2D":
        return win.max(axis=(3, 4))
    return win.mean(axis=(3, 4))


def _float_layer(layer: LayerSpec, x: np.ndarray, weights) -> np.ndarray:
    kind = layer.kind
    w = weights.get(layer.name, {})
    if kind in ("Conv2D", "DepthwiseConv2D"):
        y = _conv(_pad(x, layer, 0.0), layer, np.asarray(w["kernel"], dtype=np.float64))
        if "bias" in w:
            y = y + w["bias"]
        return y
    if kind == "Dense":
        y = x.reshape(-1) @ np.asarray(w["kernel"], dtype=np.float64)
        if "bias" in w:
            y = y + w["bias"]
        return y.reshape(1, 1, -1)
    if kind == "BatchNorm":
        return x * np.asarray(w["scale"], dtype=np.float64) + w["shift"]
    if kind in ("MaxPool2D", "AvgPool2D"):
        return _pool(x, layer)
    if kind == "ReLU":
        return np.maximum(x, 0.0)
    if kind == "Flatten":
        return x.reshape(1, 1, -1)
    if kind == "Dropout":
        return x
    if kind == "Softmax":
        return softmax(x).reshape(x.shape)
    raise GraphError(f"unknown layer kind {kind!r}")


def trace_float(graph: ModelGraph, x) -> list[np.ndarray]:
    """Input followed by every layer's float output."""
    if graph.layers and not graph.has_weights and any(
        l.kind in ("Conv2D", "DepthwiseConv2D", "Dense", "BatchNorm") for l in graph.layers
    ):
        raise GraphError("graph has no weights; it can be audited but not executed")
    act = _as_input(graph, x).astype(np.float64)
    outs = [act]
    for layer in graph.layers:
        act = _float_layer(layer, act, graph.weights)
        outs.append(act)
    return outs


def forward_float(graph: ModelGraph, x) -> np.ndarray:
    return trace_float(graph, x)[-1].reshape(-1)


def _qp(graph: ModelGraph, key: str) -> QuantParams:
    try:
        return graph.qparams[key]
    except KeyError:
        raise MissingQuantParams(f"no quantization parameters for {key!r}") from None


def _requantize(real_codes: np.ndarray, qp: QuantParams) -> np.ndarray:
    """``real_codes`` are values already divided by the output scale."""
    return np.clip(round_half_away(real_codes) + qp.zero_point, qp.qmin, QMAX).astype(np.int32)


def _int_matmul(win: np.ndarray, kernel: np.ndarray, layer: LayerSpec) -> np.ndarray:
    # Integer operands are carried in float64: every partial sum of int8
    # products here stays far below 2**53, so BLAS gives the exact integer
    # result, which is then checked against the int32 accumulator range.
    a = win.astype(np.float64)
    k = kernel.astype(np.float64)
    if layer.kind == "Conv2D":
        acc = np.tensordot(a, k, axes=([2, 3, 4], [2, 0, 1]))
    elif layer.kind == "DepthwiseConv2D":
        acc = np.einsum("hwcij,ijc->hwc", a, k)
    else:
        acc = a @ k
    acc = np.rint(acc).astype(np.int64)
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise AccumulatorOverflow(f"layer {layer.name!r}: accumulator exceeds the int32 range")
    return acc


LINEAR_KINDS = frozenset({"Conv2D", "DepthwiseConv2D", "Dense"})
ELEMENTWISE_KINDS = frozenset({"BatchNorm", "ReLU"})


def _linear_real(graph: ModelGraph, layer: LayerSpec, q: np.ndarray, qp_in: QuantParams) -> np.ndarray:
    """Integer accumulation, rescaled to real values (bias included)."""
    w = graph.weights.get(layer.name, {})
    kqp = _qp(graph, weight_key(layer.name, "kernel"))
    centered = q.astype(np.int64) - qp_in.zero_point
    if layer.kind == "Dense":
        acc = _int_matmul(centered.reshape(-1), np.asarray(w["kernel"]), layer).reshape(1, 1, -1)
    else:
        padded = _pad(centered, layer, 0)
        win = _windows(padded, layer.kernel_h, layer.kernel_w, layer.stride_h, layer.stride_w)
        acc = _int_matmul(win, np.asarray(w["kernel"]), layer)
    real = acc * (qp_in.scale * kqp.scale)
    if "bias" in w:
        real = real + dequantize_tensor(w["bias"], _qp(graph, weight_key(layer.name, "bias")))
    return real


def _elementwise_real(graph: ModelGraph, layer: LayerSpec, real: np.ndarray) -> np.ndarray:
    if layer.kind == "ReLU":
        return np.maximum(real, 0.0)
    w = graph.weights[layer.name]
    scale = dequantize_tensor(w["scale"], _qp(graph, weight_key(layer.name, "scale")))
    shift = dequantize_tensor(w["shift"], _qp(graph, weight_key(layer.name, "shift")))
    return real * scale + shift


def _passthrough(layer: LayerSpec, q: np.ndarray, qp_in: QuantParams) -> np.ndarray:
    if layer.kind == "MaxPool2D":
        return _windows(q, layer.pool_h, layer.pool_w, layer.stride_h, layer.stride_w).max(axis=(3, 4))
    if layer.kind == "AvgPool2D":
        win = _windows(q, layer.pool_h, layer.pool_w, layer.stride_h, layer.stride_w)
        mean = win.astype(np.float64).mean(axis=(3, 4))
        return np.clip(round_half_away(mean), qp_in.qmin, QMAX).astype(np.int32)
    if layer.kind == "Flatten":
        return q.reshape(1, 1, -1)
    return q


def forward_quantized(qgraph: ModelGraph, x) -> np.ndarray:
    """Integer forward pass of a graph produced by ``quantize_model``.

    Real-valued input is quantized with the input tensor's parameters;
    int8 input is taken as already quantized. A run of BatchNorm/ReLU layers
    is fused into the preceding convolution or dense layer, so the chain is
    requantized once, with the parameters of its last layer. Softmax runs on
    dequantized logits.
    """
    if qgraph.precision != "int8":
        raise GraphError("forward_quantized needs an int8 graph")
    arr = _as_input(qgraph, x)
    qp = _qp(qgraph, act_key(None))
    q = arr.astype(np.int32) if arr.dtype == np.int8 else quantize_tensor(arr, qp).astype(np.int32)
    layers = qgraph.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        if layer.kind == "Softmax":
            return softmax(dequantize_tensor(q, qp))
        if layer.kind in PASSTHROUGH_KINDS:
            q = _passthrough(layer, q, qp)
            i += 1
            continue
        if layer.kind in LINEAR_KINDS:
            real, j = _linear_real(qgraph, layer, q, qp), i + 1
        elif layer.kind in ELEMENTWISE_KINDS:
            real, j = dequantize_tensor(q, qp), i
        else:
            raise GraphError(f"layer kind {layer.kind!r} has no integer implementation")
        while j < len(layers) and layers[j].kind in ELEMENTWISE_KINDS:
            real = _elementwise_real(qgraph, layers[j], real)
            j += 1
        qp = _qp(qgraph, act_key(layers[j - 1].name))
        q = _requantize(real / qp.scale, qp)
        i = j
    return dequantize_tensor(q, qp).reshape(-1)
