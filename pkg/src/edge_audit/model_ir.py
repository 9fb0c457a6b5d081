"""Sequential network description: layers, weights and shape inference.

Weight layouts are fixed:

* Conv2D kernel ``[kernel_h, kernel_w, in_channels, out_channels]``
* DepthwiseConv2D kernel ``[kernel_h, kernel_w, channels]`` (multiplier 1)
* Dense kernel ``[in_features, out_features]``; inputs with spatial extent are
  flattened row-major (height, width, channels) first
* BatchNorm is stored folded as per-channel ``scale`` and ``shift``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import GraphError, NonPositiveOutput

LAYER_KINDS = (
    "Conv2D",
    "DepthwiseConv2D",
    "Dense",
    "MaxPool2D",
    "AvgPool2D",
    "BatchNorm",
    "ReLU",
    "Flatten",
    "Dropout",
    "Softmax",
)
WEIGHTED_KINDS = frozenset({"Conv2D", "DepthwiseConv2D", "Dense", "BatchNorm"})
PRECISIONS = ("float32", "int8")


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        for dim in (self.height, self.width, self.channels):
            if int(dim) != dim or dim < 1:
                raise NonPositiveOutput(f"invalid tensor shape {self.as_tuple()}")

    @classmethod
    def of(cls, value: Iterable[int]) -> "TensorShape":
        h, w, c = (int(v) for v in value)
        return cls(h, w, c)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    def __str__(self) -> str:
        return f"{self.height}x{self.width}x{self.channels}"


@dataclass(frozen=True)
class LayerSpec:
    """One layer. Only the attributes relevant to ``kind`` are meaningful."""

    name: str
    kind: str
    kernel_h: int | None = None
    kernel_w: int | None = None
    out_channels: int | None = None
    stride_h: int | None = None
    stride_w: int | None = None
    padding: str = "valid"
    has_bias: bool = True
    out_units: int | None = None
    pool_h: int | None = None
    pool_w: int | None = None
    rate: float = 0.0

    def __post_init__(self):
        # strides default to 1 for convolutions and to the window for pooling
        pooling = self.kind in ("MaxPool2D", "AvgPool2D")
        if self.stride_h is None:
            object.__setattr__(self, "stride_h", self.pool_h if pooling else 1)
        if self.stride_w is None:
            object.__setattr__(self, "stride_w", self.pool_w if pooling else 1)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise GraphError(f"layer {data.get('name')!r}: unknown attribute(s) {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        keys = {
            "Conv2D": ("kernel_h", "kernel_w", "out_channels", "stride_h", "stride_w", "padding", "has_bias"),
            "DepthwiseConv2D": ("kernel_h", "kernel_w", "out_channels", "stride_h", "stride_w", "padding", "has_bias"),
            "Dense": ("out_units", "has_bias"),
            "MaxPool2D": ("pool_h", "pool_w", "stride_h", "stride_w"),
            "AvgPool2D": ("pool_h", "pool_w", "stride_h", "stride_w"),
            "Dropout": ("rate",),
        }.get(self.kind, ())
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        for key in keys:
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _freeze_weights(weights: Mapping[str, Mapping[str, Any]]) -> Mapping[str, Mapping[str, np.ndarray]]:
    frozen = {}
    for layer_name, tensors in weights.items():
        layer = {}
        for tensor_name, value in tensors.items():
            arr = np.array(value, copy=True)
            arr.setflags(write=False)
            layer[tensor_name] = arr
        frozen[layer_name] = MappingProxyType(layer)
    return MappingProxyType(frozen)


@dataclass(frozen=True)
class ModelGraph:
    """Immutable sequential model.

    ``weights`` may be empty, in which case the graph is structural only:
    it can be audited but not executed. ``qparams`` maps tensor keys
    (``"<layer>/<tensor>"`` for weights, ``"act:<layer>"`` for activations,
    ``"act:input"`` for the network input) to quantization parameters.
    """

    input_shape: TensorShape
    layers: tuple[LayerSpec, ...] = ()
    weights: Mapping[str, Mapping[str, np.ndarray]] = field(default_factory=dict)
    precision: str = "float32"
    qparams: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.input_shape, TensorShape):
            object.__setattr__(self, "input_shape", TensorShape.of(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "weights", _freeze_weights(self.weights))
        object.__setattr__(self, "qparams", MappingProxyType(dict(self.qparams)))

    @property
    def has_weights(self) -> bool:
        return bool(self.weights)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def evolve(self, **changes) -> "ModelGraph":
        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    layer: str | None
    reason: str

    def __str__(self) -> str:
        return f"{self.layer}: {self.reason}" if self.layer else self.reason


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _out_dim(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    return (size - kernel) // stride + 1


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Leading/trailing pad for "same" padding; the odd pixel goes last."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _check_attrs(layer: LayerSpec) -> None:
    def positive(*names):
        for attr in names:
            value = getattr(layer, attr)
            if value is None or int(value) != value or value < 1:
                raise GraphError(f"{attr} must be a positive integer, got {value!r}")

    kind = layer.kind
    if kind not in LAYER_KINDS:
        raise GraphError(f"unknown layer kind {kind!r}")
    if kind in ("Conv2D", "DepthwiseConv2D"):
        positive("kernel_h", "kernel_w", "stride_h", "stride_w")
        if kind == "Conv2D":
            positive("out_channels")
        if layer.padding not in ("same", "valid"):
            raise GraphError(f"padding must be 'same' or 'valid', got {layer.padding!r}")
    elif kind == "Dense":
        positive("out_units")
    elif kind in ("MaxPool2D", "AvgPool2D"):
        positive("pool_h", "pool_w", "stride_h", "stride_w")
    elif kind == "Dropout":
        if not 0.0 <= layer.rate < 1.0:
            raise GraphError(f"dropout rate must lie in [0, 1), got {layer.rate!r}")


def layer_output_shape(layer: LayerSpec, shape: TensorShape) -> TensorShape:
    """Output shape of ``layer`` applied to a tensor of ``shape``."""
    _check_attrs(layer)
    h, w, c = shape.as_tuple()
    kind = layer.kind
    if kind in ("Conv2D", "DepthwiseConv2D"):
        oh = _out_dim(h, layer.kernel_h, layer.stride_h, layer.padding)
        ow = _out_dim(w, layer.kernel_w, layer.stride_w, layer.padding)
        if kind == "Conv2D":
            oc = layer.out_channels
        else:
            if layer.out_channels is not None and layer.out_channels != c:
                raise GraphError(
                    f"depthwise channel mismatch: out_channels={layer.out_channels}, in_channels={c}"
                )
            oc = c
        dims = (oh, ow, oc)
    elif kind in ("MaxPool2D", "AvgPool2D"):
        dims = (
            _out_dim(h, layer.pool_h, layer.stride_h, "valid"),
            _out_dim(w, layer.pool_w, layer.stride_w, "valid"),
            c,
        )
    elif kind == "Flatten":
        dims = (1, 1, h * w * c)
    elif kind == "Dense":
        dims = (1, 1, layer.out_units)
    else:
        dims = (h, w, c)
    if min(dims) < 1:
        raise NonPositiveOutput(f"layer {layer.name!r} ({kind}) on {shape} gives output {dims}")
    return TensorShape(*dims)


def infer_shapes(graph: ModelGraph) -> list[tuple[str, TensorShape]]:
    """Per-layer output shapes, in layer order.

    Raises ``NonPositiveOutput`` when a window no longer fits its input and
    ``GraphError`` for malformed attributes or depthwise channel mismatches.
    """
    shape = graph.input_shape
    out = []
    for layer in graph.layers:
        try:
            shape = layer_output_shape(layer, shape)
        except NonPositiveOutput:
            raise
        except GraphError as exc:
            raise GraphError(f"layer {layer.name!r}: {exc}") from None
        out.append((layer.name, shape))
    return out


def input_shapes(graph: ModelGraph) -> list[TensorShape]:
    """Shape of the tensor entering each layer."""
    shapes = [graph.input_shape] + [s for _, s in infer_shapes(graph)]
    return shapes[:-1]


def required_weights(layer: LayerSpec, in_shape: TensorShape) -> dict[str, tuple[int, ...]]:
    """Weight tensors (name -> shape) that ``layer`` needs on ``in_shape``."""
    c = in_shape.channels
    if layer.kind == "Conv2D":
        req = {"kernel": (layer.kernel_h, layer.kernel_w, c, layer.out_channels)}
        if layer.has_bias:
            req["bias"] = (layer.out_channels,)
    elif layer.kind == "DepthwiseConv2D":
        req = {"kernel": (layer.kernel_h, layer.kernel_w, c)}
        if layer.has_bias:
            req["bias"] = (c,)
    elif layer.kind == "Dense":
        req = {"kernel": (in_shape.size, layer.out_units)}
        if layer.has_bias:
            req["bias"] = (layer.out_units,)
    elif layer.kind == "BatchNorm":
        req = {"scale": (c,), "shift": (c,)}
    else:
        req = {}
    return req


def validate(graph: ModelGraph, *, require_softmax: bool = False) -> ValidationResult:
    """Collect every invariant violation instead of stopping at the first.

    Weight tensors are checked only when the graph carries weights.
    """
    violations: list[Violation] = []
    if graph.precision not in PRECISIONS:
        violations.append(Violation(None, f"unknown precision {graph.precision!r}"))

    seen: set[str] = set()
    for layer in graph.layers:
        if layer.name in seen:
            violations.append(Violation(layer.name, "duplicate layer name"))
        seen.add(layer.name)

    shape = graph.input_shape
    shapes_ok = True
    for layer in graph.layers:
        try:
            out = layer_output_shape(layer, shape)
        except GraphError as exc:
            violations.append(Violation(layer.name, str(exc)))
            shapes_ok = False
            break
        if graph.has_weights:
            violations.extend(_check_layer_weights(graph, layer, shape))
        shape = out

    if graph.has_weights:
        names = {layer.name for layer in graph.layers}
        for extra in sorted(set(graph.weights) - names):
            violations.append(Violation(extra, "weights given for unknown layer"))

    if require_softmax and shapes_ok and (not graph.layers or graph.layers[-1].kind != "Softmax"):
        violations.append(Violation(None, "classifier graph must end with Softmax"))
    return ValidationResult(tuple(violations))


def _check_layer_weights(graph: ModelGraph, layer: LayerSpec, in_shape: TensorShape) -> list[Violation]:
    need = required_weights(layer, in_shape)
    have = graph.weights.get(layer.name, {})
    problems = []
    for name, shape in need.items():
        if name not in have:
            problems.append(Violation(layer.name, f"missing weight tensor {name!r}"))
        elif tuple(have[name].shape) != shape:
            problems.append(
                Violation(
                    layer.name,
                    f"weight shape mismatch for {name!r}: expected {shape}, got {tuple(have[name].shape)}",
                )
            )
    for name in sorted(set(have) - set(need)):
        problems.append(Violation(layer.name, f"unexpected weight tensor {name!r}"))
    return problems


def random_weights(graph: ModelGraph, seed: int | None = 0, *, scale: float = 1.0) -> ModelGraph:
    """Return ``graph`` with He-initialised float32 weights.

    Intended for smoke tests and for exercising the pipeline without a
    trained model. BatchNorm starts near identity.
    """
    rng = np.random.default_rng(seed)
    weights: dict[str, dict[str, np.ndarray]] = {}
    for layer, in_shape in zip(graph.layers, input_shapes(graph)):
        need = required_weights(layer, in_shape)
        if not need:
            continue
        if layer.kind == "BatchNorm":
            c = need["scale"][0]
            weights[layer.name] = {
                "scale": (1.0 + 0.1 * rng.standard_normal(c)).astype(np.float32),
                "shift": (0.1 * rng.standard_normal(c)).astype(np.float32),
            }
            continue
        kshape = need["kernel"]
        fan_in = int(np.prod(kshape[:-1])) if layer.kind != "DepthwiseConv2D" else kshape[0] * kshape[1]
        tensors = {
            "kernel": (scale * rng.standard_normal(kshape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
        }
        if "bias" in need:
            tensors["bias"] = (0.05 * scale * rng.standard_normal(need["bias"])).astype(np.float32)
        weights[layer.name] = tensors
    return graph.evolve(weights=weights, precision="float32", qparams={})
