"""Parameter and multiply-accumulate accounting against a device budget.

Counting is structural: every parameter slot counts, whatever its value.
Bias additions and activation functions are not MACs; BatchNorm is counted
in its folded form (scale + shift per channel, one multiply-add per element).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .model_ir import LayerSpec, ModelGraph, TensorShape, infer_shapes, input_shapes

BYTES_PER_PARAM = {"int8": 1, "float32": 4}


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    max_params: int
    max_macs: int
    required_weight_format: str = "int8"

    def __post_init__(self):
        if self.max_params <= 0 or self.max_macs <= 0:
            raise ValueError(f"profile {self.name!r}: limits must be positive")


# 128 K read as decimal thousands.
CORTEX_M4 = DeviceProfile("cortex-m4", max_params=128_000, max_macs=30_000_000, required_weight_format="int8")


@dataclass(frozen=True)
class LimitViolation:
    limit: str
    measured: int | str
    allowed: int | str

    def __str__(self) -> str:
        op = "!=" if isinstance(self.measured, str) else ">"
        return f"{self.limit} {self.measured} {op} {self.allowed}"


@dataclass(frozen=True)
class Conformance:
    profile: str
    violations: tuple[LimitViolation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    output_shape: TensorShape
    params: int
    macs: int
    param_bytes: int


@dataclass(frozen=True)
class ComplexityReport:
    per_layer: tuple[LayerCost, ...]
    weight_format: str
    conformance: Conformance | None = None
    total_params: int = field(init=False)
    total_macs: int = field(init=False)
    total_param_bytes: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total_params", sum(c.params for c in self.per_layer))
        object.__setattr__(self, "total_macs", sum(c.macs for c in self.per_layer))
        object.__setattr__(self, "total_param_bytes", sum(c.param_bytes for c in self.per_layer))

    @property
    def mmacs(self) -> float:
        return self.total_macs / 1e6

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "params", "macs", "bytes"])
        for cost in self.per_layer:
            writer.writerow([cost.name, cost.params, cost.macs, cost.param_bytes])
        writer.writerow(["TOTAL", self.total_params, self.total_macs, self.total_param_bytes])
        return buf.getvalue()

    def to_table(self) -> str:
        header = f"{'layer':<16} {'kind':<16} {'output':>12} {'params':>10} {'MACs':>14} {'bytes':>10}"
        lines = [header, "-" * len(header)]
        for c in self.per_layer:
            lines.append(
                f"{c.name:<16} {c.kind:<16} {str(c.output_shape):>12} {c.params:>10,} {c.macs:>14,} {c.param_bytes:>10,}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'TOTAL':<16} {'':<16} {'':>12} {self.total_params:>10,} {self.total_macs:>14,} {self.total_param_bytes:>10,}"
        )
        lines.append(f"parameters: {self.total_params / 1e3:.1f} K ({self.weight_format})")
        lines.append(f"MMACs:      {self.mmacs:.2f}")
        if self.conformance is not None:
            verdict = "PASS" if self.conformance.passed else "FAIL"
            lines.append(f"conformance vs {self.conformance.profile}: {verdict}")
            for v in self.conformance.violations:
                lines.append(f"  violated: {v}")
        return "\n".join(lines)


def layer_params(layer: LayerSpec, in_shape: TensorShape) -> int:
    c_in = in_shape.channels
    kind = layer.kind
    if kind == "Conv2D":
        n = layer.kernel_h * layer.kernel_w * c_in * layer.out_channels
        return n + (layer.out_channels if layer.has_bias else 0)
    if kind == "DepthwiseConv2D":
        return layer.kernel_h * layer.kernel_w * c_in + (c_in if layer.has_bias else 0)
    if kind == "Dense":
        return in_shape.size * layer.out_units + (layer.out_units if layer.has_bias else 0)
    if kind == "BatchNorm":
        return 2 * c_in
    return 0


def layer_macs(layer: LayerSpec, in_shape: TensorShape, out_shape: TensorShape) -> int:
    kind = layer.kind
    spatial = out_shape.height * out_shape.width
    if kind == "Conv2D":
        return layer.kernel_h * layer.kernel_w * in_shape.channels * layer.out_channels * spatial
    if kind == "DepthwiseConv2D":
        return layer.kernel_h * layer.kernel_w * in_shape.channels * spatial
    if kind == "Dense":
        return in_shape.size * layer.out_units
    if kind == "BatchNorm":
        return in_shape.size
    return 0


def _costs(graph: ModelGraph) -> list[LayerCost]:
    bytes_per = BYTES_PER_PARAM[graph.precision]
    outs = infer_shapes(graph)
    costs = []
    for layer, in_shape, (_, out_shape) in zip(graph.layers, input_shapes(graph), outs):
        params = layer_params(layer, in_shape)
        costs.append(
            LayerCost(
                name=layer.name,
                kind=layer.kind,
                output_shape=out_shape,
                params=params,
                macs=layer_macs(layer, in_shape, out_shape),
                param_bytes=params * bytes_per,
            )
        )
    return costs


def count_params(graph: ModelGraph) -> tuple[list[tuple[str, int]], int]:
    """Per-layer parameter counts and their total."""
    per_layer = [(c.name, c.params) for c in _costs(graph)]
    return per_layer, sum(n for _, n in per_layer)


def count_macs(graph: ModelGraph) -> tuple[list[tuple[str, int]], int]:
    """Per-layer MACs for one inference and their total."""
    per_layer = [(c.name, c.macs) for c in _costs(graph)]
    return per_layer, sum(n for _, n in per_layer)


def check_conformance(total_params: int, total_macs: int, weight_format: str, profile: DeviceProfile) -> Conformance:
    violations = []
    if total_params > profile.max_params:
        violations.append(LimitViolation("params", total_params, profile.max_params))
    if total_macs > profile.max_macs:
        violations.append(LimitViolation("macs", total_macs, profile.max_macs))
    if weight_format != profile.required_weight_format:
        violations.append(LimitViolation("weight_format", weight_format, profile.required_weight_format))
    return Conformance(profile.name, tuple(violations))


def audit(graph: ModelGraph, profile: DeviceProfile | None = CORTEX_M4) -> ComplexityReport:
    report = ComplexityReport(tuple(_costs(graph)), graph.precision)
    if profile is None:
        return report
    verdict = check_conformance(report.total_params, report.total_macs, graph.precision, profile)
    return ComplexityReport(report.per_layer, graph.precision, verdict)
