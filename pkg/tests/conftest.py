import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edge_audit.formats import baseline_path, load_model  # noqa: E402
from edge_audit.model_ir import LayerSpec, ModelGraph  # noqa: E402


def toy_baseline_layers() -> list[dict]:
    """Same layer pattern as the shipped baseline, scaled down to 8x10x1."""
    return [
        {"name": "conv1", "kind": "Conv2D", "kernel_h": 3, "kernel_w": 3, "out_channels": 4, "padding": "same"},
        {"name": "bn1", "kind": "BatchNorm"},
        {"name": "relu1", "kind": "ReLU"},
        {"name": "conv2", "kind": "Conv2D", "kernel_h": 3, "kernel_w": 3, "out_channels": 4, "padding": "same"},
        {"name": "bn2", "kind": "BatchNorm"},
        {"name": "relu2", "kind": "ReLU"},
        {"name": "pool1", "kind": "MaxPool2D", "pool_h": 2, "pool_w": 2},
        {"name": "drop1", "kind": "Dropout", "rate": 0.3},
        {"name": "conv3", "kind": "Conv2D", "kernel_h": 3, "kernel_w": 3, "out_channels": 8, "padding": "same"},
        {"name": "bn3", "kind": "BatchNorm"},
        {"name": "relu3", "kind": "ReLU"},
        {"name": "pool2", "kind": "MaxPool2D", "pool_h": 2, "pool_w": 2},
        {"name": "flatten", "kind": "Flatten"},
        {"name": "fc1", "kind": "Dense", "out_units": 16},
        {"name": "relu_fc1", "kind": "ReLU"},
        {"name": "fc2", "kind": "Dense", "out_units": 10},
        {"name": "softmax", "kind": "Softmax"},
    ]


def make_graph(input_shape, layers, weights=None, precision="float32") -> ModelGraph:
    return ModelGraph(input_shape, [LayerSpec.from_dict(d) for d in layers], weights or {}, precision)


@pytest.fixture(scope="session")
def baseline():
    return load_model(baseline_path())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_small_graph(rng: np.random.Generator, max_layers: int = 3):
    """Random valid graph of 1..max_layers layers on a small input.

    Returns ``(input_shape, layer dicts, weights)`` so that an oracle can
    consume the same description without going through the package.
    """
    h, w, c = int(rng.integers(3, 9)), int(rng.integers(3, 9)), int(rng.integers(1, 4))
    shape = [h, w, c]
    layers, weights = [], {}
    for i in range(int(rng.integers(1, max_layers + 1))):
        name = f"l{i}"
        options = ["Conv2D", "DepthwiseConv2D", "BatchNorm", "ReLU", "Dense"]
        if min(shape[:2]) >= 2:
            options += ["MaxPool2D", "AvgPool2D"]
        kind = str(rng.choice(options))
        if kind in ("Conv2D", "DepthwiseConv2D"):
            kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            pad = "same" if kh > shape[0] or kw > shape[1] else str(rng.choice(["same", "valid"]))
            d = {"name": name, "kind": kind, "kernel_h": kh, "kernel_w": kw, "stride_h": s, "stride_w": s,
                 "padding": pad, "has_bias": bool(rng.integers(0, 2))}
            cout = shape[2] if kind == "DepthwiseConv2D" else int(rng.integers(1, 5))
            if kind == "Conv2D":
                d["out_channels"] = cout
                weights[name] = {"kernel": rng.standard_normal((kh, kw, shape[2], cout))}
            else:
                weights[name] = {"kernel": rng.standard_normal((kh, kw, shape[2]))}
            if d["has_bias"]:
                weights[name]["bias"] = rng.standard_normal(cout)
            if pad == "same":
                shape = [-(-shape[0] // s), -(-shape[1] // s), cout]
            else:
                shape = [(shape[0] - kh) // s + 1, (shape[1] - kw) // s + 1, cout]
        elif kind in ("MaxPool2D", "AvgPool2D"):
            p = int(rng.integers(2, min(shape[:2]) + 1))
            d = {"name": name, "kind": kind, "pool_h": p, "pool_w": p}
            shape = [(shape[0] - p) // p + 1, (shape[1] - p) // p + 1, shape[2]]
        elif kind == "Dense":
            n = int(rng.integers(1, 7))
            d = {"name": name, "kind": kind, "out_units": n}
            weights[name] = {"kernel": rng.standard_normal((int(np.prod(shape)), n)), "bias": rng.standard_normal(n)}
            shape = [1, 1, n]
        elif kind == "BatchNorm":
            d = {"name": name, "kind": kind}
            weights[name] = {"scale": rng.standard_normal(shape[2]), "shift": rng.standard_normal(shape[2])}
        else:
            d = {"name": name, "kind": kind}
        layers.append(d)
    return (h, w, c), layers, weights


# One line per acceptance criterion, printed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
