import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_graph
from edge_audit.complexity import (
    CORTEX_M4,
    DeviceProfile,
    audit,
    check_conformance,
    count_macs,
    count_params,
)
from edge_audit.model_ir import ModelGraph, random_weights

# Hand-derived per-layer counts for the shipped baseline description.
# Feature maps: 40x51x16 -> pool(7x3) 5x17x16 -> 5x17x30 -> pool(2x8) 2x2x30 -> 120.
BASELINE_PARAMS = {
    "conv1": 7 * 7 * 1 * 16,
    "bn1": 2 * 16,
    "conv2": 7 * 7 * 16 * 16 + 16,
    "conv3": 7 * 7 * 16 * 30 + 30,
    "fc1": 120 * 72 + 72,
    "bn_fc1": 2 * 72,
    "fc2": 72 * 10 + 10,
}
BASELINE_MACS = {
    "conv1": 49 * 1 * 16 * 40 * 51,
    "bn1": 40 * 51 * 16,
    "conv2": 49 * 16 * 16 * 40 * 51,
    "conv3": 49 * 16 * 30 * 5 * 17,
    "fc1": 120 * 72,
    "bn_fc1": 72,
    "fc2": 720,
}


def dense(n_in, n_out, bias=True):
    return make_graph((1, 1, n_in), [{"name": "fc", "kind": "Dense", "out_units": n_out, "has_bias": bias}])


def conv7(h=40, w=51, c_in=1, c_out=16):
    return make_graph((h, w, c_in), [{"name": "conv", "kind": "Conv2D", "kernel_h": 7, "kernel_w": 7,
                                      "out_channels": c_out, "padding": "same"}])


class TestCountParams:
    def test_dense_with_bias(self):
        assert count_params(dense(100, 10))[1] == 1010

    def test_conv_7x7(self):
        assert count_params(conv7())[1] == 800

    def test_empty_graph(self):
        assert count_params(ModelGraph((4, 4, 1)))[1] == 0

    def test_depthwise(self):
        g = make_graph((6, 6, 5), [{"name": "dw", "kind": "DepthwiseConv2D", "kernel_h": 3, "kernel_w": 3}])
        assert count_params(g)[1] == 3 * 3 * 5 + 5

    def test_baseline_per_layer(self, baseline):
        per_layer, total = count_params(baseline)
        nonzero = {name: n for name, n in per_layer if n}
        assert nonzero == BASELINE_PARAMS
        assert total == sum(BASELINE_PARAMS.values()) == 46512


class TestCountMacs:
    def test_dense(self):
        assert count_macs(dense(100, 10))[1] == 1000

    def test_bias_adds_are_not_macs(self):
        assert count_macs(dense(100, 10, bias=False))[1] == count_macs(dense(100, 10))[1]

    def test_conv_7x7_on_40x51(self):
        assert count_macs(conv7())[1] == 1_599_360

    def test_baseline_per_layer(self, baseline):
        per_layer, total = count_macs(baseline)
        assert {name: n for name, n in per_layer if n} == BASELINE_MACS
        assert total == 29_230_392
        assert f"{total / 1e6:.2f}" == "29.23"


class TestConformance:
    def test_over_param_limit(self):
        result = check_conformance(130_000, 10_000_000, "int8", CORTEX_M4)
        assert not result.passed
        assert [str(v) for v in result.violations] == ["params 130000 > 128000"]

    def test_one_mac_over(self):
        result = check_conformance(100_000, 30_000_001, "int8", CORTEX_M4)
        assert [v.limit for v in result.violations] == ["macs"]

    def test_limits_are_inclusive(self):
        assert check_conformance(128_000, 30_000_000, "int8", CORTEX_M4).passed

    def test_weight_format(self):
        result = check_conformance(10, 10, "float32", CORTEX_M4)
        assert [str(v) for v in result.violations] == ["weight_format float32 != int8"]

    def test_empty_graph_passes(self):
        report = audit(ModelGraph((4, 4, 1), precision="int8"))
        assert (report.total_params, report.total_macs) == (0, 0)
        assert report.conformance.passed

    def test_baseline_passes_cortex_m4(self, baseline):
        report = audit(baseline, CORTEX_M4)
        assert report.conformance.passed
        assert report.total_params == 46512

    def test_baseline_fails_tighter_mac_budget(self, baseline):
        tight = DeviceProfile("tight", max_params=128_000, max_macs=20_000_000)
        report = audit(baseline, tight)
        assert [v.limit for v in report.conformance.violations] == ["macs"]

    def test_profile_limits_must_be_positive(self):
        with pytest.raises(ValueError):
            DeviceProfile("bad", 0, 10)


class TestReport:
    def test_csv_has_total_row(self, baseline):
        lines = audit(baseline).to_csv().splitlines()
        assert lines[0] == "layer,params,macs,bytes"
        assert lines[-1] == "TOTAL,46512,29230392,46512"

    def test_float_bytes_are_four_per_param(self):
        report = audit(dense(100, 10), None)
        assert report.total_param_bytes == 4040
        assert report.conformance is None

    def test_table_mentions_verdict(self, baseline):
        table = audit(baseline).to_table()
        assert "MMACs:      29.23" in table
        assert "PASS" in table


class TestCountingProperties:
    def test_value_independent(self, baseline):
        a, b = random_weights(baseline, seed=1), random_weights(baseline, seed=2, scale=10.0)
        assert count_params(a) == count_params(b) == count_params(baseline)
        assert count_macs(a) == count_macs(b) == count_macs(baseline)

    @settings(max_examples=40)
    @given(st.integers(1, 64), st.integers(1, 64), st.integers(8, 40), st.integers(8, 40))
    def test_doubling_output_channels_doubles_conv_cost(self, c_in, c_out, h, w):
        one = conv7(h, w, c_in, c_out)
        two = conv7(h, w, c_in, 2 * c_out)
        assert count_macs(two)[1] == 2 * count_macs(one)[1]
        weights = 49 * c_in * c_out
        assert count_params(two)[1] == 2 * weights + 2 * c_out

    @settings(max_examples=40)
    @given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64))
    def test_additive_over_layers(self, a, b, c):
        g = make_graph((1, 1, a), [{"name": "f1", "kind": "Dense", "out_units": b},
                                   {"name": "f2", "kind": "Dense", "out_units": c}])
        assert count_params(g)[1] == count_params(dense(a, b))[1] + count_params(dense(b, c))[1]
        assert count_macs(g)[1] == a * b + b * c
