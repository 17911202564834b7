import numpy as np
import pytest

from tuckervid.compress import compress_network
from tuckervid.cost import (
    cost_conv_original,
    cost_conv_tucker2,
    cost_linear_original,
    cost_tucker1,
    format_quantity,
    network_cost,
    ratio_bound,
    report,
)
from tuckervid.network import (
    ConvKernel,
    LayerSpec,
    NetworkSpec,
    count_multiplies,
    forward,
    infer_shapes,
)
from tuckervid.reference import reference_network, reference_plan, small_reference_network

from conftest import random_kernel


class TestClosedForms:
    def test_conv_original_middle_layer(self):
        # 6 -> 16 channels with a 75-voxel filter: 7200 weights + 16 biases.
        cost = cost_conv_original(6, 16, 75, out_voxels=100)
        assert cost.params == 7216
        assert cost.mults == 6 * 16 * 75 * 100

    def test_conv_original_unit_case(self):
        cost = cost_conv_original(1, 1, 1, 1, bias=False)
        assert cost.params == 1 and cost.mults == 1 and cost.flops == 2

    def test_conv_tucker2_middle_layer(self):
        cost = cost_conv_tucker2(6, 16, 2, 3, kernel_voxels=75, in_voxels=200, out_voxels=100)
        assert cost.params == 526
        terms = [c.mults for _, c in cost.breakdown]
        assert terms == [6 * 2 * 200, 2 * 3 * 75 * 100, 3 * 16 * 100]
        assert cost.mults == sum(terms)

    def test_conv_tucker2_lifted_first_linear(self):
        cost = cost_conv_tucker2(16, 128, 4, 7, kernel_voxels=324, in_voxels=324, out_voxels=1)
        assert cost.params == 10_160

    def test_conv_tucker2_full_rank_unit_volume(self):
        s, t = 5, 7
        cost = cost_conv_tucker2(s, t, s, t, kernel_voxels=1, in_voxels=1, out_voxels=1, bias=False)
        assert cost.params == s * s + s * t + t * t

    def test_tucker1_linear(self):
        cost = cost_tucker1(128, 84, 1)
        assert cost.params == 296
        assert cost.mults == 128 + 84
        assert cost.flops == 2 * (128 + 84) + 84

    def test_tucker1_full_rank_no_compression(self):
        cost = cost_tucker1(10, 6, 6, bias=False)
        assert cost.params == 10 * 6 + 6 * 6

    def test_tucker1_conv_case(self):
        cost = cost_tucker1(4, 6, 2, kernel_voxels=27, out_voxels=50)
        assert cost.params == 4 * 2 * 27 + 2 * 6 + 6
        assert cost.mults == 4 * 2 * 27 * 50 + 2 * 6 * 50

    def test_linear_original(self):
        cost = cost_linear_original(128, 84)
        assert cost.params == 10_836
        assert cost.mults == 10_752


class TestRatioBound:
    def test_middle_layer_bound(self):
        assert ratio_bound(6, 16, 2, 3) == 16.0

    def test_full_rank_bound_is_one(self):
        assert ratio_bound(5, 7, 5, 7) == 1.0

    def test_bound_holds_over_random_tuples(self, rng):
        for _ in range(300):
            s = int(rng.integers(1, 30))
            t = int(rng.integers(1, 30))
            rs = int(rng.integers(1, s + 1))
            rt = int(rng.integers(1, t + 1))
            lam = int(rng.integers(1, 200))
            g_out = int(rng.integers(1, 5000))
            g_in = g_out * int(rng.integers(1, 9))
            bound = ratio_bound(s, t, rs, rt)
            orig = cost_conv_original(s, t, lam, g_out, bias=False)
            comp = cost_conv_tucker2(s, t, rs, rt, lam, g_in, g_out, bias=False)
            assert orig.params / comp.params <= bound + 1e-9
            assert orig.mults / comp.mults <= bound + 1e-9


class TestInstrumentedCounts:
    def test_conv_counter_equals_closed_form(self, rng):
        for _ in range(10):
            s = int(rng.integers(1, 4))
            t = int(rng.integers(1, 5))
            k = random_kernel(
                rng,
                taps=tuple(int(v) for v in rng.integers(1, 4, size=3)),
                s=s,
                t=t,
                stride=tuple(int(v) for v in rng.integers(1, 3, size=3)),
                padding=tuple(int(v) for v in rng.integers(0, 2, size=3)),
            )
            net = NetworkSpec(
                layers=[LayerSpec.conv3d("c", k)],
                input_shape=(6, 7, 8, s),
            )
            (name, closed), = network_cost(net)
            with count_multiplies() as counter:
                forward(net, rng.standard_normal(net.input_shape))
            assert counter.count == closed.mults

    def test_compressed_network_counter_equals_closed_form(self, rng):
        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        closed_total = sum(c.mults for _, c in network_cost(compressed))
        with count_multiplies() as counter:
            forward(compressed, rng.standard_normal(net.input_shape))
        assert counter.count == closed_total


class TestReport:
    def test_identical_networks_all_ratios_one(self):
        net = small_reference_network(0)
        rep = report(net, net)
        for row in rep.rows:
            assert row.param_ratio == 1.0
            assert row.flops_ratio == 1.0
        assert rep.total_param_ratio == 1.0
        assert rep.total_flops_ratio == 1.0

    def test_totals_match_double_entry_recount(self):
        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        rep = report(net, compressed)
        # Independent accumulation straight off the layer lists.
        again_orig = sum(c.params for _, c in network_cost(net))
        again_comp = sum(c.params for _, c in network_cost(compressed))
        assert rep.total_original.params == again_orig
        assert rep.total_compressed.params == again_comp
        assert rep.total_original.mults == sum(c.mults for _, c in network_cost(net))
        assert rep.total_compressed.flops == sum(c.flops for _, c in network_cost(compressed))

    def test_totals_invariant_under_row_order(self):
        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        rep = report(net, compressed)
        shuffled = list(reversed(rep.rows))
        assert sum(r.original.params for r in shuffled) == sum(
            r.original.params for r in rep.rows
        )

    def test_group_rows_aggregate_members(self):
        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        rep = report(net, compressed)
        c2 = next(r for r in rep.rows if r.name == "C2")
        assert c2.strategy == "tucker2"
        assert c2.ranks == (2, 3)
        assert len(c2.compressed.breakdown) == 3
        assert c2.compressed.params == sum(c.params for _, c in c2.compressed.breakdown)

    def test_mismatched_networks_rejected(self, rng):
        net = small_reference_network(0)
        other = NetworkSpec(
            layers=[LayerSpec.relu("zzz")], input_shape=net.input_shape
        )
        with pytest.raises(ValueError, match="counterpart"):
            report(net, other)

    def test_text_table_contains_bracketed_breakdown(self):
        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        text = report(net, compressed).format_text()
        assert "(=" in text and "+" in text
        assert "TOTAL" in text

    def test_records_roundtrip_json(self):
        import json

        net = small_reference_network(0)
        compressed, _ = compress_network(net, reference_plan(net))
        records = report(net, compressed).to_records()
        parsed = [json.loads(json.dumps(r)) for r in records]
        assert parsed[-1]["record"] == "total"


@pytest.fixture(scope="module")
def reference_report():
    net = reference_network(0)
    compressed, _ = compress_network(net, reference_plan(net))
    return report(net, compressed)


class TestReferenceCosts:
    """Closed-form accounting for the full-size reconstructed network."""

    def test_original_weight_column(self, reference_report):
        params = {r.name: r.original.params for r in reference_report.rows}
        assert params == {"C1": 14_526, "C2": 7_216, "L1": 663_680, "L2": 10_836, "L3": 170}

    def test_compressed_weight_column(self, reference_report):
        params = {r.name: r.compressed.params for r in reference_report.rows}
        assert params == {"C1": 2_446, "C2": 526, "L1": 10_160, "L2": 296, "L3": 170}

    def test_per_layer_param_ratios(self, reference_report):
        ratios = {r.name: round(r.param_ratio, 2) for r in reference_report.rows}
        assert ratios == {"C1": 5.94, "C2": 13.72, "L1": 65.32, "L2": 36.61, "L3": 1.0}

    def test_param_totals(self, reference_report):
        assert reference_report.total_original.params == 696_428
        assert reference_report.total_compressed.params == 13_598
        assert reference_report.total_param_ratio == pytest.approx(51.22, abs=0.01)


class TestFormatQuantity:
    def test_thousands(self):
        assert format_quantity(14_526) == "14.5K"

    def test_millions(self):
        assert format_quantity(15_611_904_000) == "15611.9M"

    def test_small_values_verbatim(self):
        assert format_quantity(526) == "526"
