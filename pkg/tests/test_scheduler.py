from itertools import product

import numpy as np
import pytest

from cnngraph import graph_from_dict
from errors import BudgetTooSmall, CapacityExceeded, InputError
from mcu_platform import Calibration, ComputeEngine, EngineKind, MemoryTier, PlatformModel
from scheduler import (EXT, L2, BudgetConfig, TransferClass, _Planner, compare_budgets,
                       estimate_latency, plan_schedule, schedule_and_estimate)

SHIPPED = BudgetConfig(115_600, 1_200_000)
SMALL = BudgetConfig(46_700, 267_000)


def platform(l1_bw=8.0, l2_bw=8.0, ext_bw=1.0, ext_row=0.0, overlap=False, accel_peak=None,
             ew=4.0, pass_overhead=0.0, l1_cap=65_536, l2_cap=262_144):
    engines = [ComputeEngine("cores", EngineKind.WORKER_CORES, 8.0, num_workers=8)]
    if accel_peak:
        engines.append(ComputeEngine("accel", EngineKind.CONV_ACCELERATOR, accel_peak, 0.5,
                                     frozenset({"conv2d", "pointwise_conv2d", "depthwise_conv2d"})))
    tiers = (
        MemoryTier("L1", l1_cap, l1_bw, l1_bw),
        MemoryTier("L2", l2_cap, l2_bw, l2_bw),
        MemoryTier("ext_ram", 8 << 20, ext_bw, ext_bw, ext_row),
        MemoryTier("flash", 64 << 20, ext_bw, ext_bw),
    )
    cal = Calibration(1.0, 1.0, 4.0, 2.0, ew, pass_overhead)
    return PlatformModel("test", 100e6, 1.0, tiers, tuple(engines), dma_overlap=overlap, calibration=cal)


def chain(input_shape, *layers):
    return graph_from_dict({"name": "chain", "input": {"name": "in", "shape": list(input_shape)},
                            "layers": list(layers)})


def op(name, kind, src, in_shape, out_shape, **kw):
    return dict(name=name, op=kind, inputs=[src] if isinstance(src, str) else src,
                in_shape=list(in_shape), out_shape=list(out_shape), **kw)


def random_chain(rng, length):
    c, h = int(rng.choice([4, 8, 16])), int(rng.choice([8, 16]))
    shape = first = (c, h, h)
    layers = []
    prev = "in"
    for i in range(length):
        name = f"l{i}"
        kind = rng.choice(["pw", "dw", "relu", "add"])
        if kind == "pw":
            out = (int(rng.choice([4, 8, 16, 24])), shape[1], shape[2])
            layers.append(op(name, "pointwise_conv2d", prev, shape, out))
        elif kind == "dw":
            stride = int(rng.choice([1, 2])) if shape[1] > 4 else 1
            hw = (shape[1] + 2 - 3) // stride + 1
            out = (shape[0], hw, hw)
            layers.append(op(name, "depthwise_conv2d", prev, shape, out, kernel=[3, 3],
                             stride=stride, groups=shape[0], padding=1))
        elif kind == "add" and layers and tuple(layers[-1]["in_shape"]) == shape:
            out = shape
            layers.append(op(name, "add", [prev, layers[-1]["inputs"][0]], shape, out))
        else:
            out = shape
            layers.append(op(name, "relu", prev, shape, out))
        shape, prev = out, name
    return chain(first, *layers)


def feasible(graph, homes, l2_bytes):
    """Every step keeps the live L2 activations within the budget."""
    planner = _Planner(graph, platform(), BudgetConfig(1, l2_bytes))
    size = planner.size
    live = {graph.input_name}
    if homes[graph.input_name] == L2 and size[graph.input_name] > l2_bytes:
        return False
    for i, layer in enumerate(graph.layers, start=1):
        live -= set(planner.expire.get(i - 1, ()))
        in_l2 = sum(size[t] for t in live if homes[t] == L2)
        if homes[layer.name] == L2:
            in_l2 += size[layer.name]
        if in_l2 > l2_bytes:
            return False
        live.add(layer.name)
    return True


@pytest.fixture(scope="module")
def shipped_runs(shipped_graph, gap9):
    return {b: schedule_and_estimate(shipped_graph, gap9, b) for b in (SHIPPED, SMALL)}


class TestShippedEndpoints:
    def test_large_memory_latency(self, shipped_runs):
        schedule, report = shipped_runs[SHIPPED]
        assert report.total_cycles == pytest.approx(35.3e6, rel=0.20)
        assert report.wall_time_s == pytest.approx(0.147, rel=0.20)
        assert report.l2_resident_share >= 0.70
        assert schedule.ext_peak_bytes <= 1600 * 1024
        assert report.dma_overlap is False

    def test_small_memory_is_slower(self, shipped_runs):
        large = shipped_runs[SHIPPED][1].total_cycles
        small = shipped_runs[SMALL][1].total_cycles
        assert 1.2 <= small / large <= 1.6
        assert shipped_runs[SMALL][1].dma_overlap is False

    def test_report_matches_schedule(self, shipped_runs, shipped_graph):
        schedule, report = shipped_runs[SHIPPED]
        assert report.total_cycles == pytest.approx(schedule.total_cycles, rel=1e-12)
        assert report.macs == sum(l.macs() for l in shipped_graph.layers)
        assert sum(report.class_breakdown.values()) == pytest.approx(report.total_cycles)
        assert report.summary()["engine"] == "conv_accelerator"

    def test_every_plan_fits_l1(self, shipped_runs):
        for budget, (schedule, _) in shipped_runs.items():
            for layer in schedule.layers:
                if layer.plan is not None:
                    assert layer.plan.working_set <= budget.l1_bytes
            assert schedule.l2_peak_bytes <= budget.l2_bytes

    def test_worker_cores_are_slower(self, shipped_graph, gap9, shipped_runs):
        cores = BudgetConfig(115_600, 1_200_000, engine=EngineKind.WORKER_CORES)
        _, report = schedule_and_estimate(shipped_graph, gap9, cores)
        assert report.total_cycles > shipped_runs[SHIPPED][1].total_cycles

    def test_compare_budgets(self, shipped_graph, gap9):
        comparison = compare_budgets(shipped_graph, gap9, [SMALL, SHIPPED])
        assert comparison.monotone
        assert 1.2 <= comparison.speedup <= 1.6
        assert len(comparison.verdicts) == 1


class TestCostModel:
    def test_ideal_accelerator_runs_at_peak(self):
        g = chain((100, 10, 10), op("pw", "pointwise_conv2d", "in", (100, 10, 10), (150, 10, 10)))
        p = platform(l1_bw=1e12, l2_bw=1e12, ext_bw=1e12, overlap=True, accel_peak=150.0)
        schedule, report = schedule_and_estimate(g, p, BudgetConfig(60_000, 200_000, dma_overlap=None))
        assert report.macs == 1_500_000
        assert report.total_cycles == pytest.approx(10_000, rel=1e-6)
        assert report.mac_per_cycle == pytest.approx(150, rel=1e-6)
        assert schedule.layers[0].plan.passes == 1
        assert schedule.layers[0].transfer_class == TransferClass.L2_RESIDENT

    def test_row_overhead_inflates_strided_external_transfers(self):
        g = chain((1, 64, 64), op("act", "relu", "in", (1, 64, 64), (1, 64, 64)))
        budget = BudgetConfig(1024, 2048)
        plain = platform(l1_bw=1e9, l2_bw=1e9, ext_bw=1.0, ew=1e12)
        rowed = platform(l1_bw=1e9, l2_bw=1e9, ext_bw=1.0, ew=1e12, ext_row=3.6 * 512)
        s0, r0 = schedule_and_estimate(g, plain, budget)
        s1, r1 = schedule_and_estimate(g, rowed, budget)
        assert s0.layers[0].input_homes == (EXT,) and s0.layers[0].output_home == EXT
        assert s0.layers[0].plan == s1.layers[0].plan
        assert s1.layers[0].plan.tile_rows == 8 and s1.layers[0].plan.spatial_splits == 8
        assert s1.layers[0].transfer_class == TransferClass.EXT_2D
        assert r1.layers[0].io_dma_cycles / r0.layers[0].io_dma_cycles == pytest.approx(4.6, rel=1e-9)

    def test_overlap_never_slower(self, shipped_graph, gap9):
        on = schedule_and_estimate(shipped_graph, gap9, BudgetConfig(115_600, 1_200_000, dma_overlap=True))
        off = schedule_and_estimate(shipped_graph, gap9, BudgetConfig(115_600, 1_200_000, dma_overlap=False))
        assert on[1].total_cycles <= off[1].total_cycles
        assert not off[1].dma_overlap

    def test_overlap_defaults_off_and_none_inherits(self):
        g = chain((4, 8, 8), op("act", "relu", "in", (4, 8, 8), (4, 8, 8)))
        p = platform(overlap=True)
        assert BudgetConfig().dma_overlap is False
        assert schedule_and_estimate(g, p, BudgetConfig(4096, 65_536))[1].dma_overlap is False
        assert schedule_and_estimate(g, p, BudgetConfig(4096, 65_536, dma_overlap=None))[1].dma_overlap is True

    def test_marker_ops_cost_nothing(self):
        g = chain((4, 8, 8),
                  op("pw", "pointwise_conv2d", "in", (4, 8, 8), (8, 8, 8)),
                  op("flat", "reshape", "pw", (8, 8, 8), (512, 1, 1)))
        schedule, report = schedule_and_estimate(g, platform(), BudgetConfig(4096, 65_536))
        assert schedule.layers[1].plan is None
        assert report.layers[1].total_cycles == 0.0


class TestPlacement:
    def test_identical_budgets_give_identical_reports(self, rng):
        g = random_chain(rng, 5)
        budget = BudgetConfig(4096, 20_000)
        comparison = compare_budgets(g, platform(), [budget, budget])
        assert comparison.reports[0] == comparison.reports[1]
        assert comparison.speedup == 1.0
        assert comparison.monotone

    def test_never_worse_than_plain_greedy_and_feasible(self, rng):
        p = platform(ext_row=16.0, overlap=True)
        for _ in range(25):
            g = random_chain(rng, int(rng.integers(2, 6)))
            budget = BudgetConfig(4096, int(rng.integers(5_000, 20_000)), dma_overlap=None)
            try:
                schedule = plan_schedule(g, p, budget)
            except BudgetTooSmall:
                continue
            planner = _Planner(g, p, budget)
            homes, weight_homes, *_ = planner.place(budget.l2_bytes)
            greedy = sum(l.cost.total for l in planner.cost_placement(homes, weight_homes))
            assert schedule.total_cycles <= greedy + 1e-9
            assert feasible(g, schedule.homes, budget.l2_bytes)

    def test_against_exhaustive_placement(self, rng):
        p = platform(ext_row=16.0, overlap=False)
        for _ in range(15):
            g = random_chain(rng, int(rng.integers(2, 6)))
            budget = BudgetConfig(4096, int(rng.integers(5_000, 20_000)))
            try:
                schedule = plan_schedule(g, p, budget)
            except BudgetTooSmall:
                continue
            planner = _Planner(g, p, budget)
            _, weight_homes, *_ = planner.place(budget.l2_bytes)
            best = np.inf
            for choice in product((L2, EXT), repeat=len(g.tensors)):
                homes = dict(zip(g.tensors, choice))
                if feasible(g, homes, budget.l2_bytes):
                    best = min(best, sum(l.cost.total for l in planner.cost_placement(homes, weight_homes)))
            assert schedule.total_cycles >= best - 1e-9
            chosen = planner.cost_placement(schedule.homes, weight_homes)
            assert sum(l.cost.total for l in chosen) == pytest.approx(schedule.total_cycles)

    def test_ext_peak_matches_homes(self, rng):
        p = platform()
        for _ in range(10):
            g = random_chain(rng, 5)
            budget = BudgetConfig(2048, 3000)
            try:
                schedule = plan_schedule(g, p, budget)
            except BudgetTooSmall:
                continue
            planner = _Planner(g, p, budget)
            live = {g.input_name}
            peak = 0
            for i, layer in enumerate(g.layers, start=1):
                live -= set(planner.expire.get(i - 1, ()))
                on_ext = [t for t in live | {layer.name} if schedule.homes[t] == EXT]
                peak = max(peak, sum(planner.size[t] for t in on_ext))
                live.add(layer.name)
            assert schedule.ext_peak_bytes == peak

    def test_more_memory_is_never_slower(self, rng):
        p = platform(ext_row=16.0, overlap=True)
        for _ in range(20):
            g = random_chain(rng, int(rng.integers(2, 7)))
            l1 = int(rng.choice([2048, 4096, 8192]))
            totals = []
            for l2 in (l1 + 1, 6_000, 12_000, 24_000, 100_000):
                if l2 <= l1:
                    continue
                try:
                    totals.append(plan_schedule(g, p, BudgetConfig(l1, l2, dma_overlap=None)).total_cycles)
                except BudgetTooSmall:
                    break
            assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))

    def test_larger_l1_is_never_slower(self, rng):
        p = platform(ext_row=16.0)
        for _ in range(10):
            g = random_chain(rng, 4)
            totals = []
            for l1 in (1024, 2048, 4096, 16_384):
                try:
                    totals.append(plan_schedule(g, p, BudgetConfig(l1, 32_768)).total_cycles)
                except BudgetTooSmall:
                    totals = []
            assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))


class TestErrors:
    def test_l1_must_be_below_l2(self):
        with pytest.raises(InputError):
            BudgetConfig(2048, 2048)

    def test_budget_above_capacity(self, shipped_graph, gap9):
        with pytest.raises(CapacityExceeded):
            plan_schedule(shipped_graph, gap9, BudgetConfig(200_000, 1_200_000))

    def test_l1_too_small_names_the_layer(self, shipped_graph, gap9):
        with pytest.raises(BudgetTooSmall, match="layer"):
            plan_schedule(shipped_graph, gap9, BudgetConfig(100, 1_200_000))

    def test_missing_engine(self, shipped_graph, gap8):
        with pytest.raises(InputError):
            plan_schedule(shipped_graph, gap8, BudgetConfig(46_700, 267_000, engine=EngineKind.CONV_ACCELERATOR))

    def test_schedule_graph_mismatch(self, shipped_graph):
        g = chain((4, 8, 8), op("act", "relu", "in", (4, 8, 8), (4, 8, 8)))
        schedule = plan_schedule(g, platform(), BudgetConfig(1024, 4096))
        with pytest.raises(InputError):
            estimate_latency(schedule, shipped_graph, platform())

    def test_compare_needs_two_budgets(self, shipped_graph, gap9):
        with pytest.raises(InputError):
            compare_budgets(shipped_graph, gap9, [SHIPPED])
