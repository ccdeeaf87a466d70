"""
Layer-by-layer placement and latency estimation for CNN inference on a
scratchpad MCU.

Activations live in L2 while the liveness-aware running sum fits the L2
budget and spill to external RAM otherwise; weights are prefetched from flash
into L2 when they fit next to the live activations, else streamed per channel
group. Each layer gets the cheapest L1 tiling that fits the L1 budget.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np

import config
from cnngraph import CONV_OPS, MARKER_OPS, count_macs
from errors import BudgetTooSmall, CapacityExceeded, InputError
from mcu_platform import EngineKind, transfer_cost

logger = logging.getLogger(__name__)

L1, L2, EXT, FLASH = "L1", "L2", "ext_ram", "flash"


class TransferClass(Enum):
    L2_RESIDENT = "l2_resident"
    EXT_1D = "ext_1d"
    EXT_2D = "ext_2d"


@dataclass(frozen=True)
class BudgetConfig:
    l1_bytes: int = config.CNN_L1_BYTES
    l2_bytes: int = config.CNN_L2_BYTES
    # None picks the accelerator when the platform has one
    engine: EngineKind = None
    # additive costing unless asked; None inherits the platform's setting
    dma_overlap: bool = False

    def __post_init__(self):
        if self.l1_bytes <= 0 or self.l2_bytes <= 0:
            raise InputError("memory budgets must be positive")
        if self.l1_bytes >= self.l2_bytes:
            raise InputError(f"L1 budget {self.l1_bytes} must be below L2 budget {self.l2_bytes}")

    @property
    def label(self):
        return f"{self.l1_bytes / 1000:g}kB/{self.l2_bytes / 1000:g}kB"


@dataclass(frozen=True)
class TilePlan:
    channel_groups: int
    out_channels: int
    tile_rows: int
    spatial_splits: int
    working_set: int

    @property
    def passes(self):
        return self.channel_groups * self.spatial_splits


@dataclass(frozen=True)
class LayerCost:
    compute: float
    l1_dma: float
    io_dma: float
    total: float

    @property
    def transfer(self):
        return self.l1_dma + self.io_dma


ZERO_COST = LayerCost(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ScheduledLayer:
    name: str
    op: str
    input_homes: tuple
    output_home: str
    weight_home: str
    transfer_class: TransferClass
    plan: TilePlan
    cost: LayerCost


@dataclass(frozen=True)
class Schedule:
    graph: str
    platform: str
    budget: BudgetConfig
    engine: EngineKind
    dma_overlap: bool
    layers: tuple
    # running-sum bound the chosen greedy placement was built with
    effective_l2: int
    l2_peak_bytes: int
    ext_peak_bytes: int
    homes: dict = field(default_factory=dict, repr=False)

    @property
    def total_cycles(self):
        return sum(l.cost.total for l in self.layers)


@dataclass(frozen=True)
class LayerLatency:
    name: str
    op: str
    transfer_class: TransferClass
    macs: int
    compute_cycles: float
    l1_dma_cycles: float
    io_dma_cycles: float
    transfer_cycles: float
    total_cycles: float

    @property
    def mac_per_cycle(self):
        return self.macs / self.total_cycles if self.total_cycles else 0.0


@dataclass
class LatencyReport:
    platform: str
    budget: BudgetConfig
    engine: EngineKind
    dma_overlap: bool
    clock_hz: float
    layers: list
    total_cycles: float
    compute_cycles: float
    transfer_cycles: float
    class_breakdown: dict
    transfer_breakdown: dict
    macs: int
    ext_peak_bytes: int
    l2_peak_bytes: int

    @property
    def mac_per_cycle(self):
        return self.macs / self.total_cycles if self.total_cycles else 0.0

    @property
    def wall_time_s(self):
        return self.total_cycles / self.clock_hz

    @property
    def l2_resident_share(self):
        if not self.total_cycles:
            return 0.0
        return self.class_breakdown[TransferClass.L2_RESIDENT] / self.total_cycles

    def summary(self):
        return {
            "platform": self.platform,
            "l1_bytes": self.budget.l1_bytes,
            "l2_bytes": self.budget.l2_bytes,
            "engine": self.engine.value,
            "dma_overlap": self.dma_overlap,
            "total_cycles": self.total_cycles,
            "compute_cycles": self.compute_cycles,
            "transfer_cycles": self.transfer_cycles,
            "wall_time_s": self.wall_time_s,
            "macs": self.macs,
            "mac_per_cycle": self.mac_per_cycle,
            "l2_resident_share": self.l2_resident_share,
            "ext_peak_bytes": self.ext_peak_bytes,
            "l2_peak_bytes": self.l2_peak_bytes,
            **{f"cycles_{k.value}": v for k, v in self.class_breakdown.items()},
            **{f"transfer_{k.value}": v for k, v in self.transfer_breakdown.items()},
        }


# ─── helpers ───────────────────────────────────────────────────────────────
def _ceil_div(a, b):
    return -(-a // b)


def _channel_splits(channels):
    """(groups, channels per group) with the fewest groups for each distinct group size."""
    out = []
    for nc in range(1, channels + 1):
        co = _ceil_div(channels, nc)
        if _ceil_div(channels, co) == nc:
            out.append((nc, co))
    return out


def _row_splits(rows):
    """Distinct tile heights, tallest first."""
    seen = []
    for sp in range(1, rows + 1):
        ht = _ceil_div(rows, sp)
        if not seen or seen[-1] != ht:
            seen.append(ht)
    return seen


def resolve_engine(platform, budget):
    if budget.engine is None:
        return EngineKind.CONV_ACCELERATOR if platform.has_accelerator else EngineKind.WORKER_CORES
    if platform.engine(budget.engine) is None:
        raise InputError(f"{platform.name} has no {budget.engine.value} engine")
    return budget.engine


def compute_efficiency(layer, platform, engine):
    """Effective MAC per cycle of the engine running this conv layer."""
    cal = platform.calibration
    depthwise = layer.op == "depthwise_conv2d"
    if engine == EngineKind.CONV_ACCELERATOR:
        accel = platform.engine(EngineKind.CONV_ACCELERATOR)
        if accel is not None and accel.supports(layer.op):
            if depthwise:
                return accel.peak_mac_per_cycle * accel.depthwise_derate * cal.u_dw
            return accel.peak_mac_per_cycle * cal.u_std
    return cal.cores_dw_eff if depthwise else cal.cores_eff


class _Planner:
    """Placement and costing state for one (graph, platform, budget) triple."""

    def __init__(self, graph, platform, budget):
        self.g = graph
        self.p = platform
        self.budget = budget
        self.engine = resolve_engine(platform, budget)
        self.overlap = platform.dma_overlap if budget.dma_overlap is None else budget.dma_overlap
        self.eb = graph.element_bytes
        self._memo = {}

        self.size = {t: graph.tensor_bytes(t) for t in graph.tensors}
        self.prod = {graph.input_name: 0}
        self.last = {graph.input_name: 0}
        for i, layer in enumerate(graph.layers, start=1):
            self.prod[layer.name] = i
            self.last[layer.name] = i
            for t in layer.inputs:
                self.last[t] = i
        self.expire = {}
        for t, step in self.last.items():
            self.expire.setdefault(step, []).append(t)

        tiers = {name: platform.tier(name) for name in (L1, L2, EXT, FLASH)}
        self.bw = {}
        self.ovh = {}
        for src, dst in ((L2, L1), (L1, L2), (EXT, L2), (L2, EXT), (FLASH, L2)):
            outer = src if platform.tier_index(src) > platform.tier_index(dst) else dst
            self.bw[src, dst] = min(tiers[src].read_bandwidth, tiers[dst].write_bandwidth)
            self.ovh[src, dst] = tiers[outer].transfer_2d_row_overhead

    def xfer(self, src, dst, nbytes, rows):
        return transfer_cost(nbytes, rows, self.bw[src, dst], self.ovh[src, dst])

    # ── L1 tiling ──
    def candidates(self, layer):
        splits = _channel_splits(layer.out_shape[0])
        heights = _row_splits(layer.out_shape[1])
        nc = np.repeat([s[0] for s in splits], len(heights))
        co = np.repeat([s[1] for s in splits], len(heights))
        ht = np.tile(heights, len(splits))
        return nc, co, ht

    def plan_costs(self, layer, in_ext, out_ext, w_home, nc, co, ht):
        """Working set and cost legs for arrays of candidate tilings."""
        eb = self.eb
        oc, oh, ow = layer.out_shape
        sp = -(-oh // ht)
        passes = sp * nc
        split = sp > 1
        params = layer.param_count
        wbytes = params * eb
        wslice = -(-params // nc) * eb

        ws = wslice + co * ht * ow * eb
        l1 = np.zeros(nc.shape)
        io = np.zeros(nc.shape)
        for t, ext in zip(layer.inputs, in_ext):
            c, h, w = self.g.shape_of(t)
            if layer.op == "pool":
                rin = np.full(ht.shape, h)
            elif layer.op == "resize":
                rin = np.minimum(h, -(-ht * h // oh) + 1)
            elif layer.op in CONV_OPS:
                rin = np.minimum(h, (ht - 1) * layer.stride + layer.kernel[0])
            else:
                rin = np.minimum(h, ht)
            cin = np.full(nc.shape, c) if layer.op in ("conv2d", "pointwise_conv2d") else -(-c // nc)
            nbytes = cin * rin * w * eb
            rows = np.where(split, cin, 1)
            ws = ws + nbytes
            l1 = l1 + self.xfer(L2, L1, nbytes, rows) * passes
            if ext:
                io = io + self.xfer(EXT, L2, nbytes, rows) * passes

        out_bytes = co * ht * ow * eb
        out_rows = np.where(split, co, 1)
        l1 = l1 + self.xfer(L1, L2, out_bytes, out_rows) * passes
        if out_ext:
            io = io + self.xfer(L2, EXT, out_bytes, out_rows) * passes
        if params > 0:
            l1 = l1 + self.xfer(L2, L1, wslice, 1) * nc
            if w_home == L2:
                io = io + self.xfer(FLASH, L2, wbytes, 1)
            else:
                io = io + self.xfer(FLASH, L2, wslice, 1) * nc

        cal = self.p.calibration
        if layer.op in CONV_OPS:
            compute = count_macs(layer) / compute_efficiency(layer, self.p, self.engine)
        elif layer.op == "pool":
            compute = self.size[layer.inputs[0]] / cal.elementwise_bytes_per_cycle
        else:
            compute = self.size[layer.name] / cal.elementwise_bytes_per_cycle
        compute = compute + passes * cal.pass_overhead_cycles

        if self.overlap:
            total = np.maximum(compute, np.maximum(l1, io))
        else:
            total = compute + l1 + io
        return ws, sp, passes, compute, l1, io, total

    def best_plan(self, index, in_ext, out_ext, w_home):
        key = (index, in_ext, out_ext, w_home)
        if key in self._memo:
            return self._memo[key]
        layer = self.g.layers[index - 1]
        nc, co, ht = self.candidates(layer)
        ws, sp, passes, compute, l1, io, total = self.plan_costs(
            layer, in_ext, out_ext, w_home, nc, co, ht)
        fits = np.flatnonzero(ws <= self.budget.l1_bytes)
        if fits.size == 0:
            raise BudgetTooSmall(
                f"layer {layer.name} needs {int(ws.min())} B of L1, budget is {self.budget.l1_bytes} B")
        pick = fits[np.lexsort((fits, passes[fits], total[fits]))[0]]
        plan = TilePlan(int(nc[pick]), int(co[pick]), int(ht[pick]), int(sp[pick]), int(ws[pick]))
        cost = LayerCost(float(np.broadcast_to(compute, total.shape)[pick]),
                         float(l1[pick]), float(io[pick]), float(total[pick]))
        self._memo[key] = (plan, cost)
        return plan, cost

    # ── placement ──
    def place(self, bound):
        """
        Greedy activation placement with the L2 running sum capped at bound.
        Returns homes, weight homes, the largest running sum that fit and the
        peak occupancies.
        """
        g = self.g
        homes = {}
        low = 0
        inp = g.input_name
        homes[inp] = L2 if self.size[inp] <= bound else EXT
        if homes[inp] == L2:
            low = self.size[inp]
        live = {inp}
        live_all = self.size[inp]
        live_l2 = self.size[inp] if homes[inp] == L2 else 0
        weight_homes = {}
        l2_peak = ext_peak = 0

        for i, layer in enumerate(g.layers, start=1):
            for t in self.expire.get(i - 1, ()):
                if t in live:
                    live.discard(t)
                    live_all -= self.size[t]
                    if homes[t] == L2:
                        live_l2 -= self.size[t]
            out = layer.name
            need = live_l2 + self.size[out]
            if need <= bound:
                homes[out] = L2
                low = max(low, need)
            else:
                homes[out] = EXT
            pressure = live_all + self.size[out]
            wbytes = g.weight_bytes(layer)
            if wbytes > 0:
                weight_homes[out] = L2 if wbytes + pressure <= self.budget.l2_bytes else FLASH
            else:
                weight_homes[out] = None

            in_l2 = live_l2 + (self.size[out] if homes[out] == L2 else 0)
            l2_peak = max(l2_peak, in_l2 + (wbytes if weight_homes[out] == L2 else 0))
            ext_peak = max(ext_peak, (live_all - live_l2) + (self.size[out] if homes[out] == EXT else 0))

            live.add(out)
            live_all += self.size[out]
            if homes[out] == L2:
                live_l2 += self.size[out]
        return homes, weight_homes, low, l2_peak, ext_peak

    def layer_schedule(self, index, homes, weight_homes):
        layer = self.g.layers[index - 1]
        in_ext = tuple(homes[t] == EXT for t in layer.inputs)
        out_ext = homes[layer.name] == EXT
        w_home = weight_homes[layer.name]
        if layer.op in MARKER_OPS:
            plan, cost = None, ZERO_COST
            splits = 1
        else:
            plan, cost = self.best_plan(index, in_ext, out_ext, w_home)
            splits = plan.spatial_splits
        if any(in_ext) or out_ext:
            cls = TransferClass.EXT_2D if splits > 1 else TransferClass.EXT_1D
        elif w_home == FLASH:
            cls = TransferClass.EXT_1D
        else:
            cls = TransferClass.L2_RESIDENT
        return ScheduledLayer(layer.name, layer.op, tuple(homes[t] for t in layer.inputs),
                              homes[layer.name], w_home, cls, plan, cost)

    def cost_placement(self, homes, weight_homes):
        return [self.layer_schedule(i, homes, weight_homes) for i in range(1, len(self.g.layers) + 1)]


# ─── public operations ─────────────────────────────────────────────────────
def _check_capacities(platform, budget):
    if budget.l1_bytes > platform.capacity_of(L1):
        raise CapacityExceeded(
            f"L1 budget {budget.l1_bytes} B exceeds {platform.name} L1 ({platform.capacity_of(L1)} B)")
    if budget.l2_bytes > platform.capacity_of(L2):
        raise CapacityExceeded(
            f"L2 budget {budget.l2_bytes} B exceeds {platform.name} L2 ({platform.capacity_of(L2)} B)")


def plan_schedule(graph, platform, budget=None):
    """
    Place every tensor and pick every layer's L1 tiling.

    The greedy placement is rebuilt for decreasing running-sum bounds (each
    distinct placement once) and the cheapest one is kept, which makes the
    estimate non-increasing in the L2 budget.
    """
    budget = budget or BudgetConfig()
    _check_capacities(platform, budget)
    planner = _Planner(graph, platform, budget)

    best = None
    bound = budget.l2_bytes
    cells = 0
    while bound >= 0:
        homes, weight_homes, low, l2_peak, ext_peak = planner.place(bound)
        layers = planner.cost_placement(homes, weight_homes)
        total = sum(l.cost.total for l in layers)
        cells += 1
        if best is None or total < best[0]:
            best = (total, bound, layers, homes, l2_peak, ext_peak)
        bound = low - 1

    total, bound, layers, homes, l2_peak, ext_peak = best
    if ext_peak > platform.capacity_of(EXT):
        raise CapacityExceeded(
            f"external RAM peak {ext_peak} B exceeds {platform.capacity_of(EXT)} B on {platform.name}")
    weights_in_flash = sum(graph.weight_bytes(l) for l in graph.layers)
    if weights_in_flash > platform.capacity_of(FLASH):
        raise CapacityExceeded(f"{weights_in_flash} B of weights do not fit {platform.name} flash")
    logger.info("%s on %s (%s): %d placements tried, best bound %d B, %.3f M cycles",
                graph.name, platform.name, budget.label, cells, bound, total / 1e6)
    return Schedule(graph.name, platform.name, budget, planner.engine, planner.overlap,
                    tuple(layers), bound, l2_peak, ext_peak, homes)


def estimate_latency(schedule, graph, platform, budget=None):
    """Re-cost the schedule's plans and aggregate cycles per layer and class."""
    budget = budget or schedule.budget
    if len(schedule.layers) != len(graph.layers) or any(
            s.name != l.name for s, l in zip(schedule.layers, graph.layers)):
        raise InputError(f"schedule for {schedule.graph} does not match graph {graph.name}")
    planner = _Planner(graph, platform, budget)

    rows = []
    for i, (s, layer) in enumerate(zip(schedule.layers, graph.layers), start=1):
        if s.plan is None:
            cost = ZERO_COST
        else:
            in_ext = tuple(h == EXT for h in s.input_homes)
            nc = np.array([s.plan.channel_groups])
            co = np.array([s.plan.out_channels])
            ht = np.array([s.plan.tile_rows])
            _, _, _, compute, l1, io, total = planner.plan_costs(
                layer, in_ext, s.output_home == EXT, s.weight_home, nc, co, ht)
            cost = LayerCost(float(np.broadcast_to(compute, total.shape)[0]), float(l1[0]),
                             float(io[0]), float(total[0]))
        rows.append(LayerLatency(s.name, s.op, s.transfer_class, count_macs(layer), cost.compute,
                                 cost.l1_dma, cost.io_dma, cost.transfer, cost.total))

    class_breakdown = {c: 0.0 for c in TransferClass}
    transfer_breakdown = {c: 0.0 for c in TransferClass}
    for r in rows:
        class_breakdown[r.transfer_class] += r.total_cycles
        transfer_breakdown[r.transfer_class] += r.transfer_cycles
    return LatencyReport(
        platform.name, budget, planner.engine, planner.overlap, platform.clock_hz, rows,
        sum(r.total_cycles for r in rows), sum(r.compute_cycles for r in rows),
        sum(r.transfer_cycles for r in rows), class_breakdown, transfer_breakdown,
        sum(r.macs for r in rows), schedule.ext_peak_bytes, schedule.l2_peak_bytes)


def schedule_and_estimate(graph, platform, budget=None):
    schedule = plan_schedule(graph, platform, budget)
    return schedule, estimate_latency(schedule, graph, platform, schedule.budget)


@dataclass
class BudgetVerdict:
    smaller: int
    larger: int
    monotone: bool


@dataclass
class BudgetComparison:
    budgets: list
    reports: list
    verdicts: list

    @property
    def speedup(self):
        """Cycles of the first budget point over cycles of the last."""
        return self.reports[0].total_cycles / self.reports[-1].total_cycles

    @property
    def monotone(self):
        return all(v.monotone for v in self.verdicts)

    def resident_mac_gain(self):
        """Mean relative MAC/cycle gain of layers L2-resident at both ends."""
        first, last = self.reports[0], self.reports[-1]
        gains = [
            b.mac_per_cycle / a.mac_per_cycle - 1.0
            for a, b in zip(first.layers, last.layers)
            if a.macs and a.transfer_class == b.transfer_class == TransferClass.L2_RESIDENT
            and a.mac_per_cycle > 0
        ]
        return float(np.mean(gains)) if gains else 0.0


def compare_budgets(graph, platform, budgets):
    if len(budgets) < 2:
        raise InputError("comparing budgets needs at least two points")
    reports = [schedule_and_estimate(graph, platform, b)[1] for b in budgets]
    verdicts = []
    for i, j in combinations(range(len(budgets)), 2):
        a, b = budgets[i], budgets[j]
        if a.engine != b.engine:
            continue
        if a.l1_bytes <= b.l1_bytes and a.l2_bytes <= b.l2_bytes:
            verdicts.append(BudgetVerdict(i, j, reports[j].total_cycles <= reports[i].total_cycles))
        elif b.l1_bytes <= a.l1_bytes and b.l2_bytes <= a.l2_bytes:
            verdicts.append(BudgetVerdict(j, i, reports[i].total_cycles <= reports[j].total_cycles))
    for v in verdicts:
        if not v.monotone:
            logger.warning("budget %s is slower than the smaller %s",
                           budgets[v.larger].label, budgets[v.smaller].label)
    return BudgetComparison(list(budgets), reports, verdicts)
