"""
Operator-level model of a CNN: layer shapes, MAC and parameter counts and
tensor byte sizes. Nothing here executes the network.
"""
import json
import logging
from dataclasses import dataclass
from math import prod

from errors import GraphCycle, GraphError, ShapeMismatch, UnknownOpKind

logger = logging.getLogger(__name__)

GRAPH_FILE_VERSION = 1

CONV_OPS = frozenset({"conv2d", "depthwise_conv2d", "pointwise_conv2d"})
ACTIVATION_OPS = frozenset({"hsigmoid", "hswish", "relu"})
# ops with no plan and no cost: box decoding and pure views
MARKER_OPS = frozenset({"ssd_head", "reshape"})
OP_KINDS = CONV_OPS | ACTIVATION_OPS | MARKER_OPS | {"pool", "add", "mul", "resize"}


@dataclass(frozen=True)
class Layer:
    name: str
    op: str
    inputs: tuple
    in_shape: tuple
    out_shape: tuple
    kernel: tuple = (1, 1)
    stride: int = 1
    groups: int = 1
    padding: int = 0

    @property
    def is_conv(self):
        return self.op in CONV_OPS

    @property
    def elementwise(self):
        return self.op not in CONV_OPS

    @property
    def param_count(self):
        if not self.is_conv:
            return 0
        kh, kw = self.kernel
        cin, cout = self.in_shape[0], self.out_shape[0]
        return kh * kw * (cin // self.groups) * cout + cout

    def macs(self):
        return count_macs(self)


@dataclass(frozen=True)
class LayerGraph:
    name: str
    input_name: str
    input_shape: tuple
    layers: tuple
    element_bytes: int = 1

    def __post_init__(self):
        validate_graph(self)

    def __len__(self):
        return len(self.layers)

    @property
    def tensors(self):
        return [self.input_name] + [l.name for l in self.layers]

    def shape_of(self, tensor):
        if tensor == self.input_name:
            return self.input_shape
        return self.layer(tensor).out_shape

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise GraphError(f"graph {self.name} has no layer '{name}'")

    def tensor_bytes(self, tensor):
        return prod(self.shape_of(tensor)) * self.element_bytes

    def weight_bytes(self, layer):
        return layer.param_count * self.element_bytes

    def consumers(self, tensor):
        return [i for i, l in enumerate(self.layers) if tensor in l.inputs]


# ─── shape rules ───────────────────────────────────────────────────────────
def conv_out_hw(h, w, kernel, stride, padding):
    kh, kw = kernel
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _check_layer(l, shapes):
    where = f"layer {l.name} ({l.op})"
    if l.op not in OP_KINDS:
        raise UnknownOpKind(f"{where}: unknown op kind")
    if not l.inputs:
        raise GraphError(f"{where}: no inputs")
    in_shapes = [shapes[t] for t in l.inputs]
    if tuple(l.in_shape) != in_shapes[0]:
        raise ShapeMismatch(f"{where}: in_shape {l.in_shape} but '{l.inputs[0]}' is {in_shapes[0]}")
    c, h, w = l.in_shape
    oc, oh, ow = l.out_shape

    if l.op in CONV_OPS or l.op == "pool":
        if l.stride < 1 or l.padding < 0 or min(l.kernel) < 1:
            raise GraphError(f"{where}: invalid kernel/stride/padding")
        exp_h, exp_w = conv_out_hw(h, w, l.kernel, l.stride, l.padding)
        if (oh, ow) != (exp_h, exp_w):
            raise ShapeMismatch(f"{where}: output {oh}x{ow}, kernel arithmetic gives {exp_h}x{exp_w}")
    if l.op == "pool" and oc != c:
        raise ShapeMismatch(f"{where}: pooling changes channels {c} -> {oc}")
    if l.op == "pointwise_conv2d" and tuple(l.kernel) != (1, 1):
        raise ShapeMismatch(f"{where}: pointwise kernel must be 1x1")
    if l.op == "depthwise_conv2d" and (l.groups != c or oc % c):
        raise ShapeMismatch(f"{where}: depthwise needs groups == channels ({c})")
    if l.op in ("conv2d", "pointwise_conv2d") and (c % l.groups or oc % l.groups):
        raise ShapeMismatch(f"{where}: groups {l.groups} do not divide {c}->{oc}")
    if l.op in ACTIVATION_OPS and tuple(l.out_shape) != tuple(l.in_shape):
        raise ShapeMismatch(f"{where}: activation changes shape")
    if l.op == "add":
        if len(l.inputs) < 2 or any(s != tuple(l.out_shape) for s in in_shapes):
            raise ShapeMismatch(f"{where}: residual operands {in_shapes} differ from {l.out_shape}")
    if l.op == "mul":
        if in_shapes[0] != tuple(l.out_shape):
            raise ShapeMismatch(f"{where}: output {l.out_shape} differs from {in_shapes[0]}")
        for s in in_shapes[1:]:
            if s != in_shapes[0] and s != (c, 1, 1):
                raise ShapeMismatch(f"{where}: {s} does not broadcast onto {in_shapes[0]}")
    if l.op == "resize" and oc != c:
        raise ShapeMismatch(f"{where}: resize changes channels {c} -> {oc}")
    if l.op == "reshape" and prod(l.out_shape) != prod(l.in_shape):
        raise ShapeMismatch(f"{where}: reshape changes element count")


def validate_graph(g):
    if g.element_bytes < 1:
        raise GraphError(f"element size must be >= 1 byte, got {g.element_bytes}")
    shapes = {g.input_name: tuple(g.input_shape)}
    for l in g.layers:
        if l.name in shapes:
            raise GraphError(f"duplicate tensor name '{l.name}'")
        for t in l.inputs:
            if t not in shapes:
                raise GraphCycle(f"layer {l.name} reads '{t}' before it is produced")
        _check_layer(l, shapes)
        shapes[l.name] = tuple(l.out_shape)


def _topological(layers, input_name):
    """Stable Kahn ordering: the earliest ready layer in file order goes next."""
    names = {l.name for l in layers}
    pending = list(layers)
    done = {input_name}
    ordered = []
    while pending:
        for i, l in enumerate(pending):
            if all(t in done for t in l.inputs):
                ordered.append(pending.pop(i))
                done.add(l.name)
                break
        else:
            missing = sorted({t for l in pending for t in l.inputs if t not in names and t != input_name})
            if missing:
                raise GraphError(f"unknown input tensors {missing}")
            raise GraphCycle(f"cycle among layers {[l.name for l in pending]}")
    return ordered


# ─── counting ──────────────────────────────────────────────────────────────
def count_macs(layer):
    if not layer.is_conv:
        return 0
    kh, kw = layer.kernel
    cin = layer.in_shape[0]
    cout, oh, ow = layer.out_shape
    return kh * kw * (cin // layer.groups) * cout * oh * ow


def count_macs_total(g):
    return sum(count_macs(l) for l in g.layers)


def count_params_total(g):
    return sum(l.param_count for l in g.layers)


def dws_savings(k, cin, cout):
    """Fraction of weights (and MACs per pixel) saved by a depthwise-separable conv."""
    if k < 1:
        raise GraphError(f"kernel size must be >= 1, got {k}")
    return 1.0 - (k * k * cin + cin * cout) / (k * k * cin * cout)


# ─── graph files ───────────────────────────────────────────────────────────
def _ints(values):
    return tuple(int(v) for v in values)


def graph_from_dict(data):
    if not isinstance(data, dict):
        raise GraphError("malformed graph description: expected an object")
    if data.get("version", GRAPH_FILE_VERSION) != GRAPH_FILE_VERSION:
        raise GraphError(f"unsupported graph file version {data.get('version')}")
    where = "graph"
    try:
        layers = []
        for d in data["layers"]:
            where = f"layer {d.get('name', len(layers))}"
            layers.append(Layer(
                d["name"], d["op"], tuple(d["inputs"]), _ints(d["in_shape"]), _ints(d["out_shape"]),
                _ints(d.get("kernel", (1, 1))), int(d.get("stride", 1)), int(d.get("groups", 1)),
                int(d.get("padding", 0))))
        where = "input"
        inp = data["input"]
        input_name, input_shape = inp["name"], _ints(inp["shape"])
        where = "graph"
        element_bytes = int(data.get("element_bytes", 1))
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise GraphError(f"malformed graph description at {where}: {e}") from None
    layers = _topological(layers, input_name)
    return LayerGraph(data.get("name", "graph"), input_name, input_shape, tuple(layers), element_bytes)


def graph_to_dict(g):
    return {
        "version": GRAPH_FILE_VERSION,
        "name": g.name,
        "element_bytes": g.element_bytes,
        "input": {"name": g.input_name, "shape": list(g.input_shape)},
        "layers": [
            {"name": l.name, "op": l.op, "inputs": list(l.inputs), "in_shape": list(l.in_shape),
             "out_shape": list(l.out_shape), "kernel": list(l.kernel), "stride": l.stride,
             "groups": l.groups, "padding": l.padding}
            for l in g.layers
        ],
    }


def load_graph(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise GraphError(f"{path}: not a graph file ({e})") from None
    try:
        g = graph_from_dict(data)
    except GraphError as e:
        raise type(e)(f"{path}: {e}") from None
    logger.info("graph %s: %d layers, %d params, %d MACs", g.name, len(g),
                count_params_total(g), count_macs_total(g))
    return g


def save_graph(g, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(graph_to_dict(g), f, indent=1)
        f.write("\n")
