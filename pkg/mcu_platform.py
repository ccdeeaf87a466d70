"""
Parametric MCU description: memory tiers, compute engines, power states and
the calibration constants of the latency model.

Platform files are XML, read and written with ElementTree.
"""
import logging
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

import config
from errors import PlatformInvalid, UnknownPlatform, UnknownTier, InputError

logger = logging.getLogger(__name__)

PLATFORM_FILE_VERSION = 1
BUILTIN_PLATFORMS = ("gap9", "gap8")
# tiers the scheduler places data in, nearest first
REQUIRED_TIERS = ("L1", "L2", "ext_ram", "flash")


class EngineKind(Enum):
    WORKER_CORES = "worker_cores"
    CONV_ACCELERATOR = "conv_accelerator"


@dataclass(frozen=True)
class MemoryTier:
    name: str
    capacity: int
    read_bandwidth: float
    write_bandwidth: float
    transfer_2d_row_overhead: float = 0.0


@dataclass(frozen=True)
class ComputeEngine:
    name: str
    kind: EngineKind
    peak_mac_per_cycle: float
    depthwise_derate: float = 1.0
    supported_ops: frozenset = frozenset()
    num_workers: int = 0
    dispatcher_cores: int = 0

    def supports(self, op):
        return self.kind == EngineKind.WORKER_CORES or op in self.supported_ops


@dataclass(frozen=True)
class Calibration:
    """Utilization constants fitted once against measured endpoints."""
    u_std: float = 1.0
    u_dw: float = 1.0
    cores_eff: float = 1.0
    cores_dw_eff: float = 1.0
    elementwise_bytes_per_cycle: float = 1.0
    pass_overhead_cycles: float = 0.0
    calibrated: bool = False


@dataclass(frozen=True)
class PlatformModel:
    name: str
    clock_hz: float
    voltage: float
    tiers: tuple
    engines: tuple
    active_power_mw: dict = field(default_factory=dict)
    sleep_power_uw: float = 0.0
    dma_overlap: bool = False
    calibration: Calibration = Calibration()
    sleep_calibrated: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        names = [t.name for t in self.tiers]
        if len(set(names)) != len(names):
            raise PlatformInvalid(f"{self.name}: duplicate tier names {names}")
        for required in REQUIRED_TIERS:
            if required not in names:
                raise PlatformInvalid(f"{self.name}: missing memory tier '{required}'")
        for t in self.tiers:
            if t.capacity <= 0 or t.read_bandwidth <= 0 or t.write_bandwidth <= 0:
                raise PlatformInvalid(f"{self.name}: tier {t.name} needs positive capacity and bandwidth")
            if t.transfer_2d_row_overhead < 0:
                raise PlatformInvalid(f"{self.name}: tier {t.name} has negative row overhead")
        caps = [t.capacity for t in self.tiers]
        if any(a >= b for a, b in zip(caps, caps[1:])):
            raise PlatformInvalid(f"{self.name}: tier capacities must grow from near to far, got {caps}")
        if not self.engines:
            raise PlatformInvalid(f"{self.name}: no compute engine")
        for e in self.engines:
            if e.peak_mac_per_cycle <= 0:
                raise PlatformInvalid(f"{self.name}: engine {e.name} needs a positive peak")
            if not 0 < e.depthwise_derate <= 1:
                raise PlatformInvalid(f"{self.name}: engine {e.name} derate outside (0,1]")
        if self.engine(EngineKind.WORKER_CORES) is None:
            raise PlatformInvalid(f"{self.name}: worker cores are required for unsupported ops")
        if self.clock_hz <= 0:
            raise PlatformInvalid(f"{self.name}: clock must be positive")

    def tier(self, name):
        for t in self.tiers:
            if t.name == name:
                return t
        raise UnknownTier(f"{self.name} has no memory tier '{name}'")

    def tier_index(self, name):
        for i, t in enumerate(self.tiers):
            if t.name == name:
                return i
        raise UnknownTier(f"{self.name} has no memory tier '{name}'")

    def engine(self, kind):
        for e in self.engines:
            if e.kind == kind:
                return e
        return None

    @property
    def has_accelerator(self):
        return self.engine(EngineKind.CONV_ACCELERATOR) is not None

    def transfer_cycles(self, tier_from, tier_to, nbytes, rows=1):
        """
        DMA cycles to move nbytes as `rows` equal 1D copies. Bandwidth is the
        slower of the source read and destination write ports; every row pays
        the per-row overhead of the farther tier.
        """
        src = self.tier(tier_from)
        dst = self.tier(tier_to)
        if nbytes < 0 or rows < 1:
            raise InputError(f"invalid transfer of {nbytes} B in {rows} rows")
        if nbytes == 0:
            return 0.0
        if nbytes % rows:
            raise InputError(f"{nbytes} B do not split into {rows} equal rows")
        outer = src if self.tier_index(tier_from) > self.tier_index(tier_to) else dst
        return transfer_cost(nbytes, rows, min(src.read_bandwidth, dst.write_bandwidth),
                             outer.transfer_2d_row_overhead)

    def seconds(self, cycles):
        return cycles / self.clock_hz

    def capacity_of(self, name):
        return self.tier(name).capacity


def transfer_cost(nbytes, rows, bandwidth, row_overhead):
    """rows x (row bytes / bandwidth + row overhead); works on numpy arrays too."""
    return nbytes / bandwidth + rows * row_overhead


def dominates(a, b):
    """True when a offers at least b's capacity on every shared tier, more on one."""
    shared = [t.name for t in b.tiers if t.name in {x.name for x in a.tiers}]
    ge = all(a.capacity_of(n) >= b.capacity_of(n) for n in shared)
    gt = any(a.capacity_of(n) > b.capacity_of(n) for n in shared)
    return ge and gt


# ─── platform files ────────────────────────────────────────────────────────
def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _num(elem, attr, where, default=None):
    value = elem.get(attr)
    if value is None:
        if default is not None:
            return default
        raise PlatformInvalid(f"{where}: missing attribute '{attr}'")
    try:
        return float(value)
    except ValueError:
        raise PlatformInvalid(f"{where}: '{attr}' is not a number ({value!r})") from None


def _text_num(root, tag, where, default=None):
    text = root.findtext(tag)
    if text is None:
        if default is not None:
            return default
        raise PlatformInvalid(f"{where}: missing <{tag}>")
    try:
        return float(text)
    except ValueError:
        raise PlatformInvalid(f"{where}: <{tag}> is not a number ({text!r})") from None


def platform_from_xml(root, where="platform"):
    if root.tag != "platform":
        raise PlatformInvalid(f"{where}: root element must be <platform>")
    version = int(root.get("version", PLATFORM_FILE_VERSION))
    if version != PLATFORM_FILE_VERSION:
        raise PlatformInvalid(f"{where}: unsupported platform file version {version}")
    name = root.get("name") or os.path.splitext(os.path.basename(where))[0]

    tiers = []
    for t in root.findall("tiers/tier"):
        tw = f"{where} tier {t.get('name')}"
        tiers.append(MemoryTier(
            t.get("name"), int(_num(t, "capacity", tw)), _num(t, "read_bandwidth", tw),
            _num(t, "write_bandwidth", tw), _num(t, "row_overhead", tw, 0.0)))

    engines = []
    for e in root.findall("engines/engine"):
        ew = f"{where} engine {e.get('name')}"
        try:
            kind = EngineKind(e.get("kind"))
        except ValueError:
            raise PlatformInvalid(f"{ew}: unknown engine kind {e.get('kind')!r}") from None
        engines.append(ComputeEngine(
            e.get("name"), kind, _num(e, "peak_mac_per_cycle", ew),
            _num(e, "depthwise_derate", ew, 1.0),
            frozenset(op.text.strip() for op in e.findall("op") if op.text),
            int(_num(e, "num_workers", ew, 0)), int(_num(e, "dispatcher_cores", ew, 0))))

    power = root.find("power")
    active = {}
    sleep_uw = 0.0
    sleep_cal = False
    if power is not None:
        sleep_uw = _num(power, "sleep_uw", f"{where} power", 0.0)
        sleep_cal = _bool(power.get("calibrated", "false"))
        for a in power.findall("active"):
            active[a.get("workload")] = _num(a, "mw", f"{where} power")

    cal = root.find("calibration")
    calibration = Calibration()
    if cal is not None:
        cw = f"{where} calibration"
        calibration = Calibration(
            _text_num(cal, "u_std", cw, 1.0), _text_num(cal, "u_dw", cw, 1.0),
            _text_num(cal, "cores_eff", cw, 1.0), _text_num(cal, "cores_dw_eff", cw, 1.0),
            _text_num(cal, "elementwise_bytes_per_cycle", cw, 1.0),
            _text_num(cal, "pass_overhead_cycles", cw, 0.0),
            _bool(cal.get("calibrated", "false")))

    return PlatformModel(
        name, _text_num(root, "clock_hz", where), _text_num(root, "voltage", where),
        tuple(tiers), tuple(engines), active, sleep_uw,
        _bool(root.findtext("dma_overlap", default="false")), calibration, sleep_cal)


def platform_to_xml(p):
    root = ET.Element("platform", name=p.name, version=str(PLATFORM_FILE_VERSION))
    ET.SubElement(root, "clock_hz").text = repr(p.clock_hz)
    ET.SubElement(root, "voltage").text = repr(p.voltage)
    ET.SubElement(root, "dma_overlap").text = "true" if p.dma_overlap else "false"
    tiers = ET.SubElement(root, "tiers")
    for t in p.tiers:
        ET.SubElement(tiers, "tier", name=t.name, capacity=str(t.capacity),
                      read_bandwidth=repr(t.read_bandwidth), write_bandwidth=repr(t.write_bandwidth),
                      row_overhead=repr(t.transfer_2d_row_overhead))
    engines = ET.SubElement(root, "engines")
    for e in p.engines:
        el = ET.SubElement(engines, "engine", name=e.name, kind=e.kind.value,
                           peak_mac_per_cycle=repr(e.peak_mac_per_cycle),
                           depthwise_derate=repr(e.depthwise_derate),
                           num_workers=str(e.num_workers), dispatcher_cores=str(e.dispatcher_cores))
        for op in sorted(e.supported_ops):
            ET.SubElement(el, "op").text = op
    power = ET.SubElement(root, "power", sleep_uw=repr(p.sleep_power_uw),
                          calibrated="true" if p.sleep_calibrated else "false")
    for workload, mw in p.active_power_mw.items():
        ET.SubElement(power, "active", workload=workload, mw=repr(mw))
    c = p.calibration
    cal = ET.SubElement(root, "calibration", calibrated="true" if c.calibrated else "false")
    for tag in ("u_std", "u_dw", "cores_eff", "cores_dw_eff",
                "elementwise_bytes_per_cycle", "pass_overhead_cycles"):
        ET.SubElement(cal, tag).text = repr(getattr(c, tag))
    return root


def load_platform(path):
    try:
        tree = ET.parse(path)
    except ET.ParseError as e:
        raise PlatformInvalid(f"{path}: malformed platform file ({e})") from None
    except OSError as e:
        raise UnknownPlatform(f"cannot read platform file {path}: {e}") from None
    return platform_from_xml(tree.getroot(), path)


def save_platform(p, path):
    tree = ET.ElementTree(platform_to_xml(p))
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)


def builtin_platform(name):
    """The shipped, calibrated description of a known MCU."""
    if name not in BUILTIN_PLATFORMS:
        raise UnknownPlatform(f"unknown platform '{name}', expected one of {', '.join(BUILTIN_PLATFORMS)}")
    return load_platform(os.path.join(config.get_data_path(), "platforms", f"{name}.xml"))


def resolve_platform(spec):
    """Accepts a platform file path or a name looked up on the platform search path."""
    if os.path.isfile(spec):
        return load_platform(spec)
    path = config.find_platform_file(spec)
    if path is None:
        raise UnknownPlatform(
            f"platform '{spec}' not found in {os.pathsep.join(config.get_platform_search_path())}")
    logger.debug("platform %s resolved to %s", spec, path)
    return load_platform(path)
