"""
Duty-cycle energy model of a battery-powered trap node: per-wake energy,
daily energy, battery lifetime and a discrete-event wake/sleep simulator.

Energies are in mJ per event and J per day; powers are in mW (active) and
uW (sleep).
"""
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import pandas as pd
import simpy

import config
from errors import InputError, ScenarioError, UnsortedTrace

logger = logging.getLogger(__name__)

SCENARIO_FILE_VERSION = 1
SHIPPED_SCENARIOS = ("gap9_vj_30s", "gap9_vj_900s", "gap9_cnn_30s", "gap9_cnn_900s",
                     "gap8_vj_30s", "gap8_vj_900s")


class PayloadPolicy(Enum):
    COUNTERS = "counters_every_wake"
    IMAGES = "image_per_detection"


class NodeState(Enum):
    DEEP_SLEEP = "deep_sleep"
    CAPTURE = "capture"
    DETECT = "detect"
    TRANSMIT = "transmit"
    ACK = "ack"


@dataclass(frozen=True)
class PhaseEnergy:
    camera_mj: float = 0.0
    # None derives the detection energy from compute_power_mw x active time
    compute_mj: float = None
    tx_mj_per_byte: float = config.TX_MJ_PER_BYTE
    # fixed per-wake surcharge, e.g. reloading CNN weights after deep sleep
    wake_overhead_mj: float = 0.0
    compute_power_mw: float = 0.0
    overhead_calibrated: bool = False
    # gateway acknowledgement after each transmission: radio energy and listen time
    ack_mj: float = 0.0
    ack_s: float = 0.0

    def __post_init__(self):
        for name in ("camera_mj", "tx_mj_per_byte", "wake_overhead_mj", "compute_power_mw",
                     "ack_mj", "ack_s"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.compute_mj is not None and self.compute_mj < 0:
            raise ScenarioError(f"compute_mj must be non-negative, got {self.compute_mj}")

    def detection_mj(self, compute_s=0.0):
        if self.compute_mj is not None:
            return self.compute_mj
        return self.compute_power_mw * compute_s


@dataclass(frozen=True)
class DutyCycleConfig:
    wake_period_s: float = config.WAKE_PERIOD_S
    payload_policy: PayloadPolicy = PayloadPolicy.COUNTERS
    counter_payload_bytes: int = config.COUNTER_PAYLOAD_BYTES
    image_payload_bytes: int = config.IMAGE_PAYLOAD_BYTES
    detections_per_day: float = config.DETECTIONS_PER_DAY
    sleep_power_uw: float = config.SLEEP_POWER_UW
    # time awake per wake (capture + detection); the rest of the period is deep sleep
    active_s: float = 0.0
    sleep_calibrated: bool = False

    def __post_init__(self):
        if self.active_s < 0:
            raise ScenarioError(f"active time must be non-negative, got {self.active_s}")
        if self.wake_period_s <= self.active_s:
            raise ScenarioError(
                f"wake period {self.wake_period_s} s must exceed the active time {self.active_s} s")
        if self.counter_payload_bytes <= 0 or self.image_payload_bytes <= 0:
            raise ScenarioError("payload sizes must be positive")
        if self.detections_per_day < 0 or self.sleep_power_uw < 0:
            raise ScenarioError("detections per day and sleep power must be non-negative")

    @property
    def wakes_per_day(self):
        return config.SECONDS_PER_DAY / self.wake_period_s

    @property
    def sleep_w(self):
        return self.sleep_power_uw * 1e-6


@dataclass(frozen=True)
class Battery:
    capacity_mah: float = config.BATTERY_CAPACITY_MAH
    voltage_v: float = config.BATTERY_VOLTAGE_V
    usable_fraction: float = 1.0

    def __post_init__(self):
        if self.capacity_mah <= 0 or self.voltage_v <= 0:
            raise ScenarioError("battery capacity and voltage must be positive")
        if not 0 < self.usable_fraction <= 1:
            raise ScenarioError(f"usable fraction must be in (0,1], got {self.usable_fraction}")

    @property
    def energy_j(self):
        return self.capacity_mah / 1000.0 * self.voltage_v * 3600.0 * self.usable_fraction


@dataclass(frozen=True)
class Lifetime:
    days: int
    exact_days: float


@dataclass
class EnergyLedger:
    compute_j: float = 0.0
    radio_j: float = 0.0
    camera_j: float = 0.0
    sleep_j: float = 0.0
    overhead_j: float = 0.0
    days: float = 1.0
    battery_j: float = None

    @property
    def phases(self):
        return {"compute": self.compute_j, "radio": self.radio_j, "camera": self.camera_j,
                "sleep": self.sleep_j, "overhead": self.overhead_j}

    @property
    def total_j(self):
        return math.fsum(self.phases.values())

    @property
    def daily_j(self):
        return self.total_j / self.days if self.days else 0.0

    @property
    def lifetime_days(self):
        if self.battery_j is None or self.daily_j <= 0:
            return None
        return self.battery_j / self.daily_j

    def scaled(self, days):
        f = days / self.days
        return EnergyLedger(self.compute_j * f, self.radio_j * f, self.camera_j * f,
                            self.sleep_j * f, self.overhead_j * f, days, self.battery_j)

    def summary(self):
        out = {f"{k}_j": v for k, v in self.phases.items()}
        out.update(total_j=self.total_j, days=self.days, daily_j=self.daily_j)
        if self.battery_j is not None:
            out.update(battery_j=self.battery_j, lifetime_days=self.lifetime_days)
        return out


# ─── closed form ───────────────────────────────────────────────────────────
def wake_cycle_energy(pe, payload_bytes, compute_s=0.0):
    """Energy of one wake in mJ: camera, detection, overhead, radio payload and its acknowledgement."""
    if payload_bytes < 0 or compute_s < 0:
        raise InputError("payload size and compute time must be non-negative")
    ack = pe.ack_mj if payload_bytes > 0 else 0.0
    return (pe.camera_mj + pe.detection_mj(compute_s) + pe.wake_overhead_mj
            + payload_bytes * pe.tx_mj_per_byte + ack)


def daily_energy(pe, cfg, battery=None):
    n = cfg.wakes_per_day
    det = pe.detection_mj(cfg.active_s)
    if cfg.payload_policy == PayloadPolicy.COUNTERS:
        radio_mj = n * cfg.counter_payload_bytes * pe.tx_mj_per_byte
        sends = n
    else:
        radio_mj = cfg.detections_per_day * cfg.image_payload_bytes * pe.tx_mj_per_byte
        # at most one image burst per wake
        sends = min(n, cfg.detections_per_day)
    radio_mj += sends * pe.ack_mj
    sleep_s = config.SECONDS_PER_DAY - n * cfg.active_s - sends * pe.ack_s
    ledger = EnergyLedger(
        compute_j=n * det / 1000.0,
        radio_j=radio_mj / 1000.0,
        camera_j=n * pe.camera_mj / 1000.0,
        sleep_j=cfg.sleep_w * sleep_s,
        overhead_j=n * pe.wake_overhead_mj / 1000.0,
        days=1.0,
        battery_j=battery.energy_j if battery else None,
    )
    logger.debug("daily energy %.3f J (%s, period %g s)", ledger.daily_j,
                 cfg.payload_policy.value, cfg.wake_period_s)
    return ledger


def lifetime(battery, daily_j):
    if daily_j <= 0:
        raise InputError(f"daily energy must be positive, got {daily_j}")
    exact = battery.energy_j / daily_j
    return Lifetime(math.floor(exact), exact)


def counters_cheaper(pe, cfg):
    """True when a counter every wake costs less radio energy than an image per detection."""
    counters = cfg.wakes_per_day * cfg.counter_payload_bytes * pe.tx_mj_per_byte
    images = cfg.detections_per_day * cfg.image_payload_bytes * pe.tx_mj_per_byte
    return counters < images


# ─── discrete-event simulation ─────────────────────────────────────────────
@dataclass(frozen=True)
class WakeRecord:
    index: int
    time_s: float
    detections: int
    payload_bytes: int
    camera_mj: float
    compute_mj: float
    overhead_mj: float
    radio_mj: float
    sleep_mj: float
    battery_j: float


@dataclass
class SimulationResult:
    timeline: list
    ledger: EnergyLedger
    horizon_s: float
    exhausted_at_s: float = None

    @property
    def exhausted(self):
        return self.exhausted_at_s is not None

    @property
    def detections(self):
        return sum(w.detections for w in self.timeline)

    def timeline_frame(self):
        return pd.DataFrame([w.__dict__ for w in self.timeline],
                            columns=list(WakeRecord.__dataclass_fields__))


class TrapNode:
    """
    Wake/sleep state machine of one trap. Wake k happens at k x period
    (k = 0, 1, ...) and reports the arrivals in (previous wake, this wake].
    """

    def __init__(self, env, pe, cfg, battery, arrivals, horizon_s):
        self.env = env
        self.pe = pe
        self.cfg = cfg
        self.battery = battery
        self.arrivals = arrivals
        self.horizon_s = horizon_s
        self.remaining_j = battery.energy_j
        self.ledger = EnergyLedger(days=0.0, battery_j=battery.energy_j)
        self.timeline = []
        self.state = NodeState.DEEP_SLEEP
        self.exhausted_at_s = None
        self._counted = 0
        self.process = env.process(self._run())

    def _draw(self, phase, joules):
        """Take energy from the battery; False once it runs dry."""
        take = min(joules, self.remaining_j)
        setattr(self.ledger, f"{phase}_j", getattr(self.ledger, f"{phase}_j") + take)
        self.remaining_j -= take
        if take < joules:
            self.exhausted_at_s = self.env.now
            return False
        return True

    def _new_arrivals(self):
        upto = int(np.searchsorted(self.arrivals, self.env.now, side="right"))
        n = upto - self._counted
        self._counted = upto
        return n

    def _run(self):
        cfg, pe = self.cfg, self.pe
        k = 0
        while k * cfg.wake_period_s < self.horizon_s:
            wake_at = k * cfg.wake_period_s
            yield self.env.timeout(max(wake_at - self.env.now, 0.0))

            self.state = NodeState.CAPTURE
            detections = self._new_arrivals()
            ok = self._draw("camera", pe.camera_mj / 1000.0)

            self.state = NodeState.DETECT
            det_mj = pe.detection_mj(cfg.active_s)
            ok = ok and self._draw("compute", det_mj / 1000.0)
            ok = ok and self._draw("overhead", pe.wake_overhead_mj / 1000.0)
            if not ok:
                break
            yield self.env.timeout(cfg.active_s)

            self.state = NodeState.TRANSMIT
            if cfg.payload_policy == PayloadPolicy.COUNTERS:
                payload = cfg.counter_payload_bytes
            else:
                payload = detections * cfg.image_payload_bytes
            radio_mj = payload * pe.tx_mj_per_byte
            if not self._draw("radio", radio_mj / 1000.0):
                break
            if payload > 0:
                self.state = NodeState.ACK
                radio_mj += pe.ack_mj
                if not self._draw("radio", pe.ack_mj / 1000.0):
                    break
                if pe.ack_s > 0:
                    yield self.env.timeout(pe.ack_s)

            self.state = NodeState.DEEP_SLEEP
            sleep_end = min((k + 1) * cfg.wake_period_s, self.horizon_s)
            sleep_s = max(sleep_end - self.env.now, 0.0)
            sleep_j = cfg.sleep_w * sleep_s
            drained = sleep_j > self.remaining_j
            if drained:
                # battery dies part way through the nap
                dies_after = self.remaining_j / cfg.sleep_w
                self._draw("sleep", self.remaining_j)
                self.exhausted_at_s = self.env.now + dies_after
            else:
                self._draw("sleep", sleep_j)
            self.timeline.append(WakeRecord(
                k, wake_at, detections, payload, pe.camera_mj, det_mj, pe.wake_overhead_mj,
                radio_mj, sleep_j * 1000.0, self.remaining_j))
            if drained:
                break
            yield self.env.timeout(sleep_s)
            k += 1


def simulate(pe, cfg, battery=None, arrivals=(), horizon_days=30.0):
    """
    Walk the node's state machine over the horizon or until the battery is
    empty. arrivals are moth-arrival timestamps in seconds, sorted.
    """
    battery = battery or Battery()
    if horizon_days <= 0:
        raise InputError(f"horizon must be positive, got {horizon_days} days")
    trace = np.asarray(arrivals, dtype=np.float64)
    if trace.size > 1 and np.any(np.diff(trace) < 0):
        raise UnsortedTrace("arrival trace must be sorted by time")

    horizon_s = horizon_days * config.SECONDS_PER_DAY
    env = simpy.Environment()
    node = TrapNode(env, pe, cfg, battery, trace, horizon_s)
    env.run()

    end = node.exhausted_at_s if node.exhausted_at_s is not None else horizon_s
    node.ledger.days = end / config.SECONDS_PER_DAY
    if node.exhausted_at_s is not None:
        logger.info("battery exhausted after %.2f days (%d wakes)", node.ledger.days, len(node.timeline))
    return SimulationResult(node.timeline, node.ledger, horizon_s, node.exhausted_at_s)


def uniform_trace(per_day, days):
    """per_day arrivals spread evenly over each day, mid-interval."""
    if per_day <= 0:
        return np.zeros(0)
    step = config.SECONDS_PER_DAY / per_day
    n = int(round(per_day * days))
    return (np.arange(n) + 0.5) * step


def load_trace(path):
    """One timestamp (seconds) per line; blank lines and '#' comments allowed."""
    try:
        frame = pd.read_csv(path, header=None, comment="#", skip_blank_lines=True, dtype=np.float64)
    except pd.errors.EmptyDataError:
        return np.zeros(0)
    except (ValueError, OSError) as e:
        raise InputError(f"cannot read arrival trace {path}: {e}") from None
    trace = frame.iloc[:, 0].to_numpy()
    if trace.size > 1 and np.any(np.diff(trace) < 0):
        raise UnsortedTrace(f"{path}: arrival trace must be sorted by time")
    return trace


# ─── scenario files ────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Scenario:
    name: str
    phase: PhaseEnergy
    duty: DutyCycleConfig
    battery: Battery

    def with_policy(self, policy):
        return replace(self, duty=replace(self.duty, payload_policy=policy))

    def ledger(self):
        return daily_energy(self.phase, self.duty, self.battery)


def _attr(elem, name, cast, default, where):
    value = elem.get(name)
    if value is None:
        if default is ...:
            raise ScenarioError(f"{where}: missing attribute '{name}'")
        return default
    try:
        return cast(value)
    except ValueError:
        raise ScenarioError(f"{where}: '{name}' has an invalid value {value!r}") from None


def _flag(value):
    return value.strip().lower() in ("1", "true", "yes", "on")


def scenario_from_xml(root, where="scenario"):
    if root.tag != "scenario":
        raise ScenarioError(f"{where}: root element must be <scenario>")
    version = _attr(root, "version", int, SCENARIO_FILE_VERSION, where)
    if version != SCENARIO_FILE_VERSION:
        raise ScenarioError(f"{where}: unsupported scenario version {version}")
    phase_el, duty_el = root.find("phase"), root.find("duty")
    if phase_el is None or duty_el is None:
        raise ScenarioError(f"{where}: <phase> and <duty> are required")
    battery_el = root.find("battery")

    compute = phase_el.get("compute_mj")
    phase = PhaseEnergy(
        camera_mj=_attr(phase_el, "camera_mj", float, 0.0, where),
        compute_mj=None if compute is None else _attr(phase_el, "compute_mj", float, ..., where),
        tx_mj_per_byte=_attr(phase_el, "tx_mj_per_byte", float, config.TX_MJ_PER_BYTE, where),
        wake_overhead_mj=_attr(phase_el, "wake_overhead_mj", float, 0.0, where),
        compute_power_mw=_attr(phase_el, "compute_power_mw", float, 0.0, where),
        ack_mj=_attr(phase_el, "ack_mj", float, 0.0, where),
        ack_s=_attr(phase_el, "ack_s", float, 0.0, where),
        overhead_calibrated=_attr(phase_el, "overhead_calibrated", _flag, False, where),
    )
    try:
        policy = PayloadPolicy(duty_el.get("payload_policy", PayloadPolicy.COUNTERS.value))
    except ValueError:
        raise ScenarioError(f"{where}: unknown payload policy {duty_el.get('payload_policy')!r}") from None
    duty = DutyCycleConfig(
        wake_period_s=_attr(duty_el, "wake_period_s", float, ..., where),
        payload_policy=policy,
        counter_payload_bytes=_attr(duty_el, "counter_payload_bytes", int, config.COUNTER_PAYLOAD_BYTES, where),
        image_payload_bytes=_attr(duty_el, "image_payload_bytes", int, config.IMAGE_PAYLOAD_BYTES, where),
        detections_per_day=_attr(duty_el, "detections_per_day", float, config.DETECTIONS_PER_DAY, where),
        sleep_power_uw=_attr(duty_el, "sleep_power_uw", float, config.SLEEP_POWER_UW, where),
        active_s=_attr(duty_el, "active_s", float, 0.0, where),
        sleep_calibrated=_attr(duty_el, "sleep_calibrated", _flag, False, where),
    )
    battery = Battery()
    if battery_el is not None:
        battery = Battery(
            _attr(battery_el, "capacity_mah", float, config.BATTERY_CAPACITY_MAH, where),
            _attr(battery_el, "voltage_v", float, config.BATTERY_VOLTAGE_V, where),
            _attr(battery_el, "usable_fraction", float, 1.0, where))
    name = root.get("name") or os.path.splitext(os.path.basename(where))[0]
    return Scenario(name, phase, duty, battery)


def scenario_to_xml(s):
    root = ET.Element("scenario", name=s.name, version=str(SCENARIO_FILE_VERSION))
    p = s.phase
    phase = ET.SubElement(root, "phase", camera_mj=repr(p.camera_mj),
                          tx_mj_per_byte=repr(p.tx_mj_per_byte),
                          wake_overhead_mj=repr(p.wake_overhead_mj),
                          compute_power_mw=repr(p.compute_power_mw),
                          ack_mj=repr(p.ack_mj), ack_s=repr(p.ack_s),
                          overhead_calibrated="true" if p.overhead_calibrated else "false")
    if p.compute_mj is not None:
        phase.set("compute_mj", repr(p.compute_mj))
    d = s.duty
    ET.SubElement(root, "duty", wake_period_s=repr(d.wake_period_s),
                  payload_policy=d.payload_policy.value,
                  counter_payload_bytes=str(d.counter_payload_bytes),
                  image_payload_bytes=str(d.image_payload_bytes),
                  detections_per_day=repr(d.detections_per_day),
                  sleep_power_uw=repr(d.sleep_power_uw), active_s=repr(d.active_s),
                  sleep_calibrated="true" if d.sleep_calibrated else "false")
    b = s.battery
    ET.SubElement(root, "battery", capacity_mah=repr(b.capacity_mah), voltage_v=repr(b.voltage_v),
                  usable_fraction=repr(b.usable_fraction))
    return root


def load_scenario(path):
    try:
        tree = ET.parse(path)
    except ET.ParseError as e:
        raise ScenarioError(f"{path}: malformed scenario file ({e})") from None
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}") from None
    return scenario_from_xml(tree.getroot(), path)


def save_scenario(s, path):
    tree = ET.ElementTree(scenario_to_xml(s))
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)


def resolve_scenario(spec):
    """A scenario file path or the name of a shipped scenario."""
    if os.path.isfile(spec):
        return load_scenario(spec)
    path = config.get_scenario_path(spec)
    if not os.path.isfile(path):
        raise ScenarioError(f"unknown scenario '{spec}', shipped ones are {', '.join(SHIPPED_SCENARIOS)}")
    return load_scenario(path)


def energy_table(scenarios):
    """Daily energy and lifetime of each scenario under both payload policies."""
    rows = []
    for s in scenarios:
        row = {"scenario": s.name, "wake_period_s": s.duty.wake_period_s}
        for policy, tag in ((PayloadPolicy.IMAGES, "images"), (PayloadPolicy.COUNTERS, "counters")):
            daily = s.with_policy(policy).ledger().daily_j
            life = lifetime(s.battery, daily)
            row[f"{tag}_j_per_day"] = daily
            row[f"{tag}_lifetime_days"] = life.days
        rows.append(row)
    return pd.DataFrame(rows)
