"""Deterministic synthetic traces for a cascading service tree.

Offered load enters at the gateway and is split evenly across children at
every level. Each service behaves like a single queue: its own latency is
``base / (1 - rho)`` with utilization ``rho`` clamped to 0.95, perturbed by
multiplicative Gaussian noise whose spread grows with ``rho``. A service's
observed response time adds its slowest child (parallel fan-out) or all
children (serial mode).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CallRecord, TraceEvent
from .errors import ConfigError, InputError

RHO_CLAMP = 0.95
DEFAULT_PERIOD_S = 21600.0


@dataclass(frozen=True)
class ConcurrencyBand:
    name: str
    lo: float  # exclusive, except 0 for the first band
    hi: float  # inclusive
    sim_span: tuple[float, float]  # offered-load range used when simulating this band

    def contains(self, rps: float) -> bool:
        return (self.lo < rps or (self.lo == 0 and rps == 0)) and rps <= self.hi


BANDS = (
    ConcurrencyBand("Low", 0.0, 1000.0, (100.0, 900.0)),
    ConcurrencyBand("Medium", 1000.0, 2500.0, (1100.0, 2400.0)),
    ConcurrencyBand("High", 2500.0, 5000.0, (2600.0, 4900.0)),
    ConcurrencyBand("VeryHigh", 5000.0, 8000.0, (5100.0, 7900.0)),
    ConcurrencyBand("Extreme", 8000.0, math.inf, (8100.0, 12000.0)),
)
BAND_NAMES = tuple(b.name for b in BANDS)


def band_of(rps: float) -> ConcurrencyBand:
    if not rps >= 0:
        raise InputError(f"rps must be non-negative, got {rps}")
    for band in BANDS:
        if rps <= band.hi:
            return band
    return BANDS[-1]


def get_band(name: str) -> ConcurrencyBand:
    for band in BANDS:
        if band.name.lower() == name.lower():
            return band
    raise ConfigError(f"unknown concurrency band {name!r}; expected one of {BAND_NAMES}")


def sine_profile(min_rps: float, max_rps: float, period_s: float, duration_s: float, points_per_period: int = 48):
    """Piecewise-linear samples of a sinusoid starting at its midpoint and rising."""
    if period_s <= 0 or min_rps < 0 or max_rps < min_rps:
        raise ConfigError("sine profile needs 0 <= min_rps <= max_rps and period_s > 0")
    step = period_s / points_per_period
    n = int(math.ceil(duration_s / step)) + 1
    mid, amp = 0.5 * (min_rps + max_rps), 0.5 * (max_rps - min_rps)
    return tuple((round(k * step, 6), mid + amp * math.sin(2 * math.pi * k / points_per_period)) for k in range(n))


@dataclass(frozen=True)
class SimConfig:
    depth: int = 3
    fanout: int = 2
    base_service_time_ms: tuple[float, float] = (5.0, 20.0)
    capacity_rps: float = 8000.0
    load_profile: tuple[tuple[float, float], ...] = field(
        default_factory=lambda: sine_profile(200.0, 4800.0, DEFAULT_PERIOD_S, 90000.0)
    )
    noise_std_frac: float = 0.05
    duration_s: int = 90000
    tick_s: int = 60
    start_s: int = 0
    serial: bool = False
    seed: int = 0

    def __post_init__(self):
        base = self.base_service_time_ms
        if isinstance(base, (int, float)):
            base = (float(base), float(base))
        object.__setattr__(self, "base_service_time_ms", (float(base[0]), float(base[1])))
        object.__setattr__(self, "load_profile", tuple((float(t), float(r)) for t, r in self.load_profile))
        if self.depth < 1 or self.fanout < 1:
            raise ConfigError("depth and fanout must be >= 1")
        lo, hi = self.base_service_time_ms
        if not 0 < lo <= hi:
            raise ConfigError("base_service_time_ms needs 0 < low <= high")
        if self.capacity_rps <= 0:
            raise ConfigError("capacity_rps must be > 0")
        if not self.load_profile:
            raise ConfigError("load_profile must have at least one point")
        if any(r < 0 for _, r in self.load_profile):
            raise ConfigError("offered rps must be >= 0 at every profile point")
        times = [t for t, _ in self.load_profile]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("load_profile times must be strictly increasing")
        if self.noise_std_frac < 0:
            raise ConfigError("noise_std_frac must be >= 0")
        if self.tick_s <= 0 or self.duration_s <= 0:
            raise ConfigError("tick_s and duration_s must be > 0")

    @property
    def num_ticks(self) -> int:
        return self.duration_s // self.tick_s


@dataclass(frozen=True)
class Topology:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]  # caller -> callee
    level: dict = field(compare=False)
    children: dict = field(compare=False)

    @property
    def root(self) -> str:
        return self.nodes[0]


def gen_topology(config: SimConfig) -> Topology:
    """Complete ``fanout``-ary tree of ``depth`` levels; ids are ``svc-<level>-<index>``."""
    nodes, edges, level, children = [], [], {}, {}
    for lvl in range(config.depth):
        for idx in range(config.fanout**lvl):
            sid = f"svc-{lvl}-{idx}"
            nodes.append(sid)
            level[sid] = lvl
            children[sid] = []
            if lvl:
                parent = f"svc-{lvl - 1}-{idx // config.fanout}"
                edges.append((parent, sid))
                children[parent].append(sid)
    return Topology(tuple(nodes), tuple(edges), level, children)


def utilization(offered_rps: float, capacity_rps: float) -> float:
    return min(offered_rps / capacity_rps, RHO_CLAMP)


def node_latency(base_ms: float, capacity_rps: float, offered_rps: float, noise_std_frac: float, rng: np.random.Generator | None = None) -> float:
    """Own latency of one service at the given offered load; never negative."""
    if offered_rps < 0:
        raise InputError("offered_rps must be >= 0")
    rho = utilization(offered_rps, capacity_rps)
    core = base_ms / (1.0 - rho)
    if noise_std_frac == 0 or rng is None:
        return core
    return max(0.0, core * (1.0 + noise_std_frac * (1.0 + rho) * rng.standard_normal()))


def offered_load(config: SimConfig, t: float) -> float:
    times = [p[0] for p in config.load_profile]
    rates = [p[1] for p in config.load_profile]
    return float(np.interp(t, times, rates))


@dataclass
class SimResult:
    topology: Topology
    events: list[TraceEvent]
    calls: list[CallRecord]


def simulate(topology: Topology, config: SimConfig, base_ms: dict[str, float] | None = None) -> SimResult:
    """Tick-by-tick trace. ``base_ms`` pins per-service base times; by default they are drawn from the config range."""
    rng = np.random.default_rng(config.seed)
    lo, hi = config.base_service_time_ms
    base = {sid: float(rng.uniform(lo, hi)) for sid in topology.nodes}
    if base_ms:
        unknown = set(base_ms) - set(topology.nodes)
        if unknown:
            raise ConfigError(f"base_ms names unknown services {sorted(unknown)}")
        base.update(base_ms)
    share = {sid: config.fanout ** -topology.level[sid] for sid in topology.nodes}
    capacity = {sid: config.capacity_rps * share[sid] for sid in topology.nodes}
    # leaves first, so each parent sees its children's totals
    bottom_up = sorted(topology.nodes, key=lambda s: -topology.level[s])

    events, calls = [], []
    for k in range(config.num_ticks):
        ts = config.start_s + k * config.tick_s
        root_rps = offered_load(config, ts - config.start_s)
        total = {}
        rows = {}
        for sid in bottom_up:
            rps = root_rps * share[sid]
            rho = utilization(rps, capacity[sid])
            own = node_latency(base[sid], capacity[sid], rps, config.noise_std_frac, rng)
            kids = [total[c] for c in topology.children[sid]]
            downstream = (sum(kids) if config.serial else max(kids)) if kids else 0.0
            total[sid] = own + downstream
            rows[sid] = TraceEvent(ts, sid, min(max(rho, 0.0), 1.0), min(max(0.3 + 0.5 * rho, 0.0), 1.0), total[sid], rps)
        events.extend(rows[sid] for sid in topology.nodes)
        for caller, callee in topology.edges:
            count = int(round(root_rps * share[callee] * config.tick_s))
            if count > 0:
                calls.append(CallRecord(ts, caller, callee, count))
    return SimResult(topology, events, calls)


def run(config: SimConfig) -> SimResult:
    return simulate(gen_topology(config), config)


def band_config(base: SimConfig, band: ConcurrencyBand, period_s: float = DEFAULT_PERIOD_S, seed: int | None = None) -> SimConfig:
    """Copy of ``base`` whose sinusoidal load sweeps the band's simulation span."""
    lo, hi = band.sim_span
    return replace(
        base,
        load_profile=sine_profile(lo, hi, period_s, base.duration_s),
        seed=base.seed if seed is None else seed,
    )
