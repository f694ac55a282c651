"""Synthetic households for desk-scale experiments.

The aggregate is built as ``(sum of appliance traces + baseline) + noise``,
with the noise trace returned separately so the construction can be audited.
Three archetypes are provided:

``fridge``  periodic two-state compressor cycle (period, duty, on-power,
            optional cycle-length jitter and small on-power ripple)
``kettle``  sparse rectangular high-power spikes
``washer``  multi-phase runs (heating, tumbling with ripple, spin)

Kettle and washer events are spread over the trace: the duration is cut into
``round(events_per_day * days)`` equal slots with one event per slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import SignalSeries
from .errors import ConfigError


@dataclass
class ApplianceSpec:
    name: str
    kind: str  # fridge | kettle | washer
    power_w: float = 100.0
    period_s: float = 600.0  # fridge cycle length
    duty: float = 0.5  # fridge on-fraction
    jitter: float = 0.0  # fridge: relative std of cycle length
    ripple_w: float = 0.0  # std of on-power fluctuation
    events_per_day: float = 6.0  # kettle / washer
    duration_s: tuple[float, float] = (120.0, 240.0)  # kettle on-time range

    def __post_init__(self):
        if self.kind not in ("fridge", "kettle", "washer"):
            raise ConfigError(f"{self.name}: unknown appliance kind {self.kind!r}")
        if not 0 < self.duty < 1:
            raise ConfigError(f"{self.name}: duty must lie in (0, 1)")
        if self.period_s <= 0 or self.power_w < 0 or self.events_per_day < 0:
            raise ConfigError(f"{self.name}: period, power and event rate must be positive")


@dataclass
class SynthConfig:
    duration_s: float = 48 * 3600.0
    sample_period: float = 1.0
    baseline_w: float = 100.0
    noise_std_w: float = 0.0
    start_time: float = 1_420_070_400.0  # 2015-01-01T00:00:00Z
    appliances: list[ApplianceSpec] = field(default_factory=list)


@dataclass
class Household:
    aggregate: SignalSeries
    loads: dict[str, SignalSeries]
    noise: np.ndarray
    baseline_w: float


def _fridge(spec: ApplianceSpec, n: int, dt: float, rng) -> np.ndarray:
    out = np.zeros(n)
    t = -rng.uniform(0, spec.period_s)  # random phase
    while t < n * dt:
        period = spec.period_s * max(0.2, 1 + spec.jitter * rng.standard_normal()) if spec.jitter else spec.period_s
        on_end = t + spec.duty * period
        a, b = max(0, int(round(t / dt))), min(n, int(round(on_end / dt)))
        if b > a:
            out[a:b] = spec.power_w
        t += period
    return out


def _event_starts(rate_per_day: float, n: int, dt: float, rng) -> list[int]:
    """One event per equal time slot, uniformly placed inside its slot."""
    count = int(round(rate_per_day * n * dt / 86400.0))
    if count == 0:
        return []
    edges = np.linspace(0, n, count + 1)
    return [int(rng.uniform(edges[i], edges[i + 1])) for i in range(count)]


def _kettle(spec: ApplianceSpec, n: int, dt: float, rng) -> np.ndarray:
    out = np.zeros(n)
    for start in _event_starts(spec.events_per_day, n, dt, rng):
        length = int(rng.uniform(*spec.duration_s) / dt)
        out[start : start + length] = spec.power_w
    return out


# (duration seconds, power fraction of spec.power_w, ripple as fraction of phase power)
_WASHER_PHASES = [(900, 1.0, 0.0), (2400, 0.1, 0.5), (600, 0.05, 0.2), (480, 0.25, 0.3)]


def _washer(spec: ApplianceSpec, n: int, dt: float, rng) -> np.ndarray:
    out = np.zeros(n)
    for i in _event_starts(spec.events_per_day, n, dt, rng):
        for dur, frac, rip in _WASHER_PHASES:
            m = int(dur / dt)
            seg = np.full(m, spec.power_w * frac)
            if rip:
                # drum reversals: on/off every ~15 s
                seg *= 1 + rip * np.sign(np.sin(np.arange(m) * dt * 2 * np.pi / 30))
            out[i : i + m] = np.maximum(out[i : i + m], seg[: max(0, min(m, n - i))])
            i += m
            if i >= n:
                break
    return out


_GENERATORS = {"fridge": _fridge, "kettle": _kettle, "washer": _washer}


def synth_household(cfg: SynthConfig, seed: int = 0) -> Household:
    rng = np.random.default_rng(seed)
    n = int(round(cfg.duration_s / cfg.sample_period))
    if n < 1:
        raise ConfigError("synthetic household needs a positive duration")
    loads = {}
    total = np.zeros(n)
    for spec in cfg.appliances:
        if spec.name in loads:
            raise ConfigError(f"duplicate appliance name {spec.name!r}")
        trace = _GENERATORS[spec.kind](spec, n, cfg.sample_period, rng)
        if spec.ripple_w:
            on = trace > 0
            trace[on] += spec.ripple_w * rng.standard_normal(on.sum())
            np.maximum(trace, 0, out=trace)
        loads[spec.name] = SignalSeries(trace, cfg.sample_period, cfg.start_time)
        total = total + trace
    noise = cfg.noise_std_w * rng.standard_normal(n) if cfg.noise_std_w else np.zeros(n)
    aggregate = (total + cfg.baseline_w) + noise
    return Household(SignalSeries(aggregate, cfg.sample_period, cfg.start_time), loads, noise, cfg.baseline_w)


def default_household_config(hours: float = 48.0) -> SynthConfig:
    """One fridge-like, one kettle-like and one washer-like load."""
    return SynthConfig(
        duration_s=hours * 3600.0,
        baseline_w=100.0,
        noise_std_w=3.0,
        appliances=[
            ApplianceSpec("fridge", "fridge", power_w=100.0, period_s=600.0, duty=0.5, jitter=0.1, ripple_w=2.0),
            ApplianceSpec("kettle", "kettle", power_w=2000.0, events_per_day=8.0),
            ApplianceSpec("washer", "washer", power_w=2000.0, events_per_day=3.0),
        ],
    )
