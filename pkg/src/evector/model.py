"""Core domain types: virtual time, EV/EVSE configuration and battery energy model."""

from __future__ import annotations

from dataclasses import dataclass, field

HOURS_PER_DAY = 24
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True, order=True)
class SimTime:
    """Virtual clock instant. Events with equal seconds are ordered by seq."""

    seconds: float
    seq: int = 0

    def __post_init__(self):
        if self.seconds < 0:
            raise ValueError("SimTime.seconds must be nonnegative")

    def plus(self, delta_s: float, seq: int = 0) -> "SimTime":
        return SimTime(self.seconds + delta_s, seq)


@dataclass(frozen=True)
class EvConfig:
    id: str
    battery_capacity_kwh: float
    initial_soc: float
    max_charge_rate_kw: float
    plug_in_time_s: float
    target_evse: str
    interrupt_time_s: float | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("EV id must be non-empty")
        if self.battery_capacity_kwh <= 0:
            raise ValueError("battery_capacity_kwh must be positive")
        if not 0.0 <= self.initial_soc <= 1.0:
            raise ValueError("initial_soc must be in [0,1]")
        if self.max_charge_rate_kw <= 0:
            raise ValueError("max_charge_rate_kw must be positive")
        if self.plug_in_time_s < 0:
            raise ValueError("plug_in_time_s must be nonnegative")


@dataclass(frozen=True)
class EvseConfig:
    id: str
    max_power_kw: float
    location: str = ""
    charge_status_timeout_s: float = 2.0
    heartbeat_interval_s: float = 1.0

    def __post_init__(self):
        if not self.id:
            raise ValueError("EVSE id must be non-empty")
        if self.max_power_kw <= 0:
            raise ValueError("max_power_kw must be positive")
        if self.charge_status_timeout_s <= 0:
            raise ValueError("charge_status_timeout_s must be positive")
        if self.heartbeat_interval_s <= 0:
            raise ValueError("heartbeat_interval_s must be positive")


@dataclass(frozen=True)
class BatteryState:
    soc: float
    capacity_kwh: float

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError("soc must be in [0,1]")
        if self.capacity_kwh <= 0:
            raise ValueError("capacity_kwh must be positive")


@dataclass(frozen=True)
class SimParams:
    """Tuning knobs for the event loop and simulated links."""

    handshake_delay_s: float = 0.2
    power_down_ramp_s: float = 5.0
    power_sample_interval_s: float = 1.0
    link_latency_s: float = 0.01
    link_loss_prob: float = 0.0
    link_rto_s: float = 0.2
    link_max_retransmits: int = 5

    def __post_init__(self):
        if self.handshake_delay_s < 0 or self.power_down_ramp_s < 0:
            raise ValueError("delays must be nonnegative")
        if self.power_sample_interval_s <= 0:
            raise ValueError("power_sample_interval_s must be positive")
        if not 0.0 <= self.link_loss_prob <= 1.0:
            raise ValueError("link_loss_prob must be in [0,1]")
        if self.link_rto_s <= 0 or self.link_latency_s < 0:
            raise ValueError("bad link timing")
        if self.link_max_retransmits < 0:
            raise ValueError("link_max_retransmits must be nonnegative")


def battery_step(b: BatteryState, delivered_kw: float, dt_s: float) -> BatteryState:
    """Integrate constant charging power over dt_s; soc clamps at 1.0."""
    if delivered_kw < 0:
        raise ValueError("delivered_kw must be nonnegative")
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    soc = b.soc + delivered_kw * dt_s / (3600.0 * b.capacity_kwh)
    return BatteryState(soc=min(1.0, soc), capacity_kwh=b.capacity_kwh)


def baseline_load(profile, t_s: float) -> float:
    """Piecewise-linear interpolation of an hourly MW profile, wrapping every 24 h.

    The hour-h value sits exactly at h*3600 s; between hours the value is
    interpolated linearly, and the segment after hour 23 bends back to hour 0.
    """
    if len(profile) != HOURS_PER_DAY:
        raise ValueError("profile must have 24 hourly values")
    t = t_s % SECONDS_PER_DAY
    hour = int(t // 3600.0)
    frac = (t - hour * 3600.0) / 3600.0
    v0 = profile[hour]
    v1 = profile[(hour + 1) % HOURS_PER_DAY]
    return v0 + (v1 - v0) * frac


# Daily aggregate demand curve (MW per hour) used by the shipped scenarios.
# Afternoon/evening values stay in the 30-37 MW band.
DAILY_BASELINE_MW = (
    18.0, 16.0, 15.0, 14.0, 14.0, 15.0, 17.0, 20.0, 23.0, 26.0, 29.0, 31.0,
    33.0, 35.0, 36.0, 37.0, 37.0, 36.0, 35.0, 34.0, 33.0, 28.0, 24.0, 20.0,
)
