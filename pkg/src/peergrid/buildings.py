"""Building physics, operating costs and parameter containers.

Each building in the community runs three controllable subsystems over an
hourly horizon: an HVAC unit acting on a first-order RC indoor-temperature
model, an optional battery (ESS) with charge/discharge efficiencies, and a
utility-grid connection with asymmetric buy/sell tariffs.  Slots are one
hour long, so kW and kWh are numerically interchangeable per slot.

All parameter objects are frozen dataclasses: they validate on construction
and can be shared freely between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "HvacParams",
    "EssParams",
    "GridParams",
    "BuildingParams",
    "BuildingSeries",
    "ScenarioProfile",
    "BuildingSchedule",
    "step_temperature",
    "simulate_temperature",
    "discomfort_cost",
    "step_soc",
    "simulate_soc",
    "ess_cost",
    "grid_cost",
]

#: Default upper bound on HVAC electrical power (kW).  The physical model
#: leaves HVAC power unbounded; a large finite cap keeps every local QP
#: bounded without ever binding in sanely sized scenarios.
DEFAULT_HVAC_MAX_KW = 1e4


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a one-dimensional series")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HvacParams:
    """First-order RC thermal model plus comfort economics.

    thermal_capacity (kWh/degC) and envelope_resistance (degC/kWh) set the
    dynamics coefficient 1 - 1/(J*R), which must lie in (0, 1); efficiency
    converts electrical power into cooling effect.  Discomfort is priced
    quadratically in the deviation from ``temp_desired``.
    """

    thermal_capacity: float
    envelope_resistance: float
    efficiency: float
    discomfort_weight: float
    temp_min: float
    temp_max: float
    temp_desired: float
    temp_initial: float
    p_hvac_max: float = DEFAULT_HVAC_MAX_KW

    def __post_init__(self):
        if self.thermal_capacity <= 0:
            raise ValueError("thermal_capacity must be positive")
        if self.envelope_resistance <= 0:
            raise ValueError("envelope_resistance must be positive")
        if self.efficiency <= 0:
            raise ValueError("efficiency must be positive")
        if self.discomfort_weight < 0:
            raise ValueError("discomfort_weight must be nonnegative")
        if not (self.temp_min <= self.temp_desired <= self.temp_max):
            raise ValueError("temp_desired must lie within [temp_min, temp_max]")
        if self.thermal_capacity * self.envelope_resistance <= 1.0:
            raise ValueError(
                "thermal_capacity * envelope_resistance must exceed 1 "
                "(dynamics coefficient must lie in (0, 1))"
            )
        if self.p_hvac_max < 0:
            raise ValueError("p_hvac_max must be nonnegative")

    @property
    def retention(self) -> float:
        """Fraction of the indoor-outdoor gap retained over one slot."""
        return 1.0 - 1.0 / (self.thermal_capacity * self.envelope_resistance)


@dataclass(frozen=True)
class EssParams:
    """Battery block: capacity, SOC window, efficiencies and wear prices.

    ``absent`` marks a building without storage; all other fields are then
    ignored and no storage variables are generated for the building.
    """

    capacity: float = 0.0
    soc_min: float = 0.0
    soc_max: float = 1.0
    soc_initial: float = 0.5
    charge_eff: float = 1.0
    discharge_eff: float = 1.0
    p_charge_max: float = 0.0
    p_discharge_max: float = 0.0
    unit_cost_charge: float = 0.0
    unit_cost_discharge: float = 0.0
    absent: bool = False

    def __post_init__(self):
        if self.absent:
            return
        if self.capacity <= 0:
            raise ValueError("ESS capacity must be positive")
        if not (0.0 <= self.soc_min <= self.soc_initial <= self.soc_max <= 1.0):
            raise ValueError("require 0 <= soc_min <= soc_initial <= soc_max <= 1")
        if not (0.0 < self.charge_eff <= 1.0) or not (0.0 < self.discharge_eff <= 1.0):
            raise ValueError("charge/discharge efficiencies must lie in (0, 1]")
        if self.p_charge_max < 0 or self.p_discharge_max < 0:
            raise ValueError("ESS power limits must be nonnegative")
        if self.unit_cost_charge < 0 or self.unit_cost_discharge < 0:
            raise ValueError("ESS unit costs must be nonnegative")

    @classmethod
    def disabled(cls) -> "EssParams":
        return cls(absent=True)


@dataclass(frozen=True)
class GridParams:
    """Per-building utility tariffs and power limits.

    buy_price/sell_price are per-slot series ($/kWh); line_limit caps the
    net utility exchange and p2p_limit caps each neighbor trade (kW).
    """

    buy_price: np.ndarray
    sell_price: np.ndarray
    line_limit: float
    p2p_limit: float

    def __post_init__(self):
        object.__setattr__(self, "buy_price", _as_float_array(self.buy_price, "buy_price"))
        object.__setattr__(self, "sell_price", _as_float_array(self.sell_price, "sell_price"))
        if self.buy_price.shape != self.sell_price.shape:
            raise ValueError("buy_price and sell_price must have the same length")
        if np.any(self.sell_price < 0):
            raise ValueError("sell prices must be nonnegative")
        if np.any(self.buy_price < self.sell_price):
            raise ValueError("sell price exceeds buy price")
        if self.line_limit <= 0 or self.p2p_limit < 0:
            raise ValueError("line_limit must be positive and p2p_limit nonnegative")

    @property
    def horizon(self) -> int:
        return self.buy_price.shape[0]


@dataclass(frozen=True)
class BuildingParams:
    """Everything fixed about one building: physics, storage, tariffs."""

    id: str
    hvac: HvacParams
    ess: EssParams
    grid: GridParams
    has_solar: bool = True

    def __post_init__(self):
        if not self.id:
            raise ValueError("building id must be non-empty")

    @property
    def has_ess(self) -> bool:
        return not self.ess.absent


@dataclass(frozen=True)
class BuildingSeries:
    """Exogenous per-building time series (kW, kW, degC)."""

    solar: np.ndarray
    base_load: np.ndarray
    outdoor_temp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "solar", _as_float_array(self.solar, "solar"))
        object.__setattr__(self, "base_load", _as_float_array(self.base_load, "base_load"))
        object.__setattr__(self, "outdoor_temp", _as_float_array(self.outdoor_temp, "outdoor_temp"))
        n = self.solar.shape[0]
        if self.base_load.shape[0] != n or self.outdoor_temp.shape[0] != n:
            raise ValueError("solar, base_load and outdoor_temp must have equal length")
        if np.any(self.solar < 0):
            raise ValueError("solar output must be nonnegative")
        if np.any(self.base_load < 0):
            raise ValueError("base load must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.solar.shape[0]


@dataclass(frozen=True)
class ScenarioProfile:
    """Community-wide profile: one BuildingSeries per building id."""

    horizon: int
    series: Mapping[str, BuildingSeries]

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for bid, s in self.series.items():
            if s.horizon != self.horizon:
                raise ValueError(
                    f"series for building {bid!r} has length {s.horizon}, expected {self.horizon}"
                )

    def for_building(self, building_id: str) -> BuildingSeries:
        return self.series[building_id]


@dataclass
class BuildingSchedule:
    """One building's dispatch over the horizon plus induced states.

    Power arrays are in kW; ``trades`` maps neighbor id to the signed
    import series (positive = energy flowing in from that neighbor).
    ``soc`` is None for buildings without storage.
    """

    building_id: str
    p_hvac: np.ndarray
    p_buy: np.ndarray
    p_sell: np.ndarray
    temp_in: np.ndarray
    p_charge: Optional[np.ndarray] = None
    p_discharge: Optional[np.ndarray] = None
    soc: Optional[np.ndarray] = None
    trades: dict = field(default_factory=dict)

    def net_trade(self) -> np.ndarray:
        """Total p2p import per slot (kW)."""
        total = np.zeros_like(self.p_hvac)
        for series in self.trades.values():
            total = total + series
        return total


# --- physics -----------------------------------------------------------

def step_temperature(params: HvacParams, temp_prev: float, temp_out: float, p_hvac: float) -> float:
    """One-slot indoor temperature update of the RC model.

    Returns ``retention * temp_prev + temp_out / (J*R) - eff * p_hvac / J``:
    the room relaxes toward the outdoor temperature while HVAC power cools
    it proportionally to its efficiency.
    """
    jr = params.thermal_capacity * params.envelope_resistance
    return (
        params.retention * temp_prev
        + temp_out / jr
        - params.efficiency * p_hvac / params.thermal_capacity
    )


def simulate_temperature(params: HvacParams, outdoor_temp, p_hvac) -> np.ndarray:
    """Roll the temperature recursion over a whole horizon.

    Starts from ``params.temp_initial``; returns the T induced indoor
    temperatures (slot 0 of the output is the state after the first hour).
    """
    outdoor_temp = np.asarray(outdoor_temp, dtype=float)
    p_hvac = np.asarray(p_hvac, dtype=float)
    temps = np.empty_like(outdoor_temp)
    prev = params.temp_initial
    for t in range(outdoor_temp.shape[0]):
        prev = step_temperature(params, prev, outdoor_temp[t], p_hvac[t])
        temps[t] = prev
    return temps


def discomfort_cost(params: HvacParams, temp_in) -> np.ndarray | float:
    """Comfort penalty ($): weight times squared deviation from desired."""
    dev = np.asarray(temp_in, dtype=float) - params.temp_desired
    cost = params.discomfort_weight * dev * dev
    return float(cost) if cost.ndim == 0 else cost


def step_soc(params: EssParams, soc_prev: float, p_charge: float, p_discharge: float) -> float:
    """One-slot state-of-charge update (fraction of capacity).

    Charging is derated by the charge efficiency before it reaches the
    cells; discharging drains more than is delivered.
    """
    return (
        soc_prev
        + params.charge_eff * p_charge / params.capacity
        - p_discharge / (params.discharge_eff * params.capacity)
    )


def simulate_soc(params: EssParams, p_charge, p_discharge) -> np.ndarray:
    """Roll the SOC recursion from ``params.soc_initial`` over a horizon."""
    p_charge = np.asarray(p_charge, dtype=float)
    p_discharge = np.asarray(p_discharge, dtype=float)
    soc = np.empty_like(p_charge)
    prev = params.soc_initial
    for t in range(p_charge.shape[0]):
        prev = step_soc(params, prev, p_charge[t], p_discharge[t])
        soc[t] = prev
    return soc


def ess_cost(params: EssParams, p_charge, p_discharge) -> np.ndarray | float:
    """Battery wear cost ($): linear in charge and discharge throughput."""
    cost = (
        params.unit_cost_charge * np.asarray(p_charge, dtype=float)
        + params.unit_cost_discharge * np.asarray(p_discharge, dtype=float)
    )
    return float(cost) if cost.ndim == 0 else cost


def grid_cost(params: GridParams, t: int, p_buy, p_sell) -> np.ndarray | float:
    """Utility trading cost ($) at slot ``t``: buy at tariff, sell at rebate."""
    cost = params.buy_price[t] * np.asarray(p_buy, dtype=float) - params.sell_price[
        t
    ] * np.asarray(p_sell, dtype=float)
    return float(cost) if cost.ndim == 0 else cost


def internal_cost_series(params: BuildingParams, schedule: BuildingSchedule) -> dict:
    """Per-slot cost split for one building's schedule.

    Returns arrays keyed ``discomfort``, ``ess``, ``grid`` plus their sum
    ``internal`` — the building's private operating cost, excluding any
    peer-to-peer settlement.
    """
    discomfort = discomfort_cost(params.hvac, schedule.temp_in)
    if params.has_ess and schedule.p_charge is not None:
        storage = ess_cost(params.ess, schedule.p_charge, schedule.p_discharge)
    else:
        storage = np.zeros_like(schedule.p_hvac)
    utility = params.grid.buy_price * schedule.p_buy - params.grid.sell_price * schedule.p_sell
    return {
        "discomfort": discomfort,
        "ess": storage,
        "grid": utility,
        "internal": discomfort + storage + utility,
    }
