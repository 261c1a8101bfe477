"""Assemble one building's scheduling problem as a standard-form QP block.

Decision variables per slot: HVAC power, battery charge/discharge (when
storage is present), utility buy/sell, and one trade variable per
neighbor.  Indoor temperature and state of charge are kept as explicit
state variables tied to the power schedule by equality rows; that keeps
indexing legible and leaves the optimum unchanged.

Layout, in variable-kind blocks of ``T`` consecutive slots each:

    p_hvac | p_charge p_discharge (ess) | p_buy p_sell | e(neighbor 1..n)
    | temp_in | soc (ess)

so a building with storage has ``T * (5 + n)`` schedule variables plus
``2T`` states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .buildings import BuildingParams, BuildingSchedule, BuildingSeries
from .qp import QpProblem

__all__ = ["VariableLayout", "LocalBlock", "BlockInfeasibleError", "build_feasible_set"]


class BlockInfeasibleError(ValueError):
    """A building's constraint set is provably empty before any solve."""

    def __init__(self, building_id: str, witnesses: List[str]):
        self.building_id = building_id
        self.witnesses = witnesses
        super().__init__(f"building {building_id!r} infeasible: " + "; ".join(witnesses))


@dataclass(frozen=True)
class VariableLayout:
    """Deterministic name-to-column map for one building's QP block."""

    horizon: int
    has_ess: bool
    n_neighbors: int
    blocks: Dict[str, slice]

    @property
    def n_vars(self) -> int:
        return max((s.stop for s in self.blocks.values()), default=0)

    def index(self, kind: str, t: int) -> int:
        return self.blocks[kind].start + t

    def trade_slice(self, neighbor_pos: int) -> slice:
        base = self.blocks["trade"].start + neighbor_pos * self.horizon
        return slice(base, base + self.horizon)

    def names(self) -> Tuple[str, ...]:
        out = [""] * self.n_vars
        for kind, sl in self.blocks.items():
            if kind == "trade":
                for pos in range(self.n_neighbors):
                    tsl = self.trade_slice(pos)
                    for t in range(self.horizon):
                        out[tsl.start + t] = f"trade{pos}[{t}]"
            else:
                for t, col in enumerate(range(sl.start, sl.stop)):
                    out[col] = f"{kind}[{t}]"
        return tuple(out)


@dataclass
class LocalBlock:
    """QP block plus its layout; objective equals the building's internal cost."""

    building_id: str
    problem: QpProblem
    layout: VariableLayout

    def extract_schedule(self, x: np.ndarray,
                         neighbor_ids: Optional[Tuple[str, ...]] = None) -> BuildingSchedule:
        lay = self.layout
        get = lambda kind: np.array(x[lay.blocks[kind]])
        trades = {}
        if neighbor_ids:
            for pos, nid in enumerate(neighbor_ids):
                trades[nid] = np.array(x[lay.trade_slice(pos)])
        return BuildingSchedule(
            building_id=self.building_id,
            p_hvac=get("p_hvac"),
            p_buy=get("p_buy"),
            p_sell=get("p_sell"),
            temp_in=get("temp_in"),
            p_charge=get("p_charge") if lay.has_ess else None,
            p_discharge=get("p_discharge") if lay.has_ess else None,
            soc=get("soc") if lay.has_ess else None,
            trades=trades,
        )


def _temperature_reachability(params, outdoor, witnesses):
    """Interval propagation of the scalar temperature recursion.

    The update is monotone in the previous state and in HVAC power, so
    propagating [full-power, zero-power] envelopes clipped to the comfort
    band detects slots whose band is unreachable.
    """
    hv = params.hvac
    jr = hv.thermal_capacity * hv.envelope_resistance
    lo = hi = hv.temp_initial
    for t in range(outdoor.shape[0]):
        drive = outdoor[t] / jr
        lo = hv.retention * lo + drive - hv.efficiency * hv.p_hvac_max / hv.thermal_capacity
        hi = hv.retention * hi + drive
        if hi < hv.temp_min - 1e-9:
            witnesses.append(
                f"slot {t}: max reachable indoor temperature {hi:.3f} degC below temp_min"
            )
            return
        if lo > hv.temp_max + 1e-9:
            witnesses.append(
                f"slot {t}: min reachable indoor temperature {lo:.3f} degC above temp_max"
            )
            return
        lo = max(lo, hv.temp_min)
        hi = min(hi, hv.temp_max)


def _soc_reachability(params, horizon, witnesses):
    ess = params.ess
    lo = hi = ess.soc_initial
    for _ in range(horizon):
        lo = max(lo - ess.p_discharge_max / (ess.discharge_eff * ess.capacity), ess.soc_min)
        hi = min(hi + ess.charge_eff * ess.p_charge_max / ess.capacity, ess.soc_max)
    if hi < ess.soc_initial - 1e-12:
        witnesses.append(
            f"terminal SOC requirement {ess.soc_initial} unreachable (max {hi:.4f})"
        )


def build_feasible_set(params: BuildingParams, series: BuildingSeries,
                       n_neighbors: int,
                       fixed_trades: Optional[np.ndarray] = None) -> LocalBlock:
    """Emit the QP block encoding one building's cost and feasible set.

    ``n_neighbors`` sets the width of the trade block (zero for an
    isolated building).  Passing ``fixed_trades`` (n_neighbors, T) drops
    the trade variables and folds the given imports into the power-balance
    right-hand side, which is how post-run repair solves are built.

    Raises :class:`BlockInfeasibleError` for statically detectable
    contradictions (bad bounds, unreachable comfort band or terminal SOC).
    """
    T = series.horizon
    hv, ess, grid = params.hvac, params.ess, params.grid
    if grid.horizon != T:
        raise ValueError(
            f"building {params.id!r}: tariff length {grid.horizon} != horizon {T}"
        )

    witnesses: List[str] = []
    _temperature_reachability(params, series.outdoor_temp, witnesses)
    if params.has_ess:
        _soc_reachability(params, T, witnesses)
    if witnesses:
        raise BlockInfeasibleError(params.id, witnesses)

    if fixed_trades is not None:
        fixed_trades = np.asarray(fixed_trades, dtype=float).reshape(-1, T)
        n_trade_vars = 0
    else:
        n_trade_vars = n_neighbors

    kinds = ["p_hvac"]
    if params.has_ess:
        kinds += ["p_charge", "p_discharge"]
    kinds += ["p_buy", "p_sell"]

    blocks: Dict[str, slice] = {}
    cursor = 0
    for kind in kinds:
        blocks[kind] = slice(cursor, cursor + T)
        cursor += T
    if n_trade_vars:
        blocks["trade"] = slice(cursor, cursor + n_trade_vars * T)
        cursor += n_trade_vars * T
    blocks["temp_in"] = slice(cursor, cursor + T)
    cursor += T
    if params.has_ess:
        blocks["soc"] = slice(cursor, cursor + T)
        cursor += T
    n = cursor
    layout = VariableLayout(horizon=T, has_ess=params.has_ess,
                            n_neighbors=n_trade_vars, blocks=blocks)

    # objective: discomfort is quadratic in temp_in, everything else linear
    Q = np.zeros((n, n))
    q = np.zeros(n)
    tin = blocks["temp_in"]
    Q[np.arange(tin.start, tin.stop), np.arange(tin.start, tin.stop)] = 2.0 * hv.discomfort_weight
    q[tin] = -2.0 * hv.discomfort_weight * hv.temp_desired
    c0 = T * hv.discomfort_weight * hv.temp_desired**2
    if params.has_ess:
        q[blocks["p_charge"]] = ess.unit_cost_charge
        q[blocks["p_discharge"]] = ess.unit_cost_discharge
    q[blocks["p_buy"]] = grid.buy_price
    q[blocks["p_sell"]] = -grid.sell_price

    # equalities: temperature recursion, SOC recursion, power balance
    n_eq = 2 * T if not params.has_ess else 3 * T
    A = np.zeros((n_eq, n))
    b = np.zeros(n_eq)
    row = 0
    jr = hv.thermal_capacity * hv.envelope_resistance
    for t in range(T):
        A[row, layout.index("temp_in", t)] = 1.0
        A[row, layout.index("p_hvac", t)] = hv.efficiency / hv.thermal_capacity
        b[row] = series.outdoor_temp[t] / jr
        if t == 0:
            b[row] += hv.retention * hv.temp_initial
        else:
            A[row, layout.index("temp_in", t - 1)] = -hv.retention
        row += 1
    if params.has_ess:
        for t in range(T):
            A[row, layout.index("soc", t)] = 1.0
            A[row, layout.index("p_charge", t)] = -ess.charge_eff / ess.capacity
            A[row, layout.index("p_discharge", t)] = 1.0 / (ess.discharge_eff * ess.capacity)
            if t == 0:
                b[row] = ess.soc_initial
            else:
                A[row, layout.index("soc", t - 1)] = -1.0
            row += 1
    solar = series.solar if params.has_solar else np.zeros(T)
    for t in range(T):
        A[row, layout.index("p_buy", t)] = 1.0
        A[row, layout.index("p_sell", t)] = -1.0
        A[row, layout.index("p_hvac", t)] = -1.0
        if params.has_ess:
            A[row, layout.index("p_charge", t)] = -1.0
            A[row, layout.index("p_discharge", t)] = 1.0
        for pos in range(n_trade_vars):
            A[row, layout.trade_slice(pos).start + t] = 1.0
        b[row] = series.base_load[t] - solar[t]
        if fixed_trades is not None and fixed_trades.size:
            b[row] -= float(np.sum(fixed_trades[:, t]))
        row += 1

    # inequalities: every remaining constraint is a variable box.  Capping
    # buy and sell individually at the line limit enforces the net-exchange
    # window exactly and more: with the sell price never above the buy
    # price, shrinking simultaneous buy/sell changes neither cost nor net
    # flow, so no optimal net exchange is cut off, and the box keeps the
    # optimal face bounded and nondegenerate.  The terminal SOC floor is
    # folded into the final SOC variable's lower bound.
    lo_box = np.zeros(n)
    hi_box = np.full(n, np.inf)
    hi_box[blocks["p_hvac"]] = hv.p_hvac_max
    if params.has_ess:
        hi_box[blocks["p_charge"]] = ess.p_charge_max
        hi_box[blocks["p_discharge"]] = ess.p_discharge_max
        lo_box[blocks["soc"]] = ess.soc_min
        hi_box[blocks["soc"]] = ess.soc_max
        lo_box[layout.index("soc", T - 1)] = max(ess.soc_min, ess.soc_initial)
    hi_box[blocks["p_buy"]] = grid.line_limit
    hi_box[blocks["p_sell"]] = grid.line_limit
    if n_trade_vars:
        lo_box[blocks["trade"]] = -grid.p2p_limit
        hi_box[blocks["trade"]] = grid.p2p_limit
    lo_box[tin] = hv.temp_min
    hi_box[tin] = hv.temp_max

    problem = QpProblem(Q=Q, q=q, A=A, b=b, G=np.eye(n), lo=lo_box, hi=hi_box,
                        c0=c0, names=layout.names())
    return LocalBlock(building_id=params.id, problem=problem, layout=layout)
