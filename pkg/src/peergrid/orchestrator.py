"""Drive the distributed negotiation end to end.

The orchestrator owns the iteration barrier: per outer iteration every
agent runs its local QP and price refresh against the previous snapshot,
prices cross the lossy bus, and consensus/dual updates absorb whatever
arrived.  Residuals for both coupling requirements (trade balance in kW,
price agreement in $/kWh) are logged every iteration.

After the loop the raw trades are projected onto exact antisymmetry and
each building's schedule is re-optimized with its trades frozen, so the
reported community solution is feasible to solver precision rather than
to negotiation precision.  Peer payments settle at the consensus price,
which makes them an exact transfer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .agent import AlgoParams, TradingAgent
from .buildings import (
    BuildingParams,
    BuildingSchedule,
    ScenarioProfile,
    internal_cost_series,
)
from .central import solve_isolated, solve_social_optimum
from .network import ActiveLinkSet, LossModel, MessageBus, draw_active_links
from .qp import QpSettings
from .topology import Topology

__all__ = ["RunResult", "EvaluationReport", "run_distributed", "run_baseline",
           "run_centralized", "evaluate_solution"]

#: Residual levels under which a finished run is flagged converged:
#: trade balance in kW, price agreement in $/kWh.
DEFAULT_FLAG_TOL = 1e-3


@dataclass
class RunResult:
    """Everything a run produces, ready for serialization.

    ``edge_prices`` is (n_edges, T) in canonical edge order; ``payments``
    settle each building's trades at those shared prices, so they sum to
    zero across the community.  ``residual_primal``/``residual_consensus``
    have one entry per executed iteration (empty for non-iterative
    methods), and ``link_log`` one boolean row per iteration.
    """

    method: str
    schedules: Dict[str, BuildingSchedule]
    edge_prices: np.ndarray
    residual_primal: np.ndarray
    residual_consensus: np.ndarray
    link_log: np.ndarray
    cost_split: Dict[str, Dict[str, float]]
    payments: Dict[str, float]
    social_cost: float
    iterations: int
    converged: bool
    seed: int
    wall_time: float
    projection_magnitude: float = 0.0

    @property
    def building_ids(self) -> List[str]:
        return list(self.schedules)

    def total_cost(self, building_id: str) -> float:
        """Internal cost plus peer settlement for one building ($)."""
        return self.cost_split[building_id]["internal"] + self.payments[building_id]

    def iterations_to_residual(self, threshold: float) -> Optional[int]:
        """First iteration at which both residual series are <= threshold."""
        both = np.maximum(self.residual_primal, self.residual_consensus)
        hits = np.nonzero(both <= threshold)[0]
        return int(hits[0]) + 1 if hits.size else None


def _settlement_prices(topology: Topology, agents, states) -> np.ndarray:
    """Consensus price per edge: mean of the two endpoint estimates."""
    T = next(iter(states.values())).price.shape[0]
    prices = np.zeros((topology.n_edges, T))
    for k, (a, b) in enumerate(topology.edges):
        prices[k] = 0.5 * (states[a].price[:, k] + states[b].price[:, k])
    return prices


def _project_antisymmetric(topology: Topology, states) -> tuple[Dict[str, np.ndarray], float]:
    """Halve each edge's trade mismatch so imports exactly mirror exports."""
    projected: Dict[str, np.ndarray] = {}
    magnitude = 0.0
    for node in topology.nodes:
        projected[node] = states[node].trades.copy()
    for a, b in topology.edges:
        pa = topology.neighbors[a].index(b)
        pb = topology.neighbors[b].index(a)
        e_ab = projected[a][pa]
        e_ba = projected[b][pb]
        clean = 0.5 * (e_ab - e_ba)
        magnitude = max(magnitude, float(np.max(np.abs(e_ab - clean), initial=0.0)))
        projected[a][pa] = clean
        projected[b][pb] = -clean
    return projected, magnitude


def run_distributed(buildings: List[BuildingParams], profile: ScenarioProfile,
                    topology: Topology, algo: AlgoParams, loss: LossModel,
                    link_schedule: Optional[Callable[[int], ActiveLinkSet]] = None,
                    flag_tol: float = DEFAULT_FLAG_TOL,
                    qp_settings: Optional[QpSettings] = None) -> RunResult:
    """Run the communication-failure-robust negotiation loop.

    ``link_schedule`` overrides the Bernoulli loss model with a scripted
    active-set sequence (used for degenerate-communication experiments).
    Returns the assembled community solution; ``converged`` reflects the
    final residuals against ``flag_tol``.
    """
    t_start = time.perf_counter()
    by_id = {bp.id: bp for bp in buildings}
    agents = {
        bp.id: TradingAgent(bp, profile.for_building(bp.id), topology, algo, qp_settings)
        for bp in buildings
    }
    states = {bid: agent.initial_state() for bid, agent in agents.items()}
    bus = MessageBus(topology)

    res_primal: List[float] = []
    res_consensus: List[float] = []
    link_rows: List[np.ndarray] = []

    for k in range(1, algo.max_iterations + 1):
        links = link_schedule(k) if link_schedule else draw_active_links(loss, k, topology)
        link_rows.append(np.asarray(links.active, dtype=bool))

        fresh_prices: Dict[str, np.ndarray] = {}
        stacked = np.zeros((profile.horizon, topology.n_edges))
        for bid in topology.nodes:
            _, trades, price = agents[bid].run_iteration(states[bid])
            fresh_prices[bid] = price
            stacked += agents[bid].stack_trades(trades)
            bus.post(k, bid, price)

        inboxes = bus.deliver(k, links)
        for bid in topology.nodes:
            agents[bid].absorb_inbox(states[bid], fresh_prices[bid], inboxes[bid])

        res_primal.append(float(np.max(np.abs(stacked))))
        disagreement = 0.0
        for a, b in topology.edges:
            disagreement = max(
                disagreement,
                float(np.max(np.abs(fresh_prices[a] - fresh_prices[b]))),
            )
        res_consensus.append(disagreement)

        if (algo.residual_tol is not None
                and res_primal[-1] <= algo.residual_tol
                and res_consensus[-1] <= algo.residual_tol):
            break

    iterations = len(res_primal)
    converged = res_primal[-1] <= flag_tol and res_consensus[-1] <= flag_tol

    prices = _settlement_prices(topology, agents, states)
    cleaned, projection = _project_antisymmetric(topology, states)

    schedules: Dict[str, BuildingSchedule] = {}
    for bid in topology.nodes:
        schedules[bid] = solve_isolated(
            by_id[bid],
            profile.for_building(bid),
            fixed_trades=cleaned[bid],
            neighbor_ids=topology.neighbors[bid],
        )

    cost_split, payments, social = _community_costs(by_id, schedules, topology, prices)
    return RunResult(
        method="distributed",
        schedules=schedules,
        edge_prices=prices,
        residual_primal=np.array(res_primal),
        residual_consensus=np.array(res_consensus),
        link_log=np.array(link_rows, dtype=bool) if link_rows else np.zeros((0, topology.n_edges), dtype=bool),
        cost_split=cost_split,
        payments=payments,
        social_cost=social,
        iterations=iterations,
        converged=converged,
        seed=int(loss.seed),
        wall_time=time.perf_counter() - t_start,
        projection_magnitude=projection,
    )


def run_baseline(buildings: List[BuildingParams], profile: ScenarioProfile,
                 topology: Topology) -> RunResult:
    """Every building optimizes alone; all trades pinned to zero."""
    t_start = time.perf_counter()
    by_id = {bp.id: bp for bp in buildings}
    schedules = {}
    for bp in buildings:
        zeros = np.zeros((topology.degree(bp.id), profile.horizon))
        schedules[bp.id] = solve_isolated(
            bp, profile.for_building(bp.id),
            fixed_trades=zeros, neighbor_ids=topology.neighbors[bp.id],
        )
    prices = np.zeros((topology.n_edges, profile.horizon))
    cost_split, payments, social = _community_costs(by_id, schedules, topology, prices)
    return RunResult(
        method="baseline",
        schedules=schedules,
        edge_prices=prices,
        residual_primal=np.zeros(0),
        residual_consensus=np.zeros(0),
        link_log=np.zeros((0, topology.n_edges), dtype=bool),
        cost_split=cost_split,
        payments=payments,
        social_cost=social,
        iterations=0,
        converged=True,
        seed=0,
        wall_time=time.perf_counter() - t_start,
    )


def run_centralized(buildings: List[BuildingParams], profile: ScenarioProfile,
                    topology: Topology) -> RunResult:
    """Solve the community problem in one shot (the correctness oracle)."""
    t_start = time.perf_counter()
    central = solve_social_optimum(buildings, profile, topology)
    by_id = {bp.id: bp for bp in buildings}
    cost_split, payments, social = _community_costs(
        by_id, central.schedules, topology, central.edge_prices
    )
    return RunResult(
        method="centralized",
        schedules=central.schedules,
        edge_prices=central.edge_prices,
        residual_primal=np.zeros(0),
        residual_consensus=np.zeros(0),
        link_log=np.zeros((0, topology.n_edges), dtype=bool),
        cost_split=cost_split,
        payments=payments,
        social_cost=social,
        iterations=0,
        converged=True,
        seed=0,
        wall_time=time.perf_counter() - t_start,
    )


def _community_costs(by_id, schedules, topology: Topology, edge_prices: np.ndarray):
    cost_split: Dict[str, Dict[str, float]] = {}
    payments: Dict[str, float] = {}
    social = 0.0
    for bid, schedule in schedules.items():
        split = internal_cost_series(by_id[bid], schedule)
        cost_split[bid] = {k: float(np.sum(v)) for k, v in split.items()}
        social += cost_split[bid]["internal"]
        pay = 0.0
        for pos, j in enumerate(topology.neighbors[bid]):
            row = topology.edge_row(bid, j)
            pay += float(edge_prices[row] @ schedule.trades[j])
        payments[bid] = pay
    return cost_split, payments, float(social)


# --- post-run verification ------------------------------------------------


@dataclass
class EvaluationReport:
    """Independent re-check of a run: constraint slack and cost accounting.

    ``violations`` holds the worst absolute violation per constraint
    family, recomputed from the reported schedules with the step-function
    physics, never from solver internals.
    """

    violations: Dict[str, float]
    cost_split: Dict[str, Dict[str, float]]
    payments: Dict[str, float]
    payment_total: float
    social_cost: float
    simultaneous_charge: float
    simultaneous_grid: float
    reductions: Optional[Dict[str, float]] = None

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    def format_table(self) -> str:
        lines = ["constraint family          max violation"]
        for fam, v in sorted(self.violations.items()):
            lines.append(f"{fam:<26} {v:.3e}")
        lines.append(f"{'payment total':<26} {self.payment_total:+.3e}")
        if self.reductions is not None:
            lines.append("")
            lines.append("building   cost before   cost after   reduction")
            for bid, red in self.reductions.items():
                lines.append(f"{bid:<10} {red[0]:>11.2f}   {red[1]:>10.2f}   {red[2]:>9.2f}")
        return "\n".join(lines)


def evaluate_solution(result: RunResult, buildings: List[BuildingParams],
                      profile: ScenarioProfile, topology: Topology,
                      baseline: Optional[RunResult] = None) -> EvaluationReport:
    """Recompute every constraint family from the reported schedules.

    Supplying ``baseline`` adds a per-building cost-reduction table
    (baseline internal cost versus cooperative internal cost plus peer
    settlement).
    """
    from .buildings import simulate_soc, simulate_temperature

    by_id = {bp.id: bp for bp in buildings}
    v: Dict[str, float] = {
        "temp_dynamics": 0.0, "temp_range": 0.0,
        "soc_dynamics": 0.0, "soc_range": 0.0, "soc_terminal": 0.0,
        "charge_limits": 0.0, "discharge_limits": 0.0, "hvac_limits": 0.0,
        "grid_nonneg": 0.0, "line_limit": 0.0, "p2p_limit": 0.0,
        "power_balance": 0.0, "trade_antisymmetry": 0.0,
    }
    sim_charge = 0.0
    sim_grid = 0.0

    for bid, sched in result.schedules.items():
        bp = by_id[bid]
        series = profile.for_building(bid)
        hv, ess, grid = bp.hvac, bp.ess, bp.grid

        temps = simulate_temperature(hv, series.outdoor_temp, sched.p_hvac)
        v["temp_dynamics"] = max(v["temp_dynamics"], float(np.max(np.abs(temps - sched.temp_in))))
        v["temp_range"] = max(
            v["temp_range"],
            float(np.max(np.maximum(hv.temp_min - sched.temp_in, sched.temp_in - hv.temp_max), initial=0.0)),
        )
        v["hvac_limits"] = max(
            v["hvac_limits"],
            float(np.max(np.maximum(-sched.p_hvac, sched.p_hvac - hv.p_hvac_max), initial=0.0)),
        )

        if bp.has_ess:
            socs = simulate_soc(ess, sched.p_charge, sched.p_discharge)
            v["soc_dynamics"] = max(v["soc_dynamics"], float(np.max(np.abs(socs - sched.soc))))
            v["soc_range"] = max(
                v["soc_range"],
                float(np.max(np.maximum(ess.soc_min - sched.soc, sched.soc - ess.soc_max), initial=0.0)),
            )
            v["soc_terminal"] = max(v["soc_terminal"], max(0.0, ess.soc_initial - float(sched.soc[-1])))
            v["charge_limits"] = max(
                v["charge_limits"],
                float(np.max(np.maximum(-sched.p_charge, sched.p_charge - ess.p_charge_max), initial=0.0)),
            )
            v["discharge_limits"] = max(
                v["discharge_limits"],
                float(np.max(np.maximum(-sched.p_discharge, sched.p_discharge - ess.p_discharge_max), initial=0.0)),
            )
            sim_charge = max(sim_charge, float(np.max(np.minimum(sched.p_charge, sched.p_discharge), initial=0.0)))

        v["grid_nonneg"] = max(
            v["grid_nonneg"],
            float(np.max(np.maximum(-sched.p_buy, -sched.p_sell), initial=0.0)),
        )
        v["line_limit"] = max(
            v["line_limit"],
            float(np.max(np.abs(sched.p_buy - sched.p_sell) - grid.line_limit, initial=0.0)),
        )
        sim_grid = max(sim_grid, float(np.max(np.minimum(sched.p_buy, sched.p_sell), initial=0.0)))

        p_charge = sched.p_charge if bp.has_ess else 0.0
        p_discharge = sched.p_discharge if bp.has_ess else 0.0
        solar = series.solar if bp.has_solar else 0.0
        balance = (
            sched.p_buy - sched.p_sell + solar + sched.net_trade()
            - series.base_load - sched.p_hvac - p_charge + p_discharge
        )
        v["power_balance"] = max(v["power_balance"], float(np.max(np.abs(balance))))

        for j, series_e in sched.trades.items():
            v["p2p_limit"] = max(
                v["p2p_limit"],
                float(np.max(np.abs(series_e) - grid.p2p_limit, initial=0.0)),
            )
            back = result.schedules[j].trades[bid]
            v["trade_antisymmetry"] = max(
                v["trade_antisymmetry"], float(np.max(np.abs(series_e + back)))
            )

    cost_split, payments, social = _community_costs(by_id, result.schedules, topology, result.edge_prices)
    reductions = None
    if baseline is not None:
        reductions = {}
        for bid in result.schedules:
            before = baseline.total_cost(bid)
            after = cost_split[bid]["internal"] + payments[bid]
            reductions[bid] = (before, after, before - after)
    return EvaluationReport(
        violations=v,
        cost_split=cost_split,
        payments=payments,
        payment_total=float(sum(payments.values())),
        social_cost=social,
        simultaneous_charge=sim_charge,
        simultaneous_grid=sim_grid,
        reductions=reductions,
    )
