"""One building agent's iteration logic for distributed price negotiation.

Per outer iteration an agent (1) re-solves its local schedule-and-trade QP
with a quadratic penalty tying its trades to the current price consensus,
(2) refreshes its local estimate of the community-wide edge-price vector,
(3) averages that estimate with each neighbor it heard from, and (4)
accumulates the disagreement into a running dual term.  Links that failed
this iteration contribute nothing: their consensus auxiliaries are carried
over unchanged.

All per-edge quantities (price estimate, dual accumulator, per-neighbor
consensus auxiliaries) are full edge-space vectors.  Entries at edges not
incident to an agent still matter: they ride along through the neighbor
averaging and are how price information propagates across the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .blocks import LocalBlock, build_feasible_set
from .buildings import BuildingParams, BuildingSeries
from .qp import PreparedQp, QpSettings
from .topology import Topology

__all__ = [
    "AlgoParams",
    "AgentState",
    "TradingAgent",
    "price_update",
    "consensus_update",
    "dual_update",
    "InfeasibleUpdateError",
]


class InfeasibleUpdateError(RuntimeError):
    """A local schedule update had no feasible point (bad scenario data)."""

    def __init__(self, building_id: str, status: str):
        self.building_id = building_id
        self.status = status
        super().__init__(f"local update for building {building_id!r} ended with status {status!r}")


@dataclass(frozen=True)
class AlgoParams:
    """Penalty weight and stopping rule of the distributed negotiation.

    With ``residual_tol`` unset the loop always runs ``max_iterations``;
    otherwise it stops as soon as both the trade-balance and the
    price-consensus residual drop below the tolerance.
    """

    penalty: float = 4.5
    max_iterations: int = 100
    residual_tol: Optional[float] = None

    def __post_init__(self):
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.residual_tol is not None and self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive when given")


@dataclass
class AgentState:
    """One agent's iterates.  Everything starts at zero.

    Shapes: ``trades`` (n_neighbors, T); ``price`` and ``dual`` (T, n_edges);
    ``aux`` (n_neighbors, T, n_edges), one consensus slab per neighbor in
    sorted-neighbor order.
    """

    x: np.ndarray
    trades: np.ndarray
    price: np.ndarray
    dual: np.ndarray
    aux: np.ndarray
    iteration: int = 0
    y: Optional[np.ndarray] = None  # warm-start duals for the local QP

    @classmethod
    def zeros(cls, n_vars: int, n_neighbors: int, horizon: int, n_edges: int) -> "AgentState":
        return cls(
            x=np.zeros(n_vars),
            trades=np.zeros((n_neighbors, horizon)),
            price=np.zeros((horizon, n_edges)),
            dual=np.zeros((horizon, n_edges)),
            aux=np.zeros((n_neighbors, horizon, n_edges)),
        )


def price_update(aux_sum: np.ndarray, dual: np.ndarray, stacked_trades: np.ndarray,
                 n_neighbors: int, penalty: float) -> np.ndarray:
    """Refresh the local edge-price estimate from fresh trades.

    ``aux_sum`` is the sum of the per-neighbor consensus slabs from the
    previous iteration, ``dual`` the running dual accumulator and
    ``stacked_trades`` the agent's new trades scattered into edge space;
    all are (T, n_edges).
    """
    return (2.0 * aux_sum - dual / penalty + stacked_trades / penalty) / (2.0 * n_neighbors)


def consensus_update(price_i: np.ndarray, price_j: np.ndarray) -> np.ndarray:
    """Elementwise mean of two neighbors' price estimates."""
    return 0.5 * (price_i + price_j)


def dual_update(dual: np.ndarray, price_i: np.ndarray, active_aux, penalty: float) -> np.ndarray:
    """Accumulate price-versus-consensus gaps over the links that delivered.

    ``active_aux`` iterates the fresh consensus slabs of this iteration's
    active incident links only; with none active the dual is returned
    unchanged.
    """
    out = np.array(dual, copy=True)
    for aux in active_aux:
        out += 2.0 * penalty * (price_i - aux)
    return out


class TradingAgent:
    """Owns one building's block QP and runs its updates in place.

    The QP structure is fixed for a whole run; only the linear cost on the
    trade variables changes between iterations, so the prepared solver and
    its factorization are reused throughout.
    """

    def __init__(self, params: BuildingParams, series: BuildingSeries,
                 topology: Topology, algo: AlgoParams,
                 qp_settings: Optional[QpSettings] = None):
        self.id = params.id
        self.params = params
        self.topology = topology
        self.algo = algo
        self.neighbors = topology.neighbors[params.id]
        self.n_neighbors = len(self.neighbors)
        if self.n_neighbors == 0:
            raise ValueError(f"building {params.id!r} has no trading links")
        self.edge_rows = topology.incident_rows(params.id)
        self.horizon = series.horizon

        self.block: LocalBlock = build_feasible_set(params, series, self.n_neighbors)
        layout = self.block.layout
        self.trade_cols = np.arange(layout.blocks["trade"].start, layout.blocks["trade"].stop)
        problem = self.block.problem
        # quadratic pull of trades toward the consensus target
        curvature = 1.0 / (2.0 * self.n_neighbors * algo.penalty)
        problem.Q[self.trade_cols, self.trade_cols] += curvature
        self.base_q = problem.q.copy()
        self.base_c0 = problem.c0

        settings = qp_settings or QpSettings(polish=False, check_interval=10)
        self.prepared = PreparedQp(problem, settings)

    def initial_state(self) -> AgentState:
        return AgentState.zeros(
            n_vars=self.block.layout.n_vars,
            n_neighbors=self.n_neighbors,
            horizon=self.horizon,
            n_edges=self.topology.n_edges,
        )

    def stack_trades(self, trades: np.ndarray) -> np.ndarray:
        """Scatter (n_neighbors, T) trades into edge space, (T, n_edges)."""
        stacked = np.zeros((self.horizon, self.topology.n_edges))
        stacked[:, self.edge_rows] = trades.T
        return stacked

    def consensus_drive(self, state: AgentState) -> np.ndarray:
        """The constant part of the penalty argument: 2*sum(aux) - dual/c."""
        return 2.0 * state.aux.sum(axis=0) - state.dual / self.algo.penalty

    def local_primal_update(self, state: AgentState) -> tuple[np.ndarray, np.ndarray]:
        """Solve the penalized local QP; returns (x, trades)."""
        c = self.algo.penalty
        n = self.n_neighbors
        drive = self.consensus_drive(state)  # (T, E)
        q = self.base_q.copy()
        # gradient contribution of the penalty at the incident edge rows,
        # laid out neighbor-major to match the trade variable block
        q[self.trade_cols] += (drive[:, self.edge_rows].T / (2.0 * n)).ravel()
        c0 = self.base_c0 + (c / (4.0 * n)) * float(np.sum(drive * drive))
        self.prepared.update_linear_cost(q, c0)
        sol = self.prepared.solve(x0=state.x if state.iteration else None,
                                  y0=state.y)
        if sol.status not in ("optimal", "max-iter"):
            raise InfeasibleUpdateError(self.id, sol.status)
        if sol.status == "max-iter":
            raise InfeasibleUpdateError(self.id, "max-iter (local QP did not converge)")
        trades = sol.x[self.trade_cols].reshape(n, self.horizon)
        state.y = np.concatenate([sol.duals_eq, sol.duals_ineq])
        return sol.x, trades

    def price_update(self, state: AgentState, trades: np.ndarray) -> np.ndarray:
        return price_update(
            aux_sum=state.aux.sum(axis=0),
            dual=state.dual,
            stacked_trades=self.stack_trades(trades),
            n_neighbors=self.n_neighbors,
            penalty=self.algo.penalty,
        )

    def absorb_inbox(self, state: AgentState, price_i: np.ndarray,
                     inbox: Dict[str, np.ndarray]) -> None:
        """Consensus and dual steps after the exchange barrier.

        ``inbox`` holds the neighbors that actually delivered; their
        auxiliaries are refreshed to the price mean, all others carry
        over, and only refreshed links enter the dual accumulation.
        """
        fresh = []
        for pos, j in enumerate(self.neighbors):
            if j in inbox:
                state.aux[pos] = consensus_update(price_i, inbox[j])
                fresh.append(state.aux[pos])
        state.dual = dual_update(state.dual, price_i, fresh, self.algo.penalty)
        state.price = price_i
        state.iteration += 1

    def run_iteration(self, state: AgentState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Primal + price halves of one iteration (before the exchange)."""
        x, trades = self.local_primal_update(state)
        price = self.price_update(state, trades)
        state.x = x
        state.trades = trades
        return x, trades, price
