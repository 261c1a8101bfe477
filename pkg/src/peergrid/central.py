"""Monolithic social-cost minimization as the correctness oracle.

Stacks every building's block QP into one problem, imposes the per-edge
trade balance (both endpoints' trades sum to zero) as explicit equality
rows, and solves with polishing enabled.  The multipliers of those
coupling rows are the community's edge prices: with the sign convention
used by the solver's stationarity test, a positive multiplier is the
price an importer pays per kWh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .blocks import LocalBlock, build_feasible_set
from .buildings import BuildingParams, BuildingSchedule, ScenarioProfile
from .qp import PreparedQp, QpProblem, QpSettings, QpSolution
from .topology import Topology

__all__ = ["CentralSolution", "solve_social_optimum", "solve_isolated"]


class CentralInfeasibleError(RuntimeError):
    """The stacked community problem has no feasible point."""


@dataclass
class CentralSolution:
    """Global optimum: schedules, antisymmetric trades and edge prices."""

    schedules: Dict[str, BuildingSchedule]
    edge_prices: np.ndarray  # (n_edges, T), importer-pays convention
    social_cost: float
    objective: float
    solution: QpSolution


def _assemble(buildings, profile, topology):
    blocks: Dict[str, LocalBlock] = {}
    offsets: Dict[str, int] = {}
    cursor = 0
    for bp in buildings:
        blk = build_feasible_set(bp, profile.for_building(bp.id), topology.degree(bp.id))
        blocks[bp.id] = blk
        offsets[bp.id] = cursor
        cursor += blk.layout.n_vars
    n = cursor
    T = profile.horizon

    Q = np.zeros((n, n))
    q = np.zeros(n)
    c0 = 0.0
    rows_eq = sum(blk.problem.A.shape[0] for blk in blocks.values())
    n_couple = topology.n_edges * T
    A = np.zeros((rows_eq + n_couple, n))
    b = np.zeros(rows_eq + n_couple)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)

    row = 0
    for bp in buildings:
        blk, off = blocks[bp.id], offsets[bp.id]
        w = blk.layout.n_vars
        Q[off:off + w, off:off + w] = blk.problem.Q
        q[off:off + w] = blk.problem.q
        c0 += blk.problem.c0
        nr = blk.problem.A.shape[0]
        A[row:row + nr, off:off + w] = blk.problem.A
        b[row:row + nr] = blk.problem.b
        row += nr
        lo[off:off + w] = blk.problem.lo
        hi[off:off + w] = blk.problem.hi

    # coupling rows: per edge and slot, importer trade + exporter trade = 0,
    # laid out edge-major in canonical order
    for k, (a_id, b_id) in enumerate(topology.edges):
        for bid in (a_id, b_id):
            blk, off = blocks[bid], offsets[bid]
            pos = topology.neighbors[bid].index(b_id if bid == a_id else a_id)
            sl = blk.layout.trade_slice(pos)
            for t in range(T):
                A[row + k * T + t, off + sl.start + t] = 1.0
    row += n_couple

    problem = QpProblem(Q=Q, q=q, A=A, b=b, G=np.eye(n), lo=lo, hi=hi, c0=c0)
    return problem, blocks, offsets, rows_eq


def solve_social_optimum(buildings, profile: ScenarioProfile, topology: Topology,
                         settings: Optional[QpSettings] = None) -> CentralSolution:
    """Solve the whole community's scheduling problem in one shot.

    Raises :class:`CentralInfeasibleError` when the stacked problem has no
    feasible point; the per-building static witnesses fire earlier inside
    block assembly, so a failure here points at cross-building data.
    """
    problem, blocks, offsets, rows_eq = _assemble(buildings, profile, topology)
    settings = settings or QpSettings(check_interval=50)
    sol = PreparedQp(problem, settings).solve()
    if sol.status in ("infeasible", "unbounded"):
        raise CentralInfeasibleError(
            f"community problem reported {sol.status}; check scenario consistency"
        )

    T = profile.horizon
    schedules = {}
    by_id = {bp.id: bp for bp in buildings}
    for bid, blk in blocks.items():
        off = offsets[bid]
        x_loc = sol.x[off:off + blk.layout.n_vars]
        schedules[bid] = blk.extract_schedule(x_loc, topology.neighbors[bid])

    prices = sol.duals_eq[rows_eq:].reshape(topology.n_edges, T)
    social = sum(
        _building_internal_cost(by_id[bid], schedules[bid]) for bid in blocks
    )
    return CentralSolution(
        schedules=schedules,
        edge_prices=prices,
        social_cost=float(social),
        objective=sol.objective,
        solution=sol,
    )


def solve_isolated(params: BuildingParams, series, settings: Optional[QpSettings] = None,
                   fixed_trades: Optional[np.ndarray] = None,
                   neighbor_ids=()) -> BuildingSchedule:
    """Optimize one building on its own (no trade variables).

    With ``fixed_trades`` given, the imports are folded into the power
    balance instead — the repair path after a distributed run.
    """
    blk = build_feasible_set(params, series, 0, fixed_trades=fixed_trades)
    settings = settings or QpSettings(check_interval=10)
    sol = PreparedQp(blk.problem, settings).solve()
    if sol.status != "optimal":
        raise CentralInfeasibleError(
            f"isolated problem for building {params.id!r} ended with status {sol.status!r}"
        )
    schedule = blk.extract_schedule(sol.x)
    if fixed_trades is not None and len(neighbor_ids):
        schedule.trades = {
            nid: np.array(fixed_trades[pos]) for pos, nid in enumerate(neighbor_ids)
        }
    return schedule


def _building_internal_cost(params: BuildingParams, schedule: BuildingSchedule) -> float:
    from .buildings import internal_cost_series

    return float(np.sum(internal_cost_series(params, schedule)["internal"]))
