"""Cooperative building-community energy scheduling via peer-to-peer trading.

A community of buildings (HVAC + optional battery + optional solar)
schedules itself over an hourly horizon.  Buildings may trade energy with
neighbors over a trading graph; prices emerge as the multipliers of the
trade-balance constraints.  The negotiation runs as a fully distributed
consensus iteration that tolerates random communication failures, and a
centralized solve of the same problem serves as the correctness oracle.
"""

from .agent import AgentState, AlgoParams, TradingAgent
from .blocks import BlockInfeasibleError, LocalBlock, VariableLayout, build_feasible_set
from .buildings import (
    BuildingParams,
    BuildingSchedule,
    BuildingSeries,
    EssParams,
    GridParams,
    HvacParams,
    ScenarioProfile,
    discomfort_cost,
    ess_cost,
    grid_cost,
    step_soc,
    step_temperature,
)
from .central import CentralSolution, solve_isolated, solve_social_optimum
from .network import ActiveLinkSet, LossModel, MessageBus, draw_active_links, round_robin_schedule
from .orchestrator import (
    EvaluationReport,
    RunResult,
    evaluate_solution,
    run_baseline,
    run_centralized,
    run_distributed,
)
from .qp import PreparedQp, QpProblem, QpSettings, QpSolution, solve
from .results_io import read_meta, read_summary, write_results
from .scenario import Scenario, ScenarioError, bundled_scenario_path, load_scenario, save_scenario
from .topology import Topology, TopologyError, build_mapping, edge_price_slice

__version__ = "0.1.0"

__all__ = [
    "AgentState", "AlgoParams", "TradingAgent",
    "BlockInfeasibleError", "LocalBlock", "VariableLayout", "build_feasible_set",
    "BuildingParams", "BuildingSchedule", "BuildingSeries", "EssParams", "GridParams",
    "HvacParams", "ScenarioProfile",
    "discomfort_cost", "ess_cost", "grid_cost", "step_soc", "step_temperature",
    "CentralSolution", "solve_isolated", "solve_social_optimum",
    "ActiveLinkSet", "LossModel", "MessageBus", "draw_active_links", "round_robin_schedule",
    "EvaluationReport", "RunResult", "evaluate_solution",
    "run_baseline", "run_centralized", "run_distributed",
    "PreparedQp", "QpProblem", "QpSettings", "QpSolution", "solve",
    "read_meta", "read_summary", "write_results",
    "Scenario", "ScenarioError", "bundled_scenario_path", "load_scenario", "save_scenario",
    "Topology", "TopologyError", "build_mapping", "edge_price_slice",
    "__version__",
]
