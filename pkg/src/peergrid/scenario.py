"""Scenario files: strict parsing, validation and round-tripping.

A scenario is one self-contained JSON document: community parameters,
the trading graph, inlined time-series profiles, shared tariffs, and the
algorithm/loss settings of a run.  Validation is strict and total —
unknown keys are rejected by name, and all problems are collected into a
single error rather than stopping at the first.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .agent import AlgoParams
from .buildings import (
    DEFAULT_HVAC_MAX_KW,
    BuildingParams,
    BuildingSeries,
    EssParams,
    GridParams,
    HvacParams,
    ScenarioProfile,
)
from .network import LossModel
from .topology import Topology, TopologyError, build_mapping

__all__ = ["Scenario", "ScenarioError", "load_scenario", "scenario_to_dict",
           "save_scenario", "bundled_scenario_path"]

SCHEMA_VERSION = 1
_ID_PATTERN = re.compile(r"^[A-Za-z0-9_]+$")


class ScenarioError(ValueError):
    """All validation problems of a scenario file, gathered in one place."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.errors))


@dataclass(frozen=True)
class Scenario:
    """Validated in-memory scenario."""

    schema_version: int
    buildings: tuple
    profile: ScenarioProfile
    topology: Topology
    algo: AlgoParams
    loss: LossModel

    def building(self, building_id: str) -> BuildingParams:
        for bp in self.buildings:
            if bp.id == building_id:
                return bp
        raise KeyError(building_id)


def bundled_scenario_path(name: str = "community4") -> Path:
    """Filesystem path of a scenario shipped with the package."""
    return Path(resources.files("peergrid") / "data" / f"{name}.json")


class _Checker:
    """Small helper that walks raw dicts, collecting every complaint."""

    def __init__(self):
        self.errors: List[str] = []

    def fail(self, msg: str):
        self.errors.append(msg)

    def obj(self, value, where: str) -> Dict[str, Any]:
        if not isinstance(value, dict):
            self.fail(f"{where}: expected an object")
            return {}
        return value

    def take(self, d: Dict[str, Any], key: str, where: str, required=True, default=None):
        if key not in d:
            if required:
                self.fail(f"{where}: missing field {key!r}")
            return default
        return d.pop(key)

    def no_extras(self, d: Dict[str, Any], where: str):
        for key in d:
            self.fail(f"{where}: unknown field {key!r}")

    def number(self, value, where: str, default=0.0) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{where}: expected a number")
            return default
        return float(value)

    def series(self, value, where: str, horizon: Optional[int]) -> np.ndarray:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            self.fail(f"{where}: expected a list of numbers")
            return np.zeros(horizon or 1)
        arr = np.asarray(value, dtype=float)
        if horizon is not None and arr.shape[0] != horizon:
            self.fail(f"{where}: length mismatch (got {arr.shape[0]}, expected {horizon})")
            return np.zeros(horizon)
        return arr


def _parse_hvac(ck: _Checker, raw, where: str) -> Optional[HvacParams]:
    d = dict(ck.obj(raw, where))
    fields = {
        "thermal_capacity": ck.number(ck.take(d, "thermal_capacity", where, default=1.0), where + ".thermal_capacity", 1.0),
        "envelope_resistance": ck.number(ck.take(d, "envelope_resistance", where, default=2.0), where + ".envelope_resistance", 2.0),
        "efficiency": ck.number(ck.take(d, "efficiency", where, default=1.0), where + ".efficiency", 1.0),
        "discomfort_weight": ck.number(ck.take(d, "discomfort_weight", where, default=0.0), where + ".discomfort_weight", 0.0),
        "temp_min": ck.number(ck.take(d, "temp_min", where, default=0.0), where + ".temp_min", 0.0),
        "temp_max": ck.number(ck.take(d, "temp_max", where, default=1.0), where + ".temp_max", 1.0),
        "temp_desired": ck.number(ck.take(d, "temp_desired", where, default=0.5), where + ".temp_desired", 0.5),
    }
    temp_initial = ck.take(d, "temp_initial", where, required=False)
    fields["temp_initial"] = (
        fields["temp_desired"] if temp_initial is None
        else ck.number(temp_initial, where + ".temp_initial", fields["temp_desired"])
    )
    p_max = ck.take(d, "p_hvac_max", where, required=False)
    fields["p_hvac_max"] = (
        DEFAULT_HVAC_MAX_KW if p_max is None else ck.number(p_max, where + ".p_hvac_max", DEFAULT_HVAC_MAX_KW)
    )
    ck.no_extras(d, where)
    try:
        return HvacParams(**fields)
    except ValueError as exc:
        ck.fail(f"{where}: {exc}")
        return None


def _parse_ess(ck: _Checker, raw, where: str) -> Optional[EssParams]:
    if raw is None:
        return EssParams.disabled()
    d = dict(ck.obj(raw, where))
    fields = {}
    for key in ("capacity", "soc_min", "soc_max", "soc_initial", "charge_eff",
                "discharge_eff", "p_charge_max", "p_discharge_max",
                "unit_cost_charge", "unit_cost_discharge"):
        fields[key] = ck.number(ck.take(d, key, where, default=0.5), f"{where}.{key}", 0.5)
    ck.no_extras(d, where)
    try:
        return EssParams(**fields)
    except ValueError as exc:
        ck.fail(f"{where}: {exc}")
        return None


def load_scenario(path) -> Scenario:
    """Parse and fully validate a scenario file.

    Raises :class:`ScenarioError` listing every problem found, or
    ``FileNotFoundError``/``json.JSONDecodeError`` for unreadable input.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return scenario_from_dict(raw)


def scenario_from_dict(raw: Dict[str, Any]) -> Scenario:
    ck = _Checker()
    doc = dict(ck.obj(raw, "scenario"))

    version = ck.take(doc, "schema_version", "scenario", default=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        ck.fail(f"scenario: unsupported schema_version {version!r}")

    horizon_raw = ck.take(doc, "horizon", "scenario", default=1)
    horizon = int(horizon_raw) if isinstance(horizon_raw, int) and not isinstance(horizon_raw, bool) else None
    if horizon is None or horizon < 1:
        ck.fail("scenario: horizon must be a positive integer")
        horizon = 1

    tariffs = ck.obj(ck.take(doc, "tariffs", "scenario", default={}), "tariffs")
    tariffs = dict(tariffs)
    buy = ck.series(ck.take(tariffs, "buy_price", "tariffs", default=[0.0] * horizon), "tariffs.buy_price", horizon)
    sell = ck.series(ck.take(tariffs, "sell_price", "tariffs", default=[0.0] * horizon), "tariffs.sell_price", horizon)
    ck.no_extras(tariffs, "tariffs")
    if np.any(buy < sell):
        ck.fail("tariffs: sell price exceeds buy price")

    community = ck.take(doc, "community", "scenario", default=[])
    buildings: List[BuildingParams] = []
    ids: List[str] = []
    if not isinstance(community, list) or not community:
        ck.fail("community: must be a non-empty list of buildings")
        community = []
    for pos, raw_b in enumerate(community):
        where = f"community[{pos}]"
        d = dict(ck.obj(raw_b, where))
        bid = ck.take(d, "id", where, default=f"?{pos}")
        if not isinstance(bid, str) or not _ID_PATTERN.match(bid):
            ck.fail(f"{where}: id must match [A-Za-z0-9_]+")
            bid = f"?{pos}"
        if bid in ids:
            ck.fail(f"{where}: duplicate building id {bid!r}")
        ids.append(bid)
        hvac = _parse_hvac(ck, ck.take(d, "hvac", where, default={}), f"{where}.hvac")
        ess = _parse_ess(ck, ck.take(d, "ess", where, required=False), f"{where}.ess")
        has_solar = ck.take(d, "has_solar", where, default=True)
        if not isinstance(has_solar, bool):
            ck.fail(f"{where}.has_solar: expected true or false")
            has_solar = True
        line_limit = ck.number(ck.take(d, "line_limit", where, default=1.0), f"{where}.line_limit", 1.0)
        p2p_limit = ck.number(ck.take(d, "p2p_limit", where, default=0.0), f"{where}.p2p_limit", 0.0)
        ck.no_extras(d, where)
        if hvac is None or ess is None:
            continue
        try:
            grid = GridParams(buy_price=buy, sell_price=sell,
                              line_limit=line_limit, p2p_limit=p2p_limit)
            buildings.append(BuildingParams(id=bid, hvac=hvac, ess=ess, grid=grid,
                                            has_solar=has_solar))
        except ValueError as exc:
            ck.fail(f"{where}: {exc}")

    topo_raw = dict(ck.obj(ck.take(doc, "topology", "scenario", default={}), "topology"))
    edges_raw = ck.take(topo_raw, "edges", "topology", default=[])
    ck.no_extras(topo_raw, "topology")
    edges = []
    if not isinstance(edges_raw, list):
        ck.fail("topology.edges: expected a list of id pairs")
        edges_raw = []
    for pos, pair in enumerate(edges_raw):
        if (not isinstance(pair, list)) or len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            ck.fail(f"topology.edges[{pos}]: expected a pair of building ids")
            continue
        edges.append((pair[0], pair[1]))

    profiles_raw = dict(ck.obj(ck.take(doc, "profiles", "scenario", default={}), "profiles"))
    series: Dict[str, BuildingSeries] = {}
    for bid in ids:
        where = f"profiles.{bid}"
        if bid not in profiles_raw:
            ck.fail(f"{where}: missing profile for building {bid!r}")
            continue
        d = dict(ck.obj(profiles_raw.pop(bid), where))
        solar = ck.series(ck.take(d, "solar", where, default=[0.0] * horizon), f"{where}.solar", horizon)
        load = ck.series(ck.take(d, "base_load", where, default=[0.0] * horizon), f"{where}.base_load", horizon)
        temp = ck.series(ck.take(d, "outdoor_temp", where, default=[0.0] * horizon), f"{where}.outdoor_temp", horizon)
        ck.no_extras(d, where)
        try:
            series[bid] = BuildingSeries(solar=solar, base_load=load, outdoor_temp=temp)
        except ValueError as exc:
            ck.fail(f"{where}: {exc}")
    for stray in profiles_raw:
        ck.fail(f"profiles: profile for unknown building {stray!r}")

    algo_raw = dict(ck.obj(ck.take(doc, "algo", "scenario", default={}), "algo"))
    penalty = ck.number(ck.take(algo_raw, "penalty", "algo", default=4.5), "algo.penalty", 4.5)
    max_iter_raw = ck.take(algo_raw, "max_iterations", "algo", default=100)
    residual_tol = ck.take(algo_raw, "residual_tol", "algo", required=False)
    ck.no_extras(algo_raw, "algo")
    if not isinstance(max_iter_raw, int) or isinstance(max_iter_raw, bool) or max_iter_raw < 1:
        ck.fail("algo.max_iterations: expected a positive integer")
        max_iter_raw = 1
    if residual_tol is not None:
        residual_tol = ck.number(residual_tol, "algo.residual_tol", None)
    algo = None
    try:
        algo = AlgoParams(penalty=penalty, max_iterations=max_iter_raw, residual_tol=residual_tol)
    except ValueError as exc:
        ck.fail(f"algo: {exc}")

    loss_raw = dict(ck.obj(ck.take(doc, "loss", "scenario", default={}), "loss"))
    xi = ck.number(ck.take(loss_raw, "default_failure_prob", "loss", default=0.0), "loss.default_failure_prob", 0.0)
    seed_raw = ck.take(loss_raw, "seed", "loss", default=0)
    per_link_raw = dict(ck.obj(ck.take(loss_raw, "per_link", "loss", required=False, default={}), "loss.per_link"))
    ck.no_extras(loss_raw, "loss")
    if not isinstance(seed_raw, int) or isinstance(seed_raw, bool) or seed_raw < 0:
        ck.fail("loss.seed: expected a nonnegative integer")
        seed_raw = 0
    per_link = {}
    for key, value in per_link_raw.items():
        parts = key.split("~")
        if len(parts) != 2:
            ck.fail(f"loss.per_link: key {key!r} must look like 'idA~idB'")
            continue
        per_link[(parts[0], parts[1])] = ck.number(value, f"loss.per_link[{key}]", 0.0)
    loss = None
    try:
        loss = LossModel(default_failure_prob=xi, per_link=per_link, seed=seed_raw)
    except ValueError as exc:
        ck.fail(f"loss: {exc}")

    ck.no_extras(doc, "scenario")

    topology = None
    if not ck.errors:
        try:
            topology = build_mapping(ids, edges)
        except TopologyError as exc:
            ck.fail(f"topology: {exc}")
    if topology is not None and loss is not None:
        try:
            loss.failure_probs(topology)
        except ValueError as exc:
            ck.fail(f"loss: {exc}")

    if ck.errors:
        raise ScenarioError(ck.errors)

    profile = ScenarioProfile(horizon=horizon, series=series)
    return Scenario(
        schema_version=SCHEMA_VERSION,
        buildings=tuple(buildings),
        profile=profile,
        topology=topology,
        algo=algo,
        loss=loss,
    )


def scenario_to_dict(sc: Scenario) -> Dict[str, Any]:
    """Inverse of the loader, suitable for JSON dumping."""
    first = sc.buildings[0]
    doc: Dict[str, Any] = {
        "schema_version": sc.schema_version,
        "horizon": sc.profile.horizon,
        "tariffs": {
            "buy_price": first.grid.buy_price.tolist(),
            "sell_price": first.grid.sell_price.tolist(),
        },
        "community": [],
        "topology": {"edges": [[a, b] for a, b in sc.topology.edges]},
        "profiles": {},
        "algo": {
            "penalty": sc.algo.penalty,
            "max_iterations": sc.algo.max_iterations,
            "residual_tol": sc.algo.residual_tol,
        },
        "loss": {
            "default_failure_prob": sc.loss.default_failure_prob,
            "seed": sc.loss.seed,
            "per_link": {f"{a}~{b}": p for (a, b), p in sc.loss.per_link.items()},
        },
    }
    for bp in sc.buildings:
        entry: Dict[str, Any] = {
            "id": bp.id,
            "hvac": {
                "thermal_capacity": bp.hvac.thermal_capacity,
                "envelope_resistance": bp.hvac.envelope_resistance,
                "efficiency": bp.hvac.efficiency,
                "discomfort_weight": bp.hvac.discomfort_weight,
                "temp_min": bp.hvac.temp_min,
                "temp_max": bp.hvac.temp_max,
                "temp_desired": bp.hvac.temp_desired,
                "temp_initial": bp.hvac.temp_initial,
                "p_hvac_max": bp.hvac.p_hvac_max,
            },
            "ess": None if not bp.has_ess else {
                "capacity": bp.ess.capacity,
                "soc_min": bp.ess.soc_min,
                "soc_max": bp.ess.soc_max,
                "soc_initial": bp.ess.soc_initial,
                "charge_eff": bp.ess.charge_eff,
                "discharge_eff": bp.ess.discharge_eff,
                "p_charge_max": bp.ess.p_charge_max,
                "p_discharge_max": bp.ess.p_discharge_max,
                "unit_cost_charge": bp.ess.unit_cost_charge,
                "unit_cost_discharge": bp.ess.unit_cost_discharge,
            },
            "has_solar": bp.has_solar,
            "line_limit": bp.grid.line_limit,
            "p2p_limit": bp.grid.p2p_limit,
        }
        doc["community"].append(entry)
        s = sc.profile.for_building(bp.id)
        doc["profiles"][bp.id] = {
            "solar": s.solar.tolist(),
            "base_load": s.base_load.tolist(),
            "outdoor_temp": s.outdoor_temp.tolist(),
        }
    return doc


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2)
        fh.write("\n")
