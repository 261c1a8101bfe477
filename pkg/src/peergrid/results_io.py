"""Run artifacts as a directory of CSV files.

Layout written by :func:`write_results`:

* ``schedules.csv`` — building,t,p_hvac,p_c,p_d,p_b,p_s,T_in,SOC (SOC empty
  for storage-less buildings)
* ``trades.csv``    — edge,t,e,price; ``e`` is the import of the edge's
  lexicographically smaller endpoint, ``price`` the settlement price
* ``residuals.csv`` — k,primal,consensus,active_links (one row per
  executed iteration)
* ``links.csv``     — k,edge,active
* ``summary.csv``   — per-building cost split and settlement plus a TOTAL row
* ``meta.json``     — method, seed, iteration count, convergence flag and
  wall time; kept out of the CSVs so those are bit-reproducible

Edges are named ``a~b`` in canonical order.  Numbers are printed with 15
significant digits, so everything re-parses to within 1e-9.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict

import numpy as np

from .orchestrator import RunResult
from .topology import Topology

__all__ = ["write_results", "read_summary", "read_meta"]


def _fmt(value: float) -> str:
    return format(float(value), ".15g")


def edge_name(a: str, b: str) -> str:
    return f"{a}~{b}" if a <= b else f"{b}~{a}"


def write_results(result: RunResult, topology: Topology, out_dir) -> Dict[str, Path]:
    """Serialize a run; returns the paths written, keyed by artifact name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    path = out / "schedules.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["building", "t", "p_hvac", "p_c", "p_d", "p_b", "p_s", "T_in", "SOC"])
        for bid in sorted(result.schedules):
            s = result.schedules[bid]
            for t in range(s.p_hvac.shape[0]):
                has_ess = s.soc is not None
                w.writerow([
                    bid, t + 1,
                    _fmt(s.p_hvac[t]),
                    _fmt(s.p_charge[t]) if has_ess else _fmt(0.0),
                    _fmt(s.p_discharge[t]) if has_ess else _fmt(0.0),
                    _fmt(s.p_buy[t]), _fmt(s.p_sell[t]),
                    _fmt(s.temp_in[t]),
                    _fmt(s.soc[t]) if has_ess else "",
                ])
    paths["schedules"] = path

    path = out / "trades.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "t", "e", "price"])
        for k, (a, b) in enumerate(topology.edges):
            imports = result.schedules[a].trades[b]
            for t in range(imports.shape[0]):
                w.writerow([edge_name(a, b), t + 1, _fmt(imports[t]),
                            _fmt(result.edge_prices[k, t])])
    paths["trades"] = path

    path = out / "residuals.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "primal", "consensus", "active_links"])
        for k in range(result.residual_primal.shape[0]):
            active = int(np.sum(result.link_log[k])) if result.link_log.size else 0
            w.writerow([k + 1, _fmt(result.residual_primal[k]),
                        _fmt(result.residual_consensus[k]), active])
    paths["residuals"] = path

    path = out / "links.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "edge", "active"])
        for k in range(result.link_log.shape[0]):
            for e, (a, b) in enumerate(topology.edges):
                w.writerow([k + 1, edge_name(a, b), int(result.link_log[k, e])])
    paths["links"] = path

    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["building", "discomfort_cost", "ess_cost", "grid_cost",
                    "internal_cost", "p2p_payment", "total_cost"])
        total = dict.fromkeys(
            ("discomfort", "ess", "grid", "internal", "payment", "total"), 0.0
        )
        for bid in sorted(result.cost_split):
            split = result.cost_split[bid]
            payment = result.payments[bid]
            row_total = split["internal"] + payment
            w.writerow([bid, _fmt(split["discomfort"]), _fmt(split["ess"]),
                        _fmt(split["grid"]), _fmt(split["internal"]),
                        _fmt(payment), _fmt(row_total)])
            total["discomfort"] += split["discomfort"]
            total["ess"] += split["ess"]
            total["grid"] += split["grid"]
            total["internal"] += split["internal"]
            total["payment"] += payment
            total["total"] += row_total
        w.writerow(["TOTAL", _fmt(total["discomfort"]), _fmt(total["ess"]),
                    _fmt(total["grid"]), _fmt(total["internal"]),
                    _fmt(total["payment"]), _fmt(total["total"])])
    paths["summary"] = path

    path = out / "meta.json"
    with open(path, "w") as fh:
        json.dump({
            "method": result.method,
            "seed": result.seed,
            "iterations": result.iterations,
            "converged": result.converged,
            "social_cost": result.social_cost,
            "projection_magnitude": result.projection_magnitude,
            "wall_time_s": result.wall_time,
        }, fh, indent=2)
        fh.write("\n")
    paths["meta"] = path
    return paths


def read_summary(result_dir) -> Dict[str, Dict[str, float]]:
    """Per-building rows of ``summary.csv`` (TOTAL row included)."""
    path = Path(result_dir) / "summary.csv"
    out: Dict[str, Dict[str, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            bid = row.pop("building")
            out[bid] = {k: float(v) for k, v in row.items()}
    return out


def read_meta(result_dir) -> dict:
    with open(Path(result_dir) / "meta.json") as fh:
        return json.load(fh)
