"""
CSV/JSON writers and the documented output schemas
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel

from ..models import FlowResult, OracleResult
from ..numerics.grid import PeriodicGrid
from ..numerics.projection import gradient_of
from ..numerics.sampler import BiasSnapshot, DiagnosticRow

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _per_axis(prefix: str, m: int) -> List[str]:
    return [f"{prefix}_{j + 1}" for j in range(m)]


def csv_columns(name: str, m: int = 1) -> List[str]:
    """Column layout of every CSV output; vector quantities get one column per reaction coordinate."""
    schemas = {
        "bias_snapshots.csv": ["time", *_per_axis("z", m), "A", *_per_axis("grad_A", m)],
        "histogram.csv": ["cell", *_per_axis("z", m), "mass"],
        "diagnostics.csv": ["time", "error_c0", "error_w12", "flat_distance", "max_bias_gradient"],
        "accumulator.csv": [
            "node", *_per_axis("z", m), "denominator", "log_denominator", *_per_axis("numerator", m)
        ],
        "fixedpoint.csv": [
            "epsilon",
            "grid_nodes",
            "converged",
            "iterations",
            "update_l2",
            "update_c0",
            "error_w12",
            "error_w14",
            "error_c0",
            "contraction_estimate",
        ],
        "flow.csv": ["t", "l2_distance", "mass"],
        "oracle.csv": [
            "node", *_per_axis("z", m), "a_star", "a_star_bar", *_per_axis("grad_a_star", m), "z_marginal"
        ],
    }
    try:
        return schemas[name]
    except KeyError:
        raise ValueError(f"No CSV schema registered for {name!r}") from None


JSON_KEYS = {
    "estimates.json": None,
    "summary.json": None,
    "verify.json": ["passed", "checks"],
    "config.json": ["seed", "potential", "grid", "kernel", "simulation", "fixed_point", "flow", "verify"],
    "metadata.json": ["command", "started_at", "finished_at", "runtime_seconds"],
}


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return FLOAT_FORMAT % value
    return str(value)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


class ReportWriter:
    """Writes result files into one output directory, one writer per file."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def write_csv(self, name: str, rows: Iterable[Mapping[str, Any]], m: int = 1) -> Path:
        columns = csv_columns(name, m)
        path = self.out_dir / name
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                missing = [c for c in columns if c not in row]
                if missing:
                    raise ValueError(f"Row for {name} is missing columns {missing}")
                writer.writerow([format_cell(row[c]) for c in columns])
        self.written.append(path)
        logger.debug("Wrote %s", path)
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        data = _jsonable(payload)
        required: Optional[List[str]] = JSON_KEYS.get(name)
        if required:
            missing = [k for k in required if k not in data]
            if missing:
                raise ValueError(f"{name} is missing keys {missing}")
        path = self.out_dir / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")
        self.written.append(path)
        logger.debug("Wrote %s", path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text if text.endswith("\n") else text + "\n")
        self.written.append(path)
        return path


def _node_coords(grid: PeriodicGrid, node: int, points: np.ndarray) -> Dict[str, float]:
    return {f"z_{j + 1}": float(points[node, j]) for j in range(grid.dims)}


def bias_snapshot_rows(snapshots: Iterable[BiasSnapshot]) -> List[Dict[str, Any]]:
    rows = []
    for snapshot in snapshots:
        grid = snapshot.bias.grid
        points = grid.points()
        values = snapshot.bias.values.reshape(-1)
        grads = gradient_of(snapshot.bias).values.reshape(grid.dims, -1)
        for node in range(grid.size):
            row = {"time": snapshot.time, **_node_coords(grid, node, points), "A": float(values[node])}
            row.update({f"grad_A_{j + 1}": float(grads[j, node]) for j in range(grid.dims)})
            rows.append(row)
    return rows


def histogram_rows(grid: PeriodicGrid, masses: np.ndarray) -> List[Dict[str, Any]]:
    points = grid.points()
    flat = np.asarray(masses, dtype=float).reshape(-1)
    return [{"cell": node, **_node_coords(grid, node, points), "mass": float(flat[node])} for node in range(grid.size)]


def diagnostic_rows(diagnostics: Iterable[DiagnosticRow]) -> List[Dict[str, Any]]:
    return [
        {
            "time": row.time,
            "error_c0": row.error_c0,
            "error_w12": row.error_w12,
            "flat_distance": row.flat_distance,
            "max_bias_gradient": row.max_bias_gradient,
        }
        for row in diagnostics
    ]


def flow_rows(result: FlowResult) -> List[Dict[str, Any]]:
    return [
        {"t": t, "l2_distance": dist, "mass": mass}
        for t, dist, mass in zip(result.times, result.distances, result.masses)
    ]


def oracle_rows(result: OracleResult) -> List[Dict[str, Any]]:
    rows = []
    for node, z in enumerate(result.z):
        row = {"node": node, **{f"z_{j + 1}": v for j, v in enumerate(z)}}
        row["a_star"] = result.a_star[node]
        row["a_star_bar"] = result.a_star_bar[node]
        row.update({f"grad_a_star_{j + 1}": v for j, v in enumerate(result.grad_a_star[node])})
        row["z_marginal"] = result.z_marginal[node]
        rows.append(row)
    return rows
