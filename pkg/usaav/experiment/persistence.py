"""CSV and JSON outputs of experiment runs, and the run manifest."""

import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from usaav import __version__
from usaav.analysis.metrics import METRIC_COLUMNS
from usaav.core.dynamics import (
    ParticleSystem,
    TrajectoryRecord,
    label_kind,
    label_value,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
TRAJECTORY_FILE = "trajectory.csv"
FINAL_STATES_FILE = "final_states.csv"
AGGREGATE_FILE = "aggregate.csv"
MANIFEST_FILE = "manifest.json"
CELL_FILE = "cell.json"
TRAJECTORY_COLUMNS = ("time", "energy", "production") + METRIC_COLUMNS


def write_csv(df: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_json(obj: Any, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Error: {type(value).__name__} is not serializable.")


def trajectory_frame(record: TrajectoryRecord) -> pd.DataFrame:
    """Trajectory table with the fixed metric column set."""
    return record.to_frame(columns=METRIC_COLUMNS)


def write_trajectory(record: TrajectoryRecord, path: str) -> str:
    return write_csv(trajectory_frame(record), path)


def states_frame(sys: ParticleSystem) -> pd.DataFrame:
    """particle, label_kind, label_value, x_0 .. x_{d-1}."""
    df = pd.DataFrame(
        {
            "particle": np.arange(sys.n),
            "label_kind": [label_kind(lab) for lab in sys.labels],
            "label_value": [label_value(lab) for lab in sys.labels],
        }
    )
    coords = pd.DataFrame(
        sys.states, columns=[f"x_{k}" for k in range(sys.dim)]
    )
    return pd.concat([df, coords], axis=1)


def write_final_states(sys: ParticleSystem, path: str) -> str:
    return write_csv(states_frame(sys), path)


def read_states(path: str) -> np.ndarray:
    df = pd.read_csv(path)
    cols = [c for c in df.columns if c.startswith("x_")]
    return df[cols].to_numpy(dtype=float)


def read_trajectory(path: str) -> Optional[pd.DataFrame]:
    """Parsed trajectory CSV, or None when the file is missing or does not
    have the expected columns."""
    if not os.path.exists(path):
        return None
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, OSError) as e:
        logger.warning("Unreadable trajectory %s: %s", path, e)
        return None
    if list(df.columns) != list(TRAJECTORY_COLUMNS) or df.empty:
        logger.warning("Trajectory %s has unexpected columns", path)
        return None
    return df


def aggregate(
    frames: Dict[tuple, pd.DataFrame],
    keys: Sequence[str],
    columns: Sequence[str] = ("g_x", "g_q", "d_cond", "delta_e"),
) -> pd.DataFrame:
    """Mean and standard error of metric columns per (keys, time).

    Args:
        frames (dict): Cell key tuple -> trajectory frame. Each tuple
            holds the values of `keys` followed by the seed index.
        keys (Sequence[str]): Names of the grouping fields.
        columns (Sequence[str]): Metric columns to summarize.

    Returns:
        pd.DataFrame: One row per (keys, time) with `<col>_mean`,
        `<col>_sem` and the number of seeds.
    """
    parts = []
    for cell, df in frames.items():
        part = df[["time", *columns]].copy()
        for name, value in zip(keys, cell):
            part[name] = value
        parts.append(part)
    long = pd.concat(parts, ignore_index=True)
    grouped = long.groupby([*keys, "time"], sort=True)[list(columns)]
    mean = grouped.mean().add_suffix("_mean")
    sem = grouped.sem(ddof=1).add_suffix("_sem")
    count = grouped.size().rename("seeds")
    out = pd.concat([mean, sem, count], axis=1).reset_index()
    ordered = [*keys, "time"]
    for col in columns:
        ordered += [f"{col}_mean", f"{col}_sem"]
    return out[ordered + ["seeds"]]


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def list_outputs(root: str) -> List[str]:
    out = []
    for base, _, files in os.walk(root):
        for name in files:
            if name == MANIFEST_FILE:
                continue
            out.append(os.path.relpath(os.path.join(base, name), root))
    return sorted(p.replace(os.sep, "/") for p in out)


def write_manifest(
    root: str, config_hash: str, files: Optional[Iterable[str]] = None
) -> str:
    """manifest.json with the config hash, code version and a SHA-256 per
    output file (paths relative to `root`)."""
    rel = sorted(files) if files is not None else list_outputs(root)
    manifest = {
        "config_hash": config_hash,
        "code_version": __version__,
        "files": {p: sha256_file(os.path.join(root, p)) for p in rel},
    }
    path = write_json(manifest, os.path.join(root, MANIFEST_FILE))
    logger.info("Wrote manifest for %d files", len(rel))
    return path


def write_cell_marker(path: str, cell_hash: str, **fields: Any) -> str:
    """cell.json next to a cell's outputs, written after them."""
    marker = {"cell_hash": cell_hash, **fields}
    return write_json(marker, os.path.join(path, CELL_FILE))


def read_cell_hash(path: str) -> Optional[str]:
    """Hash stored in a cell directory's marker, or None."""
    marker = os.path.join(path, CELL_FILE)
    if not os.path.exists(marker):
        return None
    try:
        with open(marker) as f:
            return json.load(f).get("cell_hash")
    except (json.JSONDecodeError, AttributeError, OSError) as e:
        logger.warning("Unreadable cell marker %s: %s", marker, e)
        return None
