# Standard library imports for file handling and serialization
import csv          # For writing and reading CSV tables
import json         # For sidecars, reports and JSON-lines
import os           # For path handling

import numpy as np

from lattice_core import PathGrid, WeightSequence

PATH_HEADER = ["t", "site", "q", "p"]


def _fmt(x):
    # repr keeps the shortest string that round-trips the float exactly
    return repr(float(x))


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ──────────────────────────────────────────────────────────────
# 🛤️ PathGrid CSV + JSON sidecar
# ──────────────────────────────────────────────────────────────
def sidecar_path(csv_path):
    """Location of the JSON sidecar belonging to a path CSV."""
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def save_path(path, weights, csv_path):
    """
    Write a PathGrid as a long-format CSV plus a JSON sidecar.

    The CSV has one row per (node, site) with header ``t,site,q,p``. The
    sidecar carries the grid (t0, t1, K, dt), the angular flag, the site
    coordinates and the weights, which is everything needed to rebuild the
    path and its geometry.

    Args:
        path (PathGrid): trajectory to write
        weights (WeightSequence): weights indexing the path's sites
        csv_path (str): destination of the CSV file

    Returns:
        tuple: (csv_path, sidecar_path)
    """
    weights.require(path.n)
    _ensure_parent(csv_path)
    times = path.times
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PATH_HEADER)
        for k in range(path.K + 1):
            for i in range(path.n):
                writer.writerow([_fmt(times[k]), i, _fmt(path.q[k, i]), _fmt(path.p[k, i])])

    meta = {
        "t0": path.t0,
        "t1": path.t1,
        "K": path.K,
        "dt": path.dt,
        "angular": path.angular,
        "sites": [list(s) for s in weights.sites],
        "rho": [float(r) for r in weights.rho],
    }
    side = sidecar_path(csv_path)
    with open(side, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return csv_path, side


def load_path(csv_path):
    """
    Read a PathGrid written by :func:`save_path`.

    Args:
        csv_path (str): path CSV; its sidecar must sit next to it

    Returns:
        tuple: (PathGrid, WeightSequence)

    Raises:
        ValueError: if the CSV does not match the sidecar's grid
    """
    with open(sidecar_path(csv_path), "r", encoding="utf-8") as f:
        meta = json.load(f)
    K, n = int(meta["K"]), len(meta["sites"])
    q = np.full((K + 1, n), np.nan)
    p = np.full((K + 1, n), np.nan)

    with open(csv_path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != PATH_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames} in {csv_path}")
        for row_number, row in enumerate(reader):
            k, i = divmod(row_number, n)
            if k > K or int(row["site"]) != i:
                raise ValueError(f"row {row_number + 2} of {csv_path} is out of order")
            q[k, i] = float(row["q"])
            p[k, i] = float(row["p"])

    if np.isnan(q).any() or np.isnan(p).any():
        raise ValueError(f"{csv_path} has fewer rows than its sidecar declares")
    weights = WeightSequence(tuple(tuple(s) for s in meta["sites"]), meta["rho"])
    path = PathGrid(meta["t0"], meta["t1"], q, p, bool(meta["angular"]))
    return path, weights


# ──────────────────────────────────────────────────────────────
# 📦 Tables, reports and JSON-lines
# ──────────────────────────────────────────────────────────────
def write_table(rows, header, csv_path):
    """Write rows (sequences) under ``header``; floats are written round-trip exact."""
    _ensure_parent(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return csv_path


def read_table(csv_path):
    """Read a table written by :func:`write_table` as a list of dicts of strings."""
    with open(csv_path, "r", encoding="utf-8-sig", newline="") as f:
        return list(csv.DictReader(f))


def to_jsonable(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if value != value or value in (float("inf"), float("-inf")):
            return str(value)
        return value
    return obj


def write_json(obj, json_path):
    _ensure_parent(json_path)
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")
    return json_path


def write_jsonl(records, jsonl_path):
    """Write one compact JSON object per line, keys sorted for byte-stable output."""
    _ensure_parent(jsonl_path)
    count = 0
    with open(jsonl_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(to_jsonable(record), sort_keys=True) + "\n")
            count += 1
    return count
