"""File formats: JSON reports, per-level sample CSVs and result tables.

Floats in CSV output use 17 significant digits so values round-trip
exactly; non-finite values are written as lowercase ``inf`` / ``nan``.
JSON is written with sorted keys so identical inputs give identical bytes.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .allocation import AllocationPlan, MomentSummary
from .estimators import CoupledSampleHierarchy
from .exceptions import DataFormatError

__all__ = [
    "RESULT_FIELDS",
    "SUMMARY_FIELDS",
    "METRIC_FIELDS",
    "METRIC_SUMMARY_FIELDS",
    "format_float",
    "parse_float",
    "dumps_json",
    "write_json",
    "read_json",
    "covariance_to_dict",
    "covariance_from_dict",
    "save_moments",
    "load_moments",
    "save_plan",
    "load_plan",
    "save_samples",
    "load_samples",
    "write_results_csv",
    "read_results_csv",
    "write_summary_csv",
    "write_metric_csv",
    "write_metric_summary_csv",
]

RESULT_FIELDS = ("budget", "estimator", "trial", "d_frob", "d_logE", "d_aff", "lambda_min", "wall_ms")
SUMMARY_FIELDS = (
    "budget",
    "estimator",
    "metric",
    "trials",
    "valid",
    "mean_sq",
    "min_sq",
    "max_sq",
    "indefinite_frac",
    "error_count",
    "cost",
)
METRIC_FIELDS = ("trial", "estimator", "status", "mre", "d_frob", "d_logE", "d_aff", "lambda_min")
METRIC_SUMMARY_FIELDS = (
    "estimator",
    "trials",
    "valid",
    "invalid_metric",
    "errors",
    "mean_mre",
    "mse_frob",
    "mse_logE",
    "mse_aff",
)

MANIFEST_NAME = "manifest.json"


def format_float(x):
    """17 significant digits; ``inf``, ``-inf`` and ``nan`` in lowercase."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def parse_float(token):
    return float(token)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan literals; encode as strings
        return x if math.isfinite(x) else format_float(x)
    return obj


def dumps_json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path=None):
    """Write ``obj`` as JSON to ``path``, or return the text if ``path`` is None."""
    text = dumps_json(obj)
    if path is None:
        return text
    Path(path).write_text(text, encoding="utf-8")
    return text


def read_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# covariances, moments, plans


def covariance_to_dict(C, **diagnostics):
    C = np.asarray(C, dtype=float)
    out = {"dim": int(C.shape[0]), "matrix": C.tolist()}
    out.update(diagnostics)
    return out


def covariance_from_dict(data):
    try:
        C = np.asarray(data["matrix"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"covariance JSON needs a square 'matrix' field ({exc})") from exc
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DataFormatError(f"covariance matrix must be square, got shape {C.shape}")
    return C


def save_moments(m, path=None):
    return write_json(m.to_dict(), path)


def load_moments(path_or_dict):
    data = read_json(path_or_dict) if not isinstance(path_or_dict, dict) else path_or_dict
    if "moments" in data and "sigma" not in data:
        data = data["moments"]
    try:
        return MomentSummary.from_dict(data)
    except KeyError as exc:
        raise DataFormatError(f"moment summary is missing field {exc}") from exc


def save_plan(plan, path=None):
    return write_json(plan.to_dict(), path)


def load_plan(path_or_dict):
    data = read_json(path_or_dict) if not isinstance(path_or_dict, dict) else path_or_dict
    if "plan" in data and "n" not in data:
        data = data["plan"]
    try:
        return AllocationPlan.from_dict(data)
    except KeyError as exc:
        raise DataFormatError(f"allocation plan is missing field {exc}") from exc


# ---------------------------------------------------------------------------
# per-level sample files


def save_samples(directory, hierarchy, costs=None):
    """Write ``level_<l>.csv`` files plus a manifest into ``directory``.

    The manifest records level order, per-level counts (the coupled-prefix
    lengths: row ``i`` of every level comes from the same event) and costs.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    levels = []
    for lvl, Y in enumerate(hierarchy.samples):
        name = f"level_{lvl}.csv"
        with open(directory / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for row in Y:
                writer.writerow([format_float(v) for v in row])
        entry = {"level": lvl, "file": name, "count": int(Y.shape[0])}
        if costs is not None:
            entry["cost"] = float(costs[lvl])
        levels.append(entry)
    manifest = {
        "dim": hierarchy.dim,
        "levels": levels,
        "coupled_prefix_lengths": list(hierarchy.counts),
    }
    write_json(manifest, directory / MANIFEST_NAME)
    return directory / MANIFEST_NAME


def _read_sample_csv(path, dim):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if len(rows[-1]) != dim:
                raise DataFormatError(f"{path}:{lineno}: expected {dim} columns, got {len(row)}")
    return np.asarray(rows, dtype=float).reshape(len(rows), dim)


def load_samples(manifest_path):
    """Read a manifest written by :func:`save_samples`.

    Returns ``(hierarchy, costs)``; ``costs`` is None unless every level
    records one.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    manifest = read_json(manifest_path)
    try:
        dim = int(manifest["dim"])
        levels = sorted(manifest["levels"], key=lambda e: int(e["level"]))
        samples = []
        for entry in levels:
            Y = _read_sample_csv(manifest_path.parent / entry["file"], dim)
            if Y.shape[0] != int(entry["count"]):
                raise DataFormatError(
                    f"{entry['file']}: manifest says {entry['count']} rows, found {Y.shape[0]}"
                )
            samples.append(Y)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{manifest_path}: malformed manifest ({exc})") from exc
    costs = [e.get("cost") for e in levels]
    costs = None if any(c is None for c in costs) else np.asarray(costs, dtype=float)
    return CoupledSampleHierarchy(tuple(samples)), costs


# ---------------------------------------------------------------------------
# result tables


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format_float(v)


def _write_table(dest, fields, rows):
    """Write a header plus rows to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_rows(dest, fields, rows)
        return
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, fields, rows)


def _write_rows(fh, fields, rows):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(v) for v in row])


def write_results_csv(path, rows):
    """Write per-trial rows in :data:`RESULT_FIELDS` order."""
    _write_table(path, RESULT_FIELDS, rows)


def read_results_csv(path):
    """Rows as dicts with numeric fields parsed (``trial`` as int)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise DataFormatError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            row = {"estimator": rec["estimator"], "trial": int(rec["trial"])}
            for key in ("budget", "d_frob", "d_logE", "d_aff", "lambda_min", "wall_ms"):
                row[key] = parse_float(rec[key])
            out.append(row)
    return out


def write_summary_csv(path, rows):
    _write_table(path, SUMMARY_FIELDS, rows)


def write_metric_csv(path, rows):
    _write_table(path, METRIC_FIELDS, rows)


def write_metric_summary_csv(path, rows):
    _write_table(path, METRIC_SUMMARY_FIELDS, rows)
