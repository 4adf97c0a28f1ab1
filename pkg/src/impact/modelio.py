"""Text file formats for statistics, models, datasets and reports.

Statistics, models and datasets are JSON documents whose floats are written
with 17 significant digits, which round-trips every finite double exactly.
Reports are CSV. All writers replace the target atomically.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .compressor import METHODS, FactoredLayer
from .errors import DataError, DimensionError, ImpactError, ParseError, VersionError
from .profiler import ProfiledLayer
from .toynet import Dataset, DenseLayer, ToyModel

VERSION = 1
STATS_FORMAT = "impact-stats"
MODEL_FORMAT = "impact-model"
DATASET_FORMAT = "impact-dataset"
REPORT_HEADER = (
    "method", "layer_scope", "eta", "keep_ratio", "rank_per_layer", "params_total",
    "params_ratio", "eval_loss", "eval_metric", "h_per_layer", "notes",
)
DIAGNOSTIC_HEADER = ("layer", "position", "normalized_grad_sq")


# ---------------------------------------------------------------- encoding

def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise DataError(f"cannot serialize non-finite value {x}")
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(f"{pad}  {json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        inner = ",\n".join(f"{pad}  {_encode(v, indent + 1)}" for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    raise DataError(f"cannot serialize {type(obj).__name__}")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path, expected_format: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    try:
        doc = json.loads(text, parse_constant=lambda c: float(c))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    if doc.get("format") != expected_format:
        raise ParseError(f"{path}: expected format {expected_format!r}, found {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise VersionError(f"{path}: unsupported version {doc.get('version')!r} (expected {VERSION})")
    return doc


def _array(value, shape: tuple, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: not a numeric array ({exc})") from exc
    if arr.shape != shape:
        raise ParseError(f"{where}: expected shape {shape}, found {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{where}: non-finite value")
    return arr


def _field(entry: dict, key: str, where: str):
    if key not in entry:
        raise ParseError(f"{where}: missing field {key!r}")
    return entry[key]


def _matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not isinstance(value[0], list):
        raise ParseError(f"{where}: expected a non-empty list of rows")
    return _array(value, (len(value), len(value[0])), where)


# ---------------------------------------------------------------- statistics

def write_stats(path, stats: dict[str, ProfiledLayer]) -> None:
    layers = []
    for name, prof in stats.items():
        entry = {
            "name": name,
            "d": prof.d,
            "n": prof.n,
            "mean": prof.mean,
            "cov": prof.cov,
            "grad_sq_mean": prof.grad_sq_mean,
        }
        if prof.fisher_row is not None:
            entry["fisher_row"] = prof.fisher_row
        layers.append(entry)
    doc = {"format": STATS_FORMAT, "version": VERSION, "layers": layers}
    atomic_write_text(path, _encode(doc) + "\n")


def read_stats(path) -> dict[str, ProfiledLayer]:
    doc = _load(path, STATS_FORMAT)
    out = {}
    for i, entry in enumerate(_field(doc, "layers", str(path))):
        where = f"{path}: layer #{i}"
        name = _field(entry, "name", where)
        where = f"{path}: layer {name!r}"
        d = _field(entry, "d", where)
        n = _field(entry, "n", where)
        if not isinstance(d, int) or d < 1 or not isinstance(n, int) or n < 0:
            raise ParseError(f"{where}: d and n must be non-negative integers")
        mean = _array(_field(entry, "mean", where), (d,), f"{where} field 'mean'")
        cov = _array(_field(entry, "cov", where), (d, d), f"{where} field 'cov'")
        if np.max(np.abs(cov - cov.T)) > 1e-9 * (1.0 + np.max(np.abs(cov))):
            raise DataError(f"{where} field 'cov': matrix is not symmetric")
        grad = _array(_field(entry, "grad_sq_mean", where), (d,), f"{where} field 'grad_sq_mean'")
        if np.any(grad < 0):
            raise DataError(f"{where} field 'grad_sq_mean': negative entry")
        fisher = None
        if entry.get("fisher_row") is not None:
            fisher = _array(entry["fisher_row"], (d,), f"{where} field 'fisher_row'")
            if np.any(fisher < 0):
                raise DataError(f"{where} field 'fisher_row': negative entry")
        if name in out:
            raise ParseError(f"{where}: duplicate layer name")
        out[name] = ProfiledLayer(d=d, n=n, mean=mean, cov=cov, grad_sq_mean=grad, fisher_row=fisher)
    return out


# ---------------------------------------------------------------- models

def write_model(path, model: ToyModel) -> None:
    layers = []
    for name, layer in model.named_layers():
        if isinstance(layer, FactoredLayer):
            layers.append({
                "name": name,
                "kind": "factored",
                "activation": layer.activation,
                "W1": layer.W1,
                "W2": layer.W2,
                "b_prime": layer.b_prime,
                "provenance": layer.provenance,
            })
        else:
            layers.append({
                "name": name,
                "kind": "dense",
                "activation": layer.activation,
                "W": layer.W,
                "b": layer.b,
            })
    doc = {"format": MODEL_FORMAT, "version": VERSION, "loss": model.loss, "layers": layers}
    atomic_write_text(path, _encode(doc) + "\n")


def read_model(path) -> ToyModel:
    doc = _load(path, MODEL_FORMAT)
    layers, names = [], []
    for i, entry in enumerate(_field(doc, "layers", str(path))):
        name = _field(entry, "name", f"{path}: layer #{i}")
        where = f"{path}: layer {name!r}"
        kind = _field(entry, "kind", where)
        activation = _field(entry, "activation", where)
        try:
            if kind == "dense":
                W = _matrix(_field(entry, "W", where), f"{where} field 'W'")
                b = _array(_field(entry, "b", where), (W.shape[0],), f"{where} field 'b'")
                layer = DenseLayer(W, b, activation)
            elif kind == "factored":
                W1 = _matrix(_field(entry, "W1", where), f"{where} field 'W1'")
                W2 = _matrix(_field(entry, "W2", where), f"{where} field 'W2'")
                if W2.shape[1] != W1.shape[0]:
                    raise ParseError(f"{where}: W2 has {W2.shape[1]} columns but W1 has {W1.shape[0]} rows")
                b = _array(_field(entry, "b_prime", where), (W2.shape[0],), f"{where} field 'b_prime'")
                layer = FactoredLayer(W1, W2, b, dict(entry.get("provenance") or {}), activation)
            else:
                raise ParseError(f"{where}: unknown layer kind {kind!r}")
        except (DimensionError, ValueError) as exc:
            if isinstance(exc, ImpactError) and not isinstance(exc, DimensionError):
                raise
            raise ParseError(f"{where}: {exc}") from exc
        if layers and layers[-1].d_out != layer.d_in:
            raise ParseError(
                f"{path}: layer {names[-1]!r} outputs {layers[-1].d_out} values "
                f"but layer {name!r} expects {layer.d_in}"
            )
        layers.append(layer)
        names.append(name)
    try:
        return ToyModel(layers, names, _field(doc, "loss", str(path)))
    except ImpactError as exc:
        raise ParseError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- datasets

def write_dataset(path, data: Dataset) -> None:
    doc = {"format": DATASET_FORMAT, "version": VERSION, "kind": data.kind, "seed": data.seed,
           "X": data.X, "T": data.T}
    atomic_write_text(path, _encode(doc) + "\n")


def read_dataset(path) -> Dataset:
    doc = _load(path, DATASET_FORMAT)
    X = _matrix(_field(doc, "X", str(path)), f"{path} field 'X'")
    T_raw = _field(doc, "T", str(path))
    T = _matrix(T_raw, f"{path} field 'T'") if T_raw and isinstance(T_raw[0], list) else \
        _array(T_raw, (len(T_raw),), f"{path} field 'T'")
    if T.shape[0] != X.shape[0]:
        raise ParseError(f"{path}: {X.shape[0]} inputs but {T.shape[0]} targets")
    return Dataset(X, T, doc.get("kind", ""), int(doc.get("seed", 0)))


# ---------------------------------------------------------------- reports

def _pairs(mapping: dict, as_float: bool) -> str:
    return ";".join(f"{k}={fmt_float(v) if as_float else int(v)}" for k, v in mapping.items())


def report_sort_key(row) -> tuple:
    """Method in canonical order (impact, svd, fwsvd, afm), then keep ratio descending."""
    method = row["method"] if isinstance(row, dict) else row.method
    keep = row["keep_ratio"] if isinstance(row, dict) else row.keep_ratio
    rank = METHODS.index(method) if method in METHODS else len(METHODS)
    return rank, method, -float(keep)


def report_lines(rows) -> list[list[str]]:
    out = []
    for row in sorted(rows, key=report_sort_key):
        r = row if isinstance(row, dict) else row.__dict__
        out.append([
            r["method"], r["layer_scope"], fmt_float(r["eta"]), fmt_float(r["keep_ratio"]),
            _pairs(r["rank_per_layer"], False), str(int(r["params_total"])),
            fmt_float(r["params_ratio"]), fmt_float(r["eval_loss"]), fmt_float(r["eval_metric"]),
            _pairs(r["h_per_layer"], True), r.get("notes", ""),
        ])
    return out


def write_report(path, rows) -> None:
    rows = list(rows)
    if not rows:
        raise DataError("report needs at least one row")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    writer.writerows(report_lines(rows))
    atomic_write_text(path, buf.getvalue())


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != REPORT_HEADER:
            raise ParseError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if len(values) != len(REPORT_HEADER):
                raise ParseError(f"{path}: line {lineno} has {len(values)} fields")
            rows.append(dict(zip(REPORT_HEADER, values)))
    return rows


def diagnostic_rows(stats: dict[str, ProfiledLayer]) -> list[tuple[str, int, float]]:
    from .pipeline import gradient_diagnostic

    rows = []
    for name, prof in stats.items():
        for i, v in enumerate(gradient_diagnostic(prof)):
            rows.append((name, i, float(v)))
    return rows


def write_diagnostic(path, stats: dict[str, ProfiledLayer]) -> list[tuple[str, int, float]]:
    """Per-layer normalized gradient spectrum, sorted descending, as CSV."""
    rows = diagnostic_rows(stats)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DIAGNOSTIC_HEADER)
    for name, i, v in rows:
        writer.writerow([name, i, fmt_float(v)])
    atomic_write_text(path, buf.getvalue())
    return rows


def write_json(path, obj) -> None:
    atomic_write_text(path, _encode(obj) + "\n")
