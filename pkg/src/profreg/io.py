"""CSV tables, key=value configs and the posterior-sample archive.

Everything written here is byte-stable for identical inputs: floats are
printed with ``repr``, JSON keys are sorted and the sample archive uses a
fixed zip timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, StructureError
from .model import Dataset, PosteriorSamples

MISSING = {"", "na", "nan", "null", "none"}
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_table(path):
    """Header and rows of a CSV file, with 1-based line numbers per row.

    Raises ``DataError`` naming the line of any row with the wrong number of
    fields.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file, a header row is required") from None
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    rows = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        rows.append((line, [c.strip() for c in row]))
    return header, rows


def _parse_float(cell, path, line, col):
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}: line {line}, column {col!r}: cannot parse {cell!r} as a number") from None


def read_dataset(path, count_column="y", covariates=None, standardize=False) -> Dataset:
    """Load a subject-level CSV; every other column is a covariate unless ``covariates`` is given."""
    header, rows = read_table(path)
    if count_column not in header:
        raise StructureError(f"{path}: count column {count_column!r} not in header")
    if covariates is None:
        covariates = [h for h in header if h != count_column]
    missing = [c for c in covariates if c not in header]
    if missing:
        raise StructureError(f"{path}: covariate columns not found: {', '.join(missing)}")
    if not covariates:
        raise StructureError(f"{path}: no covariate columns")
    if not rows:
        raise DataError(f"{path}: no data rows")
    cols = [header.index(c) for c in covariates]
    yi = header.index(count_column)
    x = np.empty((len(rows), len(cols)))
    y = np.empty(len(rows), dtype=np.int64)
    for r, (line, row) in enumerate(rows):
        for c, ci in enumerate(cols):
            cell = row[ci]
            if cell.lower() in MISSING:
                raise DataError(f"{path}: missing value at line {line}, column {covariates[c]!r}")
            x[r, c] = _parse_float(cell, path, line, covariates[c])
        cell = row[yi]
        if cell.lower() in MISSING:
            raise DataError(f"{path}: missing value at line {line}, column {count_column!r}")
        try:
            y[r] = int(cell)
        except ValueError:
            raise DataError(f"{path}: line {line}: count {cell!r} is not an integer") from None
        if y[r] < 0:
            raise DataError(f"{path}: line {line}: negative count {cell!r}")
    data = Dataset(x, y, tuple(covariates), count_column)
    return data.standardize() if standardize else data


def write_dataset(path, data: Dataset) -> None:
    x = data.original_covariates()
    write_csv(path, list(data.variable_names) + [data.count_name],
              ([*x[i], int(data.counts[i])] for i in range(data.n)))


def read_profiles(path, variable_names, id_column="id"):
    """Covariate rows for prediction.  Empty cells mark omitted variables (NaN).

    Returns ``(ids, matrix)``.  The header must contain exactly the training
    covariates, optionally plus ``id_column``.
    """
    header, rows = read_table(path)
    cols = [h for h in header if h != id_column]
    missing = [v for v in variable_names if v not in cols]
    extra = [h for h in cols if h not in variable_names]
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing columns: " + ", ".join(missing))
        if extra:
            parts.append("unexpected columns: " + ", ".join(extra))
        raise StructureError(f"{path}: " + "; ".join(parts))
    idx = [header.index(v) for v in variable_names]
    has_id = id_column in header
    ids, x = [], np.empty((len(rows), len(idx)))
    for r, (line, row) in enumerate(rows):
        ids.append(row[header.index(id_column)] if has_id else str(r + 1))
        for c, ci in enumerate(idx):
            cell = row[ci]
            x[r, c] = np.nan if cell.lower() in MISSING else _parse_float(cell, path, line, variable_names[c])
    return ids, x


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------


def parse_config_text(text: str, source="<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        out[key.replace("-", "_").lower()] = value
    return out


def read_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# Sample archive
# --------------------------------------------------------------------------

_ARRAYS = ("weights", "cluster_means", "common_means", "shrinkage", "variances",
           "gamma_base", "increments", "assignments", "observed_loglik")


def save_samples(path, samples: PosteriorSamples, config_hash: str) -> None:
    """Write draws as ``.npy`` members of a zip with fixed timestamps."""
    arrays = {name: getattr(samples, name) for name in _ARRAYS}
    if samples.logit_weights is not None:
        arrays["logit_weights"] = samples.logit_weights
    if samples.center is not None:
        arrays["center"] = samples.center
        arrays["scale"] = samples.scale
    header = {"variable_names": list(samples.variable_names), "meta": samples.meta,
              "config_hash": config_hash}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(header, sort_keys=True), compress_type=zipfile.ZIP_DEFLATED)
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            zf.writestr(info, buf.getvalue(), compress_type=zipfile.ZIP_DEFLATED)


def load_samples(path):
    """Inverse of :func:`save_samples`; returns ``(samples, config_hash)``."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read sample archive {path}: {exc}") from None
    with zf:
        header = json.loads(zf.read("header.json"))
        arrays = {}
        for member in zf.namelist():
            if member.endswith(".npy"):
                arrays[member[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(member)), allow_pickle=False)
    samples = PosteriorSamples(
        **{name: arrays[name] for name in _ARRAYS},
        logit_weights=arrays.get("logit_weights"),
        variable_names=tuple(header["variable_names"]),
        center=arrays.get("center"),
        scale=arrays.get("scale"),
        meta=header["meta"],
    )
    return samples, header["config_hash"]
