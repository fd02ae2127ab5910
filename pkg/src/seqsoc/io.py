"""CSV and JSON import/export with atomic writes and schema checks.

Schemas (header-keyed, column order free on input):

* measurement: ``t_s,i_A,v_V`` plus optional ``z_true,vc_true``
* profile: ``t_s,i_A``
* breakdown: ``t_s,init_V,socvar_V,ohmic_V,rc_V``
* trace: ``t_s``, one column per estimate, ``var_<name>`` per estimate,
  ``v_pred_V``, ``v_meas_V``, ``innovation_V`` and ``<name>_true`` columns
  when truth is known
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .cell import Measurement
from .pipeline import EstimationTrace
from .signals import ComponentBreakdown, CurrentProfile

UNIFORM_TOL = 1e-6
MEASUREMENT_COLUMNS = ("t_s", "i_A", "v_V")
TRUTH_COLUMNS = ("z_true", "vc_true")
PROFILE_COLUMNS = ("t_s", "i_A")
BREAKDOWN_COLUMNS = ("t_s", "init_V", "socvar_V", "ohmic_V", "rc_V")


class CsvSchemaError(ValueError):
    """The file does not match the declared schema."""

    def __init__(self, message: str, path=None, row: int | None = None, column: str | None = None):
        where = f"{path}: " if path else ""
        if row is not None:
            where += f"row {row}: "
        super().__init__(where + message)
        self.row = row
        self.column = column


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x: float) -> str:
    return repr(float(x))


def _table_text(header, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_table(path, header, columns) -> Path:
    columns = [np.asarray(c, dtype=float) for c in columns]
    if len({c.size for c in columns}) > 1:
        raise ValueError("columns differ in length")
    return atomic_write_text(path, _table_text(header, columns))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def write_rows(path, header, rows) -> Path:
    """Write mixed-type records; floats use round-trip precision, booleans 0/1, ``None`` empty."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        values = [row[h] for h in header] if isinstance(row, dict) else row
        writer.writerow([_cell(v) for v in values])
    return atomic_write_text(path, buf.getvalue())


def write_measurement_csv(path, meas: Measurement, truth: bool = True) -> Path:
    header = list(MEASUREMENT_COLUMNS)
    cols = [meas.t, meas.i, meas.v]
    if truth and meas.has_truth:
        header += list(TRUTH_COLUMNS)
        cols += [meas.z_true, meas.vc_true]
    return write_table(path, header, cols)


def write_profile_csv(path, profile: CurrentProfile) -> Path:
    return write_table(path, PROFILE_COLUMNS, [profile.times, profile.samples])


def write_breakdown_csv(path, bd: ComponentBreakdown) -> Path:
    return write_table(path, BREAKDOWN_COLUMNS, [bd.t, bd.init, bd.socvar, bd.ohmic, bd.rc])


def write_trace_csv(path, trace: EstimationTrace) -> Path:
    header = ["t_s", *trace.names, *(f"var_{n}" for n in trace.names)]
    cols = [trace.t, *trace.estimates.T, *trace.cov_diag.T]
    if trace.v_pred is not None:
        header += ["v_pred_V", "v_meas_V"]
        cols += [trace.v_pred, trace.v_meas]
    header.append("innovation_V")
    cols.append(trace.innovations)
    for name in trace.names:
        if name in trace.truth:
            header.append(f"{name}_true")
            cols.append(trace.truth[name])
    return write_table(path, header, cols)


def write_json(path, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def read_table(path, required, optional=()) -> dict[str, np.ndarray]:
    """Header-keyed read of numeric columns.  Row numbers in errors are file line numbers."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvSchemaError("empty file", path) from None
        for col in required:
            if col not in header:
                raise CsvSchemaError(f"missing required column {col!r}", path, column=col)
        wanted = [c for c in (*required, *optional) if c in header]
        index = {c: header.index(c) for c in wanted}
        data: dict[str, list[float]] = {c: [] for c in wanted}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for col, j in index.items():
                try:
                    data[col].append(float(row[j]))
                except (IndexError, ValueError):
                    raise CsvSchemaError(f"bad value for column {col!r}", path, line_no, col) from None
    out = {c: np.asarray(v, dtype=float) for c, v in data.items()}
    if out[required[0]].size == 0:
        raise CsvSchemaError("no data rows", path)
    return out


def check_uniform(t: np.ndarray, path=None, tol: float = UNIFORM_TOL) -> float:
    """Return the sample period; reject timestamps deviating from a uniform grid by more than ``tol``."""
    if t.size < 2:
        raise CsvSchemaError("need at least two samples", path)
    steps = np.diff(t)
    if np.any(steps <= 0):
        k = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise CsvSchemaError("timestamps must increase", path, k + 2, "t_s")
    # the median step is robust to a single displaced timestamp; snapping to
    # 12 significant digits recovers decimal periods such as 0.1 exactly
    t_s = float(f"{np.median(steps):.12g}")
    grid = t[0] + t_s * np.arange(t.size)
    bad = np.flatnonzero(np.abs(t - grid) > tol)
    if bad.size:
        k = int(bad[0])
        # header is line 1, sample k is line k + 2
        raise CsvSchemaError(
            f"non-uniform timestamp {t[k]!r} (expected {grid[k]!r} within {tol} s)", path, k + 2, "t_s"
        )
    return t_s


def read_measurement_csv(path) -> Measurement:
    cols = read_table(path, MEASUREMENT_COLUMNS, TRUTH_COLUMNS)
    t_s = check_uniform(cols["t_s"], path)
    has_truth = all(c in cols for c in TRUTH_COLUMNS)
    return Measurement(
        t=cols["t_s"],
        i=cols["i_A"],
        v=cols["v_V"],
        z_true=cols["z_true"] if has_truth else None,
        vc_true=cols["vc_true"] if has_truth else None,
        meta={"source": str(path)},
        sample_period=t_s,
    )


def read_profile_csv(path) -> CurrentProfile:
    cols = read_table(path, PROFILE_COLUMNS)
    t_s = check_uniform(cols["t_s"], path)
    return CurrentProfile(t_s, cols["i_A"], label=Path(path).stem)


def ingest_csv(path, kind: str | None = None):
    """Load a profile (``t_s,i_A``) or a measurement (``t_s,i_A,v_V``).

    ``kind`` is ``"profile"``, ``"measurement"`` or ``None`` to decide from
    the header.
    """
    if kind is None:
        with open(path, newline="") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        kind = "measurement" if "v_V" in header else "profile"
    if kind == "measurement":
        return read_measurement_csv(path)
    if kind == "profile":
        return read_profile_csv(path)
    raise ValueError(f"unknown CSV kind {kind!r}")
