"""Delimited-text and JSON serialization shared by every stage.

Floats are written with 17 significant digits so a value read back from
text is bit-identical to the one that was written.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def fmt_date(d) -> str:
    ts = pd.Timestamp(d)
    if ts == ts.normalize():
        return ts.strftime("%Y-%m-%d")
    return ts.isoformat()


def _fmt_cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, (np.datetime64, pd.Timestamp)):
        return fmt_date(v)
    return str(v)


def _fmt_column(col) -> list[str]:
    """Format a whole column; same text as :func:`_fmt_cell` applied per element."""
    a = np.asarray(col)
    if a.dtype == object and len(a) and all(isinstance(v, (pd.Timestamp, np.datetime64)) for v in a):
        a = np.asarray(pd.DatetimeIndex(a).values)
    if a.dtype.kind == "b":
        return ["1" if v else "0" for v in a.tolist()]
    if a.dtype.kind in "iu":
        return [str(v) for v in a.tolist()]
    if a.dtype.kind == "f":
        return ["%.17g" % v for v in a.tolist()]
    if a.dtype.kind == "M":
        a = a.astype("datetime64[ns]")
        if np.any(a != a.astype("datetime64[s]")):
            return [fmt_date(v) for v in a]
        out = np.datetime_as_string(a, unit="s")
        midnight = a == a.astype("datetime64[D]")
        out[midnight] = np.datetime_as_string(a[midnight], unit="D")
        return out.tolist()
    return [_fmt_cell(v) for v in col]


def write_table(path: str | Path, header: Sequence[str], columns: Sequence[Iterable]) -> Path:
    """Write equal-length columns as a comma-separated file with a header row."""
    path = Path(path)
    cols = [_fmt_column(list(c) if not isinstance(c, (np.ndarray, pd.Series)) else c) for c in columns]
    n = {len(c) for c in cols}
    if len(n) > 1:
        raise ValueError(f"column lengths differ: {sorted(n)}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*cols))
    return path


def read_table(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no NaN; undefined values become null
        return None if not math.isfinite(x) else float(fmt_float(x))
    if isinstance(obj, (np.datetime64, pd.Timestamp)):
        return fmt_date(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj))
    return path


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
