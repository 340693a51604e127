"""Price loading, log-returns and the |r| <= k*sigma domain restriction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .textio import fmt_date, read_json, read_table, write_json, write_table


class ValidationError(ValueError):
    """Input data violates a series invariant."""


class ParseError(ValueError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


def _as_dates(dates) -> np.ndarray:
    return pd.DatetimeIndex(pd.to_datetime(dates)).values.astype("datetime64[ns]")


@dataclass(frozen=True)
class PriceSeries:
    dates: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        dates = _as_dates(self.dates)
        values = np.asarray(self.values, dtype=float)
        if dates.shape != values.shape or values.ndim != 1:
            raise ValidationError("dates and values must be 1-d and of equal length")
        if len(values) < 2:
            raise ValidationError("a price series needs at least 2 observations")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            bad = int(np.flatnonzero(~(values > 0) | ~np.isfinite(values))[0])
            raise ValidationError(f"non-positive price {values[bad]!r} at position {bad}")
        if np.any(np.diff(dates) <= np.timedelta64(0, "ns")):
            raise ValidationError("dates must be strictly increasing")
        values.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ReturnSeries:
    """Log-returns aligned to the date of the later observation.

    ``clip_mask`` marks points excluded from estimation; they stay in the
    arrays so positions and dates keep lining up across windows. ``sigma``
    is always the std of the unclipped values and ``step`` is the sampling
    interval used to normalize moments (1 = one observation).
    """

    dates: np.ndarray
    values: np.ndarray
    sigma: float
    clip_mask: np.ndarray = None
    step: float = 1.0
    clip_k: float | None = None
    label: str = ""

    def __post_init__(self):
        dates = _as_dates(self.dates)
        values = np.asarray(self.values, dtype=float)
        if dates.shape != values.shape or values.ndim != 1:
            raise ValidationError("dates and values must be 1-d and of equal length")
        mask = np.zeros(len(values), bool) if self.clip_mask is None else np.asarray(self.clip_mask, bool)
        if mask.shape != values.shape:
            raise ValidationError("clip_mask length differs from values")
        if not self.sigma >= 0:
            raise ValidationError("sigma must be >= 0")
        if not self.step > 0:
            raise ValidationError("step must be > 0")
        for a in (dates, values, mask):
            a.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "clip_mask", mask)
        object.__setattr__(self, "sigma", float(self.sigma))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def retained(self) -> np.ndarray:
        return ~self.clip_mask

    @property
    def clip_fraction(self) -> float:
        return float(self.clip_mask.mean()) if len(self) else 0.0

    @classmethod
    def from_values(cls, values, dates=None, step: float = 1.0, label: str = "") -> "ReturnSeries":
        """Wrap a raw array (e.g. a simulated path) as an unclipped series."""
        values = np.asarray(values, dtype=float)
        if dates is None:
            dates = synthetic_dates(len(values))
        return cls(dates=dates, values=values, sigma=sample_std(values), step=step, label=label)

    def window(self, start: int, stop: int) -> "ReturnSeries":
        v = self.values[start:stop]
        return replace(
            self,
            dates=self.dates[start:stop],
            values=v,
            clip_mask=self.clip_mask[start:stop],
            sigma=sample_std(v),
        )


def sample_std(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def synthetic_dates(n: int, start: str = "2000-01-01", freq: str = "h") -> np.ndarray:
    return pd.date_range(start=start, periods=n, freq=freq).values.astype("datetime64[ns]")


def load_prices(
    path: str | Path,
    date_col: str = "date",
    price_col: str = "price",
    date_format: str | None = None,
    delimiter: str | None = None,
    label: str | None = None,
) -> PriceSeries:
    """Read a delimited file with a header row into a sorted PriceSeries.

    Parameters
    ----------
    path : str or Path
        Input file. The delimiter is sniffed unless given.
    date_col, price_col : str
        Header names of the date and price columns.
    date_format : str, optional
        strptime pattern; ISO-8601 is assumed when omitted.

    Raises
    ------
    ParseError
        A row has an unparseable date or price (``.row`` is the 1-based
        data row number, header excluded).
    ValidationError
        A price is non-positive or a date occurs twice.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, sep=delimiter, engine="python", dtype=str, skipinitialspace=True)
    for col in (date_col, price_col):
        if col not in df.columns:
            raise ParseError(f"{path}: missing column {col!r} (have {list(df.columns)})")
    raw_dates = df[date_col].str.strip()
    raw_prices = df[price_col].str.strip().str.replace(",", "", regex=False)

    if date_format is None:
        # ISO-8601 tolerates mixed date/datetime rows; other layouts fall back to inference
        dates = pd.to_datetime(raw_dates, format="ISO8601", errors="coerce")
        if dates.isna().any():
            dates = pd.to_datetime(raw_dates, errors="coerce")
    else:
        dates = pd.to_datetime(raw_dates, format=date_format, errors="coerce")
    prices = pd.to_numeric(raw_prices, errors="coerce")
    bad = dates.isna() | prices.isna()
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"{path}: row {i + 1}: cannot parse ({raw_dates.iloc[i]!r}, {raw_prices.iloc[i]!r})",
            row=i + 1,
        )
    nonpos = (prices <= 0).to_numpy()
    if nonpos.any():
        i = int(np.flatnonzero(nonpos)[0])
        raise ValidationError(f"{path}: row {i + 1}: non-positive price {prices.iloc[i]!r}")
    dup = dates.duplicated(keep=False).to_numpy()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise ValidationError(f"{path}: row {i + 1}: duplicate date {fmt_date(dates.iloc[i])}")

    order = np.argsort(dates.to_numpy(), kind="stable")
    return PriceSeries(
        dates=dates.to_numpy()[order],
        values=prices.to_numpy(dtype=float)[order],
        label=path.stem if label is None else label,
    )


def log_returns(p: PriceSeries, step: float = 1.0) -> ReturnSeries:
    values = np.log(p.values[1:] / p.values[:-1])
    return ReturnSeries(
        dates=p.dates[1:], values=values, sigma=sample_std(values), step=step, label=p.label
    )


def clip_mask_for(values, sigma: float, k: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if sigma <= 0:
        return np.zeros(len(values), bool)
    return np.abs(values) > k * sigma


def clip_returns(r: ReturnSeries, k: float = 1.5) -> ReturnSeries:
    """Mask returns with |r| > k*sigma; sigma is the unclipped std, so this is idempotent."""
    if not k > 0:
        raise ValueError("k must be positive")
    if r.sigma == 0:
        warnings.warn("sigma is 0; no returns clipped", RuntimeWarning, stacklevel=2)
    return replace(r, clip_mask=clip_mask_for(r.values, r.sigma, k), clip_k=float(k))


def write_returns(r: ReturnSeries, path: str | Path) -> tuple[Path, Path]:
    """Write ``date,return`` rows plus a ``.meta.json`` sidecar."""
    path = Path(path)
    write_table(path, ["date", "return"], [r.dates, r.values])
    meta = meta_path(path)
    write_json(
        meta,
        {
            "label": r.label,
            "n": len(r),
            "sigma": r.sigma,
            "clip_k": r.clip_k,
            "clip_fraction": r.clip_fraction,
            "step": r.step,
        },
    )
    return path, meta


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def read_returns(path: str | Path) -> ReturnSeries:
    """Inverse of :func:`write_returns`; the clip mask is rebuilt from the sidecar."""
    path = Path(path)
    df = read_table(path)
    if list(df.columns[:2]) != ["date", "return"]:
        raise ParseError(f"{path}: expected header 'date,return'")
    values = df["return"].to_numpy(dtype=float)
    meta = read_json(meta_path(path)) if meta_path(path).exists() else {}
    r = ReturnSeries(
        dates=pd.to_datetime(df["date"], format="ISO8601").values,
        values=values,
        sigma=meta.get("sigma", sample_std(values)),
        step=meta.get("step", 1.0),
        label=meta.get("label", path.stem),
    )
    if meta.get("clip_k") is not None:
        r = replace(r, clip_mask=clip_mask_for(values, r.sigma, meta["clip_k"]), clip_k=meta["clip_k"])
    return r
