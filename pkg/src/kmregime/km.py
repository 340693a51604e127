"""Binned Kramers-Moyal coefficients and the drift/diffusion fits.

Coefficients follow ``D_n(x) = <(X[i+1] - X[i])**n | X[i] in bin(x)> / (n! * step)``.
With the 1/n! factor D2 equals b**2/2 for ``dx = a dt + b dW``, which is
the convention the simulator in :mod:`kmregime.langevin` uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, FitError
from .ingest import ReturnSeries

CONVENTION = "raw_moment/n!"


@dataclass(frozen=True)
class KMProfile:
    bin_centers: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d4: np.ndarray
    valid: np.ndarray
    min_count: int
    step: float
    convention: str = CONVENTION

    @property
    def n_bins(self) -> int:
        return len(self.bin_centers)


@dataclass(frozen=True)
class DriftFit:
    """``D1(r) ~ alpha*r + gamma``."""

    alpha: float
    gamma: float
    r_squared: float


@dataclass(frozen=True)
class DiffusionFit:
    """``D2(r) ~ beta*r**2 + delta*r (+ eps)``; ``eps`` is 0 unless fitted."""

    beta: float
    delta: float
    r_squared: float
    eps: float = 0.0


@dataclass(frozen=True)
class PawulaCheck:
    ratio: np.ndarray  # d4 / d2**2 per bin, nan where undefined
    defined: np.ndarray
    step: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio[self.defined])) if self.defined.any() else math.nan


def transition_pairs(values: np.ndarray, retained: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(X[i], X[i+1] - X[i]) for every i whose source X[i] is retained.

    The destination is not filtered: dropping transitions that leave the
    domain would truncate the increment distribution near the edges and
    bias D1 inward by roughly ``sd(dx) / step``.
    """
    ok = retained[:-1]
    x = values[:-1][ok]
    return x, values[1:][ok] - x


def km_arrays(
    x: np.ndarray,
    dx: np.ndarray,
    lo: float,
    hi: float,
    n_bins: int,
    step: float = 1.0,
    min_count: int = 10,
    orders=(1, 2, 4),
) -> KMProfile:
    """Array-level estimator; ``estimate_km`` and the rolling loop share it."""
    if n_bins < 5:
        raise ValueError("n_bins must be >= 5")
    if hi <= lo:
        # degenerate range: centre a unit-width grid on the single value
        half = 0.5 * max(abs(lo), 1.0)
        lo, hi = lo - half, lo + half
    width = (hi - lo) / n_bins
    edges = lo + width * np.arange(n_bins + 1)
    edges[-1] = hi
    idx = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.intp)
    np.clip(idx, 0, n_bins - 1, out=idx)
    counts = np.bincount(idx, minlength=n_bins)
    valid = counts >= max(int(min_count), 1)
    if not valid.any():
        raise EstimationError(f"no bin reaches min_count={min_count} ({len(x)} transitions, {n_bins} bins)")
    occupied = counts > 0
    denom = np.where(occupied, counts, 1) * step

    def moment(n):
        if n not in orders:
            return np.full(n_bins, np.nan)
        m = np.bincount(idx, weights=dx**n, minlength=n_bins) / denom / math.factorial(n)
        m[~occupied] = np.nan
        return m

    return KMProfile(
        bin_centers=0.5 * (edges[1:] + edges[:-1]),
        edges=edges,
        counts=counts,
        d1=moment(1),
        d2=moment(2),
        d4=moment(4),
        valid=valid,
        min_count=int(min_count),
        step=float(step),
    )


def estimate_km(r: ReturnSeries, n_bins: int = 50, min_count: int = 10, orders=(1, 2, 4)) -> KMProfile:
    """Estimate D1, D2, D4 per bin from a return series.

    Bins are equal width over ``[min, max]`` of the retained values. A
    transition ``X[i] -> X[i+1]`` is used when ``X[i]`` is retained, so the
    moments are conditional on a state inside the domain. Bins with fewer
    than ``min_count`` transitions stay in the profile but are marked
    invalid and ignored by the fits.
    """
    orders = tuple(sorted(set(orders)))
    if not set(orders) <= {1, 2, 4}:
        raise ValueError("orders must be a subset of {1, 2, 4}")
    keep = r.retained
    if keep.sum() < 2:
        raise EstimationError("fewer than 2 retained points")
    kept = r.values[keep]
    x, dx = transition_pairs(r.values, keep)
    if len(x) == 0:
        raise EstimationError("no transition starts from a retained point")
    return km_arrays(x, dx, kept.min(), kept.max(), n_bins, r.step, min_count, orders)


def mean_d2(profile: KMProfile) -> float:
    """Count-weighted mean of D2 over valid bins, i.e. the pooled estimate."""
    ok = profile.valid & np.isfinite(profile.d2)
    return float(np.average(profile.d2[ok], weights=profile.counts[ok]))


def weighted_r2(y, yhat, w) -> float:
    """Count-weighted coefficient of determination about the weighted mean.

    A target with zero variance scores 1 when it is reproduced exactly and
    0 otherwise (instead of nan).
    """
    sw = w.sum()
    ybar = (w @ y) / sw
    res = y - yhat
    dev = y - ybar
    ss_res = float(w @ (res * res))
    ss_tot = float(w @ (dev * dev))
    tol = 1e-20 * float(sw * np.max(np.abs(y)) ** 2) + 1e-300
    if ss_tot <= tol:
        return 1.0 if ss_res <= tol else 0.0
    return 1.0 - ss_res / ss_tot


def _wls(design: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # columns are rescaled to unit max so the normal equations stay well conditioned
    scale = np.max(np.abs(design), axis=0)
    scale[scale == 0] = 1.0
    xs = design / scale
    xw = xs.T * w
    try:
        coef = np.linalg.solve(xw @ xs, xw @ y)
    except np.linalg.LinAlgError:
        sw = np.sqrt(w)
        coef = np.linalg.lstsq(xs * sw[:, None], y * sw, rcond=None)[0]
    return coef / scale


def _fit_inputs(profile: KMProfile, coef: np.ndarray, name: str):
    ok = profile.valid & np.isfinite(coef)
    if ok.sum() < 3:
        raise FitError(f"{name} fit needs >= 3 valid bins, have {int(ok.sum())}")
    return profile.bin_centers[ok], coef[ok], profile.counts[ok].astype(float)


def fit_drift(profile: KMProfile) -> DriftFit:
    r, y, w = _fit_inputs(profile, profile.d1, "drift")
    design = np.column_stack([r, np.ones_like(r)])
    coef = _wls(design, y, w)
    return DriftFit(float(coef[0]), float(coef[1]), weighted_r2(y, design @ coef, w))


def fit_diffusion(profile: KMProfile, constant_term: bool = False) -> DiffusionFit:
    """Fit ``beta*r**2 + delta*r`` to D2, count-weighted.

    Without ``constant_term`` the model is forced through D2(0) = 0, so a
    flat diffusion profile misfits and scores a low R**2; that is reported
    as is.
    """
    r, y, w = _fit_inputs(profile, profile.d2, "diffusion")
    cols = [r * r, r] + ([np.ones_like(r)] if constant_term else [])
    design = np.column_stack(cols)
    coef = _wls(design, y, w)
    eps = float(coef[2]) if constant_term else 0.0
    return DiffusionFit(float(coef[0]), float(coef[1]), weighted_r2(y, design @ coef, w), eps)


def pawula_ratio(profile: KMProfile, min_count: int | None = None) -> PawulaCheck:
    """Per-bin ``d4 / d2**2``; undefined where the bin is invalid or d2 == 0.

    For Gaussian increments over a finite step the expected value is
    ``step/2`` rather than 0.
    """
    if np.all(np.isnan(profile.d4)) or np.all(np.isnan(profile.d2)):
        raise ValueError("profile lacks order 2 or 4")
    ok = profile.valid if min_count is None else profile.counts >= min_count
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = profile.d4 / profile.d2**2
    defined = ok & np.isfinite(ratio) & (profile.d2 > 0)
    ratio = np.where(defined, ratio, np.nan)
    return PawulaCheck(ratio=ratio, defined=defined, step=profile.step)
