"""Modeling preconditions: weak stationarity and the Markov property.

Stationarity is judged from the mean within-window variance W(S) as the
window size S grows. Markovianity is judged from the Chapman-Kolmogorov
deviation Q_M(T) between the direct 2T-step transition matrix and the
composition of two T-step matrices, whose decay over T is summarized by
an exponential fit ``Q_M(T) = A exp(-T / T_M)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EstimationError
from .ingest import ReturnSeries

DEFAULT_LAGS = tuple(range(1, 11))


@dataclass(frozen=True)
class StationarityCurve:
    window_sizes: np.ndarray
    w_values: np.ndarray


@dataclass(frozen=True)
class TransitionMatrix:
    n_bins: int
    edges: np.ndarray
    probs: np.ndarray  # probs[i, j] = P(dest j | source i)
    occupancy: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.occupancy > 0


@dataclass(frozen=True)
class MarkovTestResult:
    lags: np.ndarray
    q_values: np.ndarray
    amplitude: float
    markov_length: float
    fit_residual: float
    success: bool


def sliding_variance(r: ReturnSeries, window_sizes: Sequence[int]) -> StationarityCurve:
    """Mean sample variance over every length-S window, for each S.

    Clipped points are dropped first, so windows run over the retained
    sequence.
    """
    x = r.values[r.retained]
    sizes = np.asarray(sorted(set(int(s) for s in window_sizes)), dtype=int)
    if len(sizes) == 0:
        raise ValueError("no window sizes given")
    if sizes[0] < 2:
        raise ValueError("window sizes must be >= 2")
    if sizes[-1] > len(x):
        raise ValueError(f"window size {sizes[-1]} exceeds series length {len(x)}")
    xc = x - x.mean()
    c1 = np.concatenate([[0.0], np.cumsum(xc)])
    c2 = np.concatenate([[0.0], np.cumsum(xc * xc)])
    w = np.empty(len(sizes))
    for i, s in enumerate(sizes):
        s1 = c1[s:] - c1[:-s]
        s2 = c2[s:] - c2[:-s]
        var = (s2 - s1 * s1 / s) / (s - 1)
        w[i] = max(float(np.mean(np.maximum(var, 0.0))), 0.0)
    return StationarityCurve(window_sizes=sizes, w_values=w)


def _bin_index(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    if hi <= lo:
        return np.zeros(len(values), dtype=np.intp)
    idx = np.floor((values - lo) / (hi - lo) * n_bins).astype(np.intp)
    return np.clip(idx, 0, n_bins - 1)


def _edges(r: ReturnSeries, n_bins: int) -> tuple[float, float, np.ndarray]:
    kept = r.values[r.retained]
    if len(kept) == 0:
        raise EstimationError("no retained returns")
    lo, hi = float(kept.min()), float(kept.max())
    return lo, hi, np.linspace(lo, hi, n_bins + 1)


def _conditional(src: np.ndarray, dst: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    joint = np.bincount(src * n_bins + dst, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
    occ = joint.sum(axis=1)
    probs = joint / np.where(occ > 0, occ, 1)[:, None]
    return probs, occ


def transition_matrix(r: ReturnSeries, lag: int, n_bins: int) -> TransitionMatrix:
    """Row-conditional transition probabilities between equal-width bins.

    Rows with zero occupancy are all zero and reported as undefined.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    keep = r.retained
    n = len(r)
    if n <= lag:
        raise EstimationError("series shorter than lag")
    ok = keep[:-lag] & keep[lag:]
    if not ok.any():
        raise EstimationError(f"no retained pairs at lag {lag}")
    lo, hi, edges = _edges(r, n_bins)
    b = _bin_index(r.values, lo, hi, n_bins)
    probs, occ = _conditional(b[:-lag][ok], b[lag:][ok], n_bins)
    return TransitionMatrix(n_bins=n_bins, edges=edges, probs=probs, occupancy=occ)


def ck_deviation(r: ReturnSeries, lag: int, n_bins: int = 100, min_occupancy: int = 5) -> float:
    """Chapman-Kolmogorov deviation Q_M(T).

    From the triplets ``(r[t], r[t+T], r[t+2T])`` three conditional matrices
    are built: P1 (first to second), P2 (second to third) and P3 (first to
    third). The result is ``sum_ij |P3[i, j] - (P1 @ P2)[i, j]|`` over source
    bins visited at least ``min_occupancy`` times. No marginal weighting.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    keep = r.retained
    n = len(r)
    if 2 * lag >= n:
        raise EstimationError(f"series of length {n} too short for lag {lag}")
    ok = keep[: n - 2 * lag] & keep[lag : n - lag] & keep[2 * lag :]
    if not ok.any():
        raise EstimationError(f"no retained triplets at lag {lag}")
    lo, hi, _ = _edges(r, n_bins)
    b = _bin_index(r.values, lo, hi, n_bins)
    a_, b_, c_ = b[: n - 2 * lag][ok], b[lag : n - lag][ok], b[2 * lag :][ok]
    p1, occ = _conditional(a_, b_, n_bins)
    p2, _ = _conditional(b_, c_, n_bins)
    p3, _ = _conditional(a_, c_, n_bins)
    rows = occ >= min_occupancy
    return float(np.abs(p3[rows] - p1[rows] @ p2).sum())


def fit_markov_length(lags: Sequence[float], q_values: Sequence[float]) -> MarkovTestResult:
    """Log-linear least squares of ``ln Q = ln A - T / T_M``.

    Zero values cannot enter the log fit and are dropped with a warning. A
    flat or rising curve has no finite positive T_M; that is returned as a
    failed fit (``success=False``, ``markov_length=nan``) rather than raised.
    """
    lags = np.asarray(lags, dtype=float)
    q = np.asarray(q_values, dtype=float)
    if lags.shape != q.shape:
        raise ValueError("lags and q_values differ in length")
    if len(lags) < 3:
        raise ValueError("need at least 3 lag points")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite and >= 0")
    pos = q > 0
    if not pos.all():
        warnings.warn(f"{int((~pos).sum())} zero Q_M value(s) excluded from the fit", RuntimeWarning, stacklevel=2)
    fail = MarkovTestResult(lags, q, math.nan, math.nan, math.nan, False)
    if pos.sum() < 2:
        return fail
    t, y = lags[pos], np.log(q[pos])
    tm, ym = t.mean(), y.mean()
    sxx = float(np.sum((t - tm) ** 2))
    if sxx == 0:
        return fail
    slope = float(np.sum((t - tm) * (y - ym))) / sxx
    intercept = ym - slope * tm
    resid = float(np.sum((y - intercept - slope * t) ** 2))
    # a slope indistinguishable from 0 means T_M is unbounded
    tol = 1e-12 * max(1.0, float(np.max(np.abs(y)))) / (t.max() - t.min())
    if not slope < -tol:
        return MarkovTestResult(lags, q, math.exp(intercept), math.nan, resid, False)
    return MarkovTestResult(lags, q, math.exp(intercept), -1.0 / slope, resid, True)


def markov_test(
    r: ReturnSeries,
    lags: Sequence[int] = DEFAULT_LAGS,
    n_bins: int = 100,
    min_occupancy: int = 5,
) -> MarkovTestResult:
    q = [ck_deviation(r, int(t), n_bins, min_occupancy) for t in lags]
    return fit_markov_length(list(lags), q)
