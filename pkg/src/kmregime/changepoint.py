"""Piecewise-constant-mean segmentation of coefficient tracks.

``binseg`` is the greedy binary segmentation used on the drift and
diffusion tracks; ``dp_optimal`` is the exact dynamic program it is
validated against. Both minimize the same squared-error cost
``sum_segments sum_i (x_i - mean_segment)**2`` and report a break ``b`` as
the first index of the right-hand segment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class Signal:
    values: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        t = np.asarray(self.times)
        if v.shape != t.shape:
            raise ValueError("values and times differ in length")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SegmentationConfig:
    n_breakpoints: int = 30
    min_segment: int = 2
    jump: int = 1

    def __post_init__(self):
        if self.n_breakpoints < 1:
            raise ValueError("n_breakpoints must be >= 1")
        if self.min_segment < 2:
            raise ValueError("min_segment must be >= 2")
        if self.jump < 1:
            raise ValueError("jump must be >= 1")

    def check(self, n: int) -> None:
        if (self.n_breakpoints + 1) * self.min_segment > n:
            raise ValueError(
                f"{self.n_breakpoints} breakpoints with min_segment={self.min_segment} "
                f"do not fit a signal of length {n}"
            )


@dataclass(frozen=True)
class BinsegResult:
    breaks: list[int]  # sorted
    order: list[int]  # in the order they were added
    gains: list[float]  # cost reduction of each split, same order


@dataclass(frozen=True)
class BreakpointReport:
    alpha_breaks: list[int]
    beta_breaks: list[int]
    union_breaks: list[int]
    alpha_dates: list = field(default_factory=list)
    beta_dates: list = field(default_factory=list)
    union_dates: list = field(default_factory=list)
    bin_starts: list = field(default_factory=list)
    counts: list[int] = field(default_factory=list)


def impute_undefined(s: Signal) -> Signal:
    """Replace nan entries with the median of the defined ones."""
    bad = ~np.isfinite(s.values)
    if not bad.any():
        return s
    if bad.all():
        raise ValueError("signal has no defined values to impute from")
    v = s.values.copy()
    v[bad] = np.median(v[~bad])
    return Signal(v, s.times)


class _Prefix:
    def __init__(self, x: np.ndarray):
        # anchor on the first value: a constant signal then has exactly zero cost
        xc = x - x[0]
        self.s1 = np.concatenate([[0.0], np.cumsum(xc)])
        self.s2 = np.concatenate([[0.0], np.cumsum(xc * xc)])

    def cost(self, a, b):
        s1 = self.s1[b] - self.s1[a]
        c = self.s2[b] - self.s2[a] - s1 * s1 / (b - a)
        return np.maximum(c, 0.0)


def _as_array(values) -> np.ndarray:
    x = np.asarray(values.values if isinstance(values, Signal) else values, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be 1-d")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal has undefined entries; impute first")
    return x


def _best_split(pre: _Prefix, a: int, b: int, min_seg: int, jump: int):
    lo = a + min_seg
    hi = b - min_seg
    lo = -(-lo // jump) * jump
    if lo > hi:
        return None
    c = np.arange(lo, hi + 1, jump)
    total = pre.cost(a, b)
    gain = total - pre.cost(a, c) - pre.cost(c, b)
    g = float(gain.max())
    tol = 1e-10 * float(total)
    i = int(np.flatnonzero(gain >= g - tol)[0])
    return max(float(gain[i]), 0.0), int(c[i])


def binseg_path(values, cfg: SegmentationConfig) -> BinsegResult:
    """Greedy splits with their gains, in the order they were made.

    Each round evaluates the best admissible split of every current segment
    and takes the one with the largest cost reduction; ties go to the
    smallest index. Stops early (fewer breaks) only when no segment can be
    split without violating ``min_segment``.
    """
    x = _as_array(values)
    n = len(x)
    cfg.check(n)
    pre = _Prefix(x)
    candidates = {(0, n): _best_split(pre, 0, n, cfg.min_segment, cfg.jump)}
    order, gains = [], []
    while len(order) < cfg.n_breakpoints:
        best = None
        for (a, b), split in candidates.items():
            if split is None:
                continue
            g, c = split
            if best is None or g > best[0] or (g == best[0] and c < best[1]):
                best = (g, c, a, b)
        if best is None:
            warnings.warn(
                f"only {len(order)} of {cfg.n_breakpoints} breaks placed: no segment can be split further",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        g, c, a, b = best
        del candidates[(a, b)]
        candidates[(a, c)] = _best_split(pre, a, c, cfg.min_segment, cfg.jump)
        candidates[(c, b)] = _best_split(pre, c, b, cfg.min_segment, cfg.jump)
        order.append(c)
        gains.append(g)
    return BinsegResult(breaks=sorted(order), order=order, gains=gains)


def binseg(values, cfg: SegmentationConfig) -> list[int]:
    return binseg_path(values, cfg).breaks


def dp_optimal(values, k: int, min_segment: int = 2) -> list[int]:
    """Exact minimizer of the squared-error cost with ``k`` breaks; O(n**2 k)."""
    x = _as_array(values)
    n = len(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if min_segment < 1 or (k + 1) * min_segment > n:
        raise ValueError(f"{k} breaks with min_segment={min_segment} do not fit length {n}")
    pre = _Prefix(x)
    inf = np.inf
    # best[j, b]: minimal cost of x[:b] split into j+1 segments
    best = np.full((k + 1, n + 1), inf)
    arg = np.zeros((k + 1, n + 1), dtype=np.intp)
    b_all = np.arange(min_segment, n + 1)
    best[0, b_all] = pre.cost(0, b_all)
    for j in range(1, k + 1):
        for b in range((j + 1) * min_segment, n + 1):
            a = np.arange(j * min_segment, b - min_segment + 1)
            tot = best[j - 1, a] + pre.cost(a, b)
            i = int(np.argmin(tot))
            best[j, b] = tot[i]
            arg[j, b] = a[i]
    breaks = []
    b = n
    for j in range(k, 0, -1):
        b = int(arg[j, b])
        breaks.append(b)
    return sorted(breaks)


def segmentation_cost(values, breaks: Sequence[int]) -> float:
    x = _as_array(values)
    pre = _Prefix(x)
    edges = [0, *sorted(breaks), len(x)]
    return float(sum(pre.cost(a, b) for a, b in zip(edges[:-1], edges[1:])))


def _calendar_bins(times: np.ndarray, months: int) -> list[pd.Timestamp]:
    start, end = pd.Timestamp(times[0]), pd.Timestamp(times[-1])
    edges = [start]
    k = 1
    while edges[-1] <= end:
        edges.append(start + pd.DateOffset(months=months * k))
        k += 1
    return edges


def union_and_density(alpha_breaks, beta_breaks, times, bin_months: int = 6) -> BreakpointReport:
    """Merge two break lists and histogram the dates in calendar bins.

    Bins are ``bin_months`` wide and anchored at ``times[0]``; the last bin
    is the one containing ``times[-1]``.
    """
    times = np.asarray(times)
    n = len(times)
    a = sorted({int(i) for i in alpha_breaks})
    b = sorted({int(i) for i in beta_breaks})
    union = sorted(set(a) | set(b))
    for i in union:
        if not 0 < i < n:
            raise ValueError(f"break index {i} outside (0, {n})")
    if n == 0:
        return BreakpointReport(a, b, union)
    date = lambda idx: [pd.Timestamp(times[i]) for i in idx]
    edges = _calendar_bins(times, bin_months)
    edge_ns = np.array([e.value for e in edges], dtype=np.int64)
    union_ns = np.array([pd.Timestamp(times[i]).value for i in union], dtype=np.int64)
    pos = np.searchsorted(edge_ns, union_ns, side="right") - 1
    counts = np.bincount(pos, minlength=len(edges) - 1)[: len(edges) - 1] if len(pos) else np.zeros(len(edges) - 1, int)
    return BreakpointReport(
        alpha_breaks=a,
        beta_breaks=b,
        union_breaks=union,
        alpha_dates=date(a),
        beta_dates=date(b),
        union_dates=date(union),
        bin_starts=edges[:-1],
        counts=[int(c) for c in counts],
    )


def detect_breaks(alpha: Signal, beta: Signal, cfg: SegmentationConfig, bin_months: int = 6) -> BreakpointReport:
    """Impute, segment both tracks independently and build the density report."""
    a = binseg(impute_undefined(alpha), cfg)
    b = binseg(impute_undefined(beta), cfg)
    return union_and_density(a, b, alpha.times, bin_months)
