"""Time-resolved drift/diffusion coefficients from rolling windows.

Within each window the return series is clipped, the Kramers-Moyal
profile is estimated for every bin count of a sweep, and the drift
(``alpha*r + gamma``) and diffusion (``beta*r**2 + delta*r``) fits that
pass the R**2 gate are averaged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EstimationError, FitError
from .ingest import ReturnSeries, clip_mask_for, sample_std
from .km import fit_diffusion, fit_drift, km_arrays, transition_pairs

COEFS = ("alpha", "beta", "gamma", "delta")
DEFAULT_BIN_COUNTS = tuple(range(30, 101, 5))


@dataclass(frozen=True)
class RollingConfig:
    window_length: int = 2000
    step: int = 10
    bin_counts: tuple[int, ...] = DEFAULT_BIN_COUNTS
    r2_threshold: float = 0.8
    clip_k: float = 1.5
    sigma_mode: str = "per-window"
    min_count: int = 10
    diffusion_constant_term: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bin_counts", tuple(int(b) for b in self.bin_counts))
        if not self.bin_counts:
            raise ValueError("bin_counts must be nonempty")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.window_length < 10 * min(self.bin_counts):
            raise ValueError("window_length must be >= 10 * min(bin_counts)")
        if not 0 < self.r2_threshold <= 1:
            raise ValueError("r2_threshold must lie in (0, 1]")
        if self.sigma_mode not in ("global", "per-window"):
            raise ValueError("sigma_mode must be 'global' or 'per-window'")
        if not self.clip_k > 0:
            raise ValueError("clip_k must be positive")


@dataclass(frozen=True)
class CoefficientTrack:
    """Per-window coefficients; nan marks windows where no configuration passed.

    ``index`` is the position of each window's last observation in the
    input series and ``times`` its date, so no value uses later data.
    """

    times: np.ndarray
    index: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    pass_fraction: np.ndarray
    window_length: int
    step: int

    def __len__(self) -> int:
        return len(self.times)

    def coef(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.alpha)


@dataclass(frozen=True)
class WindowResult:
    alpha: float
    beta: float
    gamma: float
    delta: float
    pass_fraction: float
    # per bin count: (alpha, gamma, beta, delta, r2_drift, r2_diffusion) or None on failure
    configs: list = field(default_factory=list)


@dataclass(frozen=True)
class SensitivityReport:
    baseline_window: int
    alt_windows: list[int]
    baseline: CoefficientTrack
    differences: dict  # {alt_window: {coef: alt - baseline on the baseline grid}}
    deviation_std: dict  # {coef: per-time std of the differences about 0}
    summary: dict  # {coef: mean of deviation_std over defined times}


def estimate_window(values: np.ndarray, mask: np.ndarray, cfg: RollingConfig, step: float = 1.0) -> WindowResult:
    """Sweep the bin counts on one window and average the configurations that pass."""
    keep = ~mask
    nan = math.nan
    configs = []
    passed = []
    if keep.sum() >= 2:
        kept = values[keep]
        lo, hi = float(kept.min()), float(kept.max())
        x, dx = transition_pairs(values, keep)
    else:
        x = None
    for nb in cfg.bin_counts:
        if x is None or len(x) == 0:
            configs.append(None)
            continue
        try:
            prof = km_arrays(x, dx, lo, hi, nb, step, cfg.min_count, orders=(1, 2))
            fd = fit_drift(prof)
            fs = fit_diffusion(prof, cfg.diffusion_constant_term)
        except (EstimationError, FitError):
            configs.append(None)
            continue
        row = (fd.alpha, fd.gamma, fs.beta, fs.delta, fd.r_squared, fs.r_squared)
        configs.append(row)
        # a configuration must pass both fits to contribute to either average
        if fd.r_squared >= cfg.r2_threshold and fs.r_squared >= cfg.r2_threshold:
            passed.append(row)
    frac = len(passed) / len(cfg.bin_counts)
    if not passed:
        return WindowResult(nan, nan, nan, nan, frac, configs)
    p = np.asarray(passed)
    return WindowResult(
        alpha=float(p[:, 0].mean()),
        gamma=float(p[:, 1].mean()),
        beta=float(p[:, 2].mean()),
        delta=float(p[:, 3].mean()),
        pass_fraction=frac,
        configs=configs,
    )


def window_starts(n: int, window_length: int, step: int) -> np.ndarray:
    return np.arange(0, n - window_length + 1, step)


def rolling_estimate(r: ReturnSeries, cfg: RollingConfig) -> CoefficientTrack:
    """Slide a window over ``r`` and estimate the coefficients in each.

    With ``sigma_mode='per-window'`` the clip threshold uses the window's own
    standard deviation; with ``'global'`` it uses ``r.sigma``.
    """
    n = len(r)
    W = cfg.window_length
    if W > n:
        raise ValueError(f"window_length {W} exceeds series length {n}")
    starts = window_starts(n, W, cfg.step)
    out = np.full((len(starts), 5), math.nan)
    global_mask = clip_mask_for(r.values, r.sigma, cfg.clip_k)
    for i, s in enumerate(starts):
        v = r.values[s : s + W]
        if cfg.sigma_mode == "per-window":
            mask = clip_mask_for(v, sample_std(v), cfg.clip_k)
        else:
            mask = global_mask[s : s + W]
        w = estimate_window(v, mask, cfg, r.step)
        out[i] = (w.alpha, w.beta, w.gamma, w.delta, w.pass_fraction)
    right = starts + W - 1
    if not np.isfinite(out[:, 0]).any():
        warnings.warn("no window passed the R^2 gate; track is entirely undefined", RuntimeWarning, stacklevel=2)
    return CoefficientTrack(
        times=r.dates[right],
        index=right,
        alpha=out[:, 0],
        beta=out[:, 1],
        gamma=out[:, 2],
        delta=out[:, 3],
        pass_fraction=out[:, 4],
        window_length=W,
        step=cfg.step,
    )


def interpolate_track(track: CoefficientTrack, coef: str, grid: np.ndarray, max_gap: float) -> np.ndarray:
    """Linear interpolation of a coefficient onto observation positions ``grid``.

    Undefined entries are skipped; a grid point bracketed by defined points
    more than ``max_gap`` apart, or outside the defined range, is nan.
    """
    y = track.coef(coef)
    ok = np.isfinite(y)
    xs, ys = track.index[ok].astype(float), y[ok]
    grid = np.asarray(grid, dtype=float)
    res = np.full(len(grid), math.nan)
    if len(xs) == 0:
        return res
    inside = (grid >= xs[0]) & (grid <= xs[-1])
    res[inside] = np.interp(grid[inside], xs, ys)
    pos = np.searchsorted(xs, grid, side="right")  # xs[pos-1] <= g < xs[pos]
    left = xs[np.clip(pos - 1, 0, len(xs) - 1)]
    right = xs[np.clip(pos, 0, len(xs) - 1)]
    res[inside & (left != grid) & (right - left > max_gap)] = math.nan
    return res


def sensitivity(r: ReturnSeries, cfg: RollingConfig, alt_windows: Sequence[int]) -> SensitivityReport:
    """Compare tracks from alternative window lengths against the baseline.

    Each alternative is interpolated onto the baseline's window end
    positions; gaps longer than three baseline steps stay undefined. The
    per-time deviation is the root mean square of ``alt - baseline`` over
    alternatives, i.e. their standard deviation about the baseline.
    """
    alt_windows = [int(w) for w in alt_windows]
    if not alt_windows:
        raise ValueError("no alternative windows")
    for w in alt_windows:
        if w > len(r):
            raise ValueError(f"alternative window {w} exceeds series length {len(r)}")
    base = rolling_estimate(r, cfg)
    grid = base.index
    diffs: dict = {}
    for w in alt_windows:
        alt_cfg = cfg if w == cfg.window_length else _with_window(cfg, w)
        alt = base if w == cfg.window_length else rolling_estimate(r, alt_cfg)
        lo, hi = max(grid[0], alt.index[0]), min(grid[-1], alt.index[-1])
        if lo > hi:
            raise ValueError(f"window {w}: no overlap with the baseline time grid")
        diffs[w] = {
            c: interpolate_track(alt, c, grid, 3 * cfg.step) - base.coef(c) for c in COEFS
        }
    dev, summary = {}, {}
    for c in COEFS:
        stack = np.vstack([diffs[w][c] for w in alt_windows])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            dev[c] = np.sqrt(np.nanmean(stack**2, axis=0))
            summary[c] = float(np.nanmean(dev[c])) if np.isfinite(dev[c]).any() else math.nan
    return SensitivityReport(
        baseline_window=cfg.window_length,
        alt_windows=alt_windows,
        baseline=base,
        differences=diffs,
        deviation_std=dev,
        summary=summary,
    )


def _with_window(cfg: RollingConfig, w: int) -> RollingConfig:
    return replace(cfg, window_length=w)
