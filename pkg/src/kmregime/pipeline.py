"""End-to-end runs: ingest -> diagnose -> km -> rolling -> breaks.

Every stage reads its inputs from the files the previous stage wrote, so a
downstream stage can be re-run alone from cached upstream artifacts and
produce the same bytes. A ``manifest.json`` with the config snapshot and
SHA-256 of every input and output is written last.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .changepoint import BreakpointReport, SegmentationConfig, Signal, detect_breaks
from .diagnostics import DEFAULT_LAGS, markov_test, sliding_variance
from .ingest import ReturnSeries, clip_returns, load_prices, log_returns, read_returns, write_returns
from .km import estimate_km, mean_d2, fit_diffusion, fit_drift, pawula_ratio
from .langevin import LangevinModel, synthetic_regime_series
from .rolling import CoefficientTrack, RollingConfig, rolling_estimate, sensitivity
from .textio import read_table, sha256_file, write_json, write_table

log = logging.getLogger(__name__)

STAGES = ("ingest", "diagnose", "km", "rolling", "breaks")
STAGE_FILES = {
    "ingest": ("returns.csv", "returns.meta.json"),
    "diagnose": ("diagnostics.json", "stationarity.csv", "markov.csv"),
    "km": ("km_profile.csv", "km_fit.json"),
    "rolling": ("track.csv",),
    "breaks": ("breaks.json", "density.csv"),
}
PLOT_FILES = ("fig1_returns.csv", "fig1_hist.csv", "fig2_km.csv", "fig3_tracks.csv", "fig4_density.csv")
DEFAULT_WINDOW_SIZES = (5, 10, 20, 50, 100, 200, 500, 1000, 2000)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    """Declarative run description; see ``README.md`` for the file layout.

    Exactly one of ``input`` (a price or returns file) and ``simulate`` (a
    list of Langevin segments) provides the data.
    """

    output_dir: str = "out"
    input: str | None = None
    input_kind: str = "prices"  # prices | returns
    date_col: str = "date"
    price_col: str = "price"
    date_format: str | None = None
    simulate: dict | None = None
    seed: int = 0
    clip_k: float = 1.5
    diagnostics: dict = field(default_factory=dict)
    km: dict = field(default_factory=dict)
    rolling: dict = field(default_factory=dict)
    breaks: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self) -> None:
        if (self.input is None) == (self.simulate is None):
            raise ValueError("config needs exactly one of 'input' and 'simulate'")
        if self.input is not None and not Path(self.input).exists():
            raise ValueError(f"input file not found: {self.input}")
        if self.input_kind not in ("prices", "returns"):
            raise ValueError("input_kind must be 'prices' or 'returns'")
        if not self.clip_k > 0:
            raise ValueError("clip_k must be positive")
        self.rolling_config()
        self.segmentation_config()

    def rolling_config(self) -> RollingConfig:
        opts = {k: v for k, v in self.rolling.items() if k != "alt_windows"}
        if "bin_counts" in opts:
            opts["bin_counts"] = tuple(opts["bin_counts"])
        return RollingConfig(**opts)

    def segmentation_config(self) -> SegmentationConfig:
        return SegmentationConfig(**{k: v for k, v in self.breaks.items() if k != "bin_months"})

    def snapshot(self) -> dict:
        return asdict(self)


# -- stage writers, shared with the CLI subcommands ---------------------------


def write_diagnostics(
    r: ReturnSeries,
    out_dir: Path,
    lags: Sequence[int] = DEFAULT_LAGS,
    n_bins: int = 100,
    min_occupancy: int = 5,
    window_sizes: Sequence[int] | None = None,
) -> list[Path]:
    n_kept = int(r.retained.sum())
    sizes = [s for s in (window_sizes or DEFAULT_WINDOW_SIZES) if 2 <= s <= n_kept]
    curve = sliding_variance(r, sizes)
    mt = markov_test(r, lags, n_bins, min_occupancy)
    report = {
        "stationarity": {"window_sizes": curve.window_sizes, "w_values": curve.w_values},
        "markov": {
            "lags": mt.lags,
            "q_values": mt.q_values,
            "amplitude": mt.amplitude,
            "markov_length": mt.markov_length,
            "fit_residual": mt.fit_residual,
            "success": mt.success,
            "n_bins": n_bins,
            "min_occupancy": min_occupancy,
            "step": r.step,
        },
    }
    return [
        write_json(out_dir / "diagnostics.json", report),
        write_table(out_dir / "stationarity.csv", ["window_size", "w"], [curve.window_sizes, curve.w_values]),
        write_table(out_dir / "markov.csv", ["lag", "q_m", "q_fit"], [
            mt.lags, mt.q_values,
            mt.amplitude * np.exp(-mt.lags / mt.markov_length) if mt.success else np.full(len(mt.lags), np.nan),
        ]),
    ]


def write_km(
    r: ReturnSeries,
    out_dir: Path,
    n_bins: int = 50,
    min_count: int = 10,
    orders: Sequence[int] = (1, 2, 4),
    diffusion_constant_term: bool = False,
) -> list[Path]:
    prof = estimate_km(r, n_bins, min_count, orders)
    summary: dict[str, Any] = {"n_bins": n_bins, "min_count": min_count, "convention": prof.convention,
                               "step": prof.step, "orders": sorted(orders)}
    if 1 in orders:
        fd = fit_drift(prof)
        summary.update(alpha=fd.alpha, gamma=fd.gamma, r2_drift=fd.r_squared)
    if 2 in orders:
        fs = fit_diffusion(prof, diffusion_constant_term)
        summary.update(beta=fs.beta, delta=fs.delta, r2_diffusion=fs.r_squared, mean_d2=mean_d2(prof))
        if diffusion_constant_term:
            summary["eps"] = fs.eps
    ratio = np.full(prof.n_bins, np.nan)
    if 2 in orders and 4 in orders:
        pw = pawula_ratio(prof)
        ratio = pw.ratio
        summary["pawula_max_ratio"] = pw.max_ratio
        v = prof.valid & np.isfinite(prof.d2) & np.isfinite(prof.d4)
        summary["d4_over_d2_max"] = float(np.max(prof.d4[v] / prof.d2[v])) if v.any() and np.all(prof.d2[v] > 0) else None
    return [
        write_table(
            out_dir / "km_profile.csv",
            ["r_bin", "count", "valid", "d1", "d2", "d4", "pawula_ratio"],
            [prof.bin_centers, prof.counts, prof.valid, prof.d1, prof.d2, prof.d4, ratio],
        ),
        write_json(out_dir / "km_fit.json", summary),
    ]


def write_track(track: CoefficientTrack, path: Path) -> Path:
    return write_table(
        path,
        ["date", "index", "alpha", "beta", "gamma", "delta", "pass_fraction"],
        [track.times, track.index, track.alpha, track.beta, track.gamma, track.delta, track.pass_fraction],
    )


def read_track(path: Path) -> CoefficientTrack:
    df = read_table(path)
    idx = df["index"].to_numpy(dtype=np.int64)
    step = int(idx[1] - idx[0]) if len(idx) > 1 else 1
    return CoefficientTrack(
        times=pd.to_datetime(df["date"], format="ISO8601").values,
        index=idx,
        alpha=df["alpha"].to_numpy(float),
        beta=df["beta"].to_numpy(float),
        gamma=df["gamma"].to_numpy(float),
        delta=df["delta"].to_numpy(float),
        pass_fraction=df["pass_fraction"].to_numpy(float),
        window_length=int(idx[0] + 1) if len(idx) else 0,
        step=step,
    )


def write_sensitivity(r: ReturnSeries, cfg: RollingConfig, alt_windows: Sequence[int], path: Path) -> Path:
    rep = sensitivity(r, cfg, alt_windows)
    return write_json(path, {
        "baseline_window": rep.baseline_window,
        "alt_windows": rep.alt_windows,
        "summary": rep.summary,
        "times": rep.baseline.times,
        "deviation_std": rep.deviation_std,
        "differences": {str(w): d for w, d in rep.differences.items()},
    })


def write_breaks(track: CoefficientTrack, out_dir: Path, seg: SegmentationConfig, bin_months: int = 6) -> list[Path]:
    rep = detect_breaks(Signal(track.alpha, track.times), Signal(track.beta, track.times), seg, bin_months)
    return [
        write_json(out_dir / "breaks.json", _report_dict(rep, seg, bin_months)),
        write_table(out_dir / "density.csv", ["bin_start_date", "break_count"], [rep.bin_starts, rep.counts]),
    ]


def _report_dict(rep: BreakpointReport, seg: SegmentationConfig, bin_months: int) -> dict:
    return {
        "config": asdict(seg) | {"bin_months": bin_months},
        "alpha": {"index": rep.alpha_breaks, "date": rep.alpha_dates},
        "beta": {"index": rep.beta_breaks, "date": rep.beta_dates},
        "union": {"index": rep.union_breaks, "date": rep.union_dates},
        "density": {"bin_start": rep.bin_starts, "count": rep.counts},
    }


# -- plot-ready data -----------------------------------------------------------


def emit_plot_data(out_dir: str | Path) -> list[Path]:
    """One tidy file per figure panel, built from the stage outputs in ``out_dir``."""
    out_dir = Path(out_dir)
    needed = {s: STAGE_FILES[s][0] for s in ("ingest", "km", "rolling", "breaks")}
    for stage, name in needed.items():
        if not (out_dir / name).exists():
            raise PipelineError(stage, f"missing stage output {name}; run the {stage} stage first")
    r = read_returns(out_dir / "returns.csv")
    prof = read_table(out_dir / "km_profile.csv")
    track = read_track(out_dir / "track.csv")
    dens = read_table(out_dir / "density.csv")

    hist, edges = np.histogram(r.values, bins=100, density=True)
    alpha = np.full(len(r), np.nan)
    beta = np.full(len(r), np.nan)
    alpha[track.index] = track.alpha
    beta[track.index] = track.beta
    return [
        write_table(out_dir / "fig1_returns.csv", ["date", "return", "clipped"], [r.dates, r.values, r.clip_mask]),
        write_table(out_dir / "fig1_hist.csv", ["bin_left", "bin_right", "density"], [edges[:-1], edges[1:], hist]),
        write_table(
            out_dir / "fig2_km.csv",
            ["r_bin", "d1", "d2", "d4", "count"],
            [prof["r_bin"], prof["d1"], prof["d2"], prof["d4"], prof["count"]],
        ),
        write_table(out_dir / "fig3_tracks.csv", ["date", "return", "alpha", "beta"], [r.dates, r.values, alpha, beta]),
        write_table(out_dir / "fig4_density.csv", ["bin_start_date", "break_count"], [dens["bin_start_date"], dens["break_count"]]),
    ]


# -- orchestration -------------------------------------------------------------


def _simulate_returns(spec: dict, seed: int) -> ReturnSeries:
    segments = []
    for seg in spec["segments"]:
        model = LangevinModel(
            drift=tuple(seg.get("drift", (0.0, 0.0, 0.0))),
            d2=tuple(seg["d2"]),
            dt=seg["dt"],
            x0=seg.get("x0", 0.0),
            domain=tuple(seg["domain"]) if seg.get("domain") else None,
        )
        segments.append((model, int(seg["steps"])))
    path = synthetic_regime_series(segments, seed)
    return path.as_returns(start=spec.get("start", "2000-01-01"), freq=spec.get("freq", "h"))


def _run_stage(stage: str, cfg: PipelineConfig, out: Path) -> list[Path]:
    if stage == "ingest":
        if cfg.simulate is not None:
            r = _simulate_returns(cfg.simulate, cfg.seed)
        elif cfg.input_kind == "prices":
            r = log_returns(load_prices(cfg.input, cfg.date_col, cfg.price_col, cfg.date_format))
        else:
            r = read_returns(cfg.input)
        return list(write_returns(clip_returns(r, cfg.clip_k), out / "returns.csv"))
    r = read_returns(out / "returns.csv")
    if stage == "diagnose":
        d = cfg.diagnostics
        return write_diagnostics(
            r, out, d.get("lags", DEFAULT_LAGS), d.get("bins", 100), d.get("min_occupancy", 5), d.get("window_sizes")
        )
    if stage == "km":
        k = cfg.km
        return write_km(
            r, out, k.get("bins", 50), k.get("min_count", 10), k.get("orders", (1, 2, 4)),
            k.get("diffusion_constant_term", False),
        )
    if stage == "rolling":
        rc = cfg.rolling_config()
        files = [write_track(rolling_estimate(r, rc), out / "track.csv")]
        if cfg.rolling.get("alt_windows"):
            files.append(write_sensitivity(r, rc, cfg.rolling["alt_windows"], out / "sensitivity.json"))
        return files
    if stage == "breaks":
        track = read_track(out / "track.csv")
        return write_breaks(track, out, cfg.segmentation_config(), cfg.breaks.get("bin_months", 6))
    raise ValueError(f"unknown stage {stage!r}")


def _hashes(out: Path, files: Sequence[Path]) -> dict:
    return {str(Path(f).relative_to(out)): sha256_file(f) for f in files}


def run_full(cfg: PipelineConfig, stages: Sequence[str] | None = None) -> dict:
    """Execute the pipeline and return the manifest that was written.

    ``stages`` restricts which stages are recomputed; the others must already
    have their outputs in ``cfg.output_dir`` and are only re-hashed. On
    failure a partial manifest naming the stage is written and
    :class:`PipelineError` is raised.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = set(STAGES if stages is None else stages)
    if not todo <= set(STAGES):
        raise ValueError(f"unknown stages: {sorted(todo - set(STAGES))}")
    manifest: dict[str, Any] = {
        "toolkit_version": __version__,
        "config": cfg.snapshot(),
        "input": {"path": cfg.input, "sha256": sha256_file(cfg.input) if cfg.input else None},
        "stages": {},
    }
    for stage in STAGES:
        try:
            if stage in todo:
                log.info("running stage %s", stage)
                files = _run_stage(stage, cfg, out)
            else:
                files = [out / f for f in STAGE_FILES[stage]]
                if stage == "rolling" and (out / "sensitivity.json").exists():
                    files.append(out / "sensitivity.json")
                missing = [f.name for f in files if not f.exists()]
                if missing:
                    raise FileNotFoundError(f"cached outputs missing: {missing}")
        except Exception as exc:
            manifest["status"] = "failed"
            manifest["failed_stage"] = stage
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            write_json(out / "manifest.json", manifest)
            raise PipelineError(stage, str(exc)) from exc
        manifest["stages"][stage] = _hashes(out, files)
        if stage == "ingest" and cfg.simulate is not None:
            manifest["input"]["sha256"] = manifest["stages"]["ingest"]["returns.csv"]
    manifest["plot_data"] = _hashes(out, emit_plot_data(out))
    manifest["status"] = "complete"
    write_json(out / "manifest.json", manifest)
    return manifest
