"""Command-line entry point: ``kmregime <subcommand> [--config FILE] [flags]``.

Flags override values from the JSON config; the config uses the same keys
as :class:`kmregime.pipeline.PipelineConfig` (a flat file works for the
single-stage subcommands too, e.g. ``{"returns": "r.csv", "bins": 50}``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .changepoint import SegmentationConfig
from .diagnostics import DEFAULT_LAGS
from .ingest import clip_returns, load_prices, log_returns, read_returns, write_returns
from .langevin import LangevinModel, euler_maruyama
from .pipeline import (
    PipelineConfig,
    PipelineError,
    STAGES,
    read_track,
    run_full,
    write_breaks,
    write_diagnostics,
    write_km,
    write_sensitivity,
    write_track,
)
from .rolling import DEFAULT_BIN_COUNTS, RollingConfig, rolling_estimate
from .textio import dumps_json, write_table

log = logging.getLogger("kmregime")


def _ints(text: str) -> list[int]:
    """``1,2,4``, ``1..10`` or ``30:100:5`` (inclusive stop)."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        a, b, s = parts if len(parts) == 3 else (*parts, 1)
        return list(range(a, b + 1, s))
    return [int(p) for p in text.split(",") if p]


def _floats(n: int):
    def parse(text: str) -> list[float]:
        vals = [float(p) for p in text.split(",")]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {len(vals)}")
        return vals

    return parse


class _Opts:
    """Flag value if given, else config value, else default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config

    def get(self, name: str, default: Any = None, key: str | None = None) -> Any:
        v = getattr(self.args, name, None)
        if v is not None:
            return v
        return self.config.get(key or name, default)

    def need(self, name: str, key: str | None = None) -> Any:
        v = self.get(name, key=key)
        if v is None:
            raise ValueError(f"--{name.replace('_', '-')} is required (flag or config key {key or name!r})")
        return v


def _section(config: dict, name: str) -> dict:
    # single-stage commands accept either a flat file or the pipeline layout
    merged = {k: v for k, v in config.items() if not isinstance(v, dict)}
    merged.update(config.get(name, {}))
    return merged


def cmd_ingest(o: _Opts) -> dict:
    kind = o.get("input_kind", "prices")
    src = o.need("input")
    if kind == "prices":
        r = log_returns(load_prices(src, o.get("date_col", "date"), o.get("price_col", "price"), o.get("date_format")))
    else:
        r = read_returns(src)
    r = clip_returns(r, o.get("clip_k", 1.5))
    files = write_returns(r, o.need("out"))
    return {"outputs": [str(f) for f in files], "n": len(r), "sigma": r.sigma, "clip_fraction": r.clip_fraction}


def cmd_diagnose(o: _Opts) -> dict:
    r = read_returns(o.need("returns"))
    files = write_diagnostics(
        r, _outdir(o), o.get("lags", DEFAULT_LAGS), o.get("bins", 100), o.get("min_occupancy", 5), o.get("window_sizes")
    )
    return {"outputs": [str(f) for f in files]}


def cmd_km(o: _Opts) -> dict:
    r = read_returns(o.need("returns"))
    files = write_km(
        r, _outdir(o), o.get("bins", 50), o.get("min_count", 10), o.get("orders", (1, 2, 4)),
        bool(o.get("diffusion_constant_term", False)),
    )
    return {"outputs": [str(f) for f in files]}


def cmd_rolling(o: _Opts) -> dict:
    r = read_returns(o.need("returns"))
    cfg = RollingConfig(
        window_length=o.get("window", 2000, key="window_length"),
        step=o.get("step", 10),
        bin_counts=tuple(o.get("bins", DEFAULT_BIN_COUNTS, key="bin_counts")),
        r2_threshold=o.get("r2", 0.8, key="r2_threshold"),
        clip_k=o.get("clip_k", 1.5),
        sigma_mode=o.get("sigma", "per-window", key="sigma_mode"),
        min_count=o.get("min_count", 10),
        diffusion_constant_term=bool(o.get("diffusion_constant_term", False)),
    )
    out = _outdir(o)
    files = [write_track(rolling_estimate(r, cfg), out / "track.csv")]
    alt = o.get("alt_windows")
    if alt:
        files.append(write_sensitivity(r, cfg, alt, out / "sensitivity.json"))
    return {"outputs": [str(f) for f in files]}


def cmd_breaks(o: _Opts) -> dict:
    track = read_track(Path(o.need("track")))
    seg = SegmentationConfig(
        n_breakpoints=o.get("n_bkps", 30, key="n_breakpoints"),
        min_segment=o.get("min_segment", 2),
        jump=o.get("jump", 1),
    )
    files = write_breaks(track, _outdir(o), seg, o.get("bin_months", 6))
    return {"outputs": [str(f) for f in files]}


def cmd_simulate(o: _Opts) -> dict:
    domain = o.get("domain")
    model = LangevinModel(
        drift=tuple(o.get("drift", (0.0, -1.0, 0.0))),
        d2=tuple(o.need("d2")),
        dt=o.get("dt", 0.01),
        x0=o.get("x0", 0.0),
        domain=tuple(domain) if domain else None,
    )
    path = euler_maruyama(model, o.get("steps", 500_000), o.get("seed", 0))
    r = path.as_returns(start=o.get("start", "2000-01-01"), freq=o.get("freq", "h"))
    out = Path(o.need("out"))
    if o.get("as_prices", False):
        import numpy as np

        # price_i = exp(x_0 + ... + x_i): log-returns of this file give back x[1:]
        files = [write_table(out, ["date", "price"], [r.dates, np.exp(np.cumsum(r.values))])]
    else:
        files = list(write_returns(r, out))
    return {"outputs": [str(f) for f in files], "n": len(r), "seed": path.seed}


def cmd_run(o: _Opts) -> dict:
    cfg_dict = dict(o.config)
    if o.args.out_dir is not None:
        cfg_dict["output_dir"] = o.args.out_dir
    if o.args.input is not None:
        cfg_dict["input"] = o.args.input
        cfg_dict.pop("simulate", None)
    if o.args.seed is not None:
        cfg_dict["seed"] = o.args.seed
    cfg = PipelineConfig.from_dict(cfg_dict)
    manifest = run_full(cfg, o.args.stages)
    return {"manifest": str(Path(cfg.output_dir) / "manifest.json"), "status": manifest["status"]}


def _outdir(o: _Opts) -> Path:
    p = Path(o.get("out_dir", ".", key="output_dir"))
    p.mkdir(parents=True, exist_ok=True)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kmregime", description="Kramers-Moyal regime analysis of return series.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", type=Path, help="JSON config; flags override it")
        return sp

    sp = add("ingest", "prices (or returns) -> clipped canonical return file")
    sp.add_argument("--input")
    sp.add_argument("--input-kind", choices=("prices", "returns"))
    sp.add_argument("--date-col")
    sp.add_argument("--price-col")
    sp.add_argument("--date-format")
    sp.add_argument("--clip-k", type=float)
    sp.add_argument("--out")

    sp = add("diagnose", "stationarity curve and Markov test")
    sp.add_argument("--returns")
    sp.add_argument("--lags", type=_ints)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--min-occupancy", type=int)
    sp.add_argument("--window-sizes", type=_ints)
    sp.add_argument("--out-dir")

    sp = add("km", "whole-series Kramers-Moyal profile and fits")
    sp.add_argument("--returns")
    sp.add_argument("--bins", type=int)
    sp.add_argument("--min-count", type=int)
    sp.add_argument("--orders", type=_ints)
    sp.add_argument("--diffusion-constant-term", action="store_true", default=None)
    sp.add_argument("--out-dir")

    sp = add("rolling", "rolling-window coefficient track")
    sp.add_argument("--returns")
    sp.add_argument("--window", type=int)
    sp.add_argument("--step", type=int)
    sp.add_argument("--bins", type=_ints, help="bin-count sweep, e.g. 30:100:5")
    sp.add_argument("--r2", type=float)
    sp.add_argument("--sigma", choices=("per-window", "global"))
    sp.add_argument("--clip-k", type=float)
    sp.add_argument("--min-count", type=int)
    sp.add_argument("--diffusion-constant-term", action="store_true", default=None)
    sp.add_argument("--alt-windows", type=_ints, help="window lengths for the sensitivity report")
    sp.add_argument("--out-dir")

    sp = add("breaks", "binary segmentation of the alpha/beta tracks")
    sp.add_argument("--track")
    sp.add_argument("--n-bkps", type=int)
    sp.add_argument("--min-segment", type=int)
    sp.add_argument("--jump", type=int)
    sp.add_argument("--bin-months", type=int)
    sp.add_argument("--out-dir")

    sp = add("simulate", "Euler-Maruyama path of a polynomial Langevin model")
    sp.add_argument("--drift", type=_floats(3), help="a0,a1,a2 of a(x) = a0 + a1 x + a2 x^2")
    sp.add_argument("--d2", type=_floats(3), help="eps,delta,beta of D2(x) = eps + delta x + beta x^2")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--x0", type=float)
    sp.add_argument("--domain", type=_floats(2), help="lo,hi reflecting bounds")
    sp.add_argument("--start")
    sp.add_argument("--freq")
    sp.add_argument("--as-prices", action="store_true", default=None, help="write date,price with price = exp(cumsum)")
    sp.add_argument("--out")

    sp = add("run", "full pipeline driven by a config file")
    sp.add_argument("--input")
    sp.add_argument("--out-dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--stages", nargs="+", choices=STAGES, help="recompute only these stages")
    return p


COMMANDS = {
    "ingest": (cmd_ingest, None),
    "diagnose": (cmd_diagnose, "diagnostics"),
    "km": (cmd_km, "km"),
    "rolling": (cmd_rolling, "rolling"),
    "breaks": (cmd_breaks, "breaks"),
    "simulate": (cmd_simulate, "simulate"),
    "run": (cmd_run, None),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func, section = COMMANDS[args.command]
    try:
        config = json.loads(args.config.read_text()) if args.config else {}
        if section and args.command != "run":
            config = _section(config, section)
        result = func(_Opts(args, config))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(dumps_json(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
