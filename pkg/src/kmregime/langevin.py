"""Euler-Maruyama simulation of 1-d Langevin models.

The noise is parameterized through the diffusion coefficient
``D2(x) = beta*x**2 + delta*x + eps`` so that the simulator and the
Kramers-Moyal estimator share one convention: the noise amplitude is
``b(x) = sqrt(2*D2(x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import ReturnSeries, synthetic_dates


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LangevinModel:
    """Itô model ``dx = a(x) dt + sqrt(2 D2(x)) dW``.

    Parameters
    ----------
    drift : (a0, a1, a2)
        ``a(x) = a0 + a1*x + a2*x**2``.
    d2 : (eps, delta, beta)
        ``D2(x) = eps + delta*x + beta*x**2``.
    dt : float
        Time step.
    x0 : float
        Initial state.
    domain : (lo, hi), optional
        Reflecting bounds.
    """

    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    d2: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt: float = 0.01
    x0: float = 0.0
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "drift", _pad3(self.drift))
        object.__setattr__(self, "d2", _pad3(self.d2))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.domain is not None:
            lo, hi = map(float, self.domain)
            if not lo < hi:
                raise ValueError("domain must satisfy lo < hi")
            if not lo <= self.x0 <= hi:
                raise ValueError("x0 outside domain")
            object.__setattr__(self, "domain", (lo, hi))

    @classmethod
    def ornstein_uhlenbeck(cls, theta: float, noise: float, dt: float, x0: float = 0.0):
        """``dx = -theta x dt + noise dW``, i.e. constant D2 = noise**2 / 2."""
        return cls(drift=(0.0, -theta, 0.0), d2=(noise**2 / 2, 0.0, 0.0), dt=dt, x0=x0)

    def a(self, x):
        c0, c1, c2 = self.drift
        return c0 + (c1 + c2 * x) * x

    def D2(self, x):
        eps, delta, beta = self.d2
        return eps + (delta + beta * x) * x

    def step(self, x, xi):
        """One Euler-Maruyama update; vectorizes over ``x`` and ``xi``."""
        return x + self.a(x) * self.dt + np.sqrt(2.0 * self.D2(x) * self.dt) * xi

    def to_dict(self) -> dict:
        return {"drift": list(self.drift), "d2": list(self.d2), "dt": self.dt, "x0": self.x0,
                "domain": None if self.domain is None else list(self.domain)}


def _pad3(c) -> tuple[float, float, float]:
    c = [float(v) for v in c]
    if len(c) > 3:
        raise ValueError("at most 3 polynomial coefficients")
    return tuple(c + [0.0] * (3 - len(c)))


@dataclass(frozen=True)
class SimulatedPath:
    values: np.ndarray
    seed: int
    model: LangevinModel | tuple
    change_indices: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.values)

    def as_returns(self, start: str = "2000-01-01", freq: str = "h", use_dt: bool = True) -> ReturnSeries:
        """View the path as a return series (one row per state, step = model dt)."""
        models = self.model if isinstance(self.model, tuple) else (self.model,)
        dts = {m.dt for m in models}
        step = dts.pop() if use_dt and len(dts) == 1 else 1.0
        return ReturnSeries.from_values(
            self.values, dates=synthetic_dates(len(self.values), start, freq), step=step
        )


def rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox); no global state."""
    return np.random.Generator(np.random.Philox(seed))


def _integrate(model: LangevinModel, x: float, xi: np.ndarray, out: list, offset: int) -> float:
    c0, c1, c2 = model.drift
    eps, delta, beta = model.d2
    dt = model.dt
    two_dt = 2.0 * dt
    bounds = model.domain
    lo, hi = bounds if bounds is not None else (0.0, 0.0)
    sqrt = math.sqrt
    for k, z in enumerate(xi.tolist()):
        d2 = eps + (delta + beta * x) * x
        if not d2 > 0.0:
            if d2 == 0.0 and eps == delta == beta == 0.0:
                d2 = 0.0
            else:
                raise SimulationError(f"D2(x)={d2!r} <= 0 at step {offset + k} (x={x!r})")
        x = x + (c0 + (c1 + c2 * x) * x) * dt + sqrt(two_dt * d2) * z
        if bounds is not None:
            # reflect until inside; a huge excursion may need several folds
            while x < lo or x > hi:
                x = 2 * lo - x if x < lo else 2 * hi - x
        if not math.isfinite(x):
            raise SimulationError(f"non-finite state at step {offset + k}")
        out.append(x)
    return x


def euler_maruyama(model: LangevinModel, n_steps: int, seed: int) -> SimulatedPath:
    """Simulate ``n_steps`` states, the first being ``x0``.

    ``x[k+1] = x[k] + a(x[k]) dt + sqrt(2 D2(x[k]) dt) xi[k]`` with standard
    normal ``xi`` from a Philox stream, so a seed fixes the path on every
    platform. A model with D2 identically zero is deterministic; otherwise
    hitting D2 <= 0 raises :class:`SimulationError`.
    """
    return synthetic_regime_series([(model, n_steps)], seed)


def synthetic_regime_series(models: Sequence[tuple[LangevinModel, int]], seed: int) -> SimulatedPath:
    """Concatenate segments, each continuing from the previous endpoint.

    The first segment contributes ``x0`` plus ``n-1`` steps; later segments
    contribute ``n`` steps each, so the true change indices are the
    cumulative segment lengths.
    """
    if not models:
        raise ValueError("need at least one segment")
    g = rng(seed)
    out: list[float] = []
    changes = []
    x = None
    for i, (model, n) in enumerate(models):
        n = int(n)
        if n < 1:
            raise ValueError("segment lengths must be >= 1")
        if i == 0:
            x = model.x0
            out.append(x)
            n_new = n - 1
        else:
            changes.append(len(out))
            if model.domain is not None and not model.domain[0] <= x <= model.domain[1]:
                raise SimulationError(f"segment {i} starts outside its domain")
            n_new = n
        x = _integrate(model, x, g.standard_normal(n_new), out, len(out))
    values = np.asarray(out)
    values.setflags(write=False)
    ms = models[0][0] if len(models) == 1 else tuple(m for m, _ in models)
    return SimulatedPath(values=values, seed=seed, model=ms, change_indices=tuple(changes))
