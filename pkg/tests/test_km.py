import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import series
from kmregime.errors import EstimationError, FitError
from kmregime.ingest import ReturnSeries, clip_returns
from kmregime.km import (
    CONVENTION,
    KMProfile,
    estimate_km,
    fit_diffusion,
    fit_drift,
    mean_d2,
    pawula_ratio,
    transition_pairs,
    weighted_r2,
)
from kmregime.langevin import LangevinModel, euler_maruyama


def profile(centers, d1=None, d2=None, counts=None):
    centers = np.asarray(centers, float)
    n = len(centers)
    counts = np.full(n, 100) if counts is None else np.asarray(counts)
    nan = np.full(n, np.nan)
    return KMProfile(
        bin_centers=centers,
        edges=np.linspace(centers[0] - 0.5, centers[-1] + 0.5, n + 1),
        counts=counts,
        d1=nan if d1 is None else np.asarray(d1, float),
        d2=nan if d2 is None else np.asarray(d2, float),
        d4=nan,
        valid=counts >= 10,
        min_count=10,
        step=1.0,
    )


def bin_stats(r, prof):
    """Per-bin exact Euler oracles and empirical standard errors."""
    x, dx = transition_pairs(r.values, r.retained)
    idx = np.clip(np.searchsorted(prof.edges, x, side="right") - 1, 0, prof.n_bins - 1)
    out = []
    for b in range(prof.n_bins):
        sel = idx == b
        out.append((x[sel], dx[sel]))
    return out


# -- estimator -------------------------------------------------------------------


def test_constant_series_zero_coefficients():
    prof = estimate_km(series(np.full(100, 3.0)), n_bins=10)
    occ = prof.counts > 0
    assert occ.sum() == 1 and prof.counts.sum() == 99
    for d in (prof.d1, prof.d2, prof.d4):
        assert np.all(d[occ] == 0.0)
    pw = pawula_ratio(prof)
    assert not pw.defined.any() and np.isnan(pw.max_ratio)


def test_convention_tag_and_factorials():
    # two alternating states: every increment is +-2, so raw moments are 2, 4, 16
    r = series(np.tile([-1.0, 1.0], 50))
    prof = estimate_km(r, n_bins=5)
    lo, hi = prof.counts[0], prof.counts[-1]
    assert prof.convention == CONVENTION and lo + hi == 99
    assert prof.d1[0] == 2.0 and prof.d1[-1] == -2.0
    assert prof.d2[0] == 4.0 / 2 and prof.d4[0] == 16.0 / 24


def test_step_divides_moments():
    v = np.random.default_rng(0).normal(size=2000)
    a = estimate_km(ReturnSeries.from_values(v, step=1.0), 10)
    b = estimate_km(ReturnSeries.from_values(v, step=0.5), 10)
    np.testing.assert_allclose(b.d2, 2 * a.d2, rtol=1e-15)


def test_clipped_sources_excluded():
    v = np.random.default_rng(1).normal(size=5000)
    r = clip_returns(ReturnSeries.from_values(v), 1.5)
    prof = estimate_km(r, 20)
    # count conservation: transitions whose source is retained
    assert prof.counts.sum() == int(r.retained[:-1].sum())
    kept = v[r.retained]
    assert prof.edges[0] == kept.min() and prof.edges[-1] == kept.max()


def test_estimate_errors():
    r = series(np.random.default_rng(2).normal(size=100))
    with pytest.raises(ValueError):
        estimate_km(r, n_bins=4)
    with pytest.raises(EstimationError):
        estimate_km(r, n_bins=50, min_count=1000)
    with pytest.raises(ValueError):
        estimate_km(r, orders=(1, 3))


def test_scaling_linearity():
    v = np.random.default_rng(3).normal(size=5000)
    a = estimate_km(series(v), 20)
    b = estimate_km(series(4.0 * v), 20)  # power of two: bin assignment is exact
    assert np.array_equal(a.counts, b.counts)
    np.testing.assert_allclose(b.d1, 4 * a.d1, rtol=1e-12)
    np.testing.assert_allclose(b.d2, 16 * a.d2, rtol=1e-12)
    np.testing.assert_allclose(b.d4, 256 * a.d4, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=30, max_size=300), st.integers(5, 30))
def test_even_moments_nonnegative_and_counts_conserved(values, n_bins):
    r = series(values)
    try:
        prof = estimate_km(r, n_bins, min_count=1)
    except EstimationError:
        return
    v = prof.valid
    assert np.all(prof.d2[v] >= 0) and np.all(prof.d4[v] >= 0)
    assert prof.counts.sum() == len(values) - 1


# -- OU oracle -----------------------------------------------------------------------


def test_ou_per_bin_within_sampling_error(ou_returns):
    """Each bin with >= 500 samples matches the exact Euler conditional moments.

    For dx = -x dt + sqrt(2 D2 dt) xi:  E[dx | x] / dt = -x and
    E[dx**2 | x] / (2 dt) = D2 + x**2 dt / 2, averaged over the bin's x.
    """
    prof = estimate_km(ou_returns, 50)
    dt = ou_returns.step
    checked = 0
    for b, (x, dx) in enumerate(bin_stats(ou_returns, prof)):
        n = len(x)
        if n < 500:
            continue
        checked += 1
        d1_true = -x.mean()
        d2_true = 0.125 + dt * np.mean(x * x) / 2
        se1 = dx.std(ddof=1) / np.sqrt(n) / dt
        se2 = (dx**2).std(ddof=1) / np.sqrt(n) / (2 * dt)
        assert abs(prof.d1[b] - d1_true) < 4 * se1, b
        assert abs(prof.d2[b] - d2_true) < 4 * se2, b
    assert checked >= 30


@pytest.mark.xfail(strict=True, reason="relative error is unbounded where d1 -> 0 and exceeds 7% in sparse edge bins")
def test_ou_per_bin_relative_tolerance_literal(ou_returns):
    prof = estimate_km(ou_returns, 50)
    big = prof.counts >= 500
    c = prof.bin_centers[big]
    assert np.all(np.abs(prof.d1[big] / -c - 1) <= 0.05)
    assert np.all(np.abs(prof.d2[big] / 0.125 - 1) <= 0.07)


def test_ou_drift_fit_and_mean_d2(ou_returns):
    prof = estimate_km(ou_returns, 50)
    fd = fit_drift(prof)
    assert -1.05 <= fd.alpha <= -0.95
    assert fd.r_squared > 0.95
    assert abs(mean_d2(prof) / 0.125 - 1) < 0.07


def test_ou_pawula(ou_returns):
    prof = estimate_km(ou_returns, 50)
    pw = pawula_ratio(prof, min_count=500)
    assert pw.step == 0.01
    assert pw.max_ratio <= 2 * 0.01
    # Gaussian increments: d4 / d2**2 -> dt / 2 per bin
    w = prof.counts[pw.defined]
    assert abs(np.average(pw.ratio[pw.defined], weights=w) / 0.005 - 1) < 0.1


def test_ou_constant_d2_zero_intercept_misfit(ou_returns):
    prof = estimate_km(ou_returns, 50)
    plain = fit_diffusion(prof)
    assert plain.r_squared < 0.5  # a flat profile cannot be fitted through the origin
    with_eps = fit_diffusion(prof, constant_term=True)
    assert abs(with_eps.eps / 0.125 - 1) < 0.07
    assert with_eps.r_squared <= 1


def test_geometric_noise_beta():
    # b(x) = 0.4 x  ->  D2 = 0.08 x**2; mean-reverting drift 1 - x keeps x near 1
    m = LangevinModel(drift=(1.0, -1.0, 0.0), d2=(0.0, 0.0, 0.08), dt=0.01, x0=1.0, domain=(0.2, 5.0))
    r = ReturnSeries.from_values(euler_maruyama(m, 1_000_000, 1).values, step=0.01)
    fs = fit_diffusion(estimate_km(r, 50, min_count=500))
    assert abs(fs.beta / 0.08 - 1) < 0.10


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_multiplicative_round_trip(seed):
    # a(x) = -x, D2 = 0.05 + 0.05 x + 0.2 x**2 > 0 everywhere
    m = LangevinModel(drift=(0.0, -1.0, 0.0), d2=(0.05, 0.05, 0.2), dt=0.01, domain=(-1.5, 1.5))
    r = ReturnSeries.from_values(euler_maruyama(m, 1_000_000, seed).values, step=0.01)
    prof = estimate_km(r, 50, min_count=100)
    fd = fit_drift(prof)
    fs = fit_diffusion(prof, constant_term=True)
    assert abs(fd.alpha + 1) < 0.05
    assert abs(fs.beta / 0.2 - 1) < 0.10
    assert abs(fs.delta / 0.05 - 1) < 0.10


# -- fits ----------------------------------------------------------------------------


def test_exact_line():
    r = np.linspace(-1, 1, 11)
    fd = fit_drift(profile(r, d1=-0.7 * r))
    assert fd.alpha == pytest.approx(-0.7, abs=1e-12)
    assert fd.gamma == pytest.approx(0.0, abs=1e-12)
    assert fd.r_squared == pytest.approx(1.0, abs=1e-12)


def test_constant_drift_zero_variance():
    r = np.linspace(-1, 1, 11)
    fd = fit_drift(profile(r, d1=np.full(11, 0.3)))
    assert fd.alpha == pytest.approx(0.0, abs=1e-12)
    assert fd.gamma == pytest.approx(0.3, abs=1e-12)
    assert fd.r_squared == 1.0


def test_exact_quadratic():
    r = np.linspace(-1, 1, 11)
    fs = fit_diffusion(profile(r, d2=2 * r**2 + 0.3 * r))
    assert fs.beta == pytest.approx(2.0, abs=1e-12)
    assert fs.delta == pytest.approx(0.3, abs=1e-12)
    assert fs.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fs.eps == 0.0


def test_constant_term_recovers_floor():
    r = np.linspace(-1, 1, 11)
    fs = fit_diffusion(profile(r, d2=0.1 + 0.5 * r**2 - 0.2 * r), constant_term=True)
    assert (fs.beta, fs.delta, fs.eps) == pytest.approx((0.5, -0.2, 0.1), abs=1e-12)


def test_invalid_bins_ignored_and_weighted():
    r = np.linspace(-1, 1, 6)
    d1 = -r.copy()
    d1[0] = 50.0  # outlier in an invalid bin
    counts = np.array([5, 100, 100, 100, 100, 100])
    assert fit_drift(profile(r, d1=d1, counts=counts)).alpha == pytest.approx(-1.0, abs=1e-12)


def test_too_few_valid_bins():
    r = np.linspace(-1, 1, 5)
    with pytest.raises(FitError):
        fit_drift(profile(r, d1=-r, counts=[100, 100, 1, 1, 1]))
    with pytest.raises(FitError):
        fit_diffusion(profile(r, d2=r**2, counts=[1, 100, 100, 1, 1]))


def test_fit_permutation_invariance():
    rng = np.random.default_rng(4)
    r = np.linspace(-1, 1, 20)
    d1 = -r + rng.normal(0, 0.1, 20)
    d2 = r**2 + rng.normal(0, 0.1, 20)
    counts = rng.integers(10, 500, 20)
    perm = rng.permutation(20)
    a = profile(r, d1, d2, counts)
    b = profile(r[perm], d1[perm], d2[perm], counts[perm])
    assert fit_drift(a).alpha == pytest.approx(fit_drift(b).alpha, rel=1e-12)
    assert fit_diffusion(a).beta == pytest.approx(fit_diffusion(b).beta, rel=1e-12)


def test_weighted_r2_cases():
    y = np.array([1.0, 2.0, 3.0])
    w = np.array([1.0, 1.0, 2.0])
    assert weighted_r2(y, y, w) == 1.0
    assert weighted_r2(y, np.full(3, (w @ y) / w.sum()), w) == pytest.approx(0.0)
    c = np.full(3, 2.0)
    assert weighted_r2(c, c, w) == 1.0
    assert weighted_r2(c, c + 0.1, w) == 0.0
    assert weighted_r2(y, -y, w) < 0


def test_pawula_requires_orders():
    prof = estimate_km(series(np.random.default_rng(5).normal(size=500)), 10, orders=(1, 2))
    with pytest.raises(ValueError):
        pawula_ratio(prof)
