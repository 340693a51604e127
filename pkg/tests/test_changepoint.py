import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import piecewise_signal
from kmregime.changepoint import (
    SegmentationConfig,
    Signal,
    binseg,
    binseg_path,
    detect_breaks,
    dp_optimal,
    impute_undefined,
    segmentation_cost,
    union_and_density,
)

STAIRCASE = [-3, -3, -3, 0, 0, 3, 3, 3, 3, 3, 0, 0, 0, 0, 0, 0, 0]


def signal(values, start="2000-01-01", freq="D"):
    values = np.asarray(values, float)
    return Signal(values, pd.date_range(start, periods=len(values), freq=freq).values)


# -- imputation --------------------------------------------------------------------------


def test_impute_median():
    assert impute_undefined(signal([1, np.nan, 3])).values.tolist() == [1, 2, 3]
    s = signal([1.0, 2.0])
    assert impute_undefined(s) is s
    assert impute_undefined(signal([np.nan] * 5 + [7])).values.tolist() == [7] * 6
    with pytest.raises(ValueError):
        impute_undefined(signal([np.nan, np.nan]))


def test_signal_length_mismatch():
    with pytest.raises(ValueError):
        Signal(np.zeros(3), np.zeros(2))


# -- binseg -------------------------------------------------------------------------------


def test_clean_step():
    x = [0.0] * 50 + [10.0] * 50
    assert binseg(x, SegmentationConfig(1)) == [50]
    assert dp_optimal(x, 1) == [50]


def test_constant_signal_smallest_index_zero_gain():
    res = binseg_path(np.full(20, 4.2), SegmentationConfig(1, min_segment=2))
    assert res.breaks == [2]
    assert res.gains == [0.0]


def test_staircase_greedy_suboptimal():
    cfg = SegmentationConfig(2, min_segment=2)
    greedy = binseg(STAIRCASE, cfg)
    exact = dp_optimal(STAIRCASE, 2, 2)
    assert greedy == [3, 10] and exact == [5, 10]
    assert segmentation_cost(STAIRCASE, exact) < segmentation_cost(STAIRCASE, greedy)


def test_config_validation():
    with pytest.raises(ValueError):
        SegmentationConfig(0)
    with pytest.raises(ValueError):
        SegmentationConfig(1, min_segment=1)
    with pytest.raises(ValueError):
        SegmentationConfig(1, jump=0)
    with pytest.raises(ValueError):
        binseg(np.zeros(5), SegmentationConfig(2, min_segment=2))
    with pytest.raises(ValueError):
        dp_optimal(np.zeros(5), 2, 2)
    with pytest.raises(ValueError):
        binseg([0.0, np.nan, 1.0, 2.0], SegmentationConfig(1))


def test_greedy_dead_end_warns():
    # the first split at 3 leaves [0,3) and [3,8); only one more split fits
    x = [0.0, 0.0, 0.0, 9.0, 9.0, 9.0, 9.0, 9.0]
    with pytest.warns(RuntimeWarning, match="only 2 of 3"):
        res = binseg_path(x, SegmentationConfig(3, min_segment=2))
    assert len(res.breaks) == 2


def test_jump_restricts_candidates():
    x = [0.0] * 7 + [5.0] * 13
    assert binseg(x, SegmentationConfig(1, jump=5)) == [5]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=8, max_size=60), st.integers(1, 3), st.integers(2, 3))
def test_binseg_properties(values, k, min_seg):
    x = np.asarray(values)
    if (k + 1) * min_seg > len(x):
        return
    cfg = SegmentationConfig(k, min_segment=min_seg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = binseg_path(x, cfg)
    b = res.breaks
    assert b == sorted(set(b))
    edges = [0, *b, len(x)]
    assert all(e2 - e1 >= min_seg for e1, e2 in zip(edges[:-1], edges[1:]))
    assert all(g >= 0 for g in res.gains)
    # cost is non-increasing along the greedy path
    costs = [segmentation_cost(x, sorted(res.order[:i])) for i in range(len(res.order) + 1)]
    assert all(c2 <= c1 + 1e-9 * max(1.0, c1) for c1, c2 in zip(costs[:-1], costs[1:]))
    if len(b) == k:
        exact = dp_optimal(x, k, min_seg)
        assert segmentation_cost(x, exact) <= segmentation_cost(x, b) + 1e-9 * max(1.0, costs[0])


@pytest.mark.parametrize("a,b", [(3.0, -7.0), (-0.5, 100.0)])
def test_affine_equivariance(a, b):
    x, _ = piecewise_signal(11, n=120, k=3)
    cfg = SegmentationConfig(3)
    assert binseg(a * x + b, cfg) == binseg(x, cfg)
    assert dp_optimal(a * x + b, 3) == dp_optimal(x, 3)


def test_three_jumps_recovered():
    hits = 0
    for seed in range(100):
        x, truth = piecewise_signal(seed, n=300, k=3)
        found = binseg(x, SegmentationConfig(3))
        hits += all(abs(f - t) <= 2 for f, t in zip(found, truth))
    assert hits >= 95


def test_matches_ruptures():
    rpt = pytest.importorskip("ruptures")
    for seed in range(30):
        x, truth = piecewise_signal(seed)
        k = len(truth)
        ours = binseg(x, SegmentationConfig(k, min_segment=2))
        theirs = rpt.Binseg(model="l2", min_size=2, jump=1).fit(x).predict(n_bkps=k)[:-1]
        assert ours == theirs


# -- density ----------------------------------------------------------------------------


def test_union_dedup():
    t = pd.date_range("2000-01-01", periods=100, freq="D").values
    rep = union_and_density([10], [10], t)
    assert rep.union_breaks == [10]
    assert sum(rep.counts) == 1


def test_union_disjoint_sizes():
    t = pd.date_range("2000-01-01", periods=1000, freq="D").values
    rep = union_and_density([10, 200, 400], [50, 300, 600, 900], t)
    assert len(rep.union_breaks) == 7
    assert sum(rep.counts) == 7


def test_calendar_bins_anchored_at_start():
    t = pd.date_range("2001-03-15", periods=800, freq="D").values
    rep = union_and_density([1], [200], t, bin_months=6)
    assert rep.bin_starts[0] == pd.Timestamp("2001-03-15")
    assert rep.bin_starts[1] == pd.Timestamp("2001-09-15")
    assert rep.bin_starts[-1] <= pd.Timestamp(t[-1]) < rep.bin_starts[-1] + pd.DateOffset(months=6)
    # index 200 -> 2001-10-01, second bin
    assert rep.counts[:2] == [1, 1]


def test_density_symmetric_in_inputs():
    t = pd.date_range("2000-01-01", periods=1000, freq="D").values
    a, b = [5, 400, 700], [6, 401, 999]
    assert union_and_density(a, b, t).counts == union_and_density(b, a, t).counts


def test_empty_and_invalid_breaks():
    t = pd.date_range("2000-01-01", periods=50, freq="D").values
    rep = union_and_density([], [], t)
    assert rep.union_breaks == [] and sum(rep.counts) == 0
    with pytest.raises(ValueError):
        union_and_density([0], [], t)
    with pytest.raises(ValueError):
        union_and_density([], [50], t)


def test_detect_breaks_imputes():
    a = np.r_[np.zeros(100), np.full(100, 5.0)]
    a[[3, 150]] = np.nan
    b = np.r_[np.zeros(60), np.full(140, 2.0)]
    t = pd.date_range("2000-01-01", periods=200, freq="D").values
    rep = detect_breaks(Signal(a, t), Signal(b, t), SegmentationConfig(1))
    assert rep.alpha_breaks == [100] and rep.beta_breaks == [60]
    assert rep.union_breaks == [60, 100]
    assert rep.union_dates == [pd.Timestamp(t[60]), pd.Timestamp(t[100])]
