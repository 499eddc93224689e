import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppcoupling.analysis import (
    ATTRACTION,
    CROSSING,
    REPULSION,
    InsufficientBranchesError,
    Peak,
    classify_crossing,
    find_peaks,
    track_branches,
)
from ppcoupling.model import CoupledSystem, Mode
from ppcoupling.spectrum import (
    FixedLaw,
    FrequencyGrid,
    GeometryMap,
    InverseLaw,
    SpectrumTrace,
    SweepResult,
    s21,
    sweep,
)


def lorentz_trace(centers, depth=0.5, hwhm=0.02, grid=FrequencyGrid(4.0, 6.0, 2001), l=None):
    w = grid.values
    mag = np.ones_like(w)
    for c in centers:
        mag -= depth / (1 + ((w - c) / hwhm) ** 2)
    return SpectrumTrace(grid, mag, l)


def crossing_sweep(delta, ls, grid, drive=None, damping=0.01, gamma=0.01):
    sys = CoupledSystem.from_pairs(
        [Mode("A", 5.0, damping), Mode("B", 5.0, damping)], gamma, {("A", "B"): delta}
    )
    gm = GeometryMap({"A": FixedLaw(5.0, 8.0), "B": InverseLaw(40.0, 0.0)})
    return sweep(sys, gm, ls, grid, drive)


# --- find_peaks -------------------------------------------------------------

def test_find_single_lorentzian_peak():
    peaks = find_peaks(lorentz_trace([5.0123]))
    assert len(peaks) == 1
    p = peaks[0]
    assert p.frequency == pytest.approx(5.0123, abs=1e-4)
    assert p.depth == pytest.approx(0.5, abs=1e-3)
    assert p.width == pytest.approx(0.04, rel=0.02)


def test_find_two_peaks_sorted():
    peaks = find_peaks(lorentz_trace([5.5, 4.5]))
    assert [round(p.frequency, 3) for p in peaks] == [4.5, 5.5]


def test_min_depth_filters_shallow_dips():
    assert find_peaks(lorentz_trace([5.0], depth=0.005)) == []
    assert len(find_peaks(lorentz_trace([5.0], depth=0.005), min_depth=0.001)) == 1


def test_find_peaks_validation():
    with pytest.raises(ValueError):
        find_peaks(lorentz_trace([5.0]), min_depth=0.0)
    with pytest.raises(ValueError, match="5 samples"):
        find_peaks(SpectrumTrace(FrequencyGrid(1, 2, 4), np.ones(4)))


@settings(max_examples=100, deadline=None)
@given(st.floats(4.3, 5.7), st.floats(0.05, 0.9), st.floats(0.005, 0.05))
def test_property_peak_recovery(center, depth, hwhm):
    [p] = find_peaks(lorentz_trace([center], depth, hwhm))
    step = 0.001
    assert abs(p.frequency - center) < 0.2 * step
    assert p.width == pytest.approx(2 * hwhm, rel=0.05, abs=2 * step)


# --- branch tracking ----------------------------------------------------------

def test_track_separate_lines():
    grid = FrequencyGrid(4.0, 6.0, 2001)
    ls = np.arange(5.0)
    traces = [lorentz_trace([4.5 + 0.01 * k, 5.5 - 0.01 * k], grid=grid, l=l) for k, l in enumerate(ls)]
    bs = track_branches(SweepResult(ls, traces))
    assert len(bs) == 2
    assert bs.frequencies(0)[4.0] == pytest.approx(4.54, abs=1e-4)
    assert bs.frequencies(1)[4.0] == pytest.approx(5.46, abs=1e-4)
    assert not bs.warnings


def test_track_appearing_dip_starts_new_branch():
    grid = FrequencyGrid(4.0, 6.0, 2001)
    ls = np.arange(4.0)
    traces = [lorentz_trace([4.5] + ([5.5] if l >= 2 else []), grid=grid, l=l) for l in ls]
    bs = track_branches(SweepResult(ls, traces))
    assert [len(b) for b in bs.branches] == [4, 2]


def test_track_merge_marks_shared_samples():
    ls = np.arange(4.0)
    peaks = [
        [Peak(4.9, 0.3, 0.05), Peak(5.1, 0.3, 0.05)],
        [Peak(5.0, 0.5, 0.05)],
        [Peak(5.0, 0.5, 0.05)],
        [Peak(4.9, 0.3, 0.05), Peak(5.1, 0.3, 0.05)],
    ]
    grid = FrequencyGrid(4.0, 6.0, 11)
    sw = SweepResult(ls, [SpectrumTrace(grid, np.ones(11), l) for l in ls])
    bs = track_branches(sw, peaks=peaks)
    assert len(bs) == 2
    for b in bs.branches:
        assert [s.shared for s in b] == [False, True, True, False]


def test_track_ambiguity_warning():
    ls = np.arange(3.0)
    peaks = [[Peak(5.0, 0.3, 0.1)], [Peak(4.9, 0.3, 0.1), Peak(5.1001, 0.3, 0.1)], [Peak(5.0, 0.3, 0.1)]]
    grid = FrequencyGrid(4.0, 6.0, 11)
    sw = SweepResult(ls, [SpectrumTrace(grid, np.ones(11), l) for l in ls])
    bs = track_branches(sw, peaks=peaks)
    assert any("ambiguous" in w for w in bs.warnings)
    # the tie goes to the lower-frequency dip
    assert bs.frequencies(0)[1.0] == 4.9


def test_track_needs_three_sweep_values():
    grid = FrequencyGrid(4.0, 6.0, 11)
    sw = SweepResult([1.0, 2.0], [SpectrumTrace(grid, np.ones(11), l) for l in (1.0, 2.0)])
    with pytest.raises(ValueError, match="3 sweep"):
        track_branches(sw)


def test_zero_coupling_tracks_follow_bare_laws():
    grid = FrequencyGrid(3.0, 8.0, 2001)
    ls = np.linspace(5.0, 12.0, 15)
    sw = crossing_sweep(0.0, ls, grid)
    bs = track_branches(sw)
    for branch in bs.branches:
        for s in branch:
            if s.shared:
                continue
            bare = min(abs(s.frequency - 5.0), abs(s.frequency - 40.0 / s.l))
            assert bare < grid.step


# --- classification -----------------------------------------------------------

@pytest.mark.parametrize("delta", [0.05, 0.1, 0.3])
def test_coherent_coupling_is_repulsion(delta):
    ls = np.linspace(8 - 6 * delta / 0.625, 8 + 6 * delta / 0.625, 31)
    grid = FrequencyGrid(5 - 10 * delta, 5 + 10 * delta, 1001)
    rep = classify_crossing(track_branches(crossing_sweep(delta, ls, grid, drive=(1.0, 0.0), damping=delta / 20,
                                                          gamma=delta / 20)), (ls[0], ls[-1]))
    assert rep.classification == REPULSION
    assert rep.coupling_estimate == pytest.approx(delta, rel=0.05)
    assert rep.l_at_gap == pytest.approx(8.0, abs=ls[1] - ls[0])


def test_dissipative_coupling_is_attraction():
    ls = np.linspace(7.0, 9.0, 41)
    grid = FrequencyGrid(4.0, 6.0, 2001)
    rep = classify_crossing(track_branches(crossing_sweep(0.03j, ls, grid, damping=0.02, gamma=0.02)), (7.0, 9.0))
    assert rep.classification == ATTRACTION
    assert rep.merged_points >= 2


def test_uncoupled_coarse_crossing_is_crossing():
    # coarse steps: the bare lines come within a merge tolerance at one sweep value only
    ls = 7.03 + 0.08 * np.arange(26)
    sw = crossing_sweep(0.0, ls, FrequencyGrid(4.0, 6.0, 2001), damping=0.005, gamma=0.005)
    rep = classify_crossing(track_branches(sw), (ls[0], ls[-1]))
    assert rep.classification == CROSSING
    assert rep.merged_points <= 1


def test_untrackable_sweep_is_rejected():
    # the tuned mode moves several widths per step, so no pair of branches persists
    sys = CoupledSystem.from_pairs([Mode("A", 5.0, 0.005), Mode("B", 5.0, 0.005)], 0.005)
    gm = GeometryMap({"A": FixedLaw(5.0), "B": InverseLaw(100.0, -15.0)}, (4.0, 6.0))
    ls = np.linspace(4.5, 5.5, 11) + 0.03
    sw = sweep(sys, gm, ls, FrequencyGrid(3.0, 8.0, 5001))
    with pytest.raises(InsufficientBranchesError, match="too coarse"):
        classify_crossing(track_branches(sw), (ls[0], ls[-1]))


def test_classify_preconditions():
    grid = FrequencyGrid(4.0, 6.0, 2001)
    ls = np.arange(6.0)
    one = SweepResult(ls, [lorentz_trace([5.0], grid=grid, l=l) for l in ls])
    with pytest.raises(InsufficientBranchesError):
        classify_crossing(track_branches(one), (0.0, 5.0))
    two = SweepResult(ls, [lorentz_trace([4.5, 5.5], grid=grid, l=l) for l in ls])
    with pytest.raises(ValueError, match=">= 5"):
        classify_crossing(track_branches(two), (0.0, 2.0))
    with pytest.raises(ValueError):
        classify_crossing(track_branches(two), (3.0, 1.0))


def test_thresholds_scale_with_width():
    grid = FrequencyGrid(4.0, 6.0, 2001)
    ls = np.arange(6.0)
    two = SweepResult(ls, [lorentz_trace([4.9, 5.1], hwhm=0.02, grid=grid, l=l) for l in ls])
    rep = classify_crossing(track_branches(two), (0.0, 5.0))
    assert rep.mean_width == pytest.approx(0.04, rel=0.05)
    assert rep.gap_threshold == pytest.approx(3 * rep.mean_width)
    assert rep.merge_tolerance == pytest.approx(0.5 * rep.mean_width)
    assert rep.classification == REPULSION


def test_preset_regions():
    from ppcoupling.config import load_preset

    cfg = load_preset("paper-fig4")
    sw = sweep(cfg.system(), cfg.geometry(), cfg.l_values(), cfg.grid, cfg.drive_vector())
    bs = track_branches(sw)
    assert classify_crossing(bs, (6.0, 9.0)).classification == REPULSION
    assert classify_crossing(bs, (13.0, 16.0)).classification == ATTRACTION
    # three dips near degeneracy of A and B
    assert len(find_peaks(s21(cfg.system(8.0), cfg.grid, cfg.drive_vector(), 8.0))) == 3
