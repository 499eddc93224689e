"""Dip extraction, branch tracking across a sweep, and crossing classification."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .spectrum import SpectrumTrace, SweepResult

REPULSION = "repulsion"
ATTRACTION = "attraction"
CROSSING = "crossing"


class InsufficientBranchesError(ValueError):
    pass


@dataclass(frozen=True)
class Peak:
    frequency: float
    depth: float
    width: float


@dataclass(frozen=True)
class BranchSample:
    l: float
    frequency: float
    depth: float
    width: float
    shared: bool = False  # dip also claimed by another branch (unresolved merge)


@dataclass
class BranchSet:
    branches: list[list[BranchSample]]
    max_jump: float
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.branches)

    def frequencies(self, index: int) -> dict[float, float]:
        return {s.l: s.frequency for s in self.branches[index]}


@dataclass(frozen=True)
class CrossingReport:
    region: tuple[float, float]
    classification: str
    gap: float
    coupling_estimate: float
    l_at_gap: float
    branch_pair: tuple[int, int]
    merged_points: int
    gap_threshold: float
    merge_tolerance: float
    mean_width: float


def find_peaks(trace: SpectrumTrace, min_depth: float = 0.01) -> list[Peak]:
    """Transmission dips deeper than ``min_depth`` below the unit baseline.

    Positions and minimum values are refined with a three-point parabola; widths
    are the full width at half prominence.
    """
    if not 0 < min_depth < 1:
        raise ValueError(f"min_depth must be in (0, 1), got {min_depth}")
    mag = trace.magnitude
    if mag.size < 5:
        raise ValueError(f"need at least 5 samples to find peaks, got {mag.size}")
    depth = 1.0 - mag
    idx, _ = signal.find_peaks(depth, height=min_depth)
    if idx.size == 0:
        return []
    widths = signal.peak_widths(depth, idx, rel_height=0.5)[0] * trace.grid.step
    freqs = trace.frequencies
    peaks = []
    for i, width in zip(idx, widths):
        f, m = freqs[i], mag[i]
        if 0 < i < mag.size - 1:
            y0, y1, y2 = mag[i - 1], mag[i], mag[i + 1]
            curv = y0 - 2 * y1 + y2
            if curv > 0:
                shift = 0.5 * (y0 - y2) / curv
                f = freqs[i] + shift * trace.grid.step
                m = y1 - 0.25 * (y0 - y2) * shift
        d = float(np.clip(1.0 - m, 0.0, 1.0))
        peaks.append(Peak(float(f), d, float(max(width, trace.grid.step * 1e-3))))
    return sorted(peaks, key=lambda p: p.frequency)


def track_branches(
    sweep: SweepResult,
    min_depth: float = 0.01,
    max_jump: float | None = None,
    peaks: Sequence[Sequence[Peak]] | None = None,
) -> BranchSet:
    """Link dips across adjacent sweep values into continuous branches.

    Each live branch takes the nearest unclaimed dip within ``max_jump``
    (default: five times the median dip width). Ties go to the lower-frequency
    dip, then to the lower branch index. A branch left without a dip may share
    an already claimed one within ``max_jump``: that is how two branches that
    merge into a single unresolved dip are represented. Dips left over start
    new branches.
    """
    if sweep.l_values.size < 3:
        raise ValueError("branch tracking needs at least 3 sweep values")
    if peaks is None:
        peaks = [find_peaks(t, min_depth) for t in sweep.traces]
    all_widths = [p.width for row in peaks for p in row]
    if max_jump is None:
        max_jump = 5.0 * float(np.median(all_widths)) if all_widths else 0.0
    ambiguity = 0.1 * max_jump
    branches: list[list[BranchSample]] = []
    warnings: list[str] = []
    live: list[int] = []

    for l, row in zip(sweep.l_values, peaks):
        l = float(l)
        row = sorted(row, key=lambda p: p.frequency)
        candidates = []
        for b in live:
            last = branches[b][-1].frequency
            near = [(abs(p.frequency - last), k) for k, p in enumerate(row)]
            near = sorted(c for c in near if c[0] <= max_jump)
            if len(near) >= 2 and near[1][0] - near[0][0] < ambiguity:
                warnings.append(
                    f"L={l:g}: branch {b} has ambiguous continuations at "
                    f"{row[near[0][1]].frequency:.6g} and {row[near[1][1]].frequency:.6g} GHz"
                )
            candidates.extend((dist, row[k].frequency, b, k) for dist, k in near)
        candidates.sort()
        owner: dict[int, int] = {}
        matched: dict[int, int] = {}
        for dist, _, b, k in candidates:
            if b in matched or k in owner:
                continue
            matched[b] = k
            owner[k] = b
        next_live = []
        for b in live:
            if b in matched:
                p = row[matched[b]]
                branches[b].append(BranchSample(l, p.frequency, p.depth, p.width))
                next_live.append(b)
                continue
            last = branches[b][-1].frequency
            claimed = sorted(
                (abs(row[k].frequency - last), row[k].frequency, k)
                for k in owner
                if abs(row[k].frequency - last) <= max_jump
            )
            if claimed:
                k = claimed[0][2]
                p = row[k]
                branches[b].append(BranchSample(l, p.frequency, p.depth, p.width, shared=True))
                # the owner's sample at this L is part of the same unresolved dip
                o = owner[k]
                s = branches[o][-1]
                branches[o][-1] = BranchSample(s.l, s.frequency, s.depth, s.width, shared=True)
                next_live.append(b)
        for k, p in enumerate(row):
            if k not in owner:
                branches.append([BranchSample(l, p.frequency, p.depth, p.width)])
                next_live.append(len(branches) - 1)
        live = sorted(next_live)
    return BranchSet(branches, float(max_jump), warnings)


def _refined_min(ls: np.ndarray, seps: np.ndarray, k: int) -> tuple[float, float]:
    """Minimum of the separation refined by a parabola through squared separations.

    Near an anticrossing the squared gap is quadratic in the detuning, so three
    samples around the discrete minimum pin the true minimum.
    """
    gap, at = float(seps[k]), float(ls[k])
    if 0 < k < len(seps) - 1:
        x = ls[k - 1 : k + 2]
        y = seps[k - 1 : k + 2] ** 2
        a, b, c = np.polyfit(x - x[1], y, 2)
        if a > 0:
            xv = -b / (2 * a)
            if x[0] - x[1] <= xv <= x[2] - x[1]:
                gap = float(np.sqrt(max(c - b * b / (4 * a), 0.0)))
                at = float(x[1] + xv)
    return min(gap, float(seps[k])), at


def classify_crossing(
    branches: BranchSet,
    region: tuple[float, float],
    gap_factor: float = 3.0,
    merge_factor: float = 0.5,
) -> CrossingReport:
    """Classify the interaction of the closest pair of branches inside ``region``.

    Thresholds scale with the mean dip width of that pair: a minimum gap above
    ``gap_factor`` widths without merging is repulsion; separations within
    ``merge_factor`` widths at two or more consecutive sweep values is
    attraction; anything else is a plain crossing.
    """
    lmin, lmax = (float(v) for v in region)
    if not lmin < lmax:
        raise ValueError(f"region must satisfy lmin < lmax, got {region}")
    inside = [
        [s for s in br if lmin <= s.l <= lmax] for br in branches.branches
    ]
    l_points = sorted({s.l for br in inside for s in br})
    if len(l_points) < 5:
        raise ValueError(f"region [{lmin:g}, {lmax:g}] holds {len(l_points)} sweep points, need >= 5")
    present = [k for k, br in enumerate(inside) if br]
    if len(present) < 2:
        raise InsufficientBranchesError(
            f"region [{lmin:g}, {lmax:g}] is crossed by {len(present)} branch(es); need at least 2"
        )

    best = None
    for i, j in itertools.combinations(present, 2):
        fi = {s.l: s for s in inside[i]}
        fj = {s.l: s for s in inside[j]}
        common = sorted(set(fi) & set(fj))
        if len(common) < 3:
            # a minimum gap cannot be located from fewer shared samples
            continue
        seps = np.array([abs(fi[l].frequency - fj[l].frequency) for l in common])
        key = (float(seps.min()), i, j)
        if best is None or key < best[0]:
            best = (key, common, seps, fi, fj)
    if best is None:
        raise InsufficientBranchesError(
            f"no two branches share 3 or more sweep values in [{lmin:g}, {lmax:g}]; "
            "the sweep step may be too coarse to track the branches"
        )
    (_, i, j), common, seps, fi, fj = best
    widths = [s.width for s in inside[i] + inside[j]]
    mean_width = float(np.mean(widths))
    gap_threshold = gap_factor * mean_width
    merge_tol = merge_factor * mean_width

    ls = np.array(common)
    # a merge only counts across adjacent sweep values
    all_l = np.array(l_points)
    pos = np.searchsorted(all_l, ls)
    merged = seps <= merge_tol
    run = best_run = 0
    for k in range(len(ls)):
        if merged[k] and k > 0 and merged[k - 1] and pos[k] == pos[k - 1] + 1:
            run += 1
        else:
            run = 1 if merged[k] else 0
        best_run = max(best_run, run)

    gap, at = _refined_min(ls, seps, int(np.argmin(seps)))
    if best_run >= 2:
        kind = ATTRACTION
    elif gap > gap_threshold:
        kind = REPULSION
    else:
        kind = CROSSING
    return CrossingReport(
        region=(lmin, lmax),
        classification=kind,
        gap=gap,
        coupling_estimate=gap / 2.0,
        l_at_gap=at,
        branch_pair=(i, j),
        merged_points=int(best_run),
        gap_threshold=gap_threshold,
        merge_tolerance=merge_tol,
        mean_width=mean_width,
    )
