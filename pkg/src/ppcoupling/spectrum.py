"""Transmission synthesis and geometric sweeps.

The feedline transmission of a coupled system driven through the unit-norm
coupling vector ``d`` is modelled as the linear-response resolvent

    S21(w) = 1 - 1j * gamma * d^T (w I - H)^-1 d

with ``H`` the effective matrix. Off resonance it tends to one, the dips sit at
the hybrid eigenfrequencies and their depths follow how strongly each hybrid
mode projects onto the drive. This form is a modelling choice: it is the
minimal one with those properties, not a derived circuit result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from .model import CoupledSystem, effective_matrix

DEFAULT_DOMAIN = (4.0, 18.0)


class SweepError(ValueError):
    """A sweep point failed; ``l_value`` names the offending geometry."""

    def __init__(self, l_value: float, cause: Exception):
        super().__init__(f"at L = {l_value:g} mm: {cause}")
        self.l_value = l_value
        self.cause = cause


@dataclass(frozen=True)
class FrequencyGrid:
    start: float
    stop: float
    points: int

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.stop)):
            raise ValueError("grid bounds must be finite")
        if not self.start < self.stop:
            raise ValueError(f"grid start must be < stop, got {self.start} >= {self.stop}")
        if int(self.points) != self.points or self.points < 2:
            raise ValueError(f"grid needs an integer number of points >= 2, got {self.points}")
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "stop", float(self.stop))
        object.__setattr__(self, "points", int(self.points))

    @cached_property
    def values(self) -> np.ndarray:
        v = np.linspace(self.start, self.stop, self.points)
        v.setflags(write=False)
        return v

    @property
    def step(self) -> float:
        return (self.stop - self.start) / (self.points - 1)

    @classmethod
    def from_values(cls, values: Sequence[float], rtol: float = 1e-6) -> "FrequencyGrid":
        """Recover a grid from sampled frequencies, which must be uniformly spaced."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("need at least 2 frequency samples")
        grid = cls(values[0], values[-1], values.size)
        if np.abs(values - grid.values).max() > rtol * max(grid.step, 1e-300) + 1e-12 * np.abs(
            values
        ).max():
            raise ValueError("frequency samples are not uniformly spaced")
        return grid


@dataclass(frozen=True)
class SpectrumTrace:
    """Complex S21 samples on a grid. Traces read from magnitude-only files carry zero phase."""

    grid: FrequencyGrid
    s21: np.ndarray = field(repr=False)
    sweep_value: float | None = None

    def __post_init__(self):
        s21 = np.array(self.s21, dtype=complex, copy=True)
        if s21.shape != (self.grid.points,):
            raise ValueError(f"expected {self.grid.points} samples, got shape {s21.shape}")
        s21.setflags(write=False)
        object.__setattr__(self, "s21", s21)
        if self.sweep_value is not None:
            object.__setattr__(self, "sweep_value", float(self.sweep_value))

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.values

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.s21)

    @property
    def magnitude_db(self) -> np.ndarray:
        return 20.0 * np.log10(self.magnitude)


@dataclass(frozen=True)
class FixedLaw:
    """Frequency independent of the sweep parameter (the reference resonator)."""

    omega: float
    size_mm: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega <= 0:
            raise ValueError(f"fixed law needs omega > 0, got {self.omega}")

    def __call__(self, l):
        return np.full(np.shape(l), float(self.omega)) if np.ndim(l) else float(self.omega)


@dataclass(frozen=True)
class InverseLaw:
    """``omega(L) = a / L + b`` with a in GHz*mm and b in GHz."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("inverse law coefficients must be finite")

    def __call__(self, l):
        return self.a / np.asarray(l, dtype=float) + self.b if np.ndim(l) else self.a / l + self.b

    def crossing(self, omega: float) -> float:
        """Sweep value at which this law reaches ``omega``."""
        return self.a / (omega - self.b)


Law = Union[FixedLaw, InverseLaw]


@dataclass(frozen=True)
class GeometryMap:
    laws: Mapping[str, Law]
    domain: tuple[float, float] = DEFAULT_DOMAIN

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not (0 < lo < hi):
            raise ValueError(f"domain must satisfy 0 < lo < hi, got {self.domain}")
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "laws", dict(self.laws))
        for label, law in self.laws.items():
            # inverse laws are monotone, so the endpoints bound the range
            if min(law(lo), law(hi)) <= 0:
                raise ValueError(f"law for mode {label!r} is not positive over L in [{lo}, {hi}]")


def map_geometry(gm: GeometryMap, l: float, allow_outside: bool = False) -> dict[str, float]:
    """Bare frequency of every mode at sweep value ``l`` (mm)."""
    lo, hi = gm.domain
    if not np.isfinite(l) or l <= 0:
        raise ValueError(f"L must be finite and > 0, got {l}")
    if not allow_outside and not (lo <= l <= hi):
        raise ValueError(f"L = {l:g} mm is outside the declared domain [{lo:g}, {hi:g}] mm")
    out = {label: float(law(l)) for label, law in gm.laws.items()}
    for label, w in out.items():
        if w <= 0:
            raise ValueError(f"mode {label!r} has non-positive frequency {w:g} at L = {l:g} mm")
    return out


def normalized_drive(drive, n: int) -> np.ndarray:
    if drive is None:
        d = np.ones(n)
    else:
        d = np.asarray(drive, dtype=complex)
        if d.shape != (n,):
            raise ValueError(f"drive must have {n} entries, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("drive contains non-finite entries")
        if np.all(d.imag == 0):
            d = d.real
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("drive vector must not be all zero")
    return d / norm


def transmission(sys: CoupledSystem, frequencies: np.ndarray, drive=None) -> np.ndarray:
    """Complex S21 at arbitrary frequencies (see module docstring)."""
    d = normalized_drive(drive, sys.size)
    if sys.extrinsic_damping <= 0:
        raise ValueError("extrinsic_damping must be > 0 for a driven system")
    h = effective_matrix(sys)
    w = np.asarray(frequencies, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("frequencies must be finite")
    return 1.0 - 1j * sys.extrinsic_damping * _resolvent_form(h, w, d)


def _resolvent_form(h: np.ndarray, w: np.ndarray, d: np.ndarray) -> np.ndarray:
    """d^T (w I - h)^-1 d for every w."""
    return _resolvent_stack(h[None], w, d)[0]


def _resolvent_stack(hs: np.ndarray, w: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Resolvent form for a stack of matrices, shape (K, P).

    Uses the pole expansion over eigenpairs where the eigenvector basis is well
    conditioned; near exceptional points it falls back to one solve per frequency.
    """
    vals, vecs = np.linalg.eig(hs)
    dc = d.astype(complex)
    out = np.empty((hs.shape[0], w.size), dtype=complex)
    finite = np.all(np.isfinite(vecs), axis=(1, 2))
    good = np.zeros(hs.shape[0], dtype=bool)
    good[finite] = np.linalg.cond(vecs[finite]) < _POLE_COND_LIMIT
    if good.any():
        v = vecs[good]
        rhs = np.broadcast_to(dc, (v.shape[0], d.size))[..., None]
        weights = (dc @ v) * np.linalg.solve(v, rhs)[..., 0]
        out[good] = (weights[:, None, :] / (w[None, :, None] - vals[good][:, None, :])).sum(-1)
    eye = np.eye(hs.shape[1])
    for k in np.flatnonzero(~good):
        a = w[:, None, None] * eye - hs[k]
        rhs = np.broadcast_to(dc, (w.size, d.size))[..., None]
        out[k] = np.linalg.solve(a, rhs)[..., 0] @ d
    return out


def transmission_stack(sys: CoupledSystem, bare: np.ndarray, frequencies, drive=None) -> np.ndarray:
    """S21 of ``sys`` re-tuned to each row of bare frequencies ``bare`` (K, N); shape (K, P).

    Equivalent to calling :func:`transmission` on ``sys.with_frequencies(row)`` for
    every row, without building the intermediate systems.
    """
    d = normalized_drive(drive, sys.size)
    if sys.extrinsic_damping <= 0:
        raise ValueError("extrinsic_damping must be > 0 for a driven system")
    bare = np.asarray(bare, dtype=float)
    if bare.ndim != 2 or bare.shape[1] != sys.size:
        raise ValueError(f"bare frequencies must have shape (K, {sys.size})")
    if not np.all(np.isfinite(bare)) or np.any(bare <= 0):
        raise ValueError("bare frequencies must be finite and > 0")
    w = np.asarray(frequencies, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("frequencies must be finite")
    h = effective_matrix(sys)
    hs = np.repeat(h[None], bare.shape[0], axis=0)
    idx = np.arange(sys.size)
    hs[:, idx, idx] = bare + 1j * h.diagonal().imag
    return 1.0 - 1j * sys.extrinsic_damping * _resolvent_stack(hs, w, d)


_POLE_COND_LIMIT = 1e4


def s21(sys: CoupledSystem, grid: FrequencyGrid, drive=None, sweep_value=None) -> SpectrumTrace:
    return SpectrumTrace(grid, transmission(sys, grid.values, drive), sweep_value)


def system_at(sys_template: CoupledSystem, gm: GeometryMap, l: float, allow_outside=False):
    freqs = map_geometry(gm, l, allow_outside)
    missing = [lab for lab in sys_template.labels if lab not in freqs]
    if missing:
        raise ValueError(f"geometry map has no law for modes {missing}")
    return sys_template.with_frequencies([freqs[lab] for lab in sys_template.labels])


@dataclass(frozen=True)
class SweepResult:
    l_values: np.ndarray
    traces: tuple[SpectrumTrace, ...]
    mode_tracks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        l_values = np.array(self.l_values, dtype=float, copy=True)
        traces = tuple(self.traces)
        if l_values.ndim != 1 or l_values.size == 0:
            raise ValueError("a sweep needs at least one L value")
        if len(traces) != l_values.size:
            raise ValueError(f"{len(traces)} traces for {l_values.size} L values")
        if np.any(np.diff(l_values) <= 0):
            raise ValueError("L values must be strictly ascending")
        grid = traces[0].grid
        if any(t.grid != grid for t in traces):
            raise ValueError("all traces of a sweep must share one frequency grid")
        l_values.setflags(write=False)
        object.__setattr__(self, "l_values", l_values)
        object.__setattr__(self, "traces", traces)

    @property
    def grid(self) -> FrequencyGrid:
        return self.traces[0].grid

    def magnitude_map(self) -> np.ndarray:
        """|S21| as an (n_L, n_freq) array, ready for a colormap."""
        return np.vstack([t.magnitude for t in self.traces])

    def subset(self, lmin: float, lmax: float) -> "SweepResult":
        keep = (self.l_values >= lmin) & (self.l_values <= lmax)
        if not keep.any():
            raise ValueError(f"no sweep points in [{lmin:g}, {lmax:g}] mm")
        idx = np.flatnonzero(keep)
        return SweepResult(
            self.l_values[idx],
            tuple(self.traces[k] for k in idx),
            {lab: np.asarray(v)[idx] for lab, v in self.mode_tracks.items()},
        )


def sweep(
    sys_template: CoupledSystem,
    gm: GeometryMap,
    l_values: Sequence[float],
    grid: FrequencyGrid,
    drive=None,
    allow_outside: bool = False,
    workers: int | None = None,
) -> SweepResult:
    """Trace per L with bare frequencies from ``gm``; couplings and dampings held fixed."""
    l_values = np.asarray(l_values, dtype=float)
    if l_values.ndim != 1 or l_values.size == 0:
        raise ValueError("l_values must be a non-empty 1-D sequence")
    if np.any(np.diff(l_values) <= 0):
        raise ValueError("l_values must be strictly ascending")

    bare = np.empty((l_values.size, sys_template.size))
    for k, l in enumerate(l_values):
        try:
            bare[k] = system_at(sys_template, gm, l, allow_outside).bare_frequencies
        except ValueError as exc:
            raise SweepError(float(l), exc) from exc
    w = grid.values

    def chunk(idx):
        try:
            return transmission_stack(sys_template, bare[idx], w, drive)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SweepError(float(l_values[idx[0]]), exc) from exc

    chunks = np.array_split(np.arange(l_values.size), max(1, min(workers or 1, l_values.size)))
    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            rows = np.vstack(list(pool.map(chunk, chunks)))
    else:
        rows = chunk(chunks[0])
    traces = [SpectrumTrace(grid, row, sweep_value=l) for row, l in zip(rows, l_values)]
    tracks = {
        lab: np.array([gm.laws[lab](l) for l in l_values], dtype=float)
        for lab in sys_template.labels
    }
    return SweepResult(l_values, tuple(traces), tracks)
