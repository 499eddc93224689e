"""Recover couplings and dampings from transmission spectra.

Parameters are addressed by name:

    gamma                   shared extrinsic damping
    damping.<X>             intrinsic damping of mode X
    omega.<X>               bare frequency of mode X (fixed-law modes, or any mode
                            when no geometry map is attached)
    law.<X>.a, law.<X>.b    inverse-law coefficients of mode X
    coupling.<X>-<Y>.re     coherent part of the X-Y coupling
    coupling.<X>-<Y>.im     dissipative part of the X-Y coupling
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .analysis import find_peaks
from .model import CoupledSystem, Mode
from .spectrum import (
    FixedLaw,
    FrequencyGrid,
    GeometryMap,
    InverseLaw,
    SpectrumTrace,
    SweepResult,
    transmission,
    transmission_stack,
)

TRACE = "trace"
BRANCH = "branch"
NONNEGATIVE_PREFIXES = ("gamma", "damping.", "coupling.")


def _pair_name(a: str, b: str) -> str:
    return f"coupling.{a}-{b}"


@dataclass(frozen=True)
class ParameterModel:
    """A coupled system (plus optional geometry map and drive) exposed as named parameters."""

    system: CoupledSystem
    geometry: GeometryMap | None = None
    drive: tuple | None = None

    def values(self) -> dict[str, float]:
        sys = self.system
        out = {"gamma": sys.extrinsic_damping}
        for m in sys.modes:
            out[f"damping.{m.label}"] = m.intrinsic_damping
        for m in sys.modes:
            law = self.geometry.laws.get(m.label) if self.geometry else None
            if law is None:
                out[f"omega.{m.label}"] = m.omega
            elif isinstance(law, FixedLaw):
                out[f"omega.{m.label}"] = float(law.omega)
            else:
                out[f"law.{m.label}.a"] = float(law.a)
                out[f"law.{m.label}.b"] = float(law.b)
        labels = sys.labels
        for i in range(sys.size):
            for j in range(i + 1, sys.size):
                c = sys.coupling[i, j]
                out[_pair_name(labels[i], labels[j]) + ".re"] = float(c.real)
                out[_pair_name(labels[i], labels[j]) + ".im"] = float(c.imag)
        return out

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.values())

    def build(self, params: Mapping[str, float]) -> "ParameterModel":
        """A copy of this model with every parameter taken from ``params``."""
        missing = set(self.names) - set(params)
        unknown = set(params) - set(self.names)
        if missing or unknown:
            raise ValueError(
                f"parameter set mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}"
            )
        sys = self.system
        labels = sys.labels
        laws = dict(self.geometry.laws) if self.geometry else {}
        modes = []
        for m in sys.modes:
            law = laws.get(m.label)
            if law is None or isinstance(law, FixedLaw):
                omega = params[f"omega.{m.label}"]
                if law is not None:
                    laws[m.label] = FixedLaw(omega, law.size_mm)
            else:
                laws[m.label] = InverseLaw(params[f"law.{m.label}.a"], params[f"law.{m.label}.b"])
                omega = m.omega
            modes.append(Mode(m.label, omega, params[f"damping.{m.label}"]))
        coupling = np.zeros((sys.size, sys.size), dtype=complex)
        for i in range(sys.size):
            for j in range(i + 1, sys.size):
                name = _pair_name(labels[i], labels[j])
                coupling[i, j] = coupling[j, i] = params[name + ".re"] + 1j * params[name + ".im"]
        geometry = GeometryMap(laws, self.geometry.domain) if self.geometry else None
        return ParameterModel(
            CoupledSystem(tuple(modes), params["gamma"], coupling), geometry, self.drive
        )

    def system_for(self, trace: SpectrumTrace) -> CoupledSystem:
        if self.geometry is None or trace.sweep_value is None:
            return self.system
        return self.system.with_frequencies(self.bare_for(trace.sweep_value))

    def bare_for(self, l: float | None) -> np.ndarray:
        if self.geometry is None or l is None:
            return self.system.bare_frequencies
        return np.array([float(self.geometry.laws[lab](l)) for lab in self.system.labels])

    def trace_for(self, trace: SpectrumTrace) -> SpectrumTrace:
        sys = self.system_for(trace)
        return SpectrumTrace(
            trace.grid, transmission(sys, trace.frequencies, self.drive), trace.sweep_value
        )

    def magnitudes_for(self, traces: Sequence[SpectrumTrace]) -> list[np.ndarray]:
        """Model |S21| for each data trace, batched over traces sharing a grid."""
        out: list[np.ndarray | None] = [None] * len(traces)
        groups: dict[FrequencyGrid, list[int]] = {}
        for k, t in enumerate(traces):
            groups.setdefault(t.grid, []).append(k)
        for grid, idx in groups.items():
            bare = np.vstack([self.bare_for(traces[k].sweep_value) for k in idx])
            mags = np.abs(transmission_stack(self.system, bare, grid.values, self.drive))
            for k, m in zip(idx, mags):
                out[k] = m
        return out


@dataclass(frozen=True)
class FitParameter:
    name: str
    initial: float
    lower: float
    upper: float

    def __post_init__(self):
        vals = (self.initial, self.lower, self.upper)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"{self.name}: bounds and initial value must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be < upper bound")
        if not self.lower <= self.initial <= self.upper:
            raise ValueError(f"{self.name}: initial value {self.initial} outside bounds")
        if self.name.startswith(NONNEGATIVE_PREFIXES) and not self.name.endswith(".re"):
            if self.lower < 0:
                raise ValueError(f"{self.name}: damping-like parameters need lower bound >= 0")


@dataclass(frozen=True)
class FitSpec:
    free: tuple[FitParameter, ...]
    fixed: Mapping[str, float] = field(default_factory=dict)
    objective: str = TRACE
    starts: int = 8
    seed: int = 0
    min_depth: float = 0.01
    polish: bool = True
    max_cycles: int = 20

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        object.__setattr__(self, "fixed", dict(self.fixed))
        if not self.free:
            raise ValueError("at least one free parameter is required")
        names = [p.name for p in self.free]
        if len(set(names)) != len(names):
            raise ValueError("duplicate free parameter names")
        clash = set(names) & set(self.fixed)
        if clash:
            raise ValueError(f"parameters both free and fixed: {sorted(clash)}")
        if self.objective not in (TRACE, BRANCH):
            raise ValueError(f"objective must be {TRACE!r} or {BRANCH!r}, got {self.objective!r}")
        if self.starts < 1:
            raise ValueError("need at least one start")
        for name, v in self.fixed.items():
            if name.startswith(NONNEGATIVE_PREFIXES) and not name.endswith(".re") and v < 0:
                raise ValueError(f"fixed parameter {name} must be >= 0")

    @classmethod
    def for_model(cls, model: ParameterModel, free: Sequence[FitParameter], **kw) -> "FitSpec":
        """Free the given parameters and fix every other model parameter at its current value."""
        free_names = {p.name for p in free}
        fixed = {k: v for k, v in model.values().items() if k not in free_names}
        return cls(tuple(free), fixed, **kw)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.free)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.free])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.free])


@dataclass
class FitResult:
    values: dict[str, float]
    free: tuple[str, ...]
    residual_rms: float
    iterations: int
    converged: bool
    sensitivity: dict[str, float]
    start_residuals: list[float]
    best_start: int
    objective: str
    n_residuals: int

    def free_values(self) -> dict[str, float]:
        return {k: self.values[k] for k in self.free}


def _traces(data) -> list[SpectrumTrace]:
    traces = list(data.traces) if isinstance(data, SweepResult) else list(data)
    if not traces:
        raise ValueError("no data traces")
    return traces


def _branch_residuals(model_traces, data_peaks, min_depth, penalty):
    out = []
    for mt, dp in zip(model_traces, data_peaks):
        mp = np.array([p.frequency for p in find_peaks(mt, min_depth)])
        for p in dp:
            out.append(np.min(np.abs(mp - p.frequency)) if mp.size else penalty)
    return np.array(out, dtype=float)


def objective(
    params: Mapping[str, float],
    data,
    model: ParameterModel,
    mode: str = TRACE,
    grid: FrequencyGrid | None = None,
    min_depth: float = 0.01,
    _data_peaks=None,
) -> np.ndarray:
    """Residual vector between the model at ``params`` and ``data``.

    ``trace`` mode concatenates |S21|_model - |S21|_data over every sample;
    ``branch`` mode gives, per data dip, the distance to the nearest model dip.
    """
    traces = _traces(data)
    if grid is not None:
        for t in traces:
            if t.grid != grid:
                raise ValueError(f"data grid {t.grid} does not match model grid {grid}")
    built = model.build(params)
    if mode == TRACE:
        mags = built.magnitudes_for(traces)
        return np.concatenate([m - t.magnitude for m, t in zip(mags, traces)])
    if mode == BRANCH:
        model_traces = [
            SpectrumTrace(t.grid, m, t.sweep_value)
            for t, m in zip(traces, built.magnitudes_for(traces))
        ]
        data_peaks = _data_peaks or [find_peaks(t, min_depth) for t in traces]
        span = traces[0].grid.stop - traces[0].grid.start
        return _branch_residuals(model_traces, data_peaks, min_depth, span)
    raise ValueError(f"unknown objective mode {mode!r}")


class _Problem:
    def __init__(self, spec: FitSpec, data, model: ParameterModel):
        self.spec = spec
        self.traces = _traces(data)
        self.model = model
        self.lo, self.hi = spec.lower, spec.upper
        self.data_peaks = None
        if spec.objective == BRANCH:
            self.data_peaks = [find_peaks(t, spec.min_depth) for t in self.traces]
            self.n_residuals = sum(len(p) for p in self.data_peaks)
        else:
            self.n_residuals = sum(t.grid.points for t in self.traces)

    def params(self, x: np.ndarray) -> dict[str, float]:
        p = dict(self.spec.fixed)
        p.update(zip(self.spec.names, (float(v) for v in x)))
        return p

    def to_x(self, u):
        return self.lo + np.clip(u, 0.0, 1.0) * (self.hi - self.lo)

    def residuals(self, x):
        return objective(
            self.params(x), self.traces, self.model, self.spec.objective,
            min_depth=self.spec.min_depth, _data_peaks=self.data_peaks,
        )

    def cost(self, u):
        try:
            r = self.residuals(self.to_x(u))
        except (ValueError, np.linalg.LinAlgError):
            return np.inf
        return float(r @ r)


def _simplex(
    problem: _Problem,
    u0: np.ndarray,
    max_cycles: int = 1,
    xatol: float = 1e-9,
    maxfev: int = 300,
    size: float = 0.05,
):
    """Bounded Nelder-Mead in unit-box coordinates, restarted up to ``max_cycles`` times.

    ``size`` is the edge of the initial simplex and ``maxfev`` the evaluation
    budget per free parameter and cycle. Converged once a full cycle improves
    the cost by less than 1e-10 relative (or the cost sits at the floating-point
    floor).
    """
    u = np.clip(u0, 0.0, 1.0)
    cost = problem.cost(u)
    iterations = 0
    converged = False
    n = u.size
    for _ in range(max_cycles):
        simplex = np.vstack([u] + [u + size * np.eye(n)[k] * (1 if u[k] + size <= 1 else -1) for k in range(n)])
        res = optimize.minimize(
            problem.cost, u, method="Nelder-Mead", bounds=[(0.0, 1.0)] * n,
            options={
                "xatol": xatol, "fatol": 0.0, "maxfev": maxfev * n,
                "adaptive": n > 3, "initial_simplex": simplex,
            },
        )
        iterations += int(res.nit)
        improvement = cost - res.fun
        if res.fun <= cost:
            u, cost_new = np.clip(res.x, 0.0, 1.0), float(res.fun)
        else:
            cost_new = cost
        done = improvement <= 1e-10 * abs(cost) + _COST_FLOOR * problem.n_residuals
        cost = cost_new
        if done:
            converged = True
            break
    return u, cost, iterations, converged


_COST_FLOOR = 1e-28


def fit(spec: FitSpec, data, model: ParameterModel, workers: int | None = None) -> FitResult:
    """Bounded multi-start simplex fit of the free parameters in ``spec``.

    Start 0 is the declared initial point; the others are drawn uniformly within
    the bounds from ``spec.seed``. In trace mode the best simplex result is
    polished with a bounded finite-difference least-squares step.
    """
    problem = _Problem(spec, data, model)
    traces = problem.traces
    mags = [t.magnitude for t in traces]
    if all(np.ptp(m) == 0 for m in mags):
        raise ValueError("data traces are constant; nothing to fit")
    n_points = sum(m.size for m in mags) if spec.objective == TRACE else sum(
        len(p) for p in problem.data_peaks
    )
    if n_points < 3 * len(spec.free):
        raise ValueError(
            f"{n_points} data points cannot constrain {len(spec.free)} free parameters "
            f"(need at least {3 * len(spec.free)})"
        )
    span = problem.hi - problem.lo
    rng = np.random.default_rng(spec.seed)
    u_init = (np.array([p.initial for p in spec.free]) - problem.lo) / span
    starts = [u_init] + [rng.uniform(0.0, 1.0, len(spec.free)) for _ in range(spec.starts - 1)]

    def run(u0):
        # exploratory pass; the incumbent is refined below
        return _simplex(problem, u0, xatol=1e-6, maxfev=100)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(u0) for u0 in starts]
    start_costs = [r[1] for r in runs]
    best = int(np.argmin(start_costs))  # argmin keeps the lowest index on ties
    u, cost, iterations, converged = runs[best]
    x = problem.to_x(u)

    if spec.polish and spec.objective == TRACE:
        ls = optimize.least_squares(
            problem.residuals, x, bounds=(problem.lo, problem.hi), method="trf",
            x_scale=span, xtol=1e-12, ftol=1e-12, gtol=1e-12,
        )
        iterations += int(ls.nfev)
        if float(ls.fun @ ls.fun) <= cost:
            x = np.clip(ls.x, problem.lo, problem.hi)
            cost = float(ls.fun @ ls.fun)
    # stationarity check: further simplex cycles from the incumbent
    u, cost_final, more, converged = _simplex(
        problem, (x - problem.lo) / span, spec.max_cycles, xatol=1e-7,
        maxfev=100 if spec.polish else 300, size=1e-4 if spec.polish else 0.05,
    )
    iterations += more
    if cost_final <= cost:
        x = problem.to_x(u)

    resid = problem.residuals(x)
    n_res = resid.size
    values = problem.params(x)
    for name, v in spec.fixed.items():
        values[name] = v
    return FitResult(
        values=values,
        free=spec.names,
        residual_rms=float(np.sqrt(resid @ resid / max(n_res, 1))),
        iterations=iterations,
        converged=bool(converged),
        sensitivity=_curvature(problem, x),
        start_residuals=[float(np.sqrt(c / max(n_res, 1))) for c in start_costs],
        best_start=best,
        objective=spec.objective,
        n_residuals=n_res,
    )


def _curvature(problem: _Problem, x: np.ndarray) -> dict[str, float]:
    """Diagonal of the Gauss-Newton curvature J^T J from central differences."""
    out = {}
    span = problem.hi - problem.lo
    for k, name in enumerate(problem.spec.names):
        h = 1e-6 * span[k]
        xp, xm = x.copy(), x.copy()
        xp[k] = min(x[k] + h, problem.hi[k])
        xm[k] = max(x[k] - h, problem.lo[k])
        try:
            col = (problem.residuals(xp) - problem.residuals(xm)) / (xp[k] - xm[k])
            out[name] = float(col @ col)
        except (ValueError, np.linalg.LinAlgError):
            out[name] = float("nan")
    return out


def overlay(result: FitResult, data, model: ParameterModel) -> list[SpectrumTrace]:
    """Best-fit model trace for every data trace, on the data's own grid."""
    built = model.build(result.values)
    return [built.trace_for(t) for t in _traces(data)]
