"""File formats: long-format sweep CSV, branch tracks, fit overlays, Touchstone
input and YAML reports.

Sweep CSV is one row per (L, frequency) sample with the header
``L_mm,freq_GHz,mag`` (linear) or ``L_mm,freq_GHz,mag_dB``. The magnitude scale
is always declared by the caller through :class:`SweepCsvLayout`.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .analysis import BranchSet, CrossingReport
from .fit import FitResult
from .spectrum import FrequencyGrid, SpectrumTrace, SweepResult

LINEAR = "linear"
DB = "dB"
_FMT = ".10g"  # 10 significant digits keep write/read round-trips within 1e-9


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class SweepCsvLayout:
    scale: str = LINEAR
    header: bool = True
    delimiter: str = ","

    def __post_init__(self):
        if self.scale not in (LINEAR, DB):
            raise ValueError(f"magnitude scale must be {LINEAR!r} or {DB!r}, got {self.scale!r}")
        if len(self.delimiter) != 1 or self.delimiter in ".-+eE0123456789":
            raise ValueError(f"invalid delimiter {self.delimiter!r}")

    @property
    def columns(self) -> tuple[str, str, str]:
        return ("L_mm", "freq_GHz", "mag" if self.scale == LINEAR else "mag_dB")


def _fmt(x: float) -> str:
    return format(float(x), _FMT)


def _write_rows(path, header: Sequence[str] | None, rows, delimiter=",") -> None:
    lines = []
    if header:
        lines.append(delimiter.join(header))
    lines.extend(delimiter.join(row) for row in rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_sweep_csv(path, layout: SweepCsvLayout = SweepCsvLayout()) -> SweepResult:
    """Read a long-format sweep. Traces carry |S21| with zero phase."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    groups: dict[float, list[tuple[float, float]]] = {}
    with fh:
        reader = csv.reader(fh, delimiter=layout.delimiter)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            cells = [c.strip() for c in row]
            if layout.header and lineno == 1:
                if tuple(cells) != layout.columns:
                    raise DataFormatError(
                        f"{path}:{lineno}: expected header {','.join(layout.columns)}, "
                        f"got {','.join(cells)}"
                    )
                continue
            if len(cells) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 columns, got {len(cells)}")
            try:
                l, f, m = (float(c) for c in cells)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value in {row}") from None
            if not all(math.isfinite(v) for v in (l, f, m)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value in {row}")
            if layout.scale == LINEAR and m < 0:
                raise DataFormatError(f"{path}:{lineno}: negative linear magnitude {m}")
            if layout.scale == DB:
                m = 10.0 ** (m / 20.0)
            groups.setdefault(l, []).append((f, m))
    if not groups:
        raise DataFormatError(f"{path}: no data rows")

    l_values = sorted(groups)
    reference = None
    traces = []
    for l in l_values:
        rows = sorted(groups[l])
        freqs = np.array([r[0] for r in rows])
        mags = np.array([r[1] for r in rows])
        if np.any(np.diff(freqs) <= 0):
            raise DataFormatError(f"{path}: duplicate frequency samples at L = {l:g} mm")
        if reference is None:
            if freqs.size < 2:
                raise DataFormatError(f"{path}: need at least 2 frequencies per L, got 1 at L = {l:g} mm")
            try:
                grid = FrequencyGrid.from_values(freqs)
            except ValueError as exc:
                raise DataFormatError(f"{path}: at L = {l:g} mm: {exc}") from exc
            reference = freqs
        elif freqs.size != reference.size or np.abs(freqs - reference).max() > 1e-9 * np.abs(reference).max():
            raise DataFormatError(
                f"{path}: frequency grid at L = {l:g} mm differs from the grid at L = {l_values[0]:g} mm"
            )
        traces.append(SpectrumTrace(grid, mags.astype(complex), sweep_value=l))
    return SweepResult(np.array(l_values), tuple(traces))


def write_sweep_csv(sweep: SweepResult, path, layout: SweepCsvLayout = SweepCsvLayout()) -> None:
    """Write |S21| in long format, L ascending then frequency ascending."""
    if not sweep.traces or sweep.grid.points == 0:
        raise ValueError("cannot write an empty sweep")
    rows = []
    for l, trace in zip(sweep.l_values, sweep.traces):
        mag = trace.magnitude if layout.scale == LINEAR else trace.magnitude_db
        for f, m in zip(trace.frequencies, mag):
            rows.append((_fmt(l), _fmt(f), _fmt(m)))
    _write_rows(path, layout.columns if layout.header else None, rows, layout.delimiter)


def write_trace_csv(trace: SpectrumTrace, path) -> None:
    """Single trace: frequency, |S21|, |S21| in dB, and phase in degrees."""
    rows = [
        (_fmt(f), _fmt(m), _fmt(db), _fmt(ph))
        for f, m, db, ph in zip(
            trace.frequencies, trace.magnitude, trace.magnitude_db, np.degrees(np.angle(trace.s21))
        )
    ]
    _write_rows(path, ("freq_GHz", "mag", "mag_dB", "phase_deg"), rows)


def write_tracks_csv(branches: BranchSet, path, bare_tracks: dict[str, np.ndarray] | None = None,
                     l_values: Sequence[float] | None = None) -> None:
    """Branch samples in long format; bare-mode laws follow with negative-free labels."""
    rows = []
    for b, branch in enumerate(branches.branches):
        for s in branch:
            rows.append((f"branch{b}", _fmt(s.l), _fmt(s.frequency), _fmt(s.depth),
                         _fmt(s.width), "1" if s.shared else "0"))
    if bare_tracks and l_values is not None:
        for label, freqs in bare_tracks.items():
            for l, f in zip(l_values, freqs):
                rows.append((f"bare:{label}", _fmt(l), _fmt(f), "", "", "0"))
    _write_rows(path, ("track", "L_mm", "freq_GHz", "depth", "width_GHz", "shared"), rows)


def write_overlay_csv(data: Sequence[SpectrumTrace], model: Sequence[SpectrumTrace], path) -> None:
    """Data and best-fit model |S21| side by side for each data L."""
    rows = []
    for d, m in zip(data, model):
        l = d.sweep_value if d.sweep_value is not None else float("nan")
        for f, dm, mm in zip(d.frequencies, d.magnitude, m.magnitude):
            rows.append((_fmt(l), _fmt(f), _fmt(dm), _fmt(mm)))
    _write_rows(path, ("L_mm", "freq_GHz", "mag_data", "mag_model"), rows)


# --- Touchstone -------------------------------------------------------------

_FREQ_UNITS = {"HZ": 1e-9, "KHZ": 1e-6, "MHZ": 1e-3, "GHZ": 1.0}


def read_touchstone(path, sweep_value: float | None = None) -> SpectrumTrace:
    """S21 from a two-port Touchstone v1 file (MA, DB or RI data format)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    unit, fmt, option_seen = "GHZ", "MA", False
    values: list[tuple[int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            if option_seen:
                raise DataFormatError(f"{path}:{lineno}: repeated option line")
            option_seen = True
            tokens = line[1:].upper().split()
            k = 0
            while k < len(tokens):
                tok = tokens[k]
                if tok in _FREQ_UNITS:
                    unit = tok
                elif tok in ("MA", "DB", "RI"):
                    fmt = tok
                elif tok == "S":
                    pass
                elif tok == "R":
                    k += 1  # reference impedance
                elif tok in ("Y", "Z", "H", "G"):
                    raise DataFormatError(f"{path}:{lineno}: only S-parameters are supported, got {tok}")
                else:
                    raise DataFormatError(f"{path}:{lineno}: unknown option {tok!r}")
                k += 1
            continue
        if line.startswith("["):
            raise DataFormatError(f"{path}:{lineno}: Touchstone v2 keywords are not supported")
        for tok in line.split():
            try:
                values.append((lineno, float(tok)))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric token {tok!r}") from None
    if len(values) % 9:
        line = values[-1][0] if values else 1
        raise DataFormatError(
            f"{path}:{line}: two-port data needs 9 numbers per frequency, got {len(values)} in total"
        )
    if not values:
        raise DataFormatError(f"{path}: no data")
    data = np.array([v for _, v in values]).reshape(-1, 9)
    freqs = data[:, 0] * _FREQ_UNITS[unit]
    a, b = data[:, 3], data[:, 4]  # S21 sits after S11 in two-port ordering
    if fmt == "RI":
        s21 = a + 1j * b
    else:
        mag = a if fmt == "MA" else 10.0 ** (a / 20.0)
        s21 = mag * np.exp(1j * np.radians(b))
    if np.any(np.diff(freqs) <= 0):
        raise DataFormatError(f"{path}: frequencies must be strictly ascending")
    try:
        grid = FrequencyGrid.from_values(freqs)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return SpectrumTrace(grid, s21, sweep_value)


# --- reports ----------------------------------------------------------------

def _plain(obj: Any) -> Any:
    """Convert report objects into YAML-safe builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def report_dict(report: FitResult | CrossingReport, inputs: dict | None = None) -> dict:
    if isinstance(report, FitResult):
        kind = "fit"
    elif isinstance(report, CrossingReport):
        kind = "crossing"
    else:
        raise TypeError(f"cannot report a {type(report).__name__}")
    out = {"kind": kind, "result": _plain(report)}
    if inputs is not None:
        out["inputs"] = _plain(inputs)
    return out


def dump_report(report: FitResult | CrossingReport, inputs: dict | None = None) -> str:
    return yaml.safe_dump(report_dict(report, inputs), sort_keys=False, default_flow_style=False)


def save_report(report: FitResult | CrossingReport, path, inputs: dict | None = None) -> None:
    """YAML report; ``inputs`` should hold every parameter needed to rerun it."""
    try:
        Path(path).write_text(dump_report(report, inputs), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_report(path) -> tuple[FitResult | CrossingReport, dict | None]:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get("kind") not in ("fit", "crossing"):
        raise DataFormatError(f"{path}: not a report file")
    res = dict(doc["result"])
    if doc["kind"] == "fit":
        res["free"] = tuple(res["free"])
        report: FitResult | CrossingReport = FitResult(**res)
    else:
        res["region"] = tuple(res["region"])
        res["branch_pair"] = tuple(res["branch_pair"])
        report = CrossingReport(**res)
    return report, doc.get("inputs")
