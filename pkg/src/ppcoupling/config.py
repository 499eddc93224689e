"""Project configuration files and named presets.

A configuration is a YAML mapping. ``preset: NAME`` pulls in a named preset
first; every other top-level key then overrides it (mappings merge
recursively, lists replace). Presets are searched in the directories listed
in ``$PPCOUPLING_PRESET_DIR`` and then among the presets shipped with the
package. The schema is documented in README.md.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .fit import FitParameter, FitSpec, ParameterModel, TRACE, BRANCH
from .model import CoupledSystem, Mode
from .spectrum import DEFAULT_DOMAIN, FixedLaw, FrequencyGrid, GeometryMap, InverseLaw, Law

PRESET_ENV = "PPCOUPLING_PRESET_DIR"
BUILTIN_PRESETS = Path(__file__).parent / "presets"


class ConfigError(ValueError):
    """Schema or model-invariant violation in a configuration; names the key path."""


# --- schema helpers ---------------------------------------------------------

def _fail(path: str, msg: str):
    raise ConfigError(f"{path or '<root>'}: {msg}")


def _mapping(node, path, required=(), optional=()):
    if not isinstance(node, dict):
        _fail(path, f"expected a mapping, got {type(node).__name__}")
    unknown = sorted(set(node) - set(required) - set(optional))
    if unknown:
        _fail(_join(path, unknown[0]), "unknown key")
    for key in required:
        if key not in node:
            _fail(_join(path, key), "required key is missing")
    return node


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _number(node, path, minimum=None, strict=False):
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        _fail(path, f"expected a number, got {type(node).__name__}")
    value = float(node)
    if not np.isfinite(value):
        _fail(path, "expected a finite number")
    if minimum is not None and (value < minimum or (strict and value == minimum)):
        _fail(path, f"expected a number {'>' if strict else '>='} {minimum}, got {value}")
    return value


def _integer(node, path, minimum=None):
    if isinstance(node, bool) or not isinstance(node, int):
        _fail(path, f"expected an integer, got {type(node).__name__}")
    if minimum is not None and node < minimum:
        _fail(path, f"expected an integer >= {minimum}, got {node}")
    return node


def _string(node, path, choices=None):
    if not isinstance(node, str):
        _fail(path, f"expected a string, got {type(node).__name__}")
    if choices and node not in choices:
        _fail(path, f"expected one of {sorted(choices)}, got {node!r}")
    return node


def _list(node, path):
    if not isinstance(node, list):
        _fail(path, f"expected a list, got {type(node).__name__}")
    return node


# --- configuration objects --------------------------------------------------

@dataclass(frozen=True)
class ModeSpec:
    label: str
    intrinsic_damping: float
    law: Law


@dataclass(frozen=True)
class AnalysisSettings:
    min_depth: float = 0.01
    gap_factor: float = 3.0
    merge_factor: float = 0.5


@dataclass(frozen=True)
class FitSettings:
    free: tuple[FitParameter, ...] = ()
    objective: str = TRACE
    starts: int = 8
    polish: bool = True


@dataclass(frozen=True)
class SweepSettings:
    start: float | None = None
    stop: float | None = None
    step: float | None = None
    values: tuple[float, ...] | None = None

    @property
    def l_values(self) -> np.ndarray:
        if self.values is not None:
            return np.array(self.values, dtype=float)
        n = int(round((self.stop - self.start) / self.step)) + 1
        # rounding keeps grid values like 7.4 exact in exported files
        return np.round(self.start + self.step * np.arange(n), 10)


@dataclass(frozen=True)
class ProjectConfig:
    modes: tuple[ModeSpec, ...]
    extrinsic_damping: float
    grid: FrequencyGrid
    couplings: dict[tuple[str, str], complex] = field(default_factory=dict)
    drive: dict[str, float] | None = None
    sweep: SweepSettings | None = None
    domain: tuple[float, float] = DEFAULT_DOMAIN
    analysis: AnalysisSettings = AnalysisSettings()
    fit: FitSettings = FitSettings()
    name: str | None = None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.modes)

    def geometry(self) -> GeometryMap:
        return GeometryMap({m.label: m.law for m in self.modes}, self.domain)

    def system(self, l: float | None = None) -> CoupledSystem:
        """Coupled system at sweep value ``l`` (default: middle of the domain)."""
        if l is None:
            l = 0.5 * (self.domain[0] + self.domain[1])
        modes = [Mode(m.label, float(m.law(l)), m.intrinsic_damping) for m in self.modes]
        return CoupledSystem.from_pairs(modes, self.extrinsic_damping, self.couplings)

    def drive_vector(self) -> np.ndarray | None:
        if self.drive is None:
            return None
        return np.array([self.drive.get(lab, 0.0) for lab in self.labels], dtype=float)

    def l_values(self) -> np.ndarray:
        if self.sweep is None:
            raise ConfigError("sweep: no sweep section in configuration")
        return self.sweep.l_values

    def parameter_model(self) -> ParameterModel:
        drive = self.drive_vector()
        return ParameterModel(
            self.system(), self.geometry(), None if drive is None else tuple(drive)
        )

    def fit_spec(self, seed: int = 0) -> FitSpec:
        if not self.fit.free:
            raise ConfigError("fit.free: no free parameters configured")
        model = self.parameter_model()
        known = set(model.names)
        for k, p in enumerate(self.fit.free):
            if p.name not in known:
                raise ConfigError(f"fit.free[{k}].name: unknown parameter {p.name!r}")
        return FitSpec.for_model(
            model, self.fit.free, objective=self.fit.objective, starts=self.fit.starts,
            seed=seed, min_depth=self.analysis.min_depth, polish=self.fit.polish,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.name is not None:
            out["name"] = self.name
        out["extrinsic_damping"] = self.extrinsic_damping
        modes = []
        for m in self.modes:
            entry: dict[str, Any] = {"label": m.label, "intrinsic_damping": m.intrinsic_damping}
            if isinstance(m.law, FixedLaw):
                entry["law"] = "fixed"
                entry["omega"] = float(m.law.omega)
                if m.law.size_mm is not None:
                    entry["size_mm"] = float(m.law.size_mm)
            else:
                entry.update(law="inverse", a=float(m.law.a), b=float(m.law.b))
            modes.append(entry)
        out["modes"] = modes
        out["couplings"] = [
            {"modes": [a, b], "coherent": float(c.real), "dissipative": float(c.imag)}
            for (a, b), c in self.couplings.items()
        ]
        if self.drive is not None:
            out["drive"] = {k: float(v) for k, v in self.drive.items()}
        out["grid"] = {"start": self.grid.start, "stop": self.grid.stop, "points": self.grid.points}
        if self.sweep is not None:
            if self.sweep.values is not None:
                out["sweep"] = {"values": [float(v) for v in self.sweep.values]}
            else:
                out["sweep"] = {"start": self.sweep.start, "stop": self.sweep.stop, "step": self.sweep.step}
        out["domain"] = [float(self.domain[0]), float(self.domain[1])]
        out["analysis"] = {
            "min_depth": self.analysis.min_depth,
            "gap_factor": self.analysis.gap_factor,
            "merge_factor": self.analysis.merge_factor,
        }
        out["fit"] = {
            "objective": self.fit.objective,
            "starts": self.fit.starts,
            "polish": self.fit.polish,
            "free": [
                {"name": p.name, "initial": p.initial, "lower": p.lower, "upper": p.upper}
                for p in self.fit.free
            ],
        }
        return out


# --- parsing ----------------------------------------------------------------

_TOP_REQUIRED = ("modes", "extrinsic_damping", "grid")
_TOP_OPTIONAL = ("name", "couplings", "drive", "sweep", "domain", "analysis", "fit")


def parse_config(doc: Any) -> ProjectConfig:
    """Validate a plain mapping (already preset-expanded) into a ProjectConfig."""
    _mapping(doc, "", _TOP_REQUIRED, _TOP_OPTIONAL)
    gamma = _number(doc["extrinsic_damping"], "extrinsic_damping", minimum=0)

    modes = []
    for k, node in enumerate(_list(doc["modes"], "modes")):
        path = f"modes[{k}]"
        _mapping(node, path, ("label", "intrinsic_damping", "law"), ("omega", "size_mm", "a", "b"))
        label = _string(node["label"], _join(path, "label"))
        damping = _number(node["intrinsic_damping"], _join(path, "intrinsic_damping"), minimum=0)
        kind = _string(node["law"], _join(path, "law"), {"fixed", "inverse"})
        if kind == "fixed":
            for bad in ("a", "b"):
                if bad in node:
                    _fail(_join(path, bad), "not allowed for a fixed law")
            if "omega" not in node:
                _fail(_join(path, "omega"), "required key is missing")
            omega = _number(node["omega"], _join(path, "omega"), minimum=0, strict=True)
            size = _number(node["size_mm"], _join(path, "size_mm"), 0, True) if "size_mm" in node else None
            law: Law = FixedLaw(omega, size)
        else:
            for bad in ("omega", "size_mm"):
                if bad in node:
                    _fail(_join(path, bad), "not allowed for an inverse law")
            if "a" not in node:
                _fail(_join(path, "a"), "required key is missing")
            law = InverseLaw(
                _number(node["a"], _join(path, "a")),
                _number(node.get("b", 0.0), _join(path, "b")),
            )
        modes.append(ModeSpec(label, damping, law))
    if len(modes) < 2:
        _fail("modes", f"need at least 2 modes, got {len(modes)}")
    labels = [m.label for m in modes]
    if len(set(labels)) != len(labels):
        _fail("modes", f"duplicate mode labels in {labels}")

    couplings: dict[tuple[str, str], complex] = {}
    for k, node in enumerate(_list(doc.get("couplings", []), "couplings")):
        path = f"couplings[{k}]"
        _mapping(node, path, ("modes",), ("coherent", "dissipative"))
        pair = _list(node["modes"], _join(path, "modes"))
        if len(pair) != 2:
            _fail(_join(path, "modes"), "expected exactly two mode labels")
        a, b = (_string(x, _join(path, "modes")) for x in pair)
        for lab in (a, b):
            if lab not in labels:
                _fail(_join(path, "modes"), f"unknown mode label {lab!r}")
        if a == b:
            _fail(_join(path, "modes"), "a mode cannot couple to itself")
        if (a, b) in couplings or (b, a) in couplings:
            _fail(_join(path, "modes"), f"duplicate coupling {a}-{b}")
        coherent = _number(node.get("coherent", 0.0), _join(path, "coherent"))
        dissipative = _number(node.get("dissipative", 0.0), _join(path, "dissipative"), minimum=0)
        couplings[(a, b)] = complex(coherent, dissipative)

    drive = None
    if "drive" in doc:
        node = _mapping(doc["drive"], "drive", (), labels)
        drive = {lab: _number(v, _join("drive", lab)) for lab, v in node.items()}
        if not any(drive.values()):
            _fail("drive", "at least one drive amplitude must be non-zero")

    node = _mapping(doc["grid"], "grid", ("start", "stop", "points"))
    try:
        grid = FrequencyGrid(
            _number(node["start"], "grid.start"),
            _number(node["stop"], "grid.stop"),
            _integer(node["points"], "grid.points", minimum=2),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("grid", str(exc))

    domain = DEFAULT_DOMAIN
    if "domain" in doc:
        dom = _list(doc["domain"], "domain")
        if len(dom) != 2:
            _fail("domain", "expected [lo, hi]")
        domain = (_number(dom[0], "domain[0]", 0, True), _number(dom[1], "domain[1]", 0, True))
        if not domain[0] < domain[1]:
            _fail("domain", "expected lo < hi")

    sweep = None
    if "sweep" in doc:
        node = _mapping(doc["sweep"], "sweep", (), ("start", "stop", "step", "values"))
        if "values" in node:
            if set(node) != {"values"}:
                _fail("sweep", "use either values or start/stop/step")
            vals = [_number(v, f"sweep.values[{k}]", 0, True) for k, v in enumerate(_list(node["values"], "sweep.values"))]
            if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
                _fail("sweep.values", "expected a non-empty, strictly ascending list")
            sweep = SweepSettings(values=tuple(vals))
        else:
            _mapping(node, "sweep", ("start", "stop", "step"))
            start = _number(node["start"], "sweep.start", 0, True)
            stop = _number(node["stop"], "sweep.stop", 0, True)
            step = _number(node["step"], "sweep.step", 0, True)
            if stop < start:
                _fail("sweep", "expected start <= stop")
            sweep = SweepSettings(start=start, stop=stop, step=step)

    analysis = AnalysisSettings()
    if "analysis" in doc:
        node = _mapping(doc["analysis"], "analysis", (), ("min_depth", "gap_factor", "merge_factor"))
        analysis = AnalysisSettings(
            min_depth=_number(node.get("min_depth", 0.01), "analysis.min_depth", 0, True),
            gap_factor=_number(node.get("gap_factor", 3.0), "analysis.gap_factor", 0, True),
            merge_factor=_number(node.get("merge_factor", 0.5), "analysis.merge_factor", 0, True),
        )
        if analysis.min_depth >= 1:
            _fail("analysis.min_depth", "expected a number < 1")

    fit = FitSettings()
    if "fit" in doc:
        node = _mapping(doc["fit"], "fit", (), ("objective", "starts", "polish", "free"))
        free = []
        for k, p in enumerate(_list(node.get("free", []), "fit.free")):
            path = f"fit.free[{k}]"
            _mapping(p, path, ("name", "initial", "lower", "upper"))
            try:
                free.append(FitParameter(
                    _string(p["name"], _join(path, "name")),
                    _number(p["initial"], _join(path, "initial")),
                    _number(p["lower"], _join(path, "lower")),
                    _number(p["upper"], _join(path, "upper")),
                ))
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                _fail(path, str(exc))
        polish = node.get("polish", True)
        if not isinstance(polish, bool):
            _fail("fit.polish", f"expected a boolean, got {type(polish).__name__}")
        fit = FitSettings(
            free=tuple(free),
            objective=_string(node.get("objective", TRACE), "fit.objective", {TRACE, BRANCH}),
            starts=_integer(node.get("starts", 8), "fit.starts", minimum=1),
            polish=polish,
        )

    name = _string(doc["name"], "name") if "name" in doc else None
    cfg = ProjectConfig(
        modes=tuple(modes), extrinsic_damping=gamma, grid=grid, couplings=couplings,
        drive=drive, sweep=sweep, domain=domain, analysis=analysis, fit=fit, name=name,
    )
    # surface model-invariant violations at load time
    try:
        cfg.geometry()
        cfg.system()
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    if sweep is not None:
        lv = sweep.l_values
        if lv.min() < domain[0] or lv.max() > domain[1]:
            _fail("sweep", f"sweep values leave the domain [{domain[0]:g}, {domain[1]:g}] mm")
    if fit.free:
        try:
            cfg.fit_spec()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            _fail("fit", str(exc))
    return cfg


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def preset_dirs() -> list[Path]:
    dirs = [Path(p) for p in os.environ.get(PRESET_ENV, "").split(os.pathsep) if p]
    return dirs + [BUILTIN_PRESETS]


def list_presets() -> list[str]:
    names = set()
    for d in preset_dirs():
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.yaml"))
    return sorted(names)


def preset_path(name: str) -> Path:
    for d in preset_dirs():
        candidate = d / f"{name}.yaml"
        if candidate.is_file():
            return candidate
    raise ConfigError(f"preset: unknown preset {name!r} (available: {', '.join(list_presets())})")


def _read_yaml(path: Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc


def expand(doc: Any, _seen: tuple[str, ...] = ()) -> dict:
    """Resolve ``preset:`` references into one plain mapping."""
    if not isinstance(doc, dict):
        _fail("", f"expected a mapping, got {type(doc).__name__}")
    if "preset" not in doc:
        return doc
    name = _string(doc["preset"], "preset")
    if name in _seen:
        _fail("preset", f"circular preset reference through {name!r}")
    base = expand(_read_yaml(preset_path(name)), _seen + (name,))
    rest = {k: v for k, v in doc.items() if k != "preset"}
    merged = _deep_merge(base, rest)
    merged.setdefault("name", name)
    return merged


def load_config(path) -> ProjectConfig:
    return parse_config(expand(_read_yaml(Path(path))))


def load_preset(name: str) -> ProjectConfig:
    return parse_config(expand({"preset": name}))


def dump_yaml(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False, allow_unicode=True)


def save_config(cfg: ProjectConfig, path) -> None:
    Path(path).write_text(dump_yaml(cfg.to_dict()), encoding="utf-8")
