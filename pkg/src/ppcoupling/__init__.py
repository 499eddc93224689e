"""Coupled-mode modelling of photon-photon coupling between resonators on a shared feedline."""

__version__ = "0.1.0"

from .model import (
    CircuitMatrix,
    ConvergenceError,
    CoupledSystem,
    Eigenmode,
    Mode,
    charpoly_eigenvalues,
    circuit_polynomial_roots,
    circuit_system,
    effective_matrix,
    eigenmodes,
    perturbative_coupling,
)
from .spectrum import (
    FixedLaw,
    FrequencyGrid,
    GeometryMap,
    InverseLaw,
    SpectrumTrace,
    SweepError,
    SweepResult,
    map_geometry,
    s21,
    sweep,
    transmission,
)
from .analysis import (
    ATTRACTION,
    CROSSING,
    REPULSION,
    BranchSet,
    CrossingReport,
    InsufficientBranchesError,
    Peak,
    classify_crossing,
    find_peaks,
    track_branches,
)
from .fit import FitParameter, FitResult, FitSpec, ParameterModel, fit, objective, overlay
from .config import ConfigError, ProjectConfig, load_config, load_preset, save_config
from .io import SweepCsvLayout, read_sweep_csv, read_touchstone, save_report, write_sweep_csv
