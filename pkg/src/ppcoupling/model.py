"""Coupled-resonator model: domain types, the effective non-Hermitian matrix,
the complex eigenmode solver and the exact lumped-circuit root finder.

Frequencies and damping rates are in GHz throughout. The effective matrix
carries each bare mode on its diagonal as a complex frequency

    w_i - 1j * (intrinsic_i + gamma)

and a frequency-independent complex coupling on the off-diagonals. A real
coupling is coherent (level repulsion), an imaginary one dissipative (level
attraction).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when a numerical solver cannot produce a trustworthy answer."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Mode:
    """A single bare resonator mode."""

    label: str
    omega: float
    intrinsic_damping: float = 0.0

    def __post_init__(self):
        if not self.label:
            raise ValueError("mode label must be non-empty")
        if not np.isfinite(self.omega) or self.omega <= 0:
            raise ValueError(f"mode {self.label!r}: omega must be finite and > 0, got {self.omega}")
        if not np.isfinite(self.intrinsic_damping) or self.intrinsic_damping < 0:
            raise ValueError(
                f"mode {self.label!r}: intrinsic_damping must be finite and >= 0, "
                f"got {self.intrinsic_damping}"
            )
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "intrinsic_damping", float(self.intrinsic_damping))


@dataclass(frozen=True)
class CoupledSystem:
    """N bare modes sharing one extrinsic damping and a symmetric complex coupling matrix."""

    modes: tuple[Mode, ...]
    extrinsic_damping: float
    coupling: np.ndarray = field(repr=False)

    def __post_init__(self):
        modes = tuple(self.modes)
        n = len(modes)
        if n < 2:
            raise ValueError(f"a coupled system needs at least 2 modes, got {n}")
        labels = [m.label for m in modes]
        if len(set(labels)) != n:
            raise ValueError(f"mode labels must be unique, got {labels}")
        gamma = float(self.extrinsic_damping)
        if not np.isfinite(gamma) or gamma < 0:
            raise ValueError(f"extrinsic_damping must be finite and >= 0, got {gamma}")
        coupling = np.asarray(self.coupling, dtype=complex)
        if coupling.shape != (n, n):
            raise ValueError(f"coupling must be {n}x{n}, got shape {coupling.shape}")
        if not np.all(np.isfinite(coupling)):
            raise ValueError("coupling contains non-finite entries")
        if np.any(np.diag(coupling) != 0):
            raise ValueError("coupling diagonal must be zero")
        if not np.array_equal(coupling, coupling.T):
            raise ValueError("coupling must be symmetric (coupling[i][j] == coupling[j][i])")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "extrinsic_damping", gamma)
        object.__setattr__(self, "coupling", _frozen_array(coupling, complex))

    @classmethod
    def from_pairs(
        cls,
        modes: Sequence[Mode],
        extrinsic_damping: float,
        couplings: Mapping[tuple[str, str], complex] | None = None,
    ) -> "CoupledSystem":
        """Build a system from a ``{(label_i, label_j): delta}`` mapping."""
        modes = tuple(modes)
        index = {m.label: k for k, m in enumerate(modes)}
        mat = np.zeros((len(modes), len(modes)), dtype=complex)
        for (a, b), value in (couplings or {}).items():
            if a not in index or b not in index:
                raise ValueError(f"coupling references unknown mode in pair ({a!r}, {b!r})")
            if a == b:
                raise ValueError(f"self-coupling ({a!r}, {b!r}) is not allowed")
            mat[index[a], index[b]] = mat[index[b], index[a]] = value
        return cls(modes, extrinsic_damping, mat)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.modes)

    @property
    def bare_frequencies(self) -> np.ndarray:
        return np.array([m.omega for m in self.modes])

    @property
    def effective_frequencies(self) -> np.ndarray:
        """Complex bare frequencies ``w_i - 1j*(intrinsic_i + gamma)``."""
        return np.array(
            [m.omega - 1j * (m.intrinsic_damping + self.extrinsic_damping) for m in self.modes]
        )

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def with_frequencies(self, omegas: Sequence[float]) -> "CoupledSystem":
        if len(omegas) != self.size:
            raise ValueError(f"expected {self.size} frequencies, got {len(omegas)}")
        modes = tuple(
            Mode(m.label, float(w), m.intrinsic_damping) for m, w in zip(self.modes, omegas)
        )
        return CoupledSystem(modes, self.extrinsic_damping, self.coupling)

    def is_passive(self, tol: float = 0.0) -> bool:
        """True when no combination of modes can gain energy through the couplings.

        The loss matrix ``diag(intrinsic_i + gamma) - Im(coupling)`` must stay above
        ``gamma / 2`` for the transmission through a unit-norm real drive to be
        bounded by one.
        """
        loss = np.diag([m.intrinsic_damping + self.extrinsic_damping for m in self.modes])
        loss = loss - self.coupling.imag
        return bool(np.linalg.eigvalsh(loss).min() >= self.extrinsic_damping / 2 - tol)


@dataclass(frozen=True)
class CircuitMatrix:
    """Lumped LC resonators coupled through mutual inductances.

    The characteristic matrix at angular frequency w is
    ``K - w**2 * (diag(L) + mutual)`` with stiffness ``K = diag(1 / C)``.
    """

    inductances: np.ndarray
    capacitances: np.ndarray
    mutual: np.ndarray = field(repr=False)

    def __post_init__(self):
        ind = np.asarray(self.inductances, dtype=float)
        cap = np.asarray(self.capacitances, dtype=float)
        n = ind.shape[0] if ind.ndim == 1 else -1
        if ind.ndim != 1 or n < 1 or cap.shape != (n,):
            raise ValueError("inductances and capacitances must be 1-D arrays of equal length")
        mutual = np.asarray(self.mutual, dtype=float)
        if mutual.shape != (n, n):
            raise ValueError(f"mutual must be {n}x{n}, got shape {mutual.shape}")
        for name, arr in (("inductances", ind), ("capacitances", cap), ("mutual", mutual)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(ind <= 0) or np.any(cap <= 0):
            raise ValueError("inductances and capacitances must be > 0")
        if np.any(np.diag(mutual) != 0):
            raise ValueError("mutual inductance diagonal must be zero")
        if not np.array_equal(mutual, mutual.T):
            raise ValueError("mutual inductance matrix must be symmetric")
        object.__setattr__(self, "inductances", _frozen_array(ind, float))
        object.__setattr__(self, "capacitances", _frozen_array(cap, float))
        object.__setattr__(self, "mutual", _frozen_array(mutual, float))

    @property
    def size(self) -> int:
        return self.inductances.shape[0]

    @property
    def stiffness(self) -> np.ndarray:
        return 1.0 / self.capacitances

    @property
    def inductance_matrix(self) -> np.ndarray:
        return np.diag(self.inductances) + self.mutual

    @property
    def bare_frequencies(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.inductances * self.capacitances)

    def characteristic_matrix(self, omega: float) -> np.ndarray:
        return np.diag(self.stiffness) - omega**2 * self.inductance_matrix

    def determinant(self, omega: float) -> float:
        return float(np.linalg.det(self.characteristic_matrix(omega)))


@dataclass(frozen=True)
class Eigenmode:
    eigenvalue: complex
    amplitudes: np.ndarray = field(repr=False)

    @property
    def frequency(self) -> float:
        return float(self.eigenvalue.real)

    @property
    def linewidth(self) -> float:
        return float(-self.eigenvalue.imag)


def effective_matrix(sys: CoupledSystem) -> np.ndarray:
    """Symmetric (not Hermitian) matrix with complex bare frequencies on the diagonal."""
    if sys.size < 2:
        raise ValueError("effective_matrix needs at least 2 modes")
    h = np.array(sys.coupling, dtype=complex)
    h[np.diag_indices(sys.size)] = sys.effective_frequencies
    if not np.all(np.isfinite(h)):
        raise ValueError("effective matrix has non-finite entries")
    return h


def _sort_order(values: np.ndarray) -> np.ndarray:
    return np.lexsort((values.imag, values.real))


def eigenmodes(h: np.ndarray) -> list[Eigenmode]:
    """Eigenpairs of ``h`` sorted by ascending real part, ties by imaginary part."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 2:
        raise ValueError(f"expected a square matrix of size >= 2, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix has non-finite entries")
    try:
        vals, vecs = np.linalg.eig(h)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigenvalue iteration did not converge: {exc}") from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(vecs))):
        raise ConvergenceError("eigen solver returned non-finite values")
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    scale = max(np.linalg.norm(h, 2), np.finfo(float).tiny)
    resid = np.linalg.norm(h @ vecs - vecs * vals, axis=0)
    if np.any(resid > 1e-9 * scale):
        raise ConvergenceError(f"eigenpair residual {resid.max():.3e} exceeds 1e-9*||H||")
    order = _sort_order(vals)
    return [Eigenmode(complex(vals[k]), _frozen_array(vecs[:, k], complex)) for k in order]


def charpoly(a: np.ndarray) -> np.ndarray:
    """Characteristic polynomial coefficients of ``a``, highest degree first.

    Faddeev-LeVerrier recursion; the leading coefficient is 1.
    """
    a = np.asarray(a)
    n = a.shape[0]
    coeffs = np.zeros(n + 1, dtype=np.result_type(a, float))
    coeffs[0] = 1.0
    m = np.zeros_like(a, dtype=coeffs.dtype)
    eye = np.eye(n)
    for k in range(1, n + 1):
        m = a @ m + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(a @ m) / k
    return coeffs


def polynomial_roots(coeffs: np.ndarray, polish_steps: int = 3) -> np.ndarray:
    """Companion-matrix roots refined by a few Newton steps on the polynomial."""
    coeffs = np.asarray(coeffs)
    roots = np.roots(coeffs).astype(complex)
    deriv = np.polyder(coeffs)
    for _ in range(polish_steps):
        p = np.polyval(coeffs, roots)
        dp = np.polyval(deriv, roots)
        ok = dp != 0
        step = np.zeros_like(roots)
        step[ok] = p[ok] / dp[ok]
        roots = roots - step
    return roots


def charpoly_eigenvalues(h: np.ndarray) -> np.ndarray:
    """Eigenvalues as characteristic-polynomial roots, sorted like :func:`eigenmodes`."""
    vals = polynomial_roots(charpoly(np.asarray(h, dtype=complex)))
    return vals[_sort_order(vals)]


def circuit_polynomial_roots(cm: CircuitMatrix) -> np.ndarray:
    """Positive resonance frequencies of the lossless circuit, ascending.

    ``det(K - w**2 L)`` is a degree-N polynomial in ``x = w**2`` proportional to the
    characteristic polynomial of ``L^-1 K``; its roots are found and the physical
    ones mapped back through ``w = sqrt(x)``.
    """
    a = np.linalg.solve(cm.inductance_matrix, np.diag(cm.stiffness))
    coeffs = charpoly(a)
    x = polynomial_roots(coeffs)
    scale = np.abs(x).max()
    physical = x[(np.abs(x.imag) <= 1e-9 * scale) & (x.real > 0)].real
    if physical.size < cm.size:
        raise ValueError(
            f"circuit has only {physical.size} positive real resonances out of {cm.size}; "
            "the mutual inductances are too strong for a physical lossless circuit"
        )
    return np.sort(np.sqrt(physical))


def perturbative_coupling(cm: CircuitMatrix) -> np.ndarray:
    """First-order effective couplings for the weak mutual-inductance limit.

    With normalised mutual ``m_ij = M_ij / sqrt(L_i L_j)`` the degenerate pair
    frequencies are ``w0 / sqrt(1 +- m)``, a splitting of ``m * w0`` to first order,
    so ``delta_ij = -m_ij * sqrt(w_i w_j) / 2``.
    """
    ind = cm.inductances
    m = cm.mutual / np.sqrt(np.outer(ind, ind))
    worst = np.abs(m).max() if m.size else 0.0
    if worst > 0.1:
        raise ValueError(
            f"weak-coupling approximation invalid: max |M_ij|/sqrt(L_i L_j) = {worst:.3g} > 0.1"
        )
    w = cm.bare_frequencies
    return -0.5 * m * np.sqrt(np.outer(w, w))


def circuit_system(
    cm: CircuitMatrix,
    labels: Sequence[str] | None = None,
    intrinsic_damping: Sequence[float] | float = 0.0,
    extrinsic_damping: float = 0.0,
) -> CoupledSystem:
    """Effective coupled system equivalent to a weakly coupled circuit."""
    n = cm.size
    labels = list(labels) if labels is not None else [chr(ord("A") + k) for k in range(n)]
    damp = np.broadcast_to(np.asarray(intrinsic_damping, dtype=float), (n,))
    modes = tuple(Mode(lab, w, d) for lab, w, d in zip(labels, cm.bare_frequencies, damp))
    return CoupledSystem(modes, extrinsic_damping, perturbative_coupling(cm))
