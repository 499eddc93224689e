import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from ppcoupling import (
    CoupledSystem,
    FitParameter,
    FixedLaw,
    FrequencyGrid,
    GeometryMap,
    InverseLaw,
    Mode,
    ParameterModel,
)

# Intrinsic dampings of the three resonators (GHz).
ALPHA, BETA, KAPPA = 0.02387, 0.03579, 0.03290


def random_system(rng, n=None):
    """Random 2-5 mode system with positive frequencies and complex couplings."""
    n = n or int(rng.integers(2, 6))
    modes = [
        Mode(chr(65 + k), rng.uniform(2.0, 10.0), rng.uniform(0.0, 0.1)) for k in range(n)
    ]
    c = rng.uniform(-0.5, 0.5, (n, n)) + 1j * rng.uniform(0.0, 0.2, (n, n))
    c = np.triu(c, 1)
    c = c + c.T
    return CoupledSystem(tuple(modes), rng.uniform(0.0, 0.1), c)


def match_max_diff(a, b):
    """Max |a_i - b_pi(i)| under the optimal one-to-one pairing."""
    cost = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


# Synthetic three-mode region used for fit round-trips. B sweeps through A
# and C stays close enough above to keep all three couplings identifiable.
REGION_TRUTH = {
    "coupling.A-B.re": 0.12,
    "coupling.B-C.re": 0.05,
    "coupling.A-C.re": 0.03,
    "gamma": 0.01,
}
REGION_GRID = FrequencyGrid(4.6, 5.5, 601)
REGION_L = np.linspace(7.4, 8.6, 21)


def region_model(truth=REGION_TRUTH):
    modes = [Mode("A", 5.0, ALPHA), Mode("B", 5.0, BETA), Mode("C", 5.0, KAPPA)]
    sys = CoupledSystem.from_pairs(
        modes, truth["gamma"],
        {("A", "B"): truth["coupling.A-B.re"], ("B", "C"): truth["coupling.B-C.re"],
         ("A", "C"): truth["coupling.A-C.re"]},
    )
    gm = GeometryMap(
        {"A": FixedLaw(5.0, 8.0), "B": InverseLaw(40.0, 0.0), "C": InverseLaw(8.0, 4.1)}
    )
    return ParameterModel(sys, gm)


def region_free():
    return [
        FitParameter("coupling.A-B.re", 0.08, 0.0, 0.3),
        FitParameter("coupling.B-C.re", 0.08, 0.0, 0.3),
        FitParameter("coupling.A-C.re", 0.08, 0.0, 0.3),
        FitParameter("gamma", 0.02, 0.001, 0.1),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
