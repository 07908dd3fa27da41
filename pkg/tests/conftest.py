import numpy as np
import pytest

from fairdecide.baseline import BaselineDistribution
from fairdecide.instances import LabeledInstance


def beta_baseline(group, a, b, bins=100, count=1000, stratum=None, base_rate=None):
    """Baseline whose bin masses follow an (unnormalized) Beta(a, b) density."""
    m = (2 * np.arange(bins) + 1) / (2 * bins)
    dens = m ** (a - 1) * (1 - m) ** (b - 1)
    mass = dens / dens.sum()
    mass = mass / mass.sum()
    if base_rate is None:
        base_rate = float(mass @ m)
    return BaselineDistribution(group, tuple(mass.tolist()), count, base_rate, "outcomes", stratum)


def point_baseline(group, index, bins, count=10, base_rate=0.5):
    mass = [0.0] * bins
    mass[index] = 1.0
    return BaselineDistribution(group, tuple(mass), count, base_rate)


def make(rows, group_col=True):
    """rows: (group, decision, outcome[, stratum]) tuples -> instances."""
    out = []
    for i, r in enumerate(rows):
        g, d, y = r[:3]
        s = r[3] if len(r) > 3 else None
        out.append(LabeledInstance(f"i{i}", 0.5, g, outcome=y, decision=d, stratum=s))
    return out


@pytest.fixture
def asym_baselines():
    return [beta_baseline("a", 2, 5, count=600), beta_baseline("b", 5, 2, count=400)]


@pytest.fixture
def stratified_baselines():
    return [
        beta_baseline("a", 2, 5, count=300, stratum="x"),
        beta_baseline("a", 3, 3, count=300, stratum="z"),
        beta_baseline("b", 5, 2, count=150, stratum="x"),
        beta_baseline("b", 2, 2, count=250, stratum="z"),
    ]
