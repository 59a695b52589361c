import math

import pytest

from regenlab import LevyModel, SlowlyVarying


@pytest.fixture
def half_atom():
    """Single atom at 1/2: the stick is halved at every jump."""
    return LevyModel.finite_atomic([(0.5, 1.0)])


@pytest.fixture
def two_atoms():
    return LevyModel.finite_atomic([(0.3, 0.7), (0.8, 1.6)])


@pytest.fixture
def ml_half():
    """Two-parameter model with alpha = 1/2, theta = 0."""
    return LevyModel.two_parameter(0.5, 0.0)


ALL_MODELS = [
    LevyModel.two_parameter(0.5, 0.0),
    LevyModel.two_parameter(0.5, 1.0),
    LevyModel.two_parameter(0.3, 2.5),
    LevyModel.stable_like(0.5),
    LevyModel.stable_like(0.7, SlowlyVarying.logpow(1.5)),
    LevyModel.stable_like(1.0, SlowlyVarying.logpow(-2.0)),
    LevyModel.finite_atomic([(0.5, 1.0)]),
    LevyModel.finite_atomic([(0.3, 0.7), (0.8, 1.6), (1.0, 0.2)]),
]


def model_id(model):
    if model.is_atomic:
        return "atomic-" + "-".join(f"{x:g}" for x, _ in model.atoms)
    if model.family == "stable":
        return f"stable-{model.alpha:g}-{model.ell}"
    return f"tp-{model.alpha:g}-{model.theta:g}"


def binomial_z(count, n, p):
    return (count - n * p) / math.sqrt(n * p * (1 - p))
