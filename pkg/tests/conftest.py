import numpy as np
import pytest

from dualeq.games import NormalFormGame


@pytest.fixture
def prisoners_dilemma() -> NormalFormGame:
    # rows/cols are (Cooperate, Defect); symmetric
    row = np.array([[-1.0, -3.0], [0.0, -2.0]])
    return NormalFormGame((row, row.T))


@pytest.fixture
def matching_pennies() -> NormalFormGame:
    row = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return NormalFormGame((row, -row))


@pytest.fixture
def sample_game_3x3() -> NormalFormGame:
    gen = np.random.default_rng(7)
    return NormalFormGame((gen.normal(size=(3, 3)), gen.normal(size=(3, 3))))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
