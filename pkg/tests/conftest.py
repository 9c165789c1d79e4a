from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"
SCENARIOS = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def race_monte_carlo(lam_round: float, profile, trials: int, seed: int, max_rounds: int = 5000):
    """Direct simulation of the two-fraction race, independent of the series code.

    Each round, each side mines with probability 1 - exp(-phi * lam_round); the
    first round with exactly one side mining decides the race.
    Returns (wins_A, wins_B, undecided).
    """
    rng = np.random.default_rng(seed)
    active = trials
    wins_a = wins_b = 0
    for i in range(1, max_rounds + 1):
        if active == 0:
            break
        phi_a, phi_b = profile.at(i)
        pa = -np.expm1(-phi_a * lam_round)
        pb = -np.expm1(-phi_b * lam_round)
        a = rng.random(active) < pa
        b = rng.random(active) < pb
        only_a = int(np.count_nonzero(a & ~b))
        only_b = int(np.count_nonzero(b & ~a))
        wins_a += only_a
        wins_b += only_b
        active -= only_a + only_b
    return wins_a, wins_b, active
