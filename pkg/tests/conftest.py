import numpy as np
import pytest

from hydrograd.hbv import Forcings


@pytest.fixture(scope="session")
def short_forcings() -> Forcings:
    """120 days of deterministic weather for fast simulation tests."""
    n = 120
    rng = np.random.default_rng(99)
    doy = np.arange(n)
    T = 6.0 + 9.0 * np.sin(2 * np.pi * (doy - 105) / 365.25) + rng.normal(0, 1, n)
    PET = np.maximum(2.0 * (1 + 0.9 * np.sin(2 * np.pi * (doy - 105) / 365.25)), 0.0)
    P = np.where(rng.random(n) < 0.35, rng.exponential(6.0, n), 0.0)
    dates = [str(np.datetime64("2000-01-01") + np.timedelta64(t, "D")) for t in range(n)]
    return Forcings(dates, P, T, PET)
