"""Shared synthetic data for the test suite."""

import datetime as dt

import numpy as np
import pytest

from peakcast.features import Dataset
from peakcast.ingest import PreparedData, exponential_smooth
from peakcast.series import HalfHourlySeries

START = dt.date(2013, 1, 1)


def synthetic_prepared(n_days=240, seed=0, start=START, load_scale=1000.0):
    """UK-flavoured fake data: seasonal temperature, evening-peaked demand.

    Demand reacts negatively to temperature, dips on weekends and carries
    slot-level noise, so peak timing wobbles between the morning and
    evening humps like the real series does.
    """
    rng = np.random.default_rng(seed)
    slots = np.arange(48)
    dates = [start + dt.timedelta(days=d) for d in range(n_days)]
    toy = np.array([(d.timetuple().tm_yday - 1) / 365 for d in dates])
    daily_level = 10 - 8 * np.cos(2 * np.pi * toy)
    temp = (
        daily_level[:, None]
        + 4 * np.sin(2 * np.pi * (slots - 4) / 48)[None, :]
        + rng.normal(scale=1.2, size=(n_days, 48))
    )
    dow = np.array([d.weekday() for d in dates])
    profile = (
        30
        + 8 * np.exp(-0.5 * ((slots - 36) / 6.0) ** 2)
        + 3 * np.exp(-0.5 * ((slots - 17) / 5.0) ** 2)
    )
    load = (
        profile[None, :] * (1 + 0.1 * np.cos(2 * np.pi * toy))[:, None]
        - 0.35 * temp
        + np.where(dow >= 5, -3.0, 0.0)[:, None]
        + rng.normal(scale=0.4, size=(n_days, 48))
    )
    load = load * load_scale
    return PreparedData(
        HalfHourlySeries(start, load.ravel()),
        HalfHourlySeries(start, temp.ravel()),
        HalfHourlySeries(start, exponential_smooth(temp.ravel(), 0.95)),
    )


@pytest.fixture(scope="session")
def prepared():
    return synthetic_prepared()

@pytest.fixture(scope="session")
def dataset(prepared):
    return Dataset.from_prepared(prepared)


@pytest.fixture(scope="session")
def long_dataset():
    """About 14 months, enough for a couple of rolling-origin folds."""
    return Dataset.from_prepared(synthetic_prepared(n_days=430, seed=3))
