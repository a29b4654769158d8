"""Daily and half-hourly model input tables built from aligned series."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .ingest import PreparedData
from .series import SLOTS_PER_DAY, HalfHourlySeries, IntegrityError, check_same_span

DOW_LEVELS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
SLOT_GRID = np.arange(SLOTS_PER_DAY, dtype=float)

MAT_COLUMNS = ("matTem", "matTem95", "matLag", "matInt")


def mat_cols(name: str) -> list[str]:
    return [f"{name}_{r:02d}" for r in range(SLOTS_PER_DAY)]


def time_of_year(date: dt.date) -> float:
    """Fraction of the year elapsed at this date, in [0, 1)."""
    days_in_year = 366 if _is_leap(date.year) else 365
    return (date.timetuple().tm_yday - 1) / days_in_year


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def daily_peaks(series: HalfHourlySeries) -> tuple[np.ndarray, np.ndarray]:
    """Per-day maximum and its slot index (first occurrence on ties)."""
    mat = series.day_matrix()
    return mat.max(axis=1), mat.argmax(axis=1)


def build_daily_table(load: HalfHourlySeries, temp: HalfHourlySeries,
                      temp95: HalfHourlySeries,
                      exclude_dates: tuple[dt.date, ...] = ()) -> pd.DataFrame:
    """One row per day with peak targets, daily aggregates and slot vectors.

    The first day is dropped (its lag features are undefined); excluded
    dates and the days immediately following them are dropped too.
    """
    check_same_span(load, temp, ("load", "temp"))
    check_same_span(load, temp95, ("load", "temp95"))
    if load.n_days < 2:
        raise IntegrityError("daily table needs at least 2 complete days")

    dates = load.dates()
    load_mat = load.day_matrix()
    temp_mat = temp.day_matrix()
    temp95_mat = temp95.day_matrix()
    dp, ip = daily_peaks(load)

    rows = {
        "DP": dp,
        "IP": ip,
        "dow": [DOW_LEVELS[d.weekday()] for d in dates],
        "toy": [time_of_year(d) for d in dates],
        "tempMax": temp_mat.max(axis=1),
        "tempMin": temp_mat.min(axis=1),
        "temp95Max": temp95_mat.max(axis=1),
        "temp95Min": temp95_mat.min(axis=1),
    }
    index = pd.Index(dates, name="date")
    df = pd.DataFrame(rows, index=index)
    df["DP24"] = df["DP"].shift(1)
    df["IP24"] = df["IP"].shift(1)
    lag_mat = np.vstack([np.full((1, SLOTS_PER_DAY), np.nan), load_mat[:-1]])
    mats = {
        "matTem": temp_mat,
        "matTem95": temp95_mat,
        "matLag": lag_mat,
        "matInt": np.tile(SLOT_GRID, (len(df), 1)),
    }
    df = pd.concat(
        [df] + [pd.DataFrame(m, index=index, columns=mat_cols(n)) for n, m in mats.items()],
        axis=1,
    )

    drop = set(exclude_dates)
    drop |= {d + dt.timedelta(days=1) for d in exclude_dates}
    keep = ~df.index.isin(drop)
    keep[0] = False
    df = df.loc[keep]
    df["IP"] = df["IP"].astype(int)
    df["IP24"] = df["IP24"].astype(int)
    return df


def build_highres_rows(load: HalfHourlySeries, temp: HalfHourlySeries,
                       temp95: HalfHourlySeries,
                       exclude_dates: tuple[dt.date, ...] = ()) -> pd.DataFrame:
    """48 rows per retained day with the same-slot previous-day load lag."""
    check_same_span(load, temp, ("load", "temp"))
    check_same_span(load, temp95, ("load", "temp95"))
    if load.n_days < 2:
        raise IntegrityError("high-resolution rows need at least 2 complete days")

    dates = load.dates()
    n = load.n_days
    date_col = np.repeat(np.array(dates, dtype=object), SLOTS_PER_DAY)
    slot = np.tile(np.arange(SLOTS_PER_DAY), n)
    load24 = np.concatenate([np.full(SLOTS_PER_DAY, np.nan),
                             load.values[:-SLOTS_PER_DAY]])
    df = pd.DataFrame(
        {
            "date": date_col,
            "t": slot,
            "load": load.values,
            "temp": temp.values,
            "temp95": temp95.values,
            "dow": np.repeat([DOW_LEVELS[d.weekday()] for d in dates], SLOTS_PER_DAY),
            "toy": np.repeat([time_of_year(d) for d in dates], SLOTS_PER_DAY),
            "load24": load24,
        }
    )
    drop = set(exclude_dates)
    drop |= {d + dt.timedelta(days=1) for d in exclude_dates}
    drop.add(dates[0])
    return df.loc[~df["date"].isin(drop)].reset_index(drop=True)


@dataclass(frozen=True)
class Dataset:
    """Prepared model inputs: the daily table, high-res rows and demand days.

    ``demand`` holds each retained day's 48 observed load values, aligned
    with ``daily.index``; it backs peak extraction for high-resolution
    models and demand-gap scoring of peak-instant forecasts.
    """

    daily: pd.DataFrame
    highres: pd.DataFrame
    demand: np.ndarray = field(repr=False)

    @classmethod
    def from_prepared(cls, data: PreparedData, exclude_flagged: bool = False) -> "Dataset":
        exclude = data.flagged_dates if exclude_flagged else ()
        daily = build_daily_table(data.load, data.temp, data.temp95, exclude)
        highres = build_highres_rows(data.load, data.temp, data.temp95, exclude)
        all_dates = data.load.dates()
        pos = {d: i for i, d in enumerate(all_dates)}
        demand = data.load.day_matrix()[[pos[d] for d in daily.index]]
        return cls(daily, highres, demand)

    @property
    def dates(self) -> pd.Index:
        return self.daily.index

    def restrict(self, start: dt.date, end: dt.date) -> "Dataset":
        """Rows with start <= date < end."""
        keep = (self.daily.index >= start) & (self.daily.index < end)
        hr_keep = (self.highres["date"] >= start) & (self.highres["date"] < end)
        return Dataset(
            self.daily.loc[keep],
            self.highres.loc[hr_keep].reset_index(drop=True),
            self.demand[keep],
        )

    def demand_for(self, dates) -> np.ndarray:
        """Per-day demand vectors for the given dates (rows of ``demand``)."""
        pos = {d: i for i, d in enumerate(self.daily.index)}
        return self.demand[[pos[d] for d in dates]]


def write_daily_csv(daily: pd.DataFrame, path) -> None:
    daily.to_csv(path, index_label="date")


def write_highres_csv(highres: pd.DataFrame, path) -> None:
    highres.to_csv(path, index=False)
