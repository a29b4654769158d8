"""Containers for aligned half-hourly and station-level series."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

SLOTS_PER_DAY = 48


class IntegrityError(ValueError):
    """Raised when an input series violates a structural invariant."""


class AlignmentError(ValueError):
    """Raised when two series that must share a timeline do not."""


@dataclass(frozen=True)
class HalfHourlySeries:
    """A dense half-hourly signal covering whole days.

    ``values[d * slots_per_day + t]`` is the reading for slot ``t`` of the
    ``d``-th day after ``start_date``.  Construction validates that the
    series covers whole days and contains no missing values.
    """

    start_date: dt.date
    values: np.ndarray
    slots_per_day: int = SLOTS_PER_DAY

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise IntegrityError("series values must be one-dimensional")
        if values.size == 0:
            raise IntegrityError("series is empty")
        if values.size % self.slots_per_day != 0:
            raise IntegrityError(
                f"series length {values.size} is not a multiple of "
                f"{self.slots_per_day} slots per day"
            )
        if np.isnan(values).any():
            raise IntegrityError("series contains missing values")

    @property
    def n_days(self) -> int:
        return self.values.size // self.slots_per_day

    @property
    def end_date(self) -> dt.date:
        """First date after the covered span."""
        return self.start_date + dt.timedelta(days=self.n_days)

    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=d) for d in range(self.n_days)]

    def day_matrix(self) -> np.ndarray:
        """Values reshaped to (n_days, slots_per_day)."""
        return self.values.reshape(self.n_days, self.slots_per_day)

    def restrict(self, start: dt.date, end: dt.date) -> "HalfHourlySeries":
        """Sub-series covering [start, end); both must lie inside the span."""
        if start < self.start_date or end > self.end_date or start >= end:
            raise AlignmentError(
                f"requested span [{start}, {end}) outside series span "
                f"[{self.start_date}, {self.end_date})"
            )
        i = (start - self.start_date).days * self.slots_per_day
        j = (end - self.start_date).days * self.slots_per_day
        return HalfHourlySeries(start, self.values[i:j], self.slots_per_day)


@dataclass(frozen=True)
class StationSeries:
    """Hourly temperature readings at one weather station."""

    station_id: str
    population_weight: float
    timestamps: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.population_weight <= 0:
            raise IntegrityError(
                f"station {self.station_id}: population weight must be positive"
            )
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise IntegrityError(
                f"station {self.station_id}: timestamps and values must be "
                "one-dimensional and equal length"
            )
        if ts.size >= 2 and not (np.diff(ts).astype("int64") > 0).all():
            raise IntegrityError(
                f"station {self.station_id}: timestamps must be strictly increasing"
            )


def check_same_span(a: HalfHourlySeries, b: HalfHourlySeries, names=("a", "b")):
    """Raise AlignmentError unless both series cover the same days."""
    if a.start_date != b.start_date or a.n_days != b.n_days:
        raise AlignmentError(
            f"{names[0]} spans [{a.start_date}, {a.end_date}) but "
            f"{names[1]} spans [{b.start_date}, {b.end_date})"
        )
