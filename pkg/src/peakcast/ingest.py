"""Raw file loading, interpolation and smoothing of demand/weather signals."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from .series import (
    SLOTS_PER_DAY,
    AlignmentError,
    HalfHourlySeries,
    IntegrityError,
    StationSeries,
)

log = logging.getLogger(__name__)

HALF_HOUR = np.timedelta64(30, "m")


class ParseError(ValueError):
    """Raised when a raw file cannot be parsed."""


class InsufficientDataError(ValueError):
    """Raised when too few points are available for an operation."""


@dataclass(frozen=True)
class DemandSchema:
    timestamp: str = "timestamp"
    value: str = "load_mw"


def _parse_timestamps(raw: pd.Series, path) -> pd.Series:
    parsed = pd.to_datetime(raw, errors="coerce", format="ISO8601")
    bad = parsed.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"{path}: malformed timestamp {raw.iloc[row]!r} at data row {row}"
        )
    return parsed


def load_demand_csv(path, schema: DemandSchema = DemandSchema(),
                    gap_limit: int = 2) -> HalfHourlySeries:
    """Load a half-hourly demand CSV into a dense whole-day series.

    Rows are sorted by timestamp; duplicate slots are an integrity error.
    Interior gaps of at most ``gap_limit`` consecutive slots are filled by
    linear interpolation, longer gaps abort.  Leading/trailing partial days
    are trimmed so the result covers whole days only.
    """
    df = pd.read_csv(path)
    for col in (schema.timestamp, schema.value):
        if col not in df.columns:
            raise ParseError(f"{path}: missing column {col!r}")
    ts = _parse_timestamps(df[schema.timestamp], path)
    df = pd.DataFrame({"ts": ts, "value": df[schema.value].astype(float)})
    df = df.sort_values("ts", kind="stable")

    dupes = df["ts"].duplicated()
    if dupes.any():
        raise IntegrityError(
            f"{path}: duplicated timestamp {df['ts'][dupes].iloc[0]}"
        )
    offsets = (df["ts"] - df["ts"].iloc[0]).to_numpy()
    if (offsets % HALF_HOUR).astype("int64").any():
        bad = int(np.flatnonzero((offsets % HALF_HOUR).astype("int64"))[0])
        raise ParseError(
            f"{path}: timestamp {df['ts'].iloc[bad]} is not on the half-hour grid"
        )

    grid = pd.date_range(df["ts"].iloc[0], df["ts"].iloc[-1], freq="30min")
    values = df.set_index("ts")["value"].reindex(grid)
    missing = values.isna().to_numpy()
    if missing.any():
        run_lengths = _gap_runs(missing)
        worst = max(run_lengths)
        if worst > gap_limit:
            raise IntegrityError(
                f"{path}: gap of {worst} consecutive slots exceeds limit {gap_limit}"
            )
        values = values.interpolate(method="linear", limit_area="inside")
        log.info("%s: filled %d gap(s) by linear interpolation", path, len(run_lengths))

    start_ts = grid[0]
    slot0 = (start_ts - start_ts.normalize()) // pd.Timedelta("30min")
    lead = (SLOTS_PER_DAY - slot0) % SLOTS_PER_DAY
    arr = values.to_numpy()[lead:]
    arr = arr[: (arr.size // SLOTS_PER_DAY) * SLOTS_PER_DAY]
    if arr.size == 0:
        raise IntegrityError(f"{path}: no complete day in file")
    start_date = (start_ts.normalize() + pd.Timedelta(days=1 if lead else 0)).date()
    return HalfHourlySeries(start_date, arr)


def _gap_runs(missing: np.ndarray) -> list[int]:
    runs, current = [], 0
    for m in missing:
        if m:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    if current:
        runs.append(current)
    return runs


def load_weather_csv(path, station_id: str, population: float) -> StationSeries:
    """Load one station's hourly temperature CSV (columns timestamp, temp_c)."""
    df = pd.read_csv(path)
    for col in ("timestamp", "temp_c"):
        if col not in df.columns:
            raise ParseError(f"{path}: missing column {col!r}")
    ts = _parse_timestamps(df["timestamp"], path)
    df = pd.DataFrame({"ts": ts, "temp": df["temp_c"].astype(float)})
    df = df.sort_values("ts", kind="stable").dropna()
    return StationSeries(
        station_id=station_id,
        population_weight=population,
        timestamps=df["ts"].to_numpy(),
        values=df["temp"].to_numpy(),
    )


def natural_cubic_interpolate(x: np.ndarray, y: np.ndarray,
                              x_new: np.ndarray) -> np.ndarray:
    """Natural cubic spline through (x, y) evaluated at x_new.

    Natural boundary: second derivative zero at both ends.  Requires at
    least 4 knots.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise InsufficientDataError(
            f"natural cubic interpolation needs at least 4 points, got {x.size}"
        )
    spline = CubicSpline(x, y, bc_type="natural")
    return spline(np.asarray(x_new, dtype=float))


def interpolate_hourly_to_halfhourly(station: StationSeries) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate a station's hourly readings onto the half-hour grid.

    Returns (half-hourly timestamps, values).  Values at the original
    hourly knots are reproduced exactly.
    """
    ts = station.timestamps.astype("datetime64[s]")
    if ts.size < 4:
        raise InsufficientDataError(
            f"station {station.station_id}: need at least 4 hourly points"
        )
    hours = (ts - ts[0]) / np.timedelta64(1, "h")
    n_half = int(hours[-1] * 2) + 1
    new_hours = np.arange(n_half) * 0.5
    values = natural_cubic_interpolate(hours, station.values, new_hours)
    new_ts = ts[0] + (new_hours * 3600).astype("timedelta64[s]")
    return new_ts, values


def population_weighted_temperature(stations: list[StationSeries]) -> tuple[np.ndarray, np.ndarray]:
    """Population-weighted mean of station series on their common timeline.

    All stations are clipped to the intersection of their time spans; any
    remaining timestamp mismatch on that window is an alignment error.
    Returns (timestamps, weighted values).
    """
    if not stations:
        raise ValueError("at least one station required")
    lo = max(s.timestamps[0] for s in stations)
    hi = min(s.timestamps[-1] for s in stations)
    if lo > hi:
        raise AlignmentError("station series have no common time window")

    clipped = []
    for s in stations:
        sel = (s.timestamps >= lo) & (s.timestamps <= hi)
        clipped.append((s.timestamps[sel], s.values[sel], s.population_weight))
    ref_ts = clipped[0][0]
    for (ts, _, _), s in zip(clipped[1:], stations[1:]):
        if ts.shape != ref_ts.shape or (ts != ref_ts).any():
            raise AlignmentError(
                f"station {s.station_id} timestamps differ on the common window"
            )
    weights = np.array([w for _, _, w in clipped])
    stacked = np.vstack([v for _, v, _ in clipped])
    return ref_ts, weights @ stacked / weights.sum()


def exponential_smooth(values: np.ndarray, alpha: float) -> np.ndarray:
    """First-order recursive smoothing; larger alpha means smoother output.

    out[0] = in[0]; out[t] = alpha * out[t-1] + (1 - alpha) * in[t].
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"smoothing parameter must be in [0, 1), got {alpha}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot smooth an empty series")
    out = np.empty_like(values)
    out[0] = values[0]
    for t in range(1, values.size):
        out[t] = alpha * out[t - 1] + (1.0 - alpha) * values[t]
    return out


def uk_dst_transition_dates(start: dt.date, end: dt.date) -> list[dt.date]:
    """Last Sundays of March and October within [start, end)."""
    out = []
    for year in range(start.year, end.year + 1):
        for month in (3, 10):
            day = dt.date(year, month, 31)
            day -= dt.timedelta(days=(day.weekday() + 1) % 7)
            if start <= day < end:
                out.append(day)
    return out


@dataclass(frozen=True)
class PreparedData:
    """Aligned half-hourly load, temperature and smoothed temperature."""

    load: HalfHourlySeries
    temp: HalfHourlySeries
    temp95: HalfHourlySeries
    flagged_dates: tuple[dt.date, ...] = ()

    def __post_init__(self):
        from .series import check_same_span

        check_same_span(self.load, self.temp, ("load", "temp"))
        check_same_span(self.load, self.temp95, ("load", "temp95"))


def prepare(demand_path, station_files: list[tuple[str, float, str]],
            smoothing: float = 0.95, gap_limit: int = 2) -> PreparedData:
    """Run the full ingestion pipeline from raw CSVs.

    station_files is a list of (station_id, population, path).  Hourly
    station series are spline-interpolated to half-hourly, population
    weighted, then exponentially smoothed; everything is clipped to the
    days covered by both demand and weather.
    """
    load = load_demand_csv(demand_path, gap_limit=gap_limit)
    stations = []
    for station_id, population, path in station_files:
        hourly = load_weather_csv(path, station_id, population)
        ts, vals = interpolate_hourly_to_halfhourly(hourly)
        stations.append(StationSeries(station_id, population, ts, vals))
    temp_ts, temp_vals = population_weighted_temperature(stations)
    temp = _to_halfhourly(temp_ts, temp_vals)

    start = max(load.start_date, temp.start_date)
    end = min(load.end_date, temp.end_date)
    if start >= end:
        raise AlignmentError("demand and weather data share no complete day")
    load = load.restrict(start, end)
    temp = temp.restrict(start, end)
    temp95 = HalfHourlySeries(start, exponential_smooth(temp.values, smoothing))
    flagged = tuple(uk_dst_transition_dates(start, end))
    return PreparedData(load, temp, temp95, flagged)


def _to_halfhourly(ts: np.ndarray, values: np.ndarray) -> HalfHourlySeries:
    """Trim an aligned half-hourly (timestamps, values) pair to whole days."""
    ts = pd.DatetimeIndex(ts)
    slot0 = int((ts[0] - ts[0].normalize()) // pd.Timedelta("30min"))
    lead = (SLOTS_PER_DAY - slot0) % SLOTS_PER_DAY
    arr = np.asarray(values, dtype=float)[lead:]
    arr = arr[: (arr.size // SLOTS_PER_DAY) * SLOTS_PER_DAY]
    if arr.size == 0:
        raise IntegrityError("weather data covers no complete day")
    start = (ts[0].normalize() + pd.Timedelta(days=1 if lead else 0)).date()
    return HalfHourlySeries(start, arr)


def write_prepared_csv(data: PreparedData, path) -> None:
    """Dump the aligned series to a single columnar cache file."""
    idx = pd.date_range(
        pd.Timestamp(data.load.start_date),
        periods=data.load.values.size,
        freq="30min",
    )
    pd.DataFrame(
        {
            "timestamp": idx.strftime("%Y-%m-%dT%H:%M:%S"),
            "load": data.load.values,
            "temp": data.temp.values,
            "temp95": data.temp95.values,
        }
    ).to_csv(path, index=False)


def read_prepared_csv(path) -> PreparedData:
    """Load the cache written by write_prepared_csv."""
    df = pd.read_csv(path)
    ts = _parse_timestamps(df["timestamp"], path)
    start = ts.iloc[0]
    if start != start.normalize() or len(df) % SLOTS_PER_DAY:
        raise IntegrityError(f"{path}: cache must start at midnight and cover whole days")
    date = start.date()
    return PreparedData(
        HalfHourlySeries(date, df["load"].to_numpy()),
        HalfHourlySeries(date, df["temp"].to_numpy()),
        HalfHourlySeries(date, df["temp95"].to_numpy()),
        flagged_dates=tuple(uk_dst_transition_dates(date, date + dt.timedelta(days=len(df) // SLOTS_PER_DAY))),
    )
