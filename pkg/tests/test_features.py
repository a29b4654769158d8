"""Daily table and half-hourly row construction."""

import datetime as dt

import numpy as np
import pytest

from peakcast.features import (
    Dataset,
    build_daily_table,
    build_highres_rows,
    daily_peaks,
    mat_cols,
    time_of_year,
)
from peakcast.series import HalfHourlySeries, IntegrityError

START = dt.date(2020, 1, 6)


def _series(day_values):
    return HalfHourlySeries(START, np.concatenate(day_values).astype(float))


class TestTimeOfYear:
    def test_january_first(self):
        assert time_of_year(dt.date(2021, 1, 1)) == 0.0

    def test_mid_year(self):
        assert time_of_year(dt.date(2021, 7, 2)) == pytest.approx(182 / 365)

    def test_december_end(self):
        assert time_of_year(dt.date(2021, 12, 31)) == pytest.approx(364 / 365)

    def test_leap_year(self):
        assert time_of_year(dt.date(2020, 12, 31)) == pytest.approx(365 / 366)
        assert time_of_year(dt.date(2020, 3, 1)) == pytest.approx(60 / 366)


class TestDailyPeaks:
    def test_constant_day_ties_to_first_slot(self):
        dp, ip = daily_peaks(_series([np.full(48, 5.0)]))
        assert dp[0] == 5.0 and ip[0] == 0

    def test_unique_maximum(self):
        day = np.concatenate([np.linspace(0, 10, 37), np.linspace(9, 1, 11)])
        dp, ip = daily_peaks(_series([day]))
        assert ip[0] == 36

    def test_tie_break_first_occurrence(self):
        day = np.zeros(48)
        day[17] = day[36] = 9.0
        # brute-force scan oracle
        best = max(range(48), key=lambda t: (day[t], -t))
        dp, ip = daily_peaks(_series([day]))
        assert ip[0] == best == 17


class TestDailyTable:
    def test_two_identical_days(self):
        day = np.sin(np.linspace(0, 3, 48)) * 10 + 30
        load = _series([day, day])
        temp = _series([np.full(48, 10.0)] * 2)
        df = build_daily_table(load, temp, temp)
        assert len(df) == 1
        assert df["DP24"].iloc[0] == df["DP"].iloc[0]
        assert df["IP24"].iloc[0] == df["IP"].iloc[0]
        assert np.array_equal(df[mat_cols("matLag")].iloc[0].to_numpy(), day)

    def test_constant_temperature_aggregates(self):
        load = _series([np.arange(48.0)] * 2)
        temp = _series([np.full(48, 10.0)] * 2)
        df = build_daily_table(load, temp, temp)
        assert df["tempMax"].iloc[0] == 10.0
        assert df["tempMin"].iloc[0] == 10.0

    def test_three_day_ramp_against_column_oracle(self):
        rng = np.random.default_rng(7)
        days = [rng.normal(30, 5, size=48) for _ in range(3)]
        temps = [rng.normal(10, 2, size=48) for _ in range(3)]
        t95 = [t * 0.5 for t in temps]
        df = build_daily_table(_series(days), _series(temps), _series(t95))
        assert len(df) == 2
        for row, d in enumerate((1, 2)):
            assert df["DP"].iloc[row] == days[d].max()
            assert df["IP"].iloc[row] == days[d].argmax()
            assert df["DP24"].iloc[row] == days[d - 1].max()
            assert df["tempMax"].iloc[row] == temps[d].max()
            assert df["tempMin"].iloc[row] == temps[d].min()
            assert df["temp95Max"].iloc[row] == t95[d].max()
            assert np.array_equal(df[mat_cols("matTem")].iloc[row].to_numpy(), temps[d])
            assert np.array_equal(df[mat_cols("matLag")].iloc[row].to_numpy(), days[d - 1])

    def test_temp_max_at_least_min(self, dataset):
        assert (dataset.daily["tempMax"] >= dataset.daily["tempMin"]).all()

    def test_matint_is_identity_broadcast(self, dataset):
        mat = dataset.daily[mat_cols("matInt")].to_numpy()
        assert np.array_equal(mat, np.tile(np.arange(48.0), (len(dataset.daily), 1)))

    def test_exclusion_drops_successor_too(self):
        days = [np.full(48, float(i + 1)) for i in range(5)]
        temp = [np.zeros(48)] * 5
        df = build_daily_table(_series(days), _series(temp), _series(temp),
                               exclude_dates=(START + dt.timedelta(days=2),))
        dates = list(df.index)
        assert START + dt.timedelta(days=2) not in dates
        assert START + dt.timedelta(days=3) not in dates
        assert len(df) == 2

    def test_needs_two_days(self):
        one = _series([np.arange(48.0)])
        with pytest.raises(IntegrityError):
            build_daily_table(one, one, one)


class TestHighResRows:
    def test_two_day_input_keeps_48_rows(self):
        rng = np.random.default_rng(3)
        load = _series([rng.normal(size=48), rng.normal(size=48)])
        temp = _series([np.zeros(48)] * 2)
        df = build_highres_rows(load, temp, temp)
        assert len(df) == 48
        assert set(df["t"]) == set(range(48))

    def test_lag_column_is_previous_day_same_slot(self, dataset):
        hr = dataset.highres
        day_one = hr[hr["date"] == hr["date"].iloc[0]]
        full = dataset  # lag of retained day 1 is the dropped day 0's load
        assert not day_one["load24"].isna().any()
        later = hr[hr["date"] == hr["date"].iloc[100 * 48]]
        previous = hr[hr["date"] == hr["date"].iloc[99 * 48]]
        assert np.array_equal(later["load24"].to_numpy(), previous["load"].to_numpy())

    def test_single_row_against_index_oracle(self):
        rng = np.random.default_rng(11)
        days = [rng.normal(size=48) for _ in range(3)]
        temp = [rng.normal(size=48) for _ in range(3)]
        df = build_highres_rows(_series(days), _series(temp), _series(temp))
        row = df[(df["date"] == START + dt.timedelta(days=1)) & (df["t"] == 7)]
        assert row["load"].iloc[0] == days[1][7]
        assert row["load24"].iloc[0] == days[0][7]
        assert row["temp"].iloc[0] == temp[1][7]


class TestDatasetConsistency:
    def test_peak_matches_demand_matrix(self, dataset):
        ip = dataset.daily["IP"].to_numpy()
        dp = dataset.daily["DP"].to_numpy()
        at_ip = dataset.demand[np.arange(len(dp)), ip]
        assert np.array_equal(at_ip, dp)

    def test_daily_and_highres_agree(self, dataset):
        hr = dataset.highres
        per_day_max = hr.groupby("date", sort=False)["load"].max().to_numpy()
        assert np.array_equal(per_day_max, dataset.daily["DP"].to_numpy())

    def test_restrict_view(self, dataset):
        start = dataset.dates[10]
        end = dataset.dates[20]
        view = dataset.restrict(start, end)
        assert view.daily.index.min() >= start
        assert view.daily.index.max() < end
        assert len(view.highres) == len(view.daily) * 48
        assert view.demand.shape[0] == len(view.daily)
