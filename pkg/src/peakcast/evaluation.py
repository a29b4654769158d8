"""Rolling-origin backtesting, scoring metrics and uncertainty estimates."""

from __future__ import annotations

import datetime as dt
import json
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.base import clone

from .features import Dataset

log = logging.getLogger(__name__)

DP_METRICS = ("mape", "mae", "rmse")
IP_METRICS = ("r_accuracy", "mae", "rmse", "d_rmse")
BOOTSTRAP_QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


class MetricError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


def add_months(date: dt.date, months: int) -> dt.date:
    month_index = date.month - 1 + months
    year = date.year + month_index // 12
    month = month_index % 12 + 1
    # clamp to the target month's length
    next_month = dt.date(year + month // 12, month % 12 + 1, 1)
    last_day = (next_month - dt.timedelta(days=1)).day
    return dt.date(year, month, min(date.day, last_day))


@dataclass(frozen=True)
class Fold:
    train_start: dt.date
    train_end: dt.date  # exclusive; equals test_start
    test_end: dt.date  # exclusive

    @property
    def test_start(self) -> dt.date:
        return self.train_end


@dataclass(frozen=True)
class RollingSchedule:
    """Monthly-expanding training windows with contiguous test months."""

    initial_train_end: dt.date
    test_end: dt.date
    folds: tuple[Fold, ...]


def build_schedule(start: dt.date, end: dt.date,
                   initial_train_months: int = 12,
                   refit_months: int = 1) -> RollingSchedule:
    """Fold k trains on [start, initial_end + k refits), tests the next month."""
    initial_end = add_months(start, initial_train_months)
    if add_months(initial_end, refit_months) > end:
        raise ScheduleError(
            f"span [{start}, {end}) too short for {initial_train_months} months "
            f"of training plus one {refit_months}-month test window"
        )
    folds = []
    test_start = initial_end
    while test_start < end:
        test_stop = min(add_months(test_start, refit_months), end)
        folds.append(Fold(start, test_start, test_stop))
        test_start = test_stop
    return RollingSchedule(initial_end, folds[-1].test_end, tuple(folds))


# ----------------------------------------------------------------- metrics

def mape(forecast, actual) -> float:
    forecast, actual = _aligned(forecast, actual)
    if np.any(actual <= 0):
        raise MetricError("MAPE requires strictly positive actuals")
    return 100.0 * float(np.mean(np.abs(actual - forecast) / actual))


def mae(forecast, actual) -> float:
    forecast, actual = _aligned(forecast, actual)
    return float(np.mean(np.abs(actual - forecast)))


def rmse(forecast, actual) -> float:
    forecast, actual = _aligned(forecast, actual)
    return float(np.sqrt(np.mean((actual - forecast) ** 2)))


def r_accuracy(ip_forecast, ip_actual, window: int = 2) -> float:
    """Share of days with the forecast instant within two slots, percent."""
    f, a = _aligned(ip_forecast, ip_actual)
    return 100.0 * float(np.mean(np.abs(f - a) <= window))


def d_rmse(ip_forecast, demand_days, squared: bool = True) -> float:
    """Demand gap between the true peak and the demand at the forecast slot.

    ``squared`` uses the root-mean-squared-difference reading; the
    plain-difference variant (root of the mean gap, nonnegative since no
    slot exceeds the peak) stays available for comparison.
    """
    demand_days = np.asarray(demand_days, dtype=float)
    ip_forecast = np.asarray(ip_forecast, dtype=int)
    if demand_days.ndim != 2 or demand_days.shape[0] != ip_forecast.size:
        raise MetricError("one demand day per forecast required")
    peaks = demand_days.max(axis=1)
    at_forecast = demand_days[np.arange(ip_forecast.size), ip_forecast]
    gap = peaks - at_forecast
    if squared:
        return float(np.sqrt(np.mean(gap**2)))
    return float(np.sqrt(np.mean(gap)))


def _aligned(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


# --------------------------------------------------------------- bootstrap

def block_bootstrap(values, stat, n_samples: int, block_size: int = 7,
                    rng=None, seed: int = 0) -> np.ndarray:
    """Moving-block resampling of a per-day series; recomputes ``stat``.

    Blocks of ``block_size`` consecutive days are drawn with replacement
    (starts uniform over all valid positions), concatenated and truncated
    to the original length.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < block_size:
        raise MetricError(f"need at least {block_size} days, got {n}")
    if rng is None:
        rng = np.random.default_rng(seed)
    n_blocks = int(np.ceil(n / block_size))
    starts = rng.integers(0, n - block_size + 1, size=(n_samples, n_blocks))
    offsets = np.arange(block_size)
    idx = (starts[:, :, None] + offsets[None, None, :]).reshape(n_samples, -1)[:, :n]
    return np.array([stat(row) for row in values[idx]])


@dataclass(frozen=True)
class DMResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def dm_test(loss_a, loss_b) -> DMResult:
    """Equal-expected-loss test for two per-day loss series (horizon 1).

    Uses the lag-0 variance of the loss differential, the small-sample
    correction factor sqrt((n-1)/n), and a Student-t(n-1) reference.
    Identical losses yield the degenerate result p=1.
    """
    a, b = _aligned(loss_a, loss_b)
    n = a.size
    if n < 10:
        raise MetricError(f"need at least 10 losses, got {n}")
    d = a - b
    dbar = float(np.mean(d))
    gamma0 = float(np.mean((d - dbar) ** 2))
    if gamma0 <= 1e-30 * max(1.0, dbar**2):
        return DMResult(0.0, 1.0, degenerate=True)
    statistic = dbar / np.sqrt(gamma0 / n)
    statistic *= np.sqrt((n - 1) / n)  # h=1 small-sample correction
    p = 2.0 * float(stats.t.sf(abs(statistic), df=n - 1))
    return DMResult(float(statistic), p)


# ---------------------------------------------------------------- backtest

@dataclass
class BacktestReport:
    forecasts: pd.DataFrame
    metrics: dict  # model -> metric -> window -> value
    bootstrap: dict  # model -> metric -> quantile-label -> value
    dm: dict  # variant -> model_a -> model_b -> p-value
    traces: dict  # model -> metric -> list of {month, value}
    failures: dict  # model -> diagnostic
    audit_passed: bool
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "models": sorted(self.metrics),
            "metrics": self.metrics,
            "bootstrap": self.bootstrap,
            "dm": self.dm,
            "traces": self.traces,
            "failures": self.failures,
            "audit_passed": self.audit_passed,
            "config": self.config,
        }
        return json.dumps(payload, sort_keys=True, indent=1)


def _task_rng(seed: int, *labels) -> np.random.Generator:
    """Deterministic per-task stream keyed on (seed, label crc32s)."""
    keys = [zlib.crc32(str(label).encode()) for label in labels]
    return np.random.default_rng([seed & 0xFFFFFFFF, *keys])


def leakage_audit(train: Dataset, test_start: dt.date) -> None:
    """Assert no feature value in the training view reaches the test span.

    Checks both view boundaries and lag provenance: every lagged feature
    must equal the observation of the previous calendar day, never a
    later one.
    """
    if len(train.daily) and train.daily.index.max() >= test_start:
        raise AssertionError(
            f"daily feature row {train.daily.index.max()} not before {test_start}"
        )
    if len(train.highres) and train.highres["date"].max() >= test_start:
        raise AssertionError(
            f"half-hourly feature row {train.highres['date'].max()} "
            f"not before {test_start}"
        )
    from .features import mat_cols

    daily = train.daily
    dates = daily.index.to_numpy()
    consecutive = np.flatnonzero(
        np.array([(b - a).days for a, b in zip(dates[:-1], dates[1:])]) == 1
    )
    if consecutive.size:
        lag = daily[mat_cols("matLag")].to_numpy()
        if not np.array_equal(lag[consecutive + 1], train.demand[consecutive]):
            raise AssertionError("lagged demand vectors do not match the previous day")
        dp24 = daily["DP24"].to_numpy()
        if not np.array_equal(dp24[consecutive + 1], daily["DP"].to_numpy()[consecutive]):
            raise AssertionError("previous-day peak feature does not match the lag")


def run_backtest(models: dict, schedule: RollingSchedule, dataset: Dataset,
                 seed: int = 0, bootstrap_k: int = 1000, block_size: int = 7,
                 audit: bool = True, last_year_months: int = 12) -> BacktestReport:
    """Refit every model per fold and score the pooled test forecasts.

    Models follow the estimator protocol: ``fit(train_dataset)``,
    ``predict(test_dataset) -> DataFrame`` with ``dp`` and/or ``ip``
    columns, and a ``targets`` attribute.  A model that fails on any fold
    is dropped from the report with its diagnostic; the rest proceed.
    """
    rows = []
    failures: dict[str, str] = {}
    for fold in schedule.folds:
        train = dataset.restrict(fold.train_start, fold.train_end)
        test = dataset.restrict(fold.test_start, fold.test_end)
        if len(test.daily) == 0:
            continue
        if audit:
            leakage_audit(train, fold.test_start)
        for name, prototype in models.items():
            if name in failures:
                continue
            try:
                model = clone(prototype)
                model.fit(train)
                pred = model.predict(test)
            except Exception as exc:  # noqa: BLE001 - per-model isolation
                failures[name] = f"fold {fold.test_start}: {exc!r}"
                log.warning("model %s aborted: %s", name, failures[name])
                continue
            for date, row in pred.iterrows():
                rows.append(
                    {
                        "date": date,
                        "model_id": name,
                        "dp_forecast": row.get("dp", np.nan),
                        "dp_actual": dataset.daily.at[date, "DP"],
                        "ip_forecast": row.get("ip", np.nan),
                        "ip_actual": dataset.daily.at[date, "IP"],
                    }
                )

    forecasts = pd.DataFrame(
        rows, columns=["date", "model_id", "dp_forecast", "dp_actual",
                       "ip_forecast", "ip_actual"]
    )
    surviving = [m for m in models if m not in failures]
    last_year_start = add_months(schedule.test_end, -last_year_months)

    metrics_table: dict = {}
    bootstrap_table: dict = {}
    traces: dict = {}
    day_losses: dict = {}
    for name in surviving:
        sub = forecasts[forecasts["model_id"] == name].set_index("date").sort_index()
        metrics_table[name] = {}
        bootstrap_table[name] = {}
        traces[name] = {}
        windows = {
            "all": sub,
            "last_year": sub[sub.index >= last_year_start],
        }
        per_day = _per_day_losses(models[name].targets, windows["last_year"], dataset)
        day_losses[name] = per_day
        for metric, (values, stat) in per_day.items():
            rng = _task_rng(seed, "bootstrap", name, metric)
            samples = block_bootstrap(values, stat, bootstrap_k, block_size, rng=rng)
            bootstrap_table[name][metric] = {
                str(q): float(np.percentile(samples, q)) for q in BOOTSTRAP_QUANTILES
            }
        for window_name, frame in windows.items():
            for metric, value in _frame_metrics(models[name].targets, frame, dataset).items():
                metrics_table[name].setdefault(metric, {})[window_name] = value
        traces[name] = _cumulative_traces(models[name].targets, sub, dataset, schedule)

    dm_matrices = _dm_matrices(surviving, forecasts, last_year_start)

    return BacktestReport(
        forecasts=forecasts,
        metrics=metrics_table,
        bootstrap=bootstrap_table,
        dm=dm_matrices,
        traces=traces,
        failures=failures,
        audit_passed=audit,
        config={
            "seed": seed,
            "bootstrap_k": bootstrap_k,
            "block_size": block_size,
            "last_year_start": last_year_start.isoformat(),
        },
    )


def _frame_metrics(targets, frame, dataset: Dataset) -> dict:
    out = {}
    if len(frame) == 0:
        return out
    if "dp" in targets:
        f, a = frame["dp_forecast"].to_numpy(), frame["dp_actual"].to_numpy()
        out["mape"] = mape(f, a)
        out["mae"] = mae(f, a)
        out["rmse"] = rmse(f, a)
    if "ip" in targets:
        f, a = frame["ip_forecast"].to_numpy(), frame["ip_actual"].to_numpy()
        out["ip_r_accuracy"] = r_accuracy(f, a)
        out["ip_mae"] = mae(f, a)
        out["ip_rmse"] = rmse(f, a)
        demand = dataset.demand_for(frame.index)
        out["ip_d_rmse"] = d_rmse(f.astype(int), demand)
    return out


def _per_day_losses(targets, frame, dataset: Dataset) -> dict:
    """Per-day loss vectors and the statistic mapping them to each metric."""
    out = {}
    if len(frame) == 0:
        return out
    if "dp" in targets:
        f, a = frame["dp_forecast"].to_numpy(), frame["dp_actual"].to_numpy()
        if np.any(a <= 0):
            raise MetricError("MAPE requires strictly positive actuals")
        out["mape"] = (np.abs(a - f) / a, lambda v: 100.0 * float(np.mean(v)))
        out["mae"] = (np.abs(a - f), lambda v: float(np.mean(v)))
        out["rmse"] = ((a - f) ** 2, lambda v: float(np.sqrt(np.mean(v))))
    if "ip" in targets:
        f = frame["ip_forecast"].to_numpy()
        a = frame["ip_actual"].to_numpy()
        out["ip_r_accuracy"] = (
            (np.abs(f - a) <= 2).astype(float),
            lambda v: 100.0 * float(np.mean(v)),
        )
        out["ip_mae"] = (np.abs(f - a), lambda v: float(np.mean(v)))
        out["ip_rmse"] = ((f - a) ** 2, lambda v: float(np.sqrt(np.mean(v))))
        demand = dataset.demand_for(frame.index)
        peaks = demand.max(axis=1)
        at_forecast = demand[np.arange(len(frame)), f.astype(int)]
        out["ip_d_rmse"] = (
            (peaks - at_forecast) ** 2,
            lambda v: float(np.sqrt(np.mean(v))),
        )
    return out


def _cumulative_traces(targets, sub, dataset: Dataset, schedule) -> dict:
    """Metric over all forecasts up to each fold's end, one point per fold."""
    traces: dict = {}
    for fold in schedule.folds:
        upto = sub[sub.index < fold.test_end]
        if len(upto) == 0:
            continue
        for metric, value in _frame_metrics(targets, upto, dataset).items():
            traces.setdefault(metric, []).append(
                {"month": fold.test_end.isoformat(), "value": value}
            )
    return traces


def _dm_matrices(surviving, forecasts, last_year_start) -> dict:
    """Pairwise equal-loss tests on last-year DP errors, both loss shapes."""
    dp_errors = {}
    for name in surviving:
        sub = forecasts[forecasts["model_id"] == name].set_index("date").sort_index()
        sub = sub[sub.index >= last_year_start]
        if len(sub) and not sub["dp_forecast"].isna().any():
            dp_errors[name] = (
                sub["dp_forecast"].to_numpy() - sub["dp_actual"].to_numpy(),
                sub.index,
            )
    out: dict = {"abs": {}, "sq": {}}
    names = list(dp_errors)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            err_a, idx_a = dp_errors[a]
            err_b, idx_b = dp_errors[b]
            common = idx_a.intersection(idx_b)
            if len(common) < 10:
                continue
            ea = pd.Series(err_a, index=idx_a).loc[common].to_numpy()
            eb = pd.Series(err_b, index=idx_b).loc[common].to_numpy()
            out["abs"].setdefault(a, {})[b] = dm_test(np.abs(ea), np.abs(eb)).p_value
            out["sq"].setdefault(a, {})[b] = dm_test(ea**2, eb**2).p_value
    return out
