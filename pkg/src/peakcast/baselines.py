"""Persistence and autoregressive reference forecasters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class ARModel:
    """Least-squares AR(p) with intercept, order chosen by AIC."""

    order: int
    coefficients: np.ndarray  # phi_1..phi_p, most recent lag first
    intercept: float
    noise_variance: float

    def forecast_one(self, history: np.ndarray) -> float:
        """One-step-ahead forecast given the trailing observations."""
        if self.order == 0:
            return self.intercept
        recent = np.asarray(history, dtype=float)[-self.order:][::-1]
        return float(self.intercept + self.coefficients @ recent)


def persistence_forecast(daily: pd.DataFrame) -> pd.DataFrame:
    """Yesterday's peak and peak instant as today's forecast."""
    return pd.DataFrame(
        {"dp": daily["DP24"].to_numpy(float), "ip": daily["IP24"].to_numpy(int)},
        index=daily.index,
    )


def fit_ar(series: np.ndarray, max_p: int = 7) -> ARModel:
    """Fit AR(p) for p in 0..max_p, keeping the AIC minimiser.

    All candidate orders are scored on rows max_p.. so their AICs are
    comparable: AIC = n log(RSS/n) + 2 (p + 2).
    """
    series = np.asarray(series, dtype=float)
    if series.size <= max_p + 10:
        raise ValueError(
            f"series of length {series.size} too short for max order {max_p}"
        )
    if np.std(series) < 1e-12:
        return ARModel(0, np.zeros(0), float(series[0]), 0.0)

    n = series.size - max_p
    target = series[max_p:]
    best = None
    for p in range(max_p + 1):
        cols = [np.ones(n)]
        cols += [series[max_p - k : max_p - k + n] for k in range(1, p + 1)]
        design = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        rss = float(resid @ resid)
        aic = n * np.log(max(rss, 1e-300) / n) + 2.0 * (p + 2)
        if best is None or aic < best[0]:
            best = (aic, p, coef, rss)
    _, p, coef, rss = best
    return ARModel(p, coef[1:], float(coef[0]), rss / n)


def ar_forecast_lowres(train_dp: np.ndarray, test_dp: np.ndarray,
                       max_p: int = 7) -> np.ndarray:
    """One-step daily-peak forecasts over the test span.

    The model is fitted once on the training peaks (the caller refits per
    rolling-origin fold); each test day is forecast from the actual
    history up to the previous day.
    """
    model = fit_ar(train_dp, max_p)
    history = list(np.asarray(train_dp, dtype=float))
    out = np.empty(len(test_dp))
    for i, actual in enumerate(np.asarray(test_dp, dtype=float)):
        out[i] = model.forecast_one(np.asarray(history))
        history.append(actual)
    return out


def ar_forecast_highres(train_days: np.ndarray, test_days: np.ndarray,
                        max_p: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot AR forecasts combined into daily peak and instant.

    ``train_days``/``test_days`` are (n_days, 48) matrices.  Each of the
    48 slot series gets its own AR model at horizon 1; the combined peak
    forecast is the max over slots and the instant its first argmax.
    """
    train_days = np.asarray(train_days, dtype=float)
    test_days = np.asarray(test_days, dtype=float)
    n_test, n_slots = test_days.shape
    slot_forecasts = np.empty((n_test, n_slots))
    for t in range(n_slots):
        slot_forecasts[:, t] = ar_forecast_lowres(
            train_days[:, t], test_days[:, t], max_p
        )
    return slot_forecasts.max(axis=1), slot_forecasts.argmax(axis=1)
