"""Forecasting models behind a scikit-learn estimator surface.

Every model follows the same protocol: ``fit(train_dataset)``,
``predict(test_dataset)`` returning a frame indexed by date with ``dp``
(MW) and/or ``ip`` (slot) columns, and a ``targets`` attribute naming the
columns it produces.  The backtest driver clones and refits them per fold.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from . import baselines
from . import nn as nnet
from .basis import SmoothTerm
from .features import DOW_LEVELS, Dataset, mat_cols
from .gam import ModelSpec, fit_gam
from .series import SLOTS_PER_DAY


def highres_terms() -> tuple[SmoothTerm, ...]:
    """Half-hourly load model: univariate smooths plus slot interactions."""
    univariate = [("toy", 20), ("temp", 20), ("temp95", 24)]
    tensors = [("temp", 5, 5), ("temp95", 5, 5), ("load24", 5, 5), ("toy", 5, 5)]
    terms = [SmoothTerm("univariate", (c,), (k,)) for c, k in univariate]
    terms += [
        SmoothTerm("tensor2", (c, "t"), (k1, k2)) for c, k1, k2 in tensors
    ]
    return tuple(terms)


def lowres_terms() -> tuple[SmoothTerm, ...]:
    """Daily-aggregate model: one smooth per Table-2 covariate."""
    sizes = [
        ("IP24", 10), ("toy", 20), ("DP24", 20), ("tempMax", 20),
        ("temp95Max", 20), ("tempMin", 20), ("temp95Min", 20),
    ]
    return tuple(SmoothTerm("univariate", (c,), (k,)) for c, k in sizes)


def multires_terms() -> tuple[SmoothTerm, ...]:
    """Daily response with summed slot-surface terms for the 48-vectors."""
    return (
        SmoothTerm("univariate", ("toy",), (20,)),
        SmoothTerm("functional_tensor", ("matTem", "matInt"), (15, 10)),
        SmoothTerm("functional_tensor", ("matTem95", "matInt"), (5, 5)),
        SmoothTerm("functional_tensor", ("matLag", "matInt"), (5, 5)),
    )


DEFAULT_TERMS = {
    "high": highres_terms,
    "low": lowres_terms,
    "multi": multires_terms,
}


class PersistenceForecaster(BaseEstimator):
    """Yesterday's peak magnitude and instant, repeated."""

    targets = ("dp", "ip")

    def fit(self, train: Dataset):
        return self

    def predict(self, test: Dataset) -> pd.DataFrame:
        return baselines.persistence_forecast(test.daily)


class ArForecaster(BaseEstimator):
    """AIC-selected autoregression on daily peaks or per-slot loads."""

    def __init__(self, resolution: str = "low", max_p: int = 7):
        self.resolution = resolution
        self.max_p = max_p

    @property
    def targets(self):
        return ("dp", "ip") if self.resolution == "high" else ("dp",)

    def fit(self, train: Dataset):
        if self.resolution not in ("low", "high"):
            raise ValueError(f"unknown AR resolution {self.resolution!r}")
        if self.resolution == "low":
            self.train_dp_ = train.daily["DP"].to_numpy(float)
        else:
            self.train_days_ = train.demand.copy()
        return self

    def predict(self, test: Dataset) -> pd.DataFrame:
        if self.resolution == "low":
            dp = baselines.ar_forecast_lowres(
                self.train_dp_, test.daily["DP"].to_numpy(float), self.max_p
            )
            return pd.DataFrame({"dp": dp}, index=test.daily.index)
        dp, ip = baselines.ar_forecast_highres(
            self.train_days_, test.demand, self.max_p
        )
        return pd.DataFrame({"dp": dp, "ip": ip}, index=test.daily.index)


class GamForecaster(BaseEstimator):
    """Penalized additive model at one of the three resolutions.

    The high-resolution variant fits the half-hourly load and extracts the
    daily peak and its slot from the 48 per-day predictions; the low- and
    multi-resolution variants model the daily targets directly.
    """

    def __init__(self, resolution: str = "multi", family: str = "gaussian",
                 terms: tuple[SmoothTerm, ...] | None = None, lambdas=None):
        self.resolution = resolution
        self.family = family
        self.terms = terms
        self.lambdas = lambdas

    @property
    def targets(self):
        if self.resolution == "high":
            return ("dp", "ip")
        return ("ip",) if self.family == "ocat" else ("dp",)

    def _spec(self) -> ModelSpec:
        terms = self.terms if self.terms is not None else DEFAULT_TERMS[self.resolution]()
        if self.resolution == "high":
            return ModelSpec("load", "gaussian", ("dow", "t"), tuple(terms))
        response = "IP" if self.family == "ocat" else "DP"
        return ModelSpec(response, self.family, ("dow",), tuple(terms))

    def fit(self, train: Dataset):
        if self.resolution not in DEFAULT_TERMS:
            raise ValueError(f"unknown resolution {self.resolution!r}")
        frame = train.highres if self.resolution == "high" else train.daily
        self.fit_ = fit_gam(self._spec(), frame, lambdas=self.lambdas)
        return self

    def predict(self, test: Dataset) -> pd.DataFrame:
        if self.resolution == "high":
            mu = self.fit_.predict(test.highres)
            dates = test.highres["date"].to_numpy()
            unique_dates = pd.unique(dates)
            per_day = mu.reshape(len(unique_dates), SLOTS_PER_DAY)
            return pd.DataFrame(
                {"dp": per_day.max(axis=1), "ip": per_day.argmax(axis=1)},
                index=pd.Index(unique_dates, name="date"),
            )
        values = self.fit_.predict(test.daily)
        column = "ip" if self.family == "ocat" else "dp"
        return pd.DataFrame({column: values}, index=test.daily.index)


LOWRES_CONTINUOUS = ("tempMax", "tempMin", "temp95Max", "temp95Min", "DP24")
HIGHRES_CONTINUOUS = ("temp", "temp95", "load24")
MR_BLOCKS = (("tem", "matTem"), ("tem95", "matTem95"), ("lag", "matLag"))


class _Scaler:
    """Per-column standardisation frozen on the training fold."""

    def __init__(self, values: np.ndarray):
        self.mean = values.mean(axis=0)
        self.sd = np.where(values.std(axis=0) < 1e-12, 1.0, values.std(axis=0))

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.sd


def _onehot(values, levels) -> np.ndarray:
    arr = np.asarray(values)
    return np.column_stack([(arr == lev).astype(float) for lev in levels])


class NNForecaster(BaseEstimator):
    """FCNN/CNN models trained by minibatch gradient descent.

    hr_fcnn regresses the half-hourly load and derives both peak targets;
    lr_fcnn and mr_cnn model the daily peak magnitude (scalar head) or the
    peak instant (48-neuron ordinal head) directly.
    """

    def __init__(self, architecture: str = "lr_fcnn", target: str = "dp",
                 epochs: int | None = None, batch_size: int = 32,
                 learning_rate: float = 1e-3, optimizer: str = "adam",
                 seed: int = 0):
        self.architecture = architecture
        self.target = target
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.seed = seed

    @property
    def targets(self):
        if self.architecture == "hr_fcnn":
            return ("dp", "ip")
        return (self.target,)

    def _config(self, loss: str) -> nnet.TrainConfig:
        default_epochs = 20 if self.architecture == "hr_fcnn" else 200
        return nnet.TrainConfig(
            epochs=self.epochs if self.epochs is not None else default_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.seed,
            loss=loss,
        )

    # -------------------------------------------------- input assembly

    def _lowres_inputs(self, daily: pd.DataFrame, fit_scalers: bool):
        cont = daily[list(LOWRES_CONTINUOUS)].to_numpy(float)
        if fit_scalers:
            self.scaler_ = _Scaler(cont)
        parts = [
            self.scaler_(cont),
            daily["IP24"].to_numpy(float)[:, None] / (SLOTS_PER_DAY - 1),
            daily["toy"].to_numpy(float)[:, None],
            _onehot(daily["dow"], DOW_LEVELS),
        ]
        return {"main": np.column_stack(parts)}

    def _highres_inputs(self, highres: pd.DataFrame, fit_scalers: bool):
        cont = highres[list(HIGHRES_CONTINUOUS)].to_numpy(float)
        if fit_scalers:
            self.scaler_ = _Scaler(cont)
        parts = [
            self.scaler_(cont),
            highres["toy"].to_numpy(float)[:, None],
            _onehot(highres["dow"], DOW_LEVELS),
            _onehot(highres["t"], list(range(SLOTS_PER_DAY))),
        ]
        return {"main": np.column_stack(parts)}

    def _multires_inputs(self, daily: pd.DataFrame, fit_scalers: bool):
        slot_channel = np.tile(
            np.arange(SLOTS_PER_DAY, dtype=float) / (SLOTS_PER_DAY - 1),
            (len(daily), 1),
        )
        inputs = {
            "lowres": np.column_stack(
                [daily["toy"].to_numpy(float)[:, None], _onehot(daily["dow"], DOW_LEVELS)]
            )
        }
        if fit_scalers:
            self.mat_scalers_ = {}
        for branch, mat in MR_BLOCKS:
            values = daily[mat_cols(mat)].to_numpy(float)
            if fit_scalers:
                mean, sd = values.mean(), max(values.std(), 1e-12)
                self.mat_scalers_[branch] = (mean, sd)
            mean, sd = self.mat_scalers_[branch]
            inputs[branch] = np.stack(
                [(values - mean) / sd, slot_channel], axis=1
            )
        return inputs

    def _inputs(self, data: Dataset, fit_scalers: bool = False):
        if self.architecture == "hr_fcnn":
            return self._highres_inputs(data.highres, fit_scalers)
        if self.architecture == "lr_fcnn":
            return self._lowres_inputs(data.daily, fit_scalers)
        if self.architecture == "mr_cnn":
            return self._multires_inputs(data.daily, fit_scalers)
        raise ValueError(f"unknown architecture {self.architecture!r}")

    # ------------------------------------------------------ fit/predict

    def fit(self, train: Dataset):
        inputs = self._inputs(train, fit_scalers=True)
        head_target = "dp" if self.architecture == "hr_fcnn" else self.target
        n_inputs = (
            inputs["main"].shape[1] if "main" in inputs else inputs["lowres"].shape[1]
        )
        spec = nnet.build_architecture(self.architecture, head_target, n_inputs=n_inputs)
        self.net_ = nnet.Network(spec, seed=self.seed)

        if self.architecture == "hr_fcnn":
            raw = train.highres["load"].to_numpy(float)
            self.target_scale_ = float(raw.mean())
            y = raw / self.target_scale_
            loss = "mse"
        elif head_target == "dp":
            raw = train.daily["DP"].to_numpy(float)
            self.target_scale_ = float(raw.mean())
            y = raw / self.target_scale_
            loss = "mse"
        else:
            y = nnet.ordinal_encode_batch(train.daily["IP"].to_numpy(int))
            self.target_scale_ = 1.0
            loss = "ordinal_bce"
        self.loss_trace_ = nnet.train(self.net_, inputs, y, self._config(loss))
        return self

    def predict(self, test: Dataset) -> pd.DataFrame:
        inputs = self._inputs(test)
        out = self.net_.forward(inputs, train=False)
        if self.architecture == "hr_fcnn":
            load = out.ravel() * self.target_scale_
            per_day = load.reshape(-1, SLOTS_PER_DAY)
            return pd.DataFrame(
                {"dp": per_day.max(axis=1), "ip": per_day.argmax(axis=1)},
                index=test.daily.index,
            )
        if self.target == "dp":
            return pd.DataFrame(
                {"dp": out.ravel() * self.target_scale_}, index=test.daily.index
            )
        return pd.DataFrame(
            {"ip": nnet.ordinal_decode_batch(out)}, index=test.daily.index
        )


MODEL_CLASSES = {
    "persistence": PersistenceForecaster,
    "ar": ArForecaster,
    "gam": GamForecaster,
    "nn": NNForecaster,
}


def build_model(entry: dict) -> BaseEstimator:
    """Instantiate a roster entry: {'class': ..., **constructor args}."""
    entry = dict(entry)
    kind = entry.pop("class", None)
    if kind not in MODEL_CLASSES:
        raise ValueError(f"unknown model class {kind!r}")
    if kind == "gam" and "terms" in entry:
        entry["terms"] = tuple(_term_from_config(t) for t in entry["terms"])
    return MODEL_CLASSES[kind](**entry)


def _term_from_config(item) -> SmoothTerm:
    """Accept SmoothTerm instances or config dicts.

    Dict forms: {'smooth': {'cov': 'toy', 'k': 20}} or
    {'tensor': {'cov1': 'matTem', 'cov2': 'matInt', 'k1': 15, 'k2': 10,
    'functional': True}}.
    """
    if isinstance(item, SmoothTerm):
        return item
    if "smooth" in item:
        d = item["smooth"]
        return SmoothTerm("univariate", (d["cov"],), (int(d["k"]),))
    if "tensor" in item:
        d = item["tensor"]
        kind = "functional_tensor" if d.get("functional") else "tensor2"
        return SmoothTerm(kind, (d["cov1"], d["cov2"]), (int(d["k1"]), int(d["k2"])))
    raise ValueError(f"unrecognised term config {item!r}")
