"""Daily peak electricity demand forecasting from mixed-resolution inputs."""

__version__ = "0.1.0"

from .basis import SmoothTerm
from .features import Dataset
from .forecasters import (
    ArForecaster,
    GamForecaster,
    NNForecaster,
    PersistenceForecaster,
    build_model,
)
from .gam import FittedModel, ModelSpec, fit_gam
from .evaluation import BacktestReport, build_schedule, run_backtest

__all__ = [
    "__version__",
    "SmoothTerm",
    "Dataset",
    "ArForecaster",
    "GamForecaster",
    "NNForecaster",
    "PersistenceForecaster",
    "build_model",
    "FittedModel",
    "ModelSpec",
    "fit_gam",
    "BacktestReport",
    "build_schedule",
    "run_backtest",
]
