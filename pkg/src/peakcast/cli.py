"""Pipeline driver: prepare, fit, backtest and report subcommands.

One TOML config declares the data files, station weights, rolling
schedule and the model roster; every run writes a manifest with the
config hash, package version and seeds so results can be reproduced
exactly.  Exit codes: 0 success, 1 config error, 2 data error, 3 one or
more models failed.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .evaluation import build_schedule, run_backtest

log = logging.getLogger(__name__)

TABLE_UNIT_MW = 100.0  # metric tables report MW and this 0.1-GW unit

DP_METRIC_COLUMNS = ("mape", "mae", "rmse")
IP_METRIC_COLUMNS = ("ip_r_accuracy", "ip_mae", "ip_rmse", "ip_d_rmse")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    demand: str
    stations: tuple[dict, ...]
    prepared: str = "prepared.csv"
    smoothing: float = 0.95
    gap_limit: int = 2
    exclude_flagged: bool = False
    initial_train_months: int = 12
    refit_months: int = 1
    seed: int = 1
    bootstrap_k: int = 1000
    block_size: int = 7
    out: str = "outputs"
    models: tuple[tuple[str, dict], ...] = ()
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "RunConfig":
        try:
            data = raw.get("data", {})
            schedule = raw.get("schedule", {})
            run = raw.get("run", {})
            models = raw.get("models", {})
            if not models:
                raise ConfigError("config declares no models")
            if "seed" not in run:
                raise ConfigError("run.seed is mandatory")
            return cls(
                demand=data.get("demand", "demand.csv"),
                stations=tuple(raw.get("stations", ())),
                prepared=data.get("prepared", "prepared.csv"),
                smoothing=float(data.get("smoothing", 0.95)),
                gap_limit=int(data.get("gap_limit", 2)),
                exclude_flagged=bool(data.get("exclude_flagged", False)),
                initial_train_months=int(schedule.get("initial_train_months", 12)),
                refit_months=int(schedule.get("refit_months", 1)),
                seed=int(run["seed"]),
                bootstrap_k=int(run.get("bootstrap_k", 1000)),
                block_size=int(run.get("block_size", 7)),
                out=run.get("out", "outputs"),
                models=tuple((name, dict(entry)) for name, entry in models.items()),
                base_dir=base_dir,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "data": {
                "demand": self.demand,
                "prepared": self.prepared,
                "smoothing": self.smoothing,
                "gap_limit": self.gap_limit,
                "exclude_flagged": self.exclude_flagged,
            },
            "stations": [dict(s) for s in self.stations],
            "schedule": {
                "initial_train_months": self.initial_train_months,
                "refit_months": self.refit_months,
            },
            "run": {
                "seed": self.seed,
                "bootstrap_k": self.bootstrap_k,
                "block_size": self.block_size,
                "out": self.out,
            },
            "models": {name: dict(entry) for name, entry in self.models},
        }

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return RunConfig.from_dict(raw, base_dir=str(path.parent))


def config_hash(config: RunConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_manifest(config: RunConfig, command: str, extra: dict | None = None):
    config.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    if extra:
        manifest.update(extra)
    with open(config.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


# ------------------------------------------------------------- subcommands

def _load_prepared(config: RunConfig):
    from .ingest import read_prepared_csv

    prepared_path = config.path(config.prepared)
    if not prepared_path.exists():
        raise FileNotFoundError(
            f"prepared cache {prepared_path} missing; run `peakcast prepare` first"
        )
    return read_prepared_csv(prepared_path)


def _dataset(config: RunConfig):
    from .features import Dataset

    return Dataset.from_prepared(_load_prepared(config), config.exclude_flagged)


def cmd_prepare(config: RunConfig) -> int:
    from .features import Dataset, write_daily_csv, write_highres_csv
    from .ingest import prepare, write_prepared_csv

    station_files = []
    for st in config.stations:
        file_name = st.get("file", f"{st['id']}.csv")
        path = config.path(file_name)
        if not path.exists():
            raise FileNotFoundError(f"weather file for station {st['id']!r}: {path}")
        station_files.append((st["id"], float(st["population"]), path))
    data = prepare(
        config.path(config.demand), station_files,
        smoothing=config.smoothing, gap_limit=config.gap_limit,
    )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    write_prepared_csv(data, config.path(config.prepared))
    dataset = Dataset.from_prepared(data, config.exclude_flagged)
    write_daily_csv(dataset.daily, config.out_dir / "daily.csv")
    write_highres_csv(dataset.highres, config.out_dir / "highres.csv")
    write_manifest(config, "prepare", {
        "rows": {
            "half_hourly": int(data.load.values.size),
            "daily": int(len(dataset.daily)),
            "highres": int(len(dataset.highres)),
        },
        "flagged_dates": [d.isoformat() for d in data.flagged_dates],
    })
    print(f"prepared {data.load.n_days} days -> {config.path(config.prepared)}")
    if data.flagged_dates:
        print(f"flagged {len(data.flagged_dates)} DST transition date(s)")
    return 0


def _roster(config: RunConfig, only: list[str] | None):
    from .forecasters import build_model

    models = {}
    for name, entry in config.models:
        if only and name not in only:
            continue
        models[name] = build_model(entry)
    if not models:
        raise ConfigError("model roster is empty after filtering")
    return models


def cmd_fit(config: RunConfig, only=None) -> int:
    """Fit each roster model on the full prepared span and persist it."""
    dataset = _dataset(config)
    models = _roster(config, only)
    out = config.out_dir / "models"
    out.mkdir(parents=True, exist_ok=True)
    failures = {}
    for name, model in models.items():
        try:
            model.fit(dataset)
        except Exception as exc:  # noqa: BLE001 - per-model isolation
            failures[name] = repr(exc)
            log.warning("fit failed for %s: %s", name, exc)
            continue
        payload = None
        if hasattr(model, "fit_"):
            payload = model.fit_.to_json()
        elif hasattr(model, "net_"):
            payload = model.net_.to_json()
        if payload is not None:
            (out / f"{name}.json").write_text(payload)
        print(f"fitted {name}")
    write_manifest(config, "fit", {"failures": failures})
    if failures:
        print(f"{len(failures)} model(s) failed: {sorted(failures)}", file=sys.stderr)
        return 3
    return 0


def cmd_backtest(config: RunConfig, only=None) -> int:
    dataset = _dataset(config)
    models = _roster(config, only)
    start = dataset.dates.min()
    end = dataset.dates.max() + dt.timedelta(days=1)
    schedule = build_schedule(
        start, end, config.initial_train_months, config.refit_months,
    )
    report = run_backtest(
        models, schedule, dataset,
        seed=config.seed, bootstrap_k=config.bootstrap_k,
        block_size=config.block_size,
    )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    (config.out_dir / "report.json").write_text(report.to_json())
    report.forecasts.to_csv(config.out_dir / "forecasts.csv", index=False)
    write_manifest(config, "backtest", {"failures": report.failures})
    print(f"backtest over {len(schedule.folds)} fold(s); "
          f"{len(report.metrics)} model(s) scored")
    if report.failures:
        print(f"failed: {sorted(report.failures)}", file=sys.stderr)
        return 3
    return 0


def cmd_report(config: RunConfig) -> int:
    report_path = config.out_dir / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(f"{report_path} missing; run `peakcast backtest` first")
    payload = json.loads(report_path.read_text())
    if payload.get("format_version") != 1:
        raise ConfigError("report.json has an unsupported format version")
    fig_dir = config.out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    summary = render_summary(payload)
    (config.out_dir / "summary.md").write_text(summary)
    write_trace_csvs(payload, fig_dir)
    write_bootstrap_csv(payload, fig_dir)
    render_figures(payload, fig_dir)
    print(f"report rendered to {config.out_dir / 'summary.md'} and {fig_dir}/")
    return 0


# ---------------------------------------------------------------- reporting

def render_summary(payload: dict) -> str:
    metrics = payload["metrics"]
    lines = ["# Backtest summary", ""]

    dp_models = {m: v for m, v in metrics.items() if "mape" in v}
    if dp_models:
        lines += ["## Daily peak magnitude (last year)", ""]
        lines.append(
            "| Model | MAPE [%] | MAE [MW] | RMSE [MW] | "
            f"MAE [{TABLE_UNIT_MW:.0f} MW units] | RMSE [{TABLE_UNIT_MW:.0f} MW units] |"
        )
        lines.append("|---|---|---|---|---|---|")
        best = min(dp_models, key=lambda m: dp_models[m]["mape"].get("last_year", float("inf")))
        for model, table in dp_models.items():
            row = {k: table[k].get("last_year", float("nan")) for k in DP_METRIC_COLUMNS}
            name = f"**{model}**" if model == best else model
            lines.append(
                f"| {name} | {row['mape']:.2f} | {row['mae']:.1f} | {row['rmse']:.1f} "
                f"| {row['mae'] / TABLE_UNIT_MW:.2f} | {row['rmse'] / TABLE_UNIT_MW:.2f} |"
            )
        lines.append("")

    ip_models = {m: v for m, v in metrics.items() if "ip_r_accuracy" in v}
    if ip_models:
        lines += ["## Peak instant (last year)", ""]
        lines.append("| Model | R-Accuracy [%] | MAE [half-hours] | RMSE [half-hours] | d-RMSE [MW] |")
        lines.append("|---|---|---|---|---|")
        best = max(ip_models, key=lambda m: ip_models[m]["ip_r_accuracy"].get("last_year", -1))
        for model, table in ip_models.items():
            row = {k: table[k].get("last_year", float("nan")) for k in IP_METRIC_COLUMNS}
            name = f"**{model}**" if model == best else model
            lines.append(
                f"| {name} | {row['ip_r_accuracy']:.1f} | {row['ip_mae']:.2f} "
                f"| {row['ip_rmse']:.2f} | {row['ip_d_rmse']:.1f} |"
            )
        lines.append("")

    for variant, title in (("abs", "absolute"), ("sq", "squared")):
        matrix = payload["dm"].get(variant, {})
        if not matrix:
            continue
        lines += [f"## Equal-loss test p-values ({title} errors)", ""]
        cols = sorted({b for row in matrix.values() for b in row})
        lines.append("| vs | " + " | ".join(cols) + " |")
        lines.append("|---|" + "---|" * len(cols))
        for a, row in sorted(matrix.items()):
            cells = []
            for b in cols:
                if b not in row:
                    cells.append("")
                else:
                    p = row[b]
                    # not rejected at 5%: marked so weak separations stand out
                    cells.append(f"(!) {p:.3f}" if p >= 0.05 else f"{p:.3f}")
            lines.append(f"| {a} | " + " | ".join(cells) + " |")
        lines.append("")

    if payload["failures"]:
        lines += ["## Failures", ""]
        for model, diag in sorted(payload["failures"].items()):
            lines.append(f"- {model}: {diag}")
        lines.append("")
    return "\n".join(lines)


def write_trace_csvs(payload: dict, fig_dir: Path):
    import pandas as pd

    frames: dict[str, dict] = {}
    for model, per_metric in payload["traces"].items():
        for metric, points in per_metric.items():
            col = {p["month"]: p["value"] for p in points}
            frames.setdefault(metric, {})[model] = col
    for metric, cols in frames.items():
        df = pd.DataFrame(cols).sort_index()
        df.index.name = "month"
        df.to_csv(fig_dir / f"cumulative_{metric}.csv")


def write_bootstrap_csv(payload: dict, fig_dir: Path):
    import pandas as pd

    rows = []
    for model, per_metric in payload["bootstrap"].items():
        for metric, quantiles in per_metric.items():
            rows.append({"model": model, "metric": metric, **quantiles})
    if rows:
        pd.DataFrame(rows).to_csv(fig_dir / "bootstrap_quantiles.csv", index=False)


def render_figures(payload: dict, fig_dir: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for model_metric in _metrics_in(payload["traces"]):
        fig, ax = plt.subplots(figsize=(7, 4))
        for model, per_metric in payload["traces"].items():
            points = per_metric.get(model_metric)
            if not points:
                continue
            ax.plot([p["month"] for p in points], [p["value"] for p in points],
                    label=model)
        ax.set_title(f"Cumulative {model_metric}")
        ax.set_xlabel("month")
        ax.tick_params(axis="x", rotation=75, labelsize=6)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(fig_dir / f"cumulative_{model_metric}.svg")
        plt.close(fig)

    for model_metric in _metrics_in(payload["bootstrap"]):
        models = [m for m, v in payload["bootstrap"].items() if model_metric in v]
        if not models:
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        stats = []
        for m in models:
            q = payload["bootstrap"][m][model_metric]
            stats.append({
                "label": m, "whislo": q["2.5"], "q1": q["25.0"], "med": q["50.0"],
                "q3": q["75.0"], "whishi": q["97.5"], "fliers": [],
            })
        ax.bxp(stats, showfliers=False)
        ax.set_title(f"Block-bootstrap {model_metric} (last year)")
        ax.tick_params(axis="x", rotation=45, labelsize=7)
        fig.tight_layout()
        fig.savefig(fig_dir / f"bootstrap_{model_metric}.svg")
        plt.close(fig)


def _metrics_in(table: dict) -> list[str]:
    seen = []
    for per_metric in table.values():
        for metric in per_metric:
            if metric not in seen:
                seen.append(metric)
    return seen


# --------------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="peakcast",
        description="daily peak electricity forecasting pipeline",
    )
    parser.add_argument("command", choices=["prepare", "fit", "backtest", "report"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--models", nargs="*", help="restrict to these roster ids")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="override run.out directory")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    if os.environ.get("PEAKCAST_THREADS"):
        os.environ.setdefault("OMP_NUM_THREADS", os.environ["PEAKCAST_THREADS"])

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = RunConfig(**{**config.__dict__, "seed": args.seed})
        if args.out is not None:
            config = RunConfig(**{**config.__dict__, "out": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "prepare":
            return cmd_prepare(config)
        if args.command == "fit":
            return cmd_fit(config, args.models)
        if args.command == "backtest":
            return cmd_backtest(config, args.models)
        return cmd_report(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
