#!/usr/bin/env python3
"""
📊 Result export and aggregation

Per-trial CSVs, the merged run CSV, the per-step aggregate with normal 95%
confidence intervals and one plot-data CSV per metric.
"""

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
import structlog

from src.td_regularization.config import config_to_dotted
from src.td_regularization.errors import DataError, InsufficientDataError
from src.td_regularization.harness import RECORD_COLUMNS, RunRecord

logger = structlog.get_logger(__name__)

METRICS = ("return", "mstde_est", "mstde_true", "eta")
Z_95 = 1.96
NAN_REP = "nan"


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, na_rep=NAN_REP, encoding="utf-8", lineterminator="\n")


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-step mean and mean +- 1.96 s / sqrt(n) across trials (s = sample std, 0 for one trial)"""
    if frame.empty:
        raise InsufficientDataError("no records to aggregate")
    grouped = frame.groupby("step", sort=True)
    result = pd.DataFrame({"step": sorted(frame["step"].unique())})
    result["trials"] = grouped["trial"].nunique().to_numpy()
    result["diverged"] = grouped["diverged"].sum().astype(int).to_numpy()
    for metric in METRICS:
        mean = grouped[metric].mean().to_numpy()
        std = grouped[metric].std(ddof=1).fillna(0.0).to_numpy()
        count = grouped[metric].count().to_numpy()
        half_width = np.where(count > 0, Z_95 * std / np.sqrt(np.maximum(count, 1)), np.nan)
        result[f"{metric}_mean"] = mean
        result[f"{metric}_lower"] = mean - half_width
        result[f"{metric}_upper"] = mean + half_width
    return result


def plot_frames(summary: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    return {
        metric: pd.DataFrame({
            "step": summary["step"],
            "mean": summary[f"{metric}_mean"],
            "lower": summary[f"{metric}_lower"],
            "upper": summary[f"{metric}_upper"],
        })
        for metric in METRICS
    }


def write_summary(frame: pd.DataFrame, out_dir: Path, name: str) -> List[Path]:
    summary = aggregate(frame)
    written = [out_dir / f"{name}_aggregate.csv"]
    _write_csv(summary, written[0])
    for metric, plot in plot_frames(summary).items():
        path = out_dir / f"{name}_{metric}_plot.csv"
        _write_csv(plot, path)
        written.append(path)
    return written


def export_results(record: RunRecord, out_dir: Union[str, Path]) -> List[Path]:
    """Write trial_<k>.csv files, the merged <name>.csv, the aggregate, plot data and <name>_meta.json"""
    if record.frame.empty:
        raise InsufficientDataError("run record holds no rows")
    run_dir = Path(out_dir) / record.name
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {run_dir}: {e}") from e

    frame = record.frame.sort_values(["trial", "step"], kind="stable").reset_index(drop=True)
    written: List[Path] = []
    for trial, trial_frame in frame.groupby("trial", sort=True):
        path = run_dir / f"trial_{trial}.csv"
        _write_csv(trial_frame[RECORD_COLUMNS], path)
        written.append(path)

    merged = run_dir / f"{record.name}.csv"
    _write_csv(frame[RECORD_COLUMNS], merged)
    written.append(merged)
    written.extend(write_summary(frame, run_dir, record.name))

    meta = {
        "name": record.name,
        "created": datetime.now(timezone.utc).isoformat(),
        "ci_method": "normal",
        "ci_level": 0.95,
        "trials": int(frame["trial"].nunique()),
        "diverged_trials": record.divergence_count,
        "config": config_to_dotted(record.config),
        "trial_stats": record.trial_stats,
    }
    meta_path = run_dir / f"{record.name}_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, default=_json_default), encoding="utf-8")
    written.append(meta_path)

    logger.info("results_exported", directory=str(run_dir), files=len(written))
    return written


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def read_records(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, na_values=[NAN_REP], keep_default_na=False)
    missing = set(RECORD_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path} lacks columns {sorted(missing)}")
    return frame.astype({"trial": int, "step": int, "diverged": bool})


def report(results_dir: Union[str, Path]) -> List[Path]:
    """Rebuild aggregate and plot-data CSVs from the trial_<k>.csv files of a run directory"""
    run_dir = Path(results_dir)
    trial_files = sorted(run_dir.glob("trial_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not trial_files:
        raise InsufficientDataError(f"no trial CSVs under {run_dir}")
    frame = pd.concat([read_records(path) for path in trial_files], ignore_index=True)
    frame = frame.sort_values(["trial", "step"], kind="stable").reset_index(drop=True)
    written = write_summary(frame, run_dir, run_dir.name)
    logger.info("report_written", directory=str(run_dir), trials=len(trial_files))
    return written
