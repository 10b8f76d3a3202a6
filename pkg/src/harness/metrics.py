"""
Metrics emission: one CSV per experiment plus a JSON metadata file beside it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import pandas as pd

from src.core.logger.logger import Logger
from src.harness.config import ExperimentConfig

log = Logger("metrics").log

METRIC_COLUMNS = {
    "consensus": ["n", "mode", "time", "msg_count"],
    "auth": ["n", "mode", "time"],
    "auth-multiuser": ["users", "mean_time", "p95_time"],
    "access": ["N", "item_size", "overhead"],
}


@dataclass
class ExperimentResult:
    experiment: str
    frame: pd.DataFrame
    metadata: dict[str, Any] = field(default_factory=dict)


def metrics_frame(experiment: str, rows: list[tuple], cfg: ExperimentConfig) -> pd.DataFrame:
    """Rows in the experiment's column order, tagged with config hash and seed."""
    df = pd.DataFrame(rows, columns=METRIC_COLUMNS[experiment])
    df["config_hash"] = cfg.config_hash()
    df["seed"] = cfg.seed
    return df


def write_result(result: ExperimentResult, cfg: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """
    Writes `<out>/<experiment>.csv` and `<out>/<experiment>.metadata.json`.

    Returns:
        Path: The CSV path.
    """
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.experiment}.csv"
    result.frame.to_csv(csv_path, index=False, float_format="%.9f", lineterminator="\n")
    metadata = {
        "experiment": result.experiment,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "config": dict(sorted(cfg.raw.items())),
        **result.metadata,
    }
    meta_path = out / f"{result.experiment}.metadata.json"
    meta_path.write_text(json.dumps(metadata, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    log.info(f"✅ Wrote {len(result.frame)} rows to {csv_path}")
    return csv_path
