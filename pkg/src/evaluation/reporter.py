import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from src.config import AGGREGATE_TABLE_NAME, AGGREGATED_METRICS, PER_SEED_TABLE_NAME, SUMMARY_NAME

SWEEP_PARAMETERS: dict[str, str] = {
    "n_target": "selected features n_f",
    "n_per_class": "features per class n_pc",
}


def aggregate_metrics(rows: list[dict[str, Any]], metrics: list[str] = AGGREGATED_METRICS) -> dict[str, dict]:
    """Mean and population std (ddof=0) of each metric over the seeds that report it."""
    summary: dict[str, dict] = {}
    for name in metrics:
        values = np.array([row[name] for row in rows if row.get(name) is not None], dtype=np.float64)
        if values.size == 0:
            summary[name] = {"mean": None, "std": None, "n": 0}
        else:
            summary[name] = {"mean": float(values.mean()), "std": float(values.std(ddof=0)), "n": int(values.size)}
    return summary


def per_seed_table(summary: dict[str, Any]) -> pd.DataFrame:
    rows = []
    for seed, result in sorted(summary["seeds"].items(), key=lambda item: int(item[0])):
        row = {"seed": int(seed), "status": result["status"]}
        row.update({k: v for k, v in result.get("metrics", {}).items()})
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate_table(summary: dict[str, Any]) -> pd.DataFrame:
    rows = [{"metric": name, **stats} for name, stats in summary["aggregate"].items()]
    return pd.DataFrame(rows, columns=["metric", "mean", "std", "n"])


def sweep_table(frame: pd.DataFrame, metric: str = "final_accuracy") -> pd.DataFrame:
    """Mean and population std of `metric` per swept value."""
    if metric not in frame.columns:
        return pd.DataFrame(columns=["value", "mean", "std", "n"])
    grouped = frame.dropna(subset=[metric]).groupby("value")[metric]
    table = grouped.agg(mean="mean", std=lambda s: float(np.std(s.to_numpy(), ddof=0)), n="count")
    return table.reset_index().sort_values("value", kind="stable")


class ExperimentReporter:
    """Turns a finished experiment directory into tables and plots.

    Reads `summary.json` (and any `sweep_<parameter>.csv`) from the output
    directory and writes the per-seed and aggregate CSVs plus one SVG line
    plot per sweep.
    """

    def __init__(self, output_dir: str | Path) -> None:
        self.output_dir: Path = Path(output_dir)

    def write(self) -> list[Path]:
        written: list[Path] = []
        summary_path = self.output_dir / SUMMARY_NAME
        if summary_path.exists():
            summary = json.loads(summary_path.read_text(encoding="utf-8"))
            per_seed = per_seed_table(summary)
            per_seed.to_csv(self.output_dir / PER_SEED_TABLE_NAME, index=False)
            aggregate_table(summary).to_csv(self.output_dir / AGGREGATE_TABLE_NAME, index=False)
            written += [self.output_dir / PER_SEED_TABLE_NAME, self.output_dir / AGGREGATE_TABLE_NAME]
            print(f"✅ Tables written: {PER_SEED_TABLE_NAME}, {AGGREGATE_TABLE_NAME}")
        else:
            print(f"⏩ No {SUMMARY_NAME} in {self.output_dir}; skipping seed tables")

        for parameter in SWEEP_PARAMETERS:
            sweep_path = self.output_dir / f"sweep_{parameter}.csv"
            if sweep_path.exists():
                written.append(self.plot_sweep(pd.read_csv(sweep_path), parameter))
        return written

    def plot_sweep(self, frame: pd.DataFrame, parameter: str) -> Path:
        """Accuracy (mean +- std over seeds) against the swept value."""
        table = sweep_table(frame)
        table.to_csv(self.output_dir / f"sweep_{parameter}_summary.csv", index=False)

        fig = go.Figure()
        fig.add_trace(go.Scatter(
            x=table["value"],
            y=table["mean"] * 100,
            error_y=dict(type="data", array=table["std"] * 100, visible=True),
            mode="lines+markers",
            name="final model",
            line=dict(color="#1f77b4", width=2),
        ))
        fig.update_layout(
            title=f"Test accuracy vs {SWEEP_PARAMETERS[parameter]}",
            xaxis_title=SWEEP_PARAMETERS[parameter],
            yaxis_title="accuracy (%)",
            template="plotly_white",
            width=640,
            height=420,
        )
        return self._export(fig, self.output_dir / f"accuracy_vs_{parameter}.svg")

    @staticmethod
    def _export(fig: go.Figure, path: Path) -> Path:
        try:
            fig.write_image(path)
        except (ValueError, ImportError, RuntimeError) as exc:
            # Static export needs kaleido; keep an interactive copy instead
            fallback = path.with_suffix(".html")
            fig.write_html(fallback)
            print(f"⚠️ SVG export unavailable ({exc}); wrote {fallback.name}")
            return fallback
        print(f"📦 Artifact persisted: {path.name}")
        return path
