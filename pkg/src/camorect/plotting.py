"""Static metric charts from evaluation reports and ablation tables."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import METRIC_KEYS  # noqa: E402

LABELS = {"s_alpha": "S-alpha", "e_phi": "E-phi (mean)", "f_beta_w": "weighted F", "mae": "MAE"}


def load_series(paths) -> list[tuple[str, dict]]:
    """Read ``report.json`` files or ablation ``table.json`` files.

    Each report contributes one series named after its parent directory;
    each successful table row contributes one series named after the row.
    """
    series = []
    for p in map(Path, paths):
        if p.is_dir():
            p = p / "report.json" if (p / "report.json").exists() else p / "table.json"
        data = json.loads(p.read_text())
        if isinstance(data, list):
            series.extend((row["name"], row) for row in data if "error" not in row)
        elif data.get("aggregate") is not None:
            series.append((p.parent.name, data["aggregate"]))
        else:
            raise ValueError(f"{p} has no aggregate metrics")
    return series


def plot_series(series: list[tuple[str, dict]], out_dir) -> list[Path]:
    """One bar chart per metric, one bar per series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [n for n, _ in series]
    paths = []
    for key in METRIC_KEYS:
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(names) + 2), 3.2))
        vals = [s[key] for _, s in series]
        ax.bar(range(len(vals)), vals, color="#4c72b0")
        ax.set_xticks(range(len(vals)), names, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel(LABELS[key])
        ax.set_ylim(0, max(1.0, max(vals, default=0) * 1.05))
        for i, v in enumerate(vals):
            ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
        fig.tight_layout()
        path = out / f"{key}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
