"""Training-log ingestion: tidy series export and static SVG charts.

Input is an epoch log CSV with columns epoch, loss_train, loss_val,
acc_train, acc_val, auc_val (strictly increasing epoch column). Output
is one tidy CSV of all series, one SVG line chart per panel (loss,
accuracy, AUC) and a JSON summary identifying the best-AUC epoch.
"""

import csv
import json
from dataclasses import dataclass

from .errors import MalformedLogError

LOG_COLUMNS = ("epoch", "loss_train", "loss_val", "acc_train", "acc_val",
               "auc_val")

PANELS = {
    "loss": ("loss_train", "loss_val"),
    "accuracy": ("acc_train", "acc_val"),
    "auc": ("auc_val",),
}


@dataclass
class TrainingLog:
    epochs: list
    series: dict    # column -> list of floats

    @property
    def best_auc_epoch(self) -> int:
        auc = self.series["auc_val"]
        best = max(range(len(auc)), key=lambda i: (auc[i], -i))
        return self.epochs[best]


def parse_training_log(path) -> TrainingLog:
    """Parse and validate an epoch log CSV.

    Raises MalformedLogError on missing columns, non-numeric cells, an
    empty log, or a non-increasing epoch column.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        fields = reader.fieldnames or ()
        missing = set(LOG_COLUMNS) - set(fields)
        if missing:
            raise MalformedLogError(f"log missing columns: {sorted(missing)}")
        epochs = []
        series = {c: [] for c in LOG_COLUMNS[1:]}
        for row in reader:
            try:
                epochs.append(int(row["epoch"]))
                for col in LOG_COLUMNS[1:]:
                    series[col].append(float(row[col]))
            except (TypeError, ValueError) as exc:
                raise MalformedLogError(f"bad log row {row}: {exc}") from exc
    if not epochs:
        raise MalformedLogError("log contains no data rows")
    for a, b in zip(epochs, epochs[1:]):
        if b <= a:
            raise MalformedLogError(
                f"epoch column must be strictly increasing (saw {a} then {b})")
    return TrainingLog(epochs=epochs, series=series)


def write_tidy_series(log: TrainingLog, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# dermaudit-training-series v1\n")
        writer = csv.writer(fh)
        writer.writerow(["panel", "series", "epoch", "value"])
        for panel, cols in PANELS.items():
            for col in cols:
                for epoch, value in zip(log.epochs, log.series[col]):
                    writer.writerow([panel, col, epoch, f"{value:.6f}"])


def write_summary_json(log: TrainingLog, path) -> None:
    best_epoch = log.best_auc_epoch
    idx = log.epochs.index(best_epoch)
    with open(path, "w") as fh:
        json.dump({
            "schema": "dermaudit-training-summary v1",
            "epochs": len(log.epochs),
            "best_auc_epoch": best_epoch,
            "best_auc": log.series["auc_val"][idx],
            "final": {c: log.series[c][-1] for c in LOG_COLUMNS[1:]},
        }, fh, indent=2)
        fh.write("\n")


def write_panel_svgs(log: TrainingLog, out_dir) -> list:
    """One SVG line chart per panel; returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from pathlib import Path
    out_dir = Path(out_dir)
    written = []
    for panel, cols in PANELS.items():
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for col in cols:
            ax.plot(log.epochs, log.series[col], marker="o", markersize=2.5,
                    linewidth=1.2, label=col)
        if panel == "auc":
            best = log.best_auc_epoch
            idx = log.epochs.index(best)
            ax.scatter([best], [log.series["auc_val"][idx]], s=40, zorder=3,
                       facecolors="none", edgecolors="tab:red",
                       label=f"best (epoch {best})")
        ax.set_xlabel("epoch")
        ax.set_ylabel(panel)
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{panel}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
