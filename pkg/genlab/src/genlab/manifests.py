"""Readers/writers for the toolkit file formats this package exchanges.

Input: manifest CSV (versioned `#` header; columns image_id, path,
diagnosis, superclass, patient_id, source, ita_degrees, fitzpatrick,
split). Outputs: prediction CSV `image_id,score,label` and epoch-log CSV
`epoch,loss_train,loss_val,acc_train,acc_val,auc_val`.
"""

import csv
from dataclasses import dataclass

MELANOCYTIC = "melanocytic"
DARK_FST = ("V", "VI")

LOG_COLUMNS = ("epoch", "loss_train", "loss_val", "acc_train", "acc_val",
               "auc_val")


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    path: str
    superclass: str
    patient_id: str
    source: str
    fitzpatrick: str
    split: str

    @property
    def label(self) -> int:
        return 1 if self.superclass == MELANOCYTIC else 0

    @property
    def is_real(self) -> bool:
        return self.source != "synthetic"


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        required = {"image_id", "path", "superclass", "patient_id"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest missing columns: {sorted(missing)}")
        rows = []
        for row in reader:
            rows.append(ManifestRow(
                image_id=row["image_id"],
                path=row["path"],
                superclass=row["superclass"],
                patient_id=row["patient_id"],
                source=row.get("source", "real") or "real",
                fitzpatrick=row.get("fitzpatrick", "") or "",
                split=row.get("split", "") or "",
            ))
        return rows


def dark_subset(rows) -> list:
    return [r for r in rows if r.fitzpatrick in DARK_FST]


def split_rows(rows, split: str, real_only: bool = False) -> list:
    out = [r for r in rows if r.split == split]
    if real_only:
        out = [r for r in out if r.is_real]
    return out


def write_predictions(path, rows) -> None:
    """rows: iterable of (image_id, score, label)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "score", "label"])
        for image_id, score, label in rows:
            writer.writerow([image_id, f"{score:.6f}", int(label)])


class EpochLogWriter:
    """Streams epoch rows into the toolkit's training-log CSV format."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(LOG_COLUMNS)

    def add(self, epoch, loss_train, loss_val, acc_train, acc_val, auc_val):
        self._writer.writerow([epoch, f"{loss_train:.6f}", f"{loss_val:.6f}",
                               f"{acc_train:.4f}", f"{acc_val:.4f}",
                               f"{auc_val:.6f}"])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
