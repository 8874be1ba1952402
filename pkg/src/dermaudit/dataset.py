"""Manifest model, ISIC metadata ingestion, synthetic integration and
patient-level stratified splitting.

A manifest is the one file format every pipeline stage reads and writes:
CSV with a versioned `#` header line (plus an optional JSON twin), one
row per image. Synthetic records carry a reserved pseudo-patient prefix
so the patient-level no-leakage invariant extends to them.
"""

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ManifestError, UnvalidatedImageError

MANIFEST_VERSION = "dermaudit-manifest v1"
MANIFEST_COLUMNS = ("image_id", "path", "diagnosis", "superclass", "patient_id",
                    "source", "ita_degrees", "fitzpatrick", "split")

MELANOCYTIC = "melanocytic"
NON_MELANOCYTIC = "non-melanocytic"

SOURCE_REAL = "real"
SOURCE_SYNTHETIC = "synthetic"
SYNTH_PATIENT_PREFIX = "synth-"

SPLITS = ("train", "val", "test")

# Diagnosis -> superclass. Keys are lowercased, ISIC long names plus the
# usual short codes.
DIAGNOSIS_SUPERCLASS = {
    "melanoma": MELANOCYTIC,
    "melanocytic nevus": MELANOCYTIC,
    "nevus": MELANOCYTIC,
    "mel": MELANOCYTIC,
    "nv": MELANOCYTIC,
    "actinic keratosis": NON_MELANOCYTIC,
    "ak": NON_MELANOCYTIC,
    "akiec": NON_MELANOCYTIC,
    "basal cell carcinoma": NON_MELANOCYTIC,
    "bcc": NON_MELANOCYTIC,
    "benign keratosis": NON_MELANOCYTIC,
    "bkl": NON_MELANOCYTIC,
    "seborrheic keratosis": NON_MELANOCYTIC,
    "solar lentigo": NON_MELANOCYTIC,
    "lichen planus-like keratosis": NON_MELANOCYTIC,
    "lichenoid keratosis": NON_MELANOCYTIC,
    "dermatofibroma": NON_MELANOCYTIC,
    "df": NON_MELANOCYTIC,
    "squamous cell carcinoma": NON_MELANOCYTIC,
    "scc": NON_MELANOCYTIC,
    "vascular lesion": NON_MELANOCYTIC,
    "vasc": NON_MELANOCYTIC,
}

_ID_COLUMNS = ("image_id", "isic_id", "image_name", "image")
_DIAGNOSIS_COLUMNS = ("diagnosis", "dx")
_PATIENT_COLUMNS = ("patient_id", "patient")


@dataclass
class ImageRecord:
    image_id: str
    path: str
    diagnosis: str
    superclass: str
    patient_id: str
    source: str = SOURCE_REAL
    ita_degrees: float | None = None
    fitzpatrick: str | None = None
    split: str | None = None

    def to_row(self) -> list:
        return [self.image_id, self.path, self.diagnosis, self.superclass,
                self.patient_id, self.source,
                "" if self.ita_degrees is None else f"{self.ita_degrees:.4f}",
                self.fitzpatrick or "", self.split or ""]

    @classmethod
    def from_row(cls, row: dict) -> "ImageRecord":
        ita = row.get("ita_degrees", "")
        return cls(
            image_id=row["image_id"],
            path=row["path"],
            diagnosis=row["diagnosis"],
            superclass=row["superclass"],
            patient_id=row["patient_id"],
            source=row.get("source") or SOURCE_REAL,
            ita_degrees=float(ita) if ita else None,
            fitzpatrick=row.get("fitzpatrick") or None,
            split=row.get("split") or None,
        )


class Manifest:
    """An ordered collection of ImageRecords with unique image ids."""

    def __init__(self, records=()):
        self.records = list(records)
        self._check_unique()

    def _check_unique(self):
        seen = Counter(r.image_id for r in self.records)
        dupes = [k for k, n in seen.items() if n > 1]
        if dupes:
            raise ManifestError(f"duplicate image ids: {dupes[:5]}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict:
        return {r.image_id: r for r in self.records}

    def extended(self, new_records) -> "Manifest":
        return Manifest(self.records + list(new_records))

    def write_csv(self, path, header_note: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {MANIFEST_VERSION}\n")
            if header_note:
                fh.write(f"# {header_note}\n")
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_COLUMNS)
            for rec in self.records:
                writer.writerow(rec.to_row())

    def write_json(self, path) -> None:
        payload = {"schema": MANIFEST_VERSION,
                   "records": [dict(zip(MANIFEST_COLUMNS, r.to_row()))
                               for r in self.records]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path) -> "Manifest":
        with open(path, newline="") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        reader = csv.DictReader(rows)
        missing = set(("image_id", "path", "diagnosis", "superclass",
                       "patient_id")) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"manifest missing columns: {sorted(missing)}")
        return cls([ImageRecord.from_row(row) for row in reader])


@dataclass
class IngestReport:
    unknown_diagnosis: list = field(default_factory=list)  # (image_id, diagnosis)
    missing_files: list = field(default_factory=list)      # image_id


def _pick_column(fieldnames, candidates, kind):
    lowered = {name.lower(): name for name in fieldnames}
    for cand in candidates:
        if cand in lowered:
            return lowered[cand]
    raise ManifestError(f"no {kind} column found; looked for {candidates}")


def ingest_isic(metadata_file, image_root, extension=".jpg"
                ) -> tuple[Manifest, IngestReport]:
    """Build a manifest from an ISIC-style metadata CSV.

    Diagnoses are grouped into the melanocytic / non-melanocytic
    superclasses; rows with unrecognised diagnoses are excluded and
    listed in the report, as are records whose image file is absent.
    Records without a patient id become their own singleton patient so
    the leakage invariant still holds.
    """
    from pathlib import Path
    root = Path(image_root)
    report = IngestReport()
    records = []
    with open(metadata_file, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        id_col = _pick_column(reader.fieldnames, _ID_COLUMNS, "image id")
        dx_col = _pick_column(reader.fieldnames, _DIAGNOSIS_COLUMNS, "diagnosis")
        patient_col = None
        for cand in _PATIENT_COLUMNS:
            lowered = {n.lower(): n for n in reader.fieldnames}
            if cand in lowered:
                patient_col = lowered[cand]
                break
        for row in reader:
            image_id = row[id_col].strip()
            diagnosis = row[dx_col].strip()
            superclass = DIAGNOSIS_SUPERCLASS.get(diagnosis.lower())
            if superclass is None:
                report.unknown_diagnosis.append((image_id, diagnosis))
                continue
            patient = (row.get(patient_col) or "").strip() if patient_col else ""
            path = root / f"{image_id}{extension}"
            if not path.exists():
                report.missing_files.append(image_id)
            records.append(ImageRecord(
                image_id=image_id,
                path=str(path),
                diagnosis=diagnosis,
                superclass=superclass,
                patient_id=patient or image_id,
            ))
    return Manifest(records), report


def integrate_synthetic(real: Manifest, synth_records, verdicts: dict
                        ) -> tuple[Manifest, dict]:
    """Append validated synthetic records to a real manifest.

    `synth_records` are candidate ImageRecords (source set here);
    `verdicts` maps image_id -> "accept"/"reject" from the validation
    report. Every candidate must be covered by the report
    (UnvalidatedImageError otherwise); rejected candidates are dropped.
    Real records pass through untouched; id collisions are fatal.
    """
    accepted, rejected = [], []
    for rec in synth_records:
        verdict = verdicts.get(rec.image_id)
        if verdict is None:
            raise UnvalidatedImageError(
                f"synthetic image {rec.image_id!r} missing from validation report")
        rec = replace(rec, source=SOURCE_SYNTHETIC,
                      patient_id=rec.patient_id
                      if rec.patient_id.startswith(SYNTH_PATIENT_PREFIX)
                      else SYNTH_PATIENT_PREFIX + rec.image_id)
        (accepted if verdict == "accept" else rejected).append(rec)
    merged = real.extended(accepted)
    counts = {"real": len(real), "synthetic_accepted": len(accepted),
              "synthetic_rejected": len(rejected), "total": len(merged)}
    return merged, counts


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.70, 0.15, 0.15)
    strat_keys: tuple = ("superclass", "fitzpatrick_group")
    seed: int = 0
    synthetic_train_only: bool = False

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if len(self.fractions) != len(SPLITS):
            raise ValueError(f"need {len(SPLITS)} fractions")


def _fitzpatrick_group(fst: str | None) -> str:
    if fst in ("I", "II", "III", "IV"):
        return "I-IV"
    if fst in ("V", "VI"):
        return "V-VI"
    return "uncertain"


def _record_stratum(record: ImageRecord, keys) -> tuple:
    values = []
    for key in keys:
        if key == "fitzpatrick_group":
            values.append(_fitzpatrick_group(record.fitzpatrick))
        elif key == "fitzpatrick":
            values.append(record.fitzpatrick or "uncertain")
        else:
            values.append(getattr(record, key))
    return tuple(values)


def split(manifest: Manifest, spec: SplitSpec = SplitSpec()) -> Manifest:
    """Assign train/val/test splits, stratified at the patient level.

    All images of one patient land in exactly one split. Patients are
    grouped into strata by the majority stratum of their records; strata
    are processed largest-first; within a stratum, patients are shuffled
    by the seed and each is assigned to the split with the largest
    remaining image-count deficit (ties broken in train/val/test order).
    Deterministic for a fixed seed.
    """
    by_patient = {}
    for rec in manifest:
        by_patient.setdefault(rec.patient_id, []).append(rec)

    # Majority stratum per patient, deterministic tie-break.
    patient_stratum = {}
    for patient, recs in by_patient.items():
        tally = Counter(_record_stratum(r, spec.strat_keys) for r in recs)
        best = max(tally.items(), key=lambda kv: (kv[1], kv[0]))[0] if tally else ()
        patient_stratum[patient] = best

    strata = {}
    for patient, stratum in patient_stratum.items():
        strata.setdefault(stratum, []).append(patient)

    stratum_sizes = {st: sum(len(by_patient[p]) for p in patients)
                     for st, patients in strata.items()}
    ordered_strata = sorted(strata, key=lambda st: (-stratum_sizes[st], st))

    rng = np.random.default_rng(spec.seed)
    assignment = {}
    for stratum in ordered_strata:
        patients = sorted(strata[stratum])
        total = stratum_sizes[stratum]
        targets = [f * total for f in spec.fractions]
        allocated = [0, 0, 0]

        pending = []
        for patient in patients:
            synthetic = all(r.source == SOURCE_SYNTHETIC for r in by_patient[patient])
            if spec.synthetic_train_only and synthetic:
                assignment[patient] = SPLITS[0]
                allocated[0] += len(by_patient[patient])
            else:
                pending.append(patient)

        order = rng.permutation(len(pending))
        for idx in order:
            patient = pending[idx]
            deficits = [targets[i] - allocated[i] for i in range(len(SPLITS))]
            pick = max(range(len(SPLITS)), key=lambda i: (deficits[i], -i))
            assignment[patient] = SPLITS[pick]
            allocated[pick] += len(by_patient[patient])

    return Manifest([replace(r, split=assignment[r.patient_id]) for r in manifest])
