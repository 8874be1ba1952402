"""Per-image skin-tone typing (ITA + Fitzpatrick) and dataset-level audit.

ITA (individual typology angle) is computed from the masked-mean CIELAB
coordinates: mean first, one arctangent afterwards. Fitzpatrick bands are
half-open real intervals anchored on the published integer thresholds so
that every finite angle in [-90, 90] gets exactly one class:

    I: (55, 90]   II: (40, 55]   III: (27, 40]
    IV: (10, 27]  V: (-30, 10]   VI: [-90, -30]

Images with fewer than MIN_SKIN_PIXELS masked pixels are classed
"uncertain". Images whose masked-mean b* is negative get a valid but
sign-ambiguous angle; they are classified normally and flagged.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import colorspace
from .colorspace import LabPixel
from .errors import DegenerateChromaError, EmptyMaskError
from .imgio import load_rgb

MIN_SKIN_PIXELS = 500

FST_CLASSES = ("I", "II", "III", "IV", "V", "VI")
UNCERTAIN = "uncertain"
UNREADABLE = "unreadable"
AUDIT_ROW_ORDER = FST_CLASSES + (UNCERTAIN, UNREADABLE)

# Lower exclusive band edges paired with the class above them, darkest last.
_BAND_EDGES = ((55.0, "I"), (40.0, "II"), (27.0, "III"), (10.0, "IV"), (-30.0, "V"))


def compute_ita(mean_lab: LabPixel) -> float:
    """ITA in degrees from masked-mean L* and b*.

    Single-argument arctangent (principal value), so the result lies in
    [-90, 90]; b* = 0 with L* != 50 returns the signed 90-degree limit.
    Raises DegenerateChromaError for the 0/0 case (b* = 0, L* = 50).
    """
    l_star, b_star = mean_lab.l_star, mean_lab.b_star
    if b_star == 0.0:
        if l_star == 50.0:
            raise DegenerateChromaError("ITA undefined: L* = 50 and b* = 0")
        return math.copysign(90.0, l_star - 50.0)
    return math.degrees(math.atan((l_star - 50.0) / b_star))


def ita_to_fitzpatrick(ita_degrees: float, skin_pixel_count: int) -> str:
    """Map an ITA angle to a Fitzpatrick class, or "uncertain" on a thin mask."""
    if skin_pixel_count < MIN_SKIN_PIXELS:
        return UNCERTAIN
    for edge, cls in _BAND_EDGES:
        if ita_degrees > edge:
            return cls
    return "VI"


@dataclass(frozen=True)
class SkinToneResult:
    """Outcome of tone analysis for one image."""
    ita_degrees: float | None
    fitzpatrick: str
    skin_pixel_count: int
    flag: str = ""


def classify_image(image: np.ndarray) -> SkinToneResult:
    """Full per-image tone analysis: mask, masked-mean Lab, ITA, Fitzpatrick."""
    mask = colorspace.skin_mask(image)
    count = int(mask.sum())
    if count == 0:
        return SkinToneResult(None, UNCERTAIN, 0, flag="empty_mask")
    lab = colorspace.mean_lab(image, mask)
    try:
        ita = compute_ita(lab)
    except DegenerateChromaError:
        return SkinToneResult(None, UNCERTAIN, count, flag="degenerate_chroma")
    flag = "negative_b_star" if lab.b_star < 0 else ""
    return SkinToneResult(ita, ita_to_fitzpatrick(ita, count), count, flag)


@dataclass
class ToneAudit:
    """Cross-tabulation of Fitzpatrick class by lesion superclass."""
    counts: dict = field(default_factory=dict)     # (fst_row, superclass) -> int
    superclasses: list = field(default_factory=list)
    per_image: list = field(default_factory=list)  # per-image result rows
    total: int = 0

    def count(self, fst_row: str, superclass: str) -> int:
        return self.counts.get((fst_row, superclass), 0)

    def row_total(self, fst_row: str) -> int:
        return sum(self.count(fst_row, sc) for sc in self.superclasses)

    def column_total(self, superclass: str) -> int:
        return sum(self.count(row, superclass) for row in AUDIT_ROW_ORDER)

    @property
    def dark_share(self) -> float:
        """Fraction of all audited records classed FST V or VI."""
        if self.total == 0:
            return 0.0
        return (self.row_total("V") + self.row_total("VI")) / self.total

    def to_json_dict(self) -> dict:
        return {
            "schema": "dermaudit-tone-audit v1",
            "conventions": _CONVENTIONS,
            "superclasses": self.superclasses,
            "rows": {row: {sc: self.count(row, sc) for sc in self.superclasses}
                     for row in AUDIT_ROW_ORDER},
            "row_totals": {row: self.row_total(row) for row in AUDIT_ROW_ORDER},
            "total": self.total,
            "dark_share": self.dark_share,
        }


_CONVENTIONS = (
    "ycbcr=bt601-full-range; cb=[77,173] cr=[133,255] inclusive; "
    "lab=srgb/D65; ita-bands half-open: I(55,90] II(40,55] III(27,40] "
    "IV(10,27] V(-30,10] VI[-90,-30]; uncertain if skin pixels < 500; "
    "negative b* classified normally and flagged"
)


def _audit_one(record) -> tuple:
    try:
        image = load_rgb(record.path)
        result = classify_image(image)
    except (OSError, ValueError, EmptyMaskError) as exc:
        return record, SkinToneResult(None, UNREADABLE, 0, flag=f"io_error:{exc}")
    return record, result


def audit_dataset(manifest, workers: int | None = None) -> ToneAudit:
    """Classify every manifest image and cross-tabulate FST x superclass.

    Per-image I/O failures land in the "unreadable" row instead of aborting,
    so row totals always equal the manifest size. Work is distributed over a
    thread pool; the reduction is order-independent.
    """
    records = list(manifest.records)
    audit = ToneAudit()
    audit.superclasses = sorted({r.superclass for r in records})
    audit.total = len(records)
    if not records:
        return audit

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(_audit_one, records))

    for record, result in outcomes:
        key = (result.fitzpatrick, record.superclass)
        audit.counts[key] = audit.counts.get(key, 0) + 1
        audit.per_image.append({
            "image_id": record.image_id,
            "superclass": record.superclass,
            "ita_degrees": "" if result.ita_degrees is None else f"{result.ita_degrees:.4f}",
            "fitzpatrick": result.fitzpatrick,
            "skin_pixel_count": result.skin_pixel_count,
            "flag": result.flag,
        })
    return audit


def write_audit_csv(audit: ToneAudit, path) -> None:
    lines = [f"# dermaudit-tone-audit v1; {_CONVENTIONS}"]
    cols = audit.superclasses
    lines.append(",".join(["fitzpatrick"] + cols + ["total"]))
    for row in AUDIT_ROW_ORDER:
        cells = [str(audit.count(row, sc)) for sc in cols]
        lines.append(",".join([row] + cells + [str(audit.row_total(row))]))
    lines.append(",".join(["total"] + [str(audit.column_total(sc)) for sc in cols]
                          + [str(audit.total)]))
    lines.append(f"# dark_share_v_vi={audit.dark_share:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_audit_json(audit: ToneAudit, path) -> None:
    with open(path, "w") as fh:
        json.dump(audit.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_per_image_csv(audit: ToneAudit, path) -> None:
    cols = ["image_id", "superclass", "ita_degrees", "fitzpatrick",
            "skin_pixel_count", "flag"]
    lines = [f"# dermaudit-ita-per-image v1; {_CONVENTIONS}", ",".join(cols)]
    for row in audit.per_image:
        lines.append(",".join(str(row[c]) for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
