"""Exception hierarchy shared by all dermaudit modules."""


class DermauditError(Exception):
    """Base class for all data/domain errors raised by this package."""


class EmptyMaskError(DermauditError):
    """A skin mask selected zero pixels where at least one was required."""


class DegenerateChromaError(DermauditError):
    """ITA is undefined: b* = 0 and L* = 50 (0/0 arctangent)."""


class DimensionMismatchError(DermauditError):
    """Two images or masks that must share dimensions do not."""


class BinMismatchError(DermauditError):
    """Histogram operands have different bin counts."""


class EmptyReferenceError(DermauditError):
    """Synthetic validation was asked to run against an empty reference set."""


class EmptyTruthError(DermauditError):
    """Segmentation metrics are undefined for an empty ground-truth mask."""


class SingleClassError(DermauditError):
    """ROC-AUC is undefined when only one label class is present."""


class DegenerateImageError(DermauditError):
    """Otsu cannot split a constant image into two intensity components."""


class ArtifactRejectionError(DermauditError):
    """Hair/ruler suppression flagged a persistent major artifact."""


class MissingPredictionError(DermauditError):
    """One or more ground-truth entries have no matching prediction."""

    def __init__(self, missing_ids):
        self.missing_ids = sorted(missing_ids)
        super().__init__(f"missing predictions for {len(self.missing_ids)} ids: "
                         + ", ".join(self.missing_ids[:10])
                         + ("..." if len(self.missing_ids) > 10 else ""))


class MalformedLogError(DermauditError):
    """A training log is missing columns or has a non-monotone epoch column."""


class ManifestError(DermauditError):
    """A manifest violates its schema or uniqueness invariants."""


class UnvalidatedImageError(DermauditError):
    """A synthetic image has no row in the validation report."""
