"""Statistical validation of synthetic images against a real reference set.

Three families of evidence per candidate: per-channel histogram distance
to the pooled reference histogram, maximum SSIM against a seeded random
reference subsample, and GLCM texture features standardised against the
reference feature distribution. A candidate is rejected as soon as any
rule fires; every knob has an explicit default recorded in the report
header.
"""

import math
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np

from .colorspace import bt601_luma
from .errors import BinMismatchError, DimensionMismatchError, EmptyReferenceError
from .imgio import validate_rgb

GLCM_FEATURE_NAMES = ("contrast", "energy", "homogeneity", "correlation")

# Offsets (drow, dcol) for co-occurrence at distance 1.
_ANGLE_OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


@dataclass(frozen=True)
class SynthThresholds:
    """All knobs of the validation procedure (defaults are package policy)."""
    hist_bins: int = 64
    hist_max_distance: float = 0.5     # per-channel chi-square cutoff
    ssim_min: float = 0.2              # reject below this max-SSIM
    ssim_sample_size: int = 32         # reference subsample for max-SSIM
    ssim_compare_size: int = 224       # common resize before SSIM
    glcm_levels: int = 64
    glcm_max_abs_z: float = 3.0
    seed: int = 0

    def header(self) -> str:
        return "; ".join(f"{k}={v}" for k, v in asdict(self).items())


def rgb_histograms(image: np.ndarray, bins: int) -> np.ndarray:
    """Per-channel normalized intensity histograms, shape (3, bins).

    Equal-width bins over [0, 256); each channel's histogram sums to 1.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    img = validate_rgb(image)
    out = np.empty((3, bins), dtype=np.float64)
    for c in range(3):
        counts, _ = np.histogram(img[..., c], bins=bins, range=(0, 256))
        out[c] = counts / counts.sum()
    return out


def hist_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Symmetric chi-square distance between two normalized histograms.

    0.5 * sum (h1-h2)^2 / (h1+h2), skipping bins where both are zero.
    Zero iff the histograms are identical; at most 1 for unit-mass inputs.
    """
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise BinMismatchError(f"{h1.shape} vs {h2.shape}")
    denom = h1 + h2
    keep = denom > 0
    return float(0.5 * np.sum((h1[keep] - h2[keep]) ** 2 / denom[keep]))


def _window_means(img: np.ndarray, win: int) -> np.ndarray:
    """Means of all win x win windows fully inside `img` (valid mode)."""
    s = np.cumsum(np.cumsum(img, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    total = (s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win])
    return total / (win * win)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8,
         dynamic_range: float = 255.0) -> float:
    """Mean local SSIM with uniform sliding windows.

    Inputs are grayscale arrays of equal shape (any real dtype, 8-bit
    scale). Windows are window x window, stride 1, fully inside the image;
    images smaller than the window are treated as a single window.
    C1 = (0.01 * range)^2, C2 = (0.03 * range)^2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{a.shape} vs {b.shape}")
    win = min(window, a.shape[0], a.shape[1])
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    mu_a = _window_means(a, win)
    mu_b = _window_means(b, win)
    var_a = _window_means(a * a, win) - mu_a ** 2
    var_b = _window_means(b * b, win) - mu_b ** 2
    cov = _window_means(a * b, win) - mu_a * mu_b
    # cumsum round-off can leave tiny negative variances
    var_a = np.maximum(var_a, 0.0)
    var_b = np.maximum(var_b, 0.0)

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class GlcmFeatures:
    contrast: float
    energy: float
    homogeneity: float
    correlation: float

    def as_array(self) -> np.ndarray:
        return np.array([self.contrast, self.energy, self.homogeneity,
                         self.correlation])


def glcm_features(image: np.ndarray, levels: int = 64,
                  angles=(0, 45, 90, 135)) -> GlcmFeatures:
    """Haralick-style features of the symmetric distance-1 co-occurrence matrix.

    The grayscale input (8-bit scale) is quantized to `levels` gray levels;
    co-occurrences are accumulated over the given angles plus their
    opposites (symmetric matrix) and normalized. Correlation of a
    zero-variance matrix is defined as 1 (a constant image is perfectly
    self-correlated).
    """
    if not 2 <= levels <= 256:
        raise ValueError("levels must be in [2, 256]")
    gray = np.asarray(image, dtype=np.float64)
    q = np.clip((gray * levels / 256.0).astype(np.int64), 0, levels - 1)

    glcm = np.zeros((levels, levels), dtype=np.float64)
    for angle in angles:
        dr, dc = _ANGLE_OFFSETS[angle]
        r0, r1 = max(0, -dr), q.shape[0] - max(0, dr)
        c0, c1 = max(0, -dc), q.shape[1] - max(0, dc)
        src = q[r0:r1, c0:c1]
        dst = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        pairs = np.bincount((src * levels + dst).ravel(),
                            minlength=levels * levels).reshape(levels, levels)
        glcm += pairs
        glcm += pairs.T  # symmetric accumulation

    p = glcm / glcm.sum()
    idx = np.arange(levels, dtype=np.float64)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")

    contrast = float(np.sum(p * (ii - jj) ** 2))
    energy = float(np.sum(p * p))
    homogeneity = float(np.sum(p / (1.0 + (ii - jj) ** 2)))

    mu_i = float(np.sum(p * ii))
    mu_j = float(np.sum(p * jj))
    var_i = float(np.sum(p * (ii - mu_i) ** 2))
    var_j = float(np.sum(p * (jj - mu_j) ** 2))
    if var_i <= 0.0 or var_j <= 0.0:
        correlation = 1.0
    else:
        correlation = float(np.sum(p * (ii - mu_i) * (jj - mu_j))
                            / math.sqrt(var_i * var_j))
    return GlcmFeatures(contrast, energy, homogeneity, correlation)


@dataclass
class SynthValidationReport:
    image_id: str
    hist_distances: tuple          # (r, g, b)
    ssim_max: float
    glcm: GlcmFeatures
    glcm_z_scores: tuple           # per GLCM_FEATURE_NAMES
    verdict: str                   # "accept" | "reject"
    reject_reasons: list = field(default_factory=list)

    CSV_COLUMNS = ("image_id", "hist_d_r", "hist_d_g", "hist_d_b", "ssim_max",
                   "glcm_contrast", "glcm_energy", "glcm_homogeneity",
                   "glcm_correlation", "z_contrast", "z_energy",
                   "z_homogeneity", "z_correlation", "verdict", "reasons")

    def to_csv_row(self) -> list:
        g = self.glcm
        return ([self.image_id]
                + [f"{d:.6f}" for d in self.hist_distances]
                + [f"{self.ssim_max:.6f}"]
                + [f"{v:.6f}" for v in (g.contrast, g.energy, g.homogeneity,
                                        g.correlation)]
                + [f"{z:.4f}" for z in self.glcm_z_scores]
                + [self.verdict, "|".join(self.reject_reasons)])


class ReferenceStats:
    """Shared read-only statistics of the real reference image set.

    Computed once, then reused across candidates: pooled per-channel
    histogram (pixel counts pooled over all reference images), GLCM
    feature mean/std, and the seeded SSIM comparison subsample (luma
    images at the common comparison size).
    """

    def __init__(self, images, thresholds: SynthThresholds = SynthThresholds()):
        images = list(images)
        if not images:
            raise EmptyReferenceError("reference sample is empty")
        self.thresholds = thresholds
        t = thresholds

        counts = np.zeros((3, t.hist_bins), dtype=np.float64)
        features = []
        lumas = []
        for img in images:
            img = validate_rgb(img)
            for c in range(3):
                counts[c] += np.histogram(img[..., c], bins=t.hist_bins,
                                          range=(0, 256))[0]
            luma = bt601_luma(img)
            features.append(glcm_features(luma, levels=t.glcm_levels).as_array())
            lumas.append(_resize_gray(luma, t.ssim_compare_size))
        self.pooled_hist = counts / counts.sum(axis=1, keepdims=True)

        feats = np.stack(features)
        self.glcm_mean = feats.mean(axis=0)
        self.glcm_std = feats.std(axis=0)

        rng = np.random.default_rng(t.seed)
        k = min(t.ssim_sample_size, len(lumas))
        pick = rng.choice(len(lumas), size=k, replace=False)
        self.ssim_sample = [lumas[i] for i in sorted(pick)]


def _resize_gray(gray: np.ndarray, size: int) -> np.ndarray:
    if gray.shape == (size, size):
        return gray
    return cv2.resize(gray, (size, size), interpolation=cv2.INTER_LINEAR)


def validate_synthetic(candidate: np.ndarray, reference,
                       thresholds: SynthThresholds | None = None,
                       image_id: str = "") -> SynthValidationReport:
    """Validate one synthetic candidate against the real reference set.

    `reference` is either a prebuilt ReferenceStats or an iterable of RGB
    reference images. Verdict is "reject" iff at least one rule fires:
    any channel histogram distance above the cutoff, max-SSIM below the
    floor, or any |GLCM z-score| above the cap.
    """
    if isinstance(reference, ReferenceStats):
        stats = reference
        if thresholds is not None and thresholds != stats.thresholds:
            raise ValueError("thresholds differ from those baked into ReferenceStats")
    else:
        stats = ReferenceStats(reference, thresholds or SynthThresholds())
    t = stats.thresholds

    img = validate_rgb(candidate)
    hists = rgb_histograms(img, t.hist_bins)
    hist_d = tuple(hist_distance(hists[c], stats.pooled_hist[c]) for c in range(3))

    luma = bt601_luma(img)
    cand_cmp = _resize_gray(luma, t.ssim_compare_size)
    ssim_max = max(ssim(cand_cmp, ref) for ref in stats.ssim_sample)

    glcm = glcm_features(luma, levels=t.glcm_levels)
    denom = np.where(stats.glcm_std > 0, stats.glcm_std, 1e-12)
    z = (glcm.as_array() - stats.glcm_mean) / denom
    z = tuple(float(v) for v in z)

    reasons = []
    for channel, d in zip("rgb", hist_d):
        if d > t.hist_max_distance:
            reasons.append(f"hist_{channel}={d:.4f}>{t.hist_max_distance}")
    if ssim_max < t.ssim_min:
        reasons.append(f"ssim_max={ssim_max:.4f}<{t.ssim_min}")
    for name, zv in zip(GLCM_FEATURE_NAMES, z):
        if abs(zv) > t.glcm_max_abs_z:
            reasons.append(f"glcm_z_{name}={zv:.2f}")

    return SynthValidationReport(
        image_id=image_id,
        hist_distances=hist_d,
        ssim_max=float(ssim_max),
        glcm=glcm,
        glcm_z_scores=z,
        verdict="reject" if reasons else "accept",
        reject_reasons=reasons,
    )


def write_validation_csv(reports, thresholds: SynthThresholds, path) -> None:
    lines = [f"# dermaudit-synth-validation v1; {thresholds.header()}",
             ",".join(SynthValidationReport.CSV_COLUMNS)]
    for rep in reports:
        lines.append(",".join(str(c) for c in rep.to_csv_row()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_validation_verdicts(path) -> dict:
    """image_id -> verdict from a validation report CSV."""
    verdicts = {}
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                continue
            row = dict(zip(header, cells))
            verdicts[row["image_id"]] = row["verdict"]
    return verdicts
