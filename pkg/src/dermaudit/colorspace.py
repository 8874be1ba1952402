"""Deterministic color-space conversions and chrominance-based skin masking.

Conventions, fixed once for the whole toolkit:

* YCbCr is the ITU-R BT.601 full-range (JPEG) transform; planes are clipped
  to [0, 255]. The published skin chrominance bounds used by `skin_mask`
  were derived under this variant.
* CIELAB uses the IEC 61966-2-1 sRGB transfer function and the D65 white
  point; dermoscopic captures are consumer sRGB.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .imgio import validate_rgb

# Inclusive chrominance bounds for skin pixels, full-range BT.601.
SKIN_CB_RANGE = (77.0, 173.0)
SKIN_CR_RANGE = (133.0, 255.0)

# D65 reference white (2 degree observer).
_WHITE_XYZ = (0.95047, 1.0, 1.08883)

# sRGB (linear) -> XYZ, D65.
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)


@dataclass(frozen=True)
class LabPixel:
    """Mean CIELAB coordinates of a pixel region."""
    l_star: float
    a_star: float
    b_star: float


def rgb_to_ycbcr(image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 full-range YCbCr planes of an 8-bit RGB image.

    Returns (Y, Cb, Cr) float64 planes, each clipped to [0, 255].
    Achromatic pixels map to Cb = Cr = 128 exactly.
    """
    rgb = validate_rgb(image).astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return (np.clip(y, 0.0, 255.0),
            np.clip(cb, 0.0, 255.0),
            np.clip(cr, 0.0, 255.0))


def skin_mask(image: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels whose chrominance falls in the skin ranges.

    A pixel is skin iff Cb in [77, 173] and Cr in [133, 255], bounds
    inclusive, evaluated on the clipped full-range planes. The mask may
    be empty.
    """
    _, cb, cr = rgb_to_ycbcr(image)
    return ((cb >= SKIN_CB_RANGE[0]) & (cb <= SKIN_CB_RANGE[1])
            & (cr >= SKIN_CR_RANGE[0]) & (cr <= SKIN_CR_RANGE[1]))


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)


def _lab_f_inv(ft: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(ft > delta, ft ** 3, 3 * delta ** 2 * (ft - 4.0 / 29.0))


def rgb_to_lab_planes(image: np.ndarray) -> np.ndarray:
    """Per-pixel CIELAB planes of an 8-bit sRGB image.

    Returns an (H, W, 3) float64 array of (L*, a*, b*). L* is in [0, 100].
    """
    rgb = validate_rgb(image).astype(np.float64) / 255.0
    lin = _srgb_to_linear(rgb)
    xyz = lin @ _RGB_TO_XYZ.T
    fx = _lab_f(xyz[..., 0] / _WHITE_XYZ[0])
    fy = _lab_f(xyz[..., 1] / _WHITE_XYZ[1])
    fz = _lab_f(xyz[..., 2] / _WHITE_XYZ[2])
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def lab_planes_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of `rgb_to_lab_planes`, back to 8-bit sRGB (values rounded)."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx) * _WHITE_XYZ[0],
                    _lab_f_inv(fy) * _WHITE_XYZ[1],
                    _lab_f_inv(fz) * _WHITE_XYZ[2]], axis=-1)
    lin = xyz @ _XYZ_TO_RGB.T
    srgb = _linear_to_srgb(lin)
    return np.clip(np.rint(srgb * 255.0), 0, 255).astype(np.uint8)


def mean_lab(image: np.ndarray, mask: np.ndarray) -> LabPixel:
    """Arithmetic mean of L*, a*, b* over the masked region.

    Raises EmptyMaskError if the mask selects no pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    img = validate_rgb(image)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if not mask.any():
        raise EmptyMaskError("skin mask selected no pixels")
    lab = rgb_to_lab_planes(img)[mask]
    return LabPixel(float(lab[:, 0].mean()), float(lab[:, 1].mean()),
                    float(lab[:, 2].mean()))


def bt601_luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma plane (float64 in [0, 255]) of an 8-bit RGB image."""
    return rgb_to_ycbcr(image)[0]
