"""Image file I/O: 8-bit PNG/JPEG in, 8-bit PNG out.

All in-memory images are numpy arrays: RGB images are (H, W, 3) uint8,
grayscale/masks are (H, W). Loading normalises every supported input
(palette PNG, grayscale JPEG, RGBA, ...) to plain 8-bit RGB.
"""

import numpy as np
from PIL import Image


def load_rgb(path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 RGB or (H, W) uint8 grayscale PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {arr.dtype}")
    Image.fromarray(arr).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Load a single-channel mask PNG as an (H, W) bool array (nonzero = set)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def save_mask(path, mask: np.ndarray) -> None:
    """Write a bool mask as an 8-bit single-channel PNG with values {0, 255}."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def validate_rgb(image: np.ndarray) -> np.ndarray:
    """Check that `image` is a nonempty (H, W, 3) uint8 array and return it."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 RGB array, got {arr.dtype}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has zero area")
    return arr
