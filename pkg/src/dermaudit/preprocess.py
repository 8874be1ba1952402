"""Standardized preprocessing chain and train/eval transforms.

Pipeline order: resize -> non-local-means denoise -> gamma correction ->
CLAHE (on the L channel of a Lab decomposition) -> hair/ruler suppression
-> ImageNet normalization. Filters run on 8-bit intensities;
normalization comes last because it destroys the 8-bit domain the
filters assume.

Every spatial filter here is exactly identity on spatially-constant
images. That rules out the stock OpenCV CLAHE/NLM (both shift constant
inputs by quantisation and histogram-redistribution artifacts), so both
are implemented in-house: the CLAHE tile transform falls back to the
identity map for zero-dynamic-range tiles, and NLM weights are computed
in float64 so equal pixels average to themselves.
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .colorspace import bt601_luma, lab_planes_to_rgb, rgb_to_lab_planes
from .errors import ArtifactRejectionError
from .imgio import validate_rgb

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Random-resized-crop draw ranges (area scale, aspect ratio).
CROP_SCALE = (0.6, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
JITTER_FACTOR_RANGE = (0.8, 1.2)   # brightness / contrast / saturation
JITTER_HUE_RANGE = (-0.1, 0.1)     # fraction of the full hue circle


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 224
    eval_resize: int = 256
    gamma_mode: str = "adaptive"        # "adaptive" | "fixed"
    gamma_value: float = 1.0            # used when gamma_mode == "fixed"
    clahe_clip: float = 2.0
    clahe_tiles: tuple = (8, 8)
    nlm_strength: float = 10.0
    nlm_patch: int = 7
    nlm_search: int = 21
    hair_kernel: int = 17
    hair_threshold: int = 10
    artifact_reject_frac: float = 0.40
    seed: int = 0

    def __post_init__(self):
        if self.target_size > self.eval_resize:
            raise ValueError("target_size must not exceed eval_resize")
        for name in ("target_size", "eval_resize", "clahe_clip", "nlm_strength",
                     "nlm_patch", "nlm_search", "hair_kernel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hair_kernel % 2 == 0:
            raise ValueError("hair_kernel must be odd")

    def header(self) -> str:
        return (f"target_size={self.target_size}; gamma_mode={self.gamma_mode}; "
                f"gamma_value={self.gamma_value}; clahe_clip={self.clahe_clip}; "
                f"clahe_tiles={self.clahe_tiles[0]}x{self.clahe_tiles[1]}; "
                f"nlm=h{self.nlm_strength}/p{self.nlm_patch}/s{self.nlm_search}; "
                f"hair=k{self.hair_kernel}/t{self.hair_threshold}"
                f"/reject>{self.artifact_reject_frac}; seed={self.seed}")


def resize_rgb(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to size x size."""
    img = validate_rgb(image)
    if img.shape[:2] == (size, size):
        return img.copy()
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def _box_mean(img: np.ndarray, ksize: int) -> np.ndarray:
    return cv2.boxFilter(img, -1, (ksize, ksize), normalize=True,
                         borderType=cv2.BORDER_REFLECT_101)


def nlm_denoise(image: np.ndarray, strength: float = 10.0, patch: int = 7,
                search: int = 21) -> np.ndarray:
    """Non-local means denoising.

    Weights come from patch-mean squared luma differences,
    w = exp(-d / h^2), shared across the three channels. Identity on
    constant images by construction.
    """
    rgb = validate_rgb(image).astype(np.float64)
    luma = bt601_luma(image)
    s = search // 2
    h, w = luma.shape
    pl = np.pad(luma, s, mode="reflect")
    pc = np.pad(rgb, ((s, s), (s, s), (0, 0)), mode="reflect")

    num = np.zeros_like(rgb)
    den = np.zeros_like(luma)
    inv_h2 = 1.0 / (strength * strength)
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            shifted_l = pl[s + dy:s + dy + h, s + dx:s + dx + w]
            d = _box_mean((luma - shifted_l) ** 2, patch)
            wgt = np.exp(-d * inv_h2)
            den += wgt
            num += wgt[..., None] * pc[s + dy:s + dy + h, s + dx:s + dx + w, :]
    out = num / den[..., None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def adaptive_gamma(image: np.ndarray) -> float:
    """Brightness-adaptive gamma pulling mean luminance toward mid-gray.

    gamma = log(0.5) / log(mean_luma / 255), clamped to [0.5, 2.0].
    """
    mean = float(np.clip(bt601_luma(image).mean(), 1.0, 254.0))
    gamma = math.log(0.5) / math.log(mean / 255.0)
    return float(np.clip(gamma, 0.5, 2.0))


def gamma_correct(image: np.ndarray, gamma: float) -> np.ndarray:
    """Per-channel power-law correction via an 8-bit LUT (gamma=1 is identity)."""
    lut = np.clip(np.rint(255.0 * (np.arange(256) / 255.0) ** gamma),
                  0, 255).astype(np.uint8)
    return lut[validate_rgb(image)]


def clahe_gray(plane: np.ndarray, clip_limit: float = 2.0,
               tiles: tuple = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a uint8 plane.

    Per-tile clipped-histogram equalization with bilinear interpolation
    between the tile transforms. Tiles with zero dynamic range (a single
    occupied histogram bin) keep the identity transform, so constant
    images pass through unchanged.
    """
    plane = np.asarray(plane)
    if plane.dtype != np.uint8 or plane.ndim != 2:
        raise ValueError("clahe_gray expects a 2-D uint8 plane")
    ty, tx = tiles
    h, w = plane.shape
    tile_h = math.ceil(h / ty)
    tile_w = math.ceil(w / tx)
    padded = np.pad(plane, ((0, tile_h * ty - h), (0, tile_w * tx - w)),
                    mode="edge")
    tile_px = tile_h * tile_w

    maps = np.empty((ty, tx, 256), dtype=np.float64)
    identity = np.arange(256, dtype=np.float64)
    limit = max(clip_limit * tile_px / 256.0, 1.0)
    for i in range(ty):
        for j in range(tx):
            tile = padded[i * tile_h:(i + 1) * tile_h, j * tile_w:(j + 1) * tile_w]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            if np.count_nonzero(hist) <= 1:
                maps[i, j] = identity
                continue
            excess = np.sum(np.maximum(hist - limit, 0.0))
            hist = np.minimum(hist, limit) + excess / 256.0
            maps[i, j] = np.cumsum(hist) * (255.0 / tile_px)

    hp, wp = padded.shape
    fy = np.clip((np.arange(hp) + 0.5) / tile_h - 0.5, 0, ty - 1)
    fx = np.clip((np.arange(wp) + 0.5) / tile_w - 0.5, 0, tx - 1)
    y0 = fy.astype(np.int64)
    x0 = fx.astype(np.int64)
    y1 = np.minimum(y0 + 1, ty - 1)
    x1 = np.minimum(x0 + 1, tx - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]

    y0c, y1c = y0[:, None], y1[:, None]
    x0c, x1c = x0[None, :], x1[None, :]
    vals = padded.astype(np.int64)
    blended = ((1 - wy) * (1 - wx) * maps[y0c, x0c, vals]
               + (1 - wy) * wx * maps[y0c, x1c, vals]
               + wy * (1 - wx) * maps[y1c, x0c, vals]
               + wy * wx * maps[y1c, x1c, vals])
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)[:h, :w]


def clahe_on_lightness(image: np.ndarray, clip_limit: float = 2.0,
                       tiles: tuple = (8, 8)) -> np.ndarray:
    """CLAHE applied to the L* channel of a Lab decomposition.

    L* is quantized to 8 bits for the histogram transform; pixels whose
    quantized lightness is unchanged keep their original RGB bytes, so
    the operation is exactly identity wherever the transform is.
    """
    img = validate_rgb(image)
    lab = rgb_to_lab_planes(img)
    l8 = np.clip(np.rint(lab[..., 0] * (255.0 / 100.0)), 0, 255).astype(np.uint8)
    l8_eq = clahe_gray(l8, clip_limit, tiles)
    delta = l8_eq.astype(np.float64) - l8.astype(np.float64)
    changed = delta != 0
    if not changed.any():
        return img.copy()
    lab_new = lab.copy()
    lab_new[..., 0] = np.clip(lab[..., 0] + delta * (100.0 / 255.0), 0.0, 100.0)
    rebuilt = lab_planes_to_rgb(lab_new)
    return np.where(changed[..., None], rebuilt, img)


def hair_artifact_mask(image: np.ndarray, kernel_size: int = 17,
                       threshold: int = 10) -> np.ndarray:
    """Dark elongated artifact candidates via a morphological black-hat."""
    luma8 = np.clip(np.rint(bt601_luma(image)), 0, 255).astype(np.uint8)
    kernel = cv2.getStructuringElement(cv2.MORPH_CROSS,
                                       (kernel_size, kernel_size))
    blackhat = cv2.morphologyEx(luma8, cv2.MORPH_BLACKHAT, kernel)
    return blackhat > threshold


def inpaint_masked(image: np.ndarray, mask: np.ndarray,
                   radius: int = 5) -> np.ndarray:
    """Replace masked pixels by the inverse-distance-weighted mean of
    unmasked pixels in a growing neighbourhood."""
    img = validate_rgb(image).astype(np.float64)
    todo = np.asarray(mask, dtype=bool).copy()
    if not todo.any():
        return image.copy()
    out = img.copy()
    r = radius
    for _ in range(8):
        valid = (~todo).astype(np.float64)
        num = np.zeros_like(img)
        den = np.zeros(img.shape[:2])
        vh, vw = den.shape
        pv = np.pad(valid, r, mode="constant")
        po = np.pad(out * valid[..., None], ((r, r), (r, r), (0, 0)),
                    mode="constant")
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dy == 0 and dx == 0:
                    continue
                wgt = 1.0 / math.hypot(dy, dx)
                sv = pv[r + dy:r + dy + vh, r + dx:r + dx + vw]
                den += wgt * sv
                num += wgt * po[r + dy:r + dy + vh, r + dx:r + dx + vw, :]
        fillable = todo & (den > 0)
        if fillable.any():
            out[fillable] = num[fillable] / den[fillable][:, None]
            todo &= ~fillable
        if not todo.any():
            break
        r *= 2
    if todo.any():
        out[todo] = img[~np.asarray(mask, dtype=bool)].reshape(-1, 3).mean(axis=0)
    result = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    keep = ~np.asarray(mask, dtype=bool)
    result[keep] = validate_rgb(image)[keep]
    return result


def suppress_hair(image: np.ndarray, cfg: PreprocessConfig
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Flag and inpaint hair/ruler artifacts.

    Raises ArtifactRejectionError when the flagged fraction exceeds the
    rejection threshold (persistent major artifact).
    """
    flagged = hair_artifact_mask(image, cfg.hair_kernel, cfg.hair_threshold)
    frac = float(flagged.mean())
    if frac > cfg.artifact_reject_frac:
        raise ArtifactRejectionError(
            f"{frac:.1%} of pixels flagged as artifact "
            f"(limit {cfg.artifact_reject_frac:.0%})")
    if not flagged.any():
        return image.copy(), flagged
    return inpaint_masked(image, flagged), flagged


def normalize(image: np.ndarray) -> np.ndarray:
    """(pixel/255 - mean) / std per channel with ImageNet statistics."""
    img = validate_rgb(image).astype(np.float64) / 255.0
    out = (img - np.array(IMAGENET_MEAN)) / np.array(IMAGENET_STD)
    return out.astype(np.float32)


def denormalize(norm: np.ndarray) -> np.ndarray:
    """Inverse of `normalize`, back to uint8."""
    x = norm.astype(np.float64) * np.array(IMAGENET_STD) + np.array(IMAGENET_MEAN)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def preprocess_to_uint8(image: np.ndarray,
                        cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """The full filter chain, stopping before normalization (8-bit output)."""
    img = resize_rgb(image, cfg.target_size)
    img = nlm_denoise(img, cfg.nlm_strength, cfg.nlm_patch, cfg.nlm_search)
    gamma = adaptive_gamma(img) if cfg.gamma_mode == "adaptive" else cfg.gamma_value
    img = gamma_correct(img, gamma)
    img = clahe_on_lightness(img, cfg.clahe_clip, cfg.clahe_tiles)
    img, _ = suppress_hair(img, cfg)
    return img


def preprocess(image: np.ndarray,
               cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Full preprocessing chain to a normalized float32 (H, W, 3) image.

    Deterministic for a fixed config; raises ArtifactRejectionError when
    hair suppression flags a persistent major artifact.
    """
    return normalize(preprocess_to_uint8(image, cfg))


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of the training augmentation."""
    crop: tuple            # (top, left, height, width)
    hflip: bool
    vflip: bool
    brightness: float
    contrast: float
    saturation: float
    hue: float             # fraction of the hue circle


def draw_augment_params(rng: np.random.Generator, image_shape,
                        scale=CROP_SCALE, ratio=CROP_RATIO) -> AugmentParams:
    """Sample crop geometry, flips and colour-jitter factors."""
    h, w = image_shape[:2]
    area = h * w
    crop = None
    for _ in range(10):
        target_area = area * rng.uniform(*scale)
        log_ratio = rng.uniform(math.log(ratio[0]), math.log(ratio[1]))
        aspect = math.exp(log_ratio)
        cw = int(round(math.sqrt(target_area * aspect)))
        ch = int(round(math.sqrt(target_area / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = (top, left, ch, cw)
            break
    if crop is None:
        side = min(h, w)
        crop = ((h - side) // 2, (w - side) // 2, side, side)
    return AugmentParams(
        crop=crop,
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
        brightness=float(rng.uniform(*JITTER_FACTOR_RANGE)),
        contrast=float(rng.uniform(*JITTER_FACTOR_RANGE)),
        saturation=float(rng.uniform(*JITTER_FACTOR_RANGE)),
        hue=float(rng.uniform(*JITTER_HUE_RANGE)),
    )


def _jitter_colors(rgb: np.ndarray, params: AugmentParams) -> np.ndarray:
    x = rgb.astype(np.float64)
    if params.brightness != 1.0:
        x = x * params.brightness
    if params.contrast != 1.0:
        mean = (0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]).mean()
        x = (x - mean) * params.contrast + mean
    if params.saturation != 1.0:
        luma = (0.299 * x[..., 0] + 0.587 * x[..., 1]
                + 0.114 * x[..., 2])[..., None]
        x = (x - luma) * params.saturation + luma
    if params.hue != 0.0:
        theta = params.hue * 2.0 * math.pi
        y = 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]
        cb = -0.168736 * x[..., 0] - 0.331264 * x[..., 1] + 0.5 * x[..., 2]
        cr = 0.5 * x[..., 0] - 0.418688 * x[..., 1] - 0.081312 * x[..., 2]
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        cb2 = cos_t * cb - sin_t * cr
        cr2 = sin_t * cb + cos_t * cr
        x = np.stack([y + 1.402 * cr2,
                      y - 0.344136 * cb2 - 0.714136 * cr2,
                      y + 1.772 * cb2], axis=-1)
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def apply_augment(image: np.ndarray, params: AugmentParams,
                  out_size: int = 224) -> np.ndarray:
    """Deterministically apply one augmentation draw."""
    img = validate_rgb(image)
    top, left, ch, cw = params.crop
    img = img[top:top + ch, left:left + cw]
    img = cv2.resize(img, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    if params.hflip:
        img = img[:, ::-1]
    if params.vflip:
        img = img[::-1, :]
    return _jitter_colors(np.ascontiguousarray(img), params)


def train_augment(image: np.ndarray, rng: np.random.Generator,
                  out_size: int = 224) -> np.ndarray:
    """Random resized crop + flips + colour jitter; reproducible per rng state."""
    params = draw_augment_params(rng, validate_rgb(image).shape)
    return apply_augment(image, params, out_size)


def eval_transform(image: np.ndarray,
                   cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Deterministic eval path: resize, centre crop, normalize."""
    img = resize_rgb(image, cfg.eval_resize)
    off = (cfg.eval_resize - cfg.target_size) // 2
    crop = img[off:off + cfg.target_size, off:off + cfg.target_size]
    return normalize(crop)
