"""Shared training utilities."""

import random

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def resolve_device(name: str | None) -> torch.device:
    if name:
        return torch.device(name)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def binary_auc(scores, labels) -> float:
    """Rank-based ROC-AUC with tie handling; 0.5 when a class is missing."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2)
                 / (n_pos * n_neg))


def load_image_tensor(path, size: int, normalize: bool = True) -> torch.Tensor:
    """(3, size, size) float tensor, optionally ImageNet-normalized."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.Resampling.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 255.0
    if normalize:
        arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) \
            / np.array(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1)


def load_mask_tensor(path, size: int) -> torch.Tensor:
    """(1, size, size) float tensor in {0, 1} from a {0, 255} mask PNG."""
    with Image.open(path) as im:
        im = im.convert("L").resize((size, size), Image.Resampling.NEAREST)
    arr = (np.asarray(im) > 0).astype(np.float32)
    return torch.from_numpy(arr)[None]
