"""Segmentation reference recipe: a small fully convolutional network.

Three convolutional blocks (16, 32, 64 filters), each followed by max
pooling, then transposed convolutions back to full resolution. Trained
with binary cross-entropy and Adam (lr 1e-4), 30 epochs, batch 16. The
evaluation predictions are emitted only for real test-split images, as
{0, 255} mask PNGs at each image's native size.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn
from torch.utils.data import DataLoader, Dataset

from .manifests import EpochLogWriter, read_manifest, split_rows
from .trainutil import (binary_auc, load_image_tensor, load_mask_tensor,
                        resolve_device, set_seed)


@dataclass(frozen=True)
class SegTrainConfig:
    resolution: int = 224
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 42
    device: str | None = None
    threshold: float = 0.5
    auc_pixel_cap: int = 20000


class LesionSegNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(64, 32, 2, stride=2), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(32, 16, 2, stride=2), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(16, 1, 2, stride=2),
        )

    def forward(self, x):
        return self.decoder(self.encoder(x))


class _SegDataset(Dataset):
    def __init__(self, rows, masks_dir, resolution):
        self.rows = rows
        self.masks_dir = Path(masks_dir)
        self.resolution = resolution

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, idx):
        row = self.rows[idx]
        image = load_image_tensor(row.path, self.resolution)
        mask = load_mask_tensor(self.masks_dir / f"{row.image_id}.png",
                                self.resolution)
        return image, mask


def _with_masks(rows, masks_dir):
    masks_dir = Path(masks_dir)
    kept, missing = [], []
    for row in rows:
        if (masks_dir / f"{row.image_id}.png").exists():
            kept.append(row)
        else:
            missing.append(row.image_id)
    return kept, missing


def _epoch_pass(model, loader, device, optimizer=None):
    training = optimizer is not None
    model.train(training)
    total_loss = 0.0
    total_correct = 0
    total_px = 0
    criterion = nn.BCEWithLogitsLoss()
    scores, labels = [], []
    with torch.set_grad_enabled(training):
        for images, masks in loader:
            images, masks = images.to(device), masks.to(device)
            logits = model(images)
            loss = criterion(logits, masks)
            if training:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            total_loss += float(loss.detach()) * images.shape[0]
            predicted = torch.sigmoid(logits) >= 0.5
            total_correct += int((predicted == masks.bool()).sum())
            total_px += masks.numel()
            if not training:
                scores.append(torch.sigmoid(logits).flatten().cpu().numpy())
                labels.append(masks.flatten().cpu().numpy())
    mean_loss = total_loss / max(len(loader.dataset), 1)
    accuracy = total_correct / max(total_px, 1)
    return mean_loss, accuracy, scores, labels


def train_segmentation(manifest_path, masks_dir, out_dir,
                       config: SegTrainConfig = SegTrainConfig()) -> dict:
    """Train on the train split (real + synthetic), predict real test masks.

    Writes out_dir/masks/*.png, out_dir/epoch_log.csv and
    out_dir/missing_masks.csv; returns a summary dict.
    """
    set_seed(config.seed)
    device = resolve_device(config.device)
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    rows = read_manifest(manifest_path)
    train_rows, train_missing = _with_masks(split_rows(rows, "train"), masks_dir)
    val_rows, val_missing = _with_masks(split_rows(rows, "val"), masks_dir)
    test_rows = split_rows(rows, "test", real_only=True)
    if not train_rows:
        raise ValueError("no training records with masks")
    if not val_rows:
        val_rows = train_rows  # tiny fixture corpora may lack a val split

    with open(out_dir / "missing_masks.csv", "w") as fh:
        fh.write("image_id\n")
        for image_id in train_missing + val_missing:
            fh.write(f"{image_id}\n")

    generator = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(_SegDataset(train_rows, masks_dir,
                                          config.resolution),
                              batch_size=config.batch_size, shuffle=True,
                              generator=generator)
    val_loader = DataLoader(_SegDataset(val_rows, masks_dir, config.resolution),
                            batch_size=config.batch_size)

    model = LesionSegNet().to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    rng = np.random.default_rng(config.seed)
    with EpochLogWriter(out_dir / "epoch_log.csv") as log:
        for epoch in range(1, config.epochs + 1):
            train_loss, train_acc, _, _ = _epoch_pass(model, train_loader,
                                                      device, optimizer)
            val_loss, val_acc, scores, labels = _epoch_pass(model, val_loader,
                                                            device)
            flat_scores = np.concatenate(scores)
            flat_labels = np.concatenate(labels)
            if len(flat_scores) > config.auc_pixel_cap:
                pick = rng.choice(len(flat_scores), config.auc_pixel_cap,
                                  replace=False)
                flat_scores, flat_labels = flat_scores[pick], flat_labels[pick]
            auc = binary_auc(flat_scores, flat_labels.astype(int))
            log.add(epoch, train_loss, val_loss, train_acc * 100,
                    val_acc * 100, auc)

    # real-only test predictions at native size
    model.eval()
    predicted = 0
    for row in test_rows:
        with Image.open(row.path) as im:
            native = im.convert("RGB")
            width, height = native.size
        tensor = load_image_tensor(row.path, config.resolution)[None].to(device)
        with torch.no_grad():
            prob = torch.sigmoid(model(tensor))[0, 0].cpu().numpy()
        mask = (prob >= config.threshold).astype(np.uint8) * 255
        full = Image.fromarray(mask, mode="L").resize(
            (width, height), Image.Resampling.NEAREST)
        full.save(out_dir / "masks" / f"{row.image_id}.png")
        predicted += 1

    torch.save(model.state_dict(), out_dir / "segnet.pt")
    return {"train_images": len(train_rows), "val_images": len(val_rows),
            "test_predictions": predicted,
            "missing_masks": len(train_missing) + len(val_missing)}
