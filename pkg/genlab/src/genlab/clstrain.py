"""Classification reference recipe: EfficientNet-B0 transfer learning.

ImageNet-initialised EfficientNet-B0 with the classifier replaced by a
512-unit ReLU layer with dropout 0.3 and a two-class output. The head
trains alone for 3 epochs, then the whole network unfreezes. Adam
(lr 1e-4, betas 0.9/0.999, weight decay 1e-4), cross-entropy with equal
class weights, ReduceLROnPlateau on validation AUC (factor 0.5, patience
3, min lr 1e-7), early stopping with patience 7, gradient clipping at
max-norm 1.0, up to 25 epochs with batch size 32, seed 42. The best
validation-AUC checkpoint is kept and used for the prediction file.
"""

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset
from torchvision import models, transforms
from PIL import Image

from .manifests import (EpochLogWriter, read_manifest, split_rows,
                        write_predictions)
from .trainutil import (IMAGENET_MEAN, IMAGENET_STD, binary_auc,
                        resolve_device, set_seed)


@dataclass(frozen=True)
class ClsTrainConfig:
    resolution: int = 224
    max_epochs: int = 25
    head_only_epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    min_learning_rate: float = 1e-7
    early_stop_patience: int = 7
    grad_clip_norm: float = 1.0
    dropout: float = 0.3
    seed: int = 42
    pretrained: bool = True
    device: str | None = None
    workers: int = 0
    eval_split: str = "val"


class _ClsDataset(Dataset):
    def __init__(self, rows, transform):
        self.rows = rows
        self.transform = transform

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, idx):
        row = self.rows[idx]
        with Image.open(row.path) as im:
            image = self.transform(im.convert("RGB"))
        return image, row.label


def _transforms(resolution):
    eval_resize = round(resolution * 256 / 224)
    train = transforms.Compose([
        transforms.RandomResizedCrop(resolution),
        transforms.RandomHorizontalFlip(),
        transforms.RandomVerticalFlip(),
        transforms.ColorJitter(brightness=0.2, contrast=0.2, saturation=0.2,
                               hue=0.1),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])
    evaluation = transforms.Compose([
        transforms.Resize((eval_resize, eval_resize)),
        transforms.CenterCrop(resolution),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])
    return train, evaluation


def build_model(pretrained: bool, dropout: float) -> nn.Module:
    weights = models.EfficientNet_B0_Weights.DEFAULT if pretrained else None
    model = models.efficientnet_b0(weights=weights)
    in_features = model.classifier[1].in_features
    model.classifier = nn.Sequential(
        nn.Linear(in_features, 512),
        nn.ReLU(inplace=True),
        nn.Dropout(p=dropout),
        nn.Linear(512, 2),
    )
    return model


def _set_backbone_frozen(model: nn.Module, frozen: bool) -> None:
    for name, parameter in model.named_parameters():
        if not name.startswith("classifier"):
            parameter.requires_grad = not frozen


def _evaluate(model, loader, device, criterion):
    model.eval()
    total_loss = 0.0
    correct = 0
    scores, labels = [], []
    with torch.no_grad():
        for images, targets in loader:
            images, targets = images.to(device), targets.to(device)
            logits = model(images)
            total_loss += float(criterion(logits, targets)) * images.shape[0]
            probs = torch.softmax(logits, dim=1)[:, 1]
            correct += int((logits.argmax(dim=1) == targets).sum())
            scores.extend(probs.cpu().tolist())
            labels.extend(targets.cpu().tolist())
    n = max(len(loader.dataset), 1)
    return total_loss / n, correct / n, binary_auc(scores, labels)


def train_classifier(manifest_path, out_dir,
                     config: ClsTrainConfig = ClsTrainConfig()) -> dict:
    """Full fine-tuning run; writes predictions.csv, epoch_log.csv and
    the best checkpoint under out_dir."""
    set_seed(config.seed)
    device = resolve_device(config.device)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = read_manifest(manifest_path)
    train_rows = split_rows(rows, "train")
    val_rows = split_rows(rows, config.eval_split)
    if not train_rows:
        raise ValueError("manifest has no train-split records")
    if not val_rows:
        raise ValueError(f"manifest has no {config.eval_split!r}-split records")

    train_tf, eval_tf = _transforms(config.resolution)
    generator = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(_ClsDataset(train_rows, train_tf),
                              batch_size=config.batch_size, shuffle=True,
                              num_workers=config.workers,
                              pin_memory=device.type == "cuda",
                              generator=generator)
    val_loader = DataLoader(_ClsDataset(val_rows, eval_tf),
                            batch_size=config.batch_size,
                            num_workers=config.workers,
                            pin_memory=device.type == "cuda")

    model = build_model(config.pretrained, config.dropout).to(device)
    _set_backbone_frozen(model, True)
    criterion = nn.CrossEntropyLoss(weight=torch.tensor([1.0, 1.0]).to(device))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=(0.9, 0.999),
                                 weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="max", factor=config.scheduler_factor,
        patience=config.scheduler_patience, min_lr=config.min_learning_rate)

    best_auc = -1.0
    best_epoch = 0
    epochs_since_best = 0
    checkpoint = out_dir / "best.pt"

    with EpochLogWriter(out_dir / "epoch_log.csv") as log:
        for epoch in range(1, config.max_epochs + 1):
            if epoch == config.head_only_epochs + 1:
                _set_backbone_frozen(model, False)

            model.train()
            running_loss = 0.0
            correct = 0
            train_scores, train_labels = [], []
            for images, targets in train_loader:
                images, targets = images.to(device), targets.to(device)
                logits = model(images)
                loss = criterion(logits, targets)
                optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(
                    [p for p in model.parameters() if p.requires_grad],
                    config.grad_clip_norm)
                optimizer.step()
                running_loss += float(loss.detach()) * images.shape[0]
                correct += int((logits.argmax(dim=1) == targets).sum())
                train_scores.extend(
                    torch.softmax(logits.detach(), 1)[:, 1].cpu().tolist())
                train_labels.extend(targets.cpu().tolist())

            train_loss = running_loss / len(train_loader.dataset)
            train_acc = correct / len(train_loader.dataset)
            val_loss, val_acc, val_auc = _evaluate(model, val_loader, device,
                                                   criterion)
            scheduler.step(val_auc)
            log.add(epoch, train_loss, val_loss, train_acc * 100,
                    val_acc * 100, val_auc)

            if val_auc > best_auc:
                best_auc = val_auc
                best_epoch = epoch
                epochs_since_best = 0
                torch.save(model.state_dict(), checkpoint)
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.early_stop_patience:
                    break

    model.load_state_dict(torch.load(checkpoint, map_location=device))
    model.eval()
    predictions = []
    with torch.no_grad():
        offset = 0
        for images, targets in val_loader:
            probs = torch.softmax(model(images.to(device)), dim=1)[:, 1]
            for k, prob in enumerate(probs.cpu().tolist()):
                row = val_rows[offset + k]
                predictions.append((row.image_id, prob, row.label))
            offset += images.shape[0]
    write_predictions(out_dir / "predictions.csv", predictions)

    return {"train_images": len(train_rows), "eval_images": len(val_rows),
            "best_epoch": best_epoch, "best_val_auc": best_auc}
