import csv

import numpy as np
import pytest
from PIL import Image

MANIFEST_COLUMNS = ("image_id", "path", "diagnosis", "superclass",
                    "patient_id", "source", "ita_degrees", "fitzpatrick",
                    "split")


def _lesion_image(rng, size=64):
    tone = np.array([110, 74, 52]) + rng.integers(-10, 11, 3)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = tone
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = size / 2 + rng.uniform(-6, 6, 2)
    ry, rx = rng.uniform(size * 0.18, size * 0.3, 2)
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img[mask] = tone * 0.45
    img += rng.normal(0, 5, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """16 images + masks + a toolkit-format split manifest."""
    root = tmp_path_factory.mktemp("genlab_corpus")
    images = root / "images"
    masks = root / "masks"
    images.mkdir()
    masks.mkdir()
    rng = np.random.default_rng(7)

    splits = ["train"] * 10 + ["val"] * 3 + ["test"] * 3
    rows = []
    for i, split in enumerate(splits):
        image_id = f"TINY{i:04d}"
        img, mask = _lesion_image(rng)
        Image.fromarray(img).save(images / f"{image_id}.png")
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(
            masks / f"{image_id}.png")
        rows.append({
            "image_id": image_id,
            "path": str(images / f"{image_id}.png"),
            "diagnosis": "melanoma" if i % 2 else "dermatofibroma",
            "superclass": "melanocytic" if i % 2 else "non-melanocytic",
            "patient_id": f"pt{i // 2}",
            "source": "synthetic" if (split == "train" and i % 5 == 0) else "real",
            "ita_degrees": "-35.0",
            "fitzpatrick": "VI" if i % 3 == 0 else "V",
            "split": split,
        })

    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        fh.write("# dermaudit-manifest v1\n")
        writer = csv.DictWriter(fh, MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return {"root": root, "images": images, "masks": masks,
            "manifest": manifest, "rows": rows}
