"""Conditional image generation producing validator-ready artifacts.

Each job emits `count` PNGs plus a metadata CSV (image_id, prompt,
lesion_superclass, seed) in the layout the toolkit's validate-synth and
integrate stages consume. Per-image seeds are derived as job.seed + index
so a fixed job seed reproduces every file.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .prompts import NEGATIVE_PROMPT, build_prompt

INFERENCE_STEPS = 30
GUIDANCE_SCALE = 7.5


@dataclass(frozen=True)
class GenerationJob:
    superclass: str            # "melanocytic" | "non-melanocytic"
    count: int
    seed: int = 42
    fst: str = "VI"
    prefix: str = "GEN"
    inference_steps: int = INFERENCE_STEPS
    guidance_scale: float = GUIDANCE_SCALE


def run_generation(job: GenerationJob, backend, out_dir) -> list:
    """Generate job.count images; returns the metadata rows written."""
    if job.count <= 0:
        raise ValueError("count must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prompt = build_prompt(job.superclass, job.fst)

    rows = []
    for i in range(job.count):
        seed = job.seed + i
        image = backend.generate(prompt, steps=job.inference_steps,
                                 guidance_scale=job.guidance_scale, seed=seed,
                                 negative_prompt=NEGATIVE_PROMPT)
        image_id = f"{job.prefix}{i:05d}"
        Image.fromarray(image).save(out_dir / f"{image_id}.png")
        rows.append({"image_id": image_id, "prompt": prompt,
                     "lesion_superclass": job.superclass, "seed": seed})

    meta_path = out_dir / "metadata.csv"
    exists = meta_path.exists()
    with open(meta_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, ["image_id", "prompt", "lesion_superclass",
                                     "seed"])
        if not exists:
            writer.writeheader()
        writer.writerows(rows)
    return rows
