"""LoRA fine-tuning loop over a diffusion backend.

The adapters are trained on the dark-skin subset (Fitzpatrick V/VI) of a
manifest; the base model stays frozen (only the backend's trainable
parameters receive gradients). Standard denoising objective: sample a
timestep, noise the image latents, predict the noise, minimise MSE.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .manifests import dark_subset, read_manifest
from .prompts import build_prompt


@dataclass(frozen=True)
class LoraTrainConfig:
    resolution: int = 512
    batch_size: int = 4
    epochs: int = 1
    learning_rate: float = 1e-4
    seed: int = 42
    max_steps: int | None = None   # cap for smoke runs


def _load_pixels(path, resolution) -> torch.Tensor:
    with Image.open(path) as im:
        im = im.convert("RGB").resize((resolution, resolution),
                                      Image.Resampling.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 127.5 - 1.0   # [-1, 1]
    return torch.from_numpy(arr).permute(2, 0, 1)


def finetune_lora(manifest_path, out_path, backend,
                  config: LoraTrainConfig = LoraTrainConfig()) -> dict:
    """Train adapter weights on the manifest's FST V/VI records.

    Refuses to start on an empty dark subset. Returns a small summary
    dict (steps, final loss); the adapter checkpoint lands at `out_path`.
    """
    rows = read_manifest(manifest_path)
    dark = dark_subset(rows)
    if not dark:
        raise ValueError("no FST V/VI records in the manifest; "
                         "refusing to fine-tune on an empty subset")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(backend.trainable_parameters(),
                                 lr=config.learning_rate)

    losses = []
    steps = 0
    done = False
    for _ in range(config.epochs):
        order = rng.permutation(len(dark))
        for start in range(0, len(order), config.batch_size):
            batch = [dark[i] for i in order[start:start + config.batch_size]]
            pixels = torch.stack([_load_pixels(r.path, config.resolution)
                                  for r in batch])
            prompts = [build_prompt(r.superclass, r.fitzpatrick or "VI")
                       for r in batch]

            latents = backend.encode_images(pixels)
            noise = torch.randn_like(latents)
            timesteps = torch.randint(0, backend.num_train_timesteps,
                                      (latents.shape[0],))
            noisy = backend.add_noise(latents, noise, timesteps)
            embeddings = backend.encode_prompts(prompts)
            predicted = backend.predict_noise(noisy, timesteps, embeddings)

            loss = torch.nn.functional.mse_loss(predicted.float(),
                                                noise.float())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            losses.append(float(loss.detach()))
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                done = True
                break
        if done:
            break

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    backend.save_adapter(out_path)
    return {"images": len(dark), "steps": steps, "final_loss": losses[-1]}
