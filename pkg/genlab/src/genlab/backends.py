"""Diffusion backends behind a narrow surface the training loop drives.

The LoRA fine-tuning loop in `lora.py` owns epochs, optimisation and
logging; a backend owns everything model-specific: encoding images to
latents, encoding prompts, the forward noise process, noise prediction,
which parameters are trainable, adapter persistence and sampling.

`DiffusersBackend` wires this to a Stable Diffusion checkpoint through
the Hugging Face stack (install the `diffusion` extra; weights are
fetched on first use). Tests drive the same loop through a lightweight
stand-in backend instead, so the orchestration is exercised without
gigabyte checkpoints.
"""

import numpy as np
import torch

LATENT_SCALE = 0.18215


class DiffusersBackend:
    """Stable Diffusion + LoRA adapters on the U-Net cross-attention."""

    def __init__(self, base_model="runwayml/stable-diffusion-v1-5",
                 device=None, rank=8, alpha=16, dtype=torch.float16):
        try:
            from diffusers import DDPMScheduler, StableDiffusionPipeline
            from peft import LoraConfig
        except ImportError as exc:  # pragma: no cover - needs the extra
            raise RuntimeError(
                "the diffusers backend needs the 'diffusion' extra: "
                "pip install 'genlab[diffusion]'") from exc

        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.dtype = dtype if self.device == "cuda" else torch.float32
        self.pipeline = StableDiffusionPipeline.from_pretrained(
            base_model, torch_dtype=self.dtype).to(self.device)
        self.pipeline.safety_checker = None
        self.noise_scheduler = DDPMScheduler.from_config(
            self.pipeline.scheduler.config)

        unet = self.pipeline.unet
        unet.requires_grad_(False)
        self.pipeline.vae.requires_grad_(False)
        self.pipeline.text_encoder.requires_grad_(False)
        unet.add_adapter(LoraConfig(
            r=rank, lora_alpha=alpha, init_lora_weights="gaussian",
            target_modules=["to_k", "to_q", "to_v", "to_out.0"]))

    @property
    def num_train_timesteps(self):
        return self.noise_scheduler.config.num_train_timesteps

    def encode_images(self, pixels: torch.Tensor) -> torch.Tensor:
        # pixels: (B, 3, H, W) in [-1, 1]
        pixels = pixels.to(self.device, dtype=self.pipeline.vae.dtype)
        latents = self.pipeline.vae.encode(pixels).latent_dist.sample()
        return latents * LATENT_SCALE

    def encode_prompts(self, prompts) -> torch.Tensor:
        tokens = self.pipeline.tokenizer(
            list(prompts), padding="max_length", truncation=True,
            max_length=self.pipeline.tokenizer.model_max_length,
            return_tensors="pt").input_ids.to(self.device)
        return self.pipeline.text_encoder(tokens)[0]

    def add_noise(self, latents, noise, timesteps):
        return self.noise_scheduler.add_noise(latents, noise, timesteps)

    def predict_noise(self, noisy_latents, timesteps, prompt_embeddings):
        return self.pipeline.unet(noisy_latents, timesteps,
                                  encoder_hidden_states=prompt_embeddings).sample

    def trainable_parameters(self):
        return [p for p in self.pipeline.unet.parameters() if p.requires_grad]

    def save_adapter(self, path):
        self.pipeline.unet.save_lora_adapter(str(path))

    def load_adapter(self, path):
        self.pipeline.unet.load_lora_adapter(str(path))

    def generate(self, prompt, steps, guidance_scale, seed,
                 negative_prompt=None, size=512) -> np.ndarray:
        generator = torch.Generator(device=self.device).manual_seed(int(seed))
        image = self.pipeline(
            prompt, negative_prompt=negative_prompt,
            num_inference_steps=steps, guidance_scale=guidance_scale,
            height=size, width=size, generator=generator).images[0]
        return np.asarray(image.convert("RGB"), dtype=np.uint8)


class TinyLatentBackend:
    """Miniature backend with the same surface, for smoke runs and tests.

    Latents are a strided downsample, "text encoding" hashes the prompt
    into a fixed embedding, and the noise predictor is a small trainable
    conv stack. Generation is a seeded procedural lesion-like image, so
    seeded runs are bit-reproducible.
    """

    def __init__(self, latent_channels=4, embed_dim=8, seed=0):
        torch.manual_seed(seed)
        self.num_train_timesteps = 1000
        self.embed_dim = embed_dim
        self._predictor = torch.nn.Sequential(
            torch.nn.Conv2d(latent_channels + embed_dim, 16, 3, padding=1),
            torch.nn.ReLU(),
            torch.nn.Conv2d(16, latent_channels, 3, padding=1),
        )
        self.latent_channels = latent_channels

    def encode_images(self, pixels):
        b, _, h, w = pixels.shape
        down = pixels[:, :, ::8, ::8]
        reps = -(-self.latent_channels // down.shape[1])
        return down.repeat(1, reps, 1, 1)[:, :self.latent_channels] * LATENT_SCALE

    def encode_prompts(self, prompts):
        out = torch.zeros(len(prompts), self.embed_dim)
        for i, prompt in enumerate(prompts):
            g = torch.Generator().manual_seed(hash(prompt) % (2 ** 31))
            out[i] = torch.rand(self.embed_dim, generator=g)
        return out

    def add_noise(self, latents, noise, timesteps):
        t = (timesteps.float() / self.num_train_timesteps).view(-1, 1, 1, 1)
        return (1 - t).sqrt() * latents + t.sqrt() * noise

    def predict_noise(self, noisy_latents, timesteps, prompt_embeddings):
        b, _, h, w = noisy_latents.shape
        emb = prompt_embeddings.view(b, self.embed_dim, 1, 1).expand(
            b, self.embed_dim, h, w)
        return self._predictor(torch.cat([noisy_latents, emb], dim=1))

    def trainable_parameters(self):
        return list(self._predictor.parameters())

    def save_adapter(self, path):
        torch.save({"predictor": self._predictor.state_dict()}, str(path))

    def load_adapter(self, path):
        self._predictor.load_state_dict(torch.load(str(path))["predictor"])

    def generate(self, prompt, steps, guidance_scale, seed,
                 negative_prompt=None, size=128) -> np.ndarray:
        rng = np.random.default_rng(int(seed))
        tone = np.array([96, 64, 46]) + rng.integers(-12, 13, 3)
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = tone
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(0.35, 0.65, 2) * size
        ry, rx = rng.uniform(0.12, 0.3, 2) * size
        lesion = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[lesion] *= rng.uniform(0.35, 0.6)
        img += rng.normal(0, 5.0, img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_backend(name: str, **kwargs):
    if name == "diffusers":
        return DiffusersBackend(**kwargs)
    if name == "tiny":
        return TinyLatentBackend(**kwargs)
    raise ValueError(f"unknown backend {name!r}")
