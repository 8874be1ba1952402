"""genlab command line: reference generation and training runs."""

import json

import click

from . import backends, generate as gen, lora, manifests, segtrain, clstrain


@click.group()
def main():
    """Reference generation/training recipes feeding the dermaudit toolkit."""


@main.command(name="finetune-lora")
@click.option("--manifest", required=True, type=click.Path(exists=True),
              help="Manifest whose FST V/VI records form the training set.")
@click.option("--out", required=True, type=click.Path(),
              help="Adapter checkpoint path.")
@click.option("--backend", "backend_name", default="diffusers",
              type=click.Choice(["diffusers", "tiny"]), show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--resolution", type=int, default=512, show_default=True)
@click.option("--max-steps", type=int, default=None,
              help="Step cap for smoke runs.")
@click.option("--seed", type=int, default=42, show_default=True)
def finetune_lora_cmd(manifest, out, backend_name, epochs, batch_size,
                      resolution, max_steps, seed):
    """Fine-tune LoRA adapters on the dark-skin manifest subset."""
    backend = backends.make_backend(backend_name)
    config = lora.LoraTrainConfig(resolution=resolution, batch_size=batch_size,
                                  epochs=epochs, seed=seed,
                                  max_steps=max_steps)
    summary = lora.finetune_lora(manifest, out, backend, config)
    click.echo(json.dumps(summary))


@main.command()
@click.option("--superclass", required=True,
              type=click.Choice(["melanocytic", "non-melanocytic"]))
@click.option("--count", required=True, type=int,
              help="144 melanocytic / 664 non-melanocytic in the reference run.")
@click.option("--out", required=True, type=click.Path())
@click.option("--backend", "backend_name", default="diffusers",
              type=click.Choice(["diffusers", "tiny"]), show_default=True)
@click.option("--adapter", type=click.Path(exists=True), default=None,
              help="LoRA adapter checkpoint to load before sampling.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--prefix", default="GEN", show_default=True)
def generate(superclass, count, out, backend_name, adapter, seed, prefix):
    """Generate synthetic lesion images plus sidecar metadata."""
    backend = backends.make_backend(backend_name)
    if adapter:
        backend.load_adapter(adapter)
    job = gen.GenerationJob(superclass=superclass, count=count, seed=seed,
                            prefix=prefix)
    rows = gen.run_generation(job, backend, out)
    click.echo(json.dumps({"generated": len(rows), "out": str(out)}))


@main.command(name="train-seg")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--masks", required=True, type=click.Path(exists=True),
              help="Directory of {0,255} ground-truth mask PNGs.")
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--resolution", type=int, default=224, show_default=True)
@click.option("--device", default=None)
@click.option("--seed", type=int, default=42, show_default=True)
def train_seg(manifest, masks, out, epochs, batch_size, resolution, device,
              seed):
    """Train the segmentation CNN; predict masks for real test images."""
    config = segtrain.SegTrainConfig(resolution=resolution, epochs=epochs,
                                     batch_size=batch_size, device=device,
                                     seed=seed)
    summary = segtrain.train_segmentation(manifest, masks, out, config)
    click.echo(json.dumps(summary))


@main.command(name="train-cls")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--max-epochs", type=int, default=25, show_default=True)
@click.option("--head-epochs", type=int, default=3, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--resolution", type=int, default=224, show_default=True)
@click.option("--pretrained/--no-pretrained", default=True, show_default=True,
              help="ImageNet initialisation (needs weight download).")
@click.option("--eval-split", default="val", show_default=True,
              type=click.Choice(["val", "test"]))
@click.option("--device", default=None)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
def train_cls(manifest, out, max_epochs, head_epochs, batch_size, resolution,
              pretrained, eval_split, device, workers, seed):
    """Fine-tune EfficientNet-B0; emit predictions.csv and epoch_log.csv."""
    config = clstrain.ClsTrainConfig(
        resolution=resolution, max_epochs=max_epochs,
        head_only_epochs=head_epochs, batch_size=batch_size,
        pretrained=pretrained, eval_split=eval_split, device=device,
        workers=workers, seed=seed)
    summary = clstrain.train_classifier(manifest, out, config)
    click.echo(json.dumps(summary))


@main.command(name="inspect-manifest")
@click.option("--manifest", required=True, type=click.Path(exists=True))
def inspect_manifest(manifest):
    """Quick counts of a manifest by split/source/tone."""
    rows = manifests.read_manifest(manifest)
    dark = manifests.dark_subset(rows)
    by_split = {}
    for row in rows:
        by_split[row.split or "unassigned"] = by_split.get(
            row.split or "unassigned", 0) + 1
    click.echo(json.dumps({"records": len(rows), "dark_fst_v_vi": len(dark),
                           "by_split": by_split}))


if __name__ == "__main__":
    main()
