"""Command-line entry point: one subcommand per pipeline stage.

Every stage reads/writes only manifests and the documented file formats,
echoes its effective configuration into output headers, and never
mutates its inputs. Exit codes: 0 success, 1 data error (with a JSON
error summary on stderr), 2 usage error.
"""

import csv
import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import dataset as ds
from . import graphcut, metrics, preprocess as pp, skintone, synthval, trainlog
from .errors import DermauditError, ManifestError
from .imgio import load_mask, load_rgb, save_mask, save_png

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# Path options may be overridden from DERMAUDIT_<COMMAND>_<OPTION> env vars;
# non-path options opt out below (allow_from_autoenv=False).
CONTEXT_SETTINGS = {"auto_envvar_prefix": "DERMAUDIT"}


def _value_option(*args, **kwargs):
    kwargs.setdefault("allow_from_autoenv", False)
    return click.option(*args, **kwargs)


def _fail(code: str, message: str, **detail):
    payload = {"error": code, "message": message}
    payload.update(detail)
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def _data_errors(fn):
    """Turn domain errors into exit-1 with a machine-readable summary."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ManifestError as exc:
            _fail("manifest", str(exc))
        except DermauditError as exc:
            _fail(type(exc).__name__.removesuffix("Error"), str(exc))
        except FileNotFoundError as exc:
            _fail("missing-file", str(exc))
    return wrapper


def _list_images(directory: Path) -> list:
    return sorted(p for p in Path(directory).iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS)


@click.group(context_settings=CONTEXT_SETTINGS)
def main():
    """Dermoscopic dataset auditing, validation and evaluation toolkit."""


@main.command()
@click.option("--metadata", required=True, type=click.Path(exists=True),
              help="ISIC-style metadata CSV.")
@click.option("--image-root", required=True, type=click.Path(),
              help="Directory holding the image files.")
@click.option("--out", required=True, type=click.Path(),
              help="Output manifest CSV.")
@_value_option("--extension", default=".jpg", show_default=True,
              help="Image filename extension appended to each id.")
@_value_option("--json-twin/--no-json-twin", default=False, show_default=True)
@_data_errors
def ingest(metadata, image_root, out, extension, json_twin):
    """Build a manifest from ISIC metadata, grouping diagnoses into superclasses."""
    manifest, report = ds.ingest_isic(metadata, image_root, extension)
    manifest.write_csv(out, header_note=f"ingest: metadata={metadata}; "
                                        f"extension={extension}")
    if json_twin:
        manifest.write_json(Path(out).with_suffix(".json"))
    by_superclass = {}
    for rec in manifest:
        by_superclass[rec.superclass] = by_superclass.get(rec.superclass, 0) + 1
    click.echo(json.dumps({
        "records": len(manifest),
        "by_superclass": by_superclass,
        "unknown_diagnosis": len(report.unknown_diagnosis),
        "missing_files": len(report.missing_files),
    }))


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@_value_option("--format", "fmt", type=click.Choice(["csv", "json", "both"]),
              default="both", show_default=True)
@_value_option("--threads", type=int, default=None,
              help="Worker threads (default: available parallelism).")
@_data_errors
def audit(manifest_path, out_dir, fmt, threads):
    """Skin-tone distribution audit: ITA + Fitzpatrick cross-tabulation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ds.Manifest.read_csv(manifest_path)
    result = skintone.audit_dataset(manifest, workers=threads)

    skintone.write_per_image_csv(result, out_dir / "ita_per_image.csv")
    if fmt in ("csv", "both"):
        skintone.write_audit_csv(result, out_dir / "tone_audit.csv")
    if fmt in ("json", "both"):
        skintone.write_audit_json(result, out_dir / "tone_audit.json")

    tones = {row["image_id"]: row for row in result.per_image}
    audited = []
    for rec in manifest:
        row = tones[rec.image_id]
        ita = float(row["ita_degrees"]) if row["ita_degrees"] else None
        audited.append(ds.replace(rec, ita_degrees=ita,
                                  fitzpatrick=row["fitzpatrick"]))
    ds.Manifest(audited).write_csv(out_dir / "manifest_audited.csv")

    click.echo(json.dumps({
        "records": result.total,
        "dark_share_v_vi": round(result.dark_share, 6),
        "unreadable": result.row_total(skintone.UNREADABLE),
    }))


def _parse_config_file(path) -> dict:
    overrides = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DermauditError(f"bad config line (want key=value): {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        overrides[key] = value
    return overrides


def _preprocess_config(config_path) -> pp.PreprocessConfig:
    if not config_path:
        return pp.PreprocessConfig()
    overrides = _parse_config_file(config_path)
    kwargs = {}
    defaults = pp.PreprocessConfig()
    for key, value in overrides.items():
        if not hasattr(defaults, key):
            raise DermauditError(f"unknown preprocess config key: {key}")
        current = getattr(defaults, key)
        if isinstance(current, tuple):
            kwargs[key] = tuple(int(v) for v in value.split("x"))
        elif isinstance(current, bool):
            kwargs[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            kwargs[key] = int(value)
        elif isinstance(current, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return pp.PreprocessConfig(**kwargs)


@main.command(name="preprocess")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="key=value overrides, one per line.")
@_value_option("--threads", type=int, default=None,
               help="Worker threads (default: available parallelism).")
@_data_errors
def preprocess_cmd(manifest_path, out_dir, config_path, threads):
    """Run the preprocessing chain; write PNGs plus an exclusion log."""
    cfg = _preprocess_config(config_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ds.Manifest.read_csv(manifest_path)

    def one(rec):
        try:
            return rec.image_id, pp.preprocess_to_uint8(load_rgb(rec.path), cfg)
        except DermauditError as exc:
            return rec.image_id, str(exc)
        except OSError as exc:
            return rec.image_id, f"io: {exc}"

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(one, manifest.records))

    exclusions = []
    processed = 0
    for image_id, result in outcomes:
        if isinstance(result, str):
            exclusions.append((image_id, result))
            continue
        save_png(out_dir / f"{image_id}.png", result)
        processed += 1

    with open(out_dir / "exclusions.csv", "w", newline="") as fh:
        fh.write(f"# dermaudit-preprocess-exclusions v1; {cfg.header()}\n")
        writer = csv.writer(fh)
        writer.writerow(["image_id", "reason"])
        writer.writerows(exclusions)
    click.echo(json.dumps({"processed": processed, "excluded": len(exclusions)}))


@main.command(name="validate-synth")
@click.option("--real-manifest", required=True, type=click.Path(exists=True))
@click.option("--synth-dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--thresholds", "thresholds_path", type=click.Path(exists=True),
              default=None, help="JSON file overriding validation thresholds.")
@_value_option("--seed", type=int, default=None,
              help="Overrides the thresholds-file seed.")
@_value_option("--fst-filter/--no-fst-filter", default=True, show_default=True,
              help="Restrict the reference to FST V/VI records when tone "
                   "columns are present.")
@_data_errors
def validate_synth(real_manifest, synth_dir, out, thresholds_path, seed,
                   fst_filter):
    """Validate synthetic images against the real dark-skin reference."""
    kwargs = {}
    if thresholds_path:
        kwargs = json.loads(Path(thresholds_path).read_text())
    if seed is not None:
        kwargs["seed"] = seed
    thresholds = synthval.SynthThresholds(**kwargs)

    manifest = ds.Manifest.read_csv(real_manifest)
    records = list(manifest)
    if fst_filter and any(r.fitzpatrick for r in records):
        dark = [r for r in records if r.fitzpatrick in ("V", "VI")]
        if dark:
            records = dark
    reference_images = (load_rgb(r.path) for r in records)
    stats = synthval.ReferenceStats(reference_images, thresholds)

    reports = []
    for path in _list_images(synth_dir):
        candidate = load_rgb(path)
        reports.append(synthval.validate_synthetic(
            candidate, stats, image_id=path.stem))
    synthval.write_validation_csv(reports, thresholds, out)
    accepted = sum(1 for r in reports if r.verdict == "accept")
    click.echo(json.dumps({"candidates": len(reports), "accepted": accepted,
                           "rejected": len(reports) - accepted,
                           "reference_size": len(records)}))


@main.command()
@click.option("--real-manifest", required=True, type=click.Path(exists=True))
@click.option("--synth-dir", required=True, type=click.Path(exists=True))
@click.option("--validation", "validation_path", required=True,
              type=click.Path(exists=True), help="validate-synth report CSV.")
@click.option("--synth-metadata", type=click.Path(exists=True), default=None,
              help="Sidecar CSV (image_id, lesion_superclass, ...); defaults "
                   "to metadata.csv inside --synth-dir when present.")
@_value_option("--superclass", "superclass_override", default=None,
              type=click.Choice([ds.MELANOCYTIC, ds.NON_MELANOCYTIC]),
              help="Superclass for all synthetic records when no metadata.")
@click.option("--out", required=True, type=click.Path())
@_value_option("--json-twin/--no-json-twin", "json_twin", default=False,
               show_default=True)
@_data_errors
def integrate(real_manifest, synth_dir, validation_path, synth_metadata,
              superclass_override, out, json_twin):
    """Merge accepted synthetic images into the real manifest."""
    real = ds.Manifest.read_csv(real_manifest)
    verdicts = synthval.read_validation_verdicts(validation_path)

    synth_dir = Path(synth_dir)
    meta_path = Path(synth_metadata) if synth_metadata else synth_dir / "metadata.csv"
    meta = {}
    if meta_path.exists():
        with open(meta_path, newline="") as fh:
            for row in csv.DictReader(line for line in fh
                                      if not line.startswith("#")):
                meta[row["image_id"]] = row

    candidates = []
    for path in _list_images(synth_dir):
        image_id = path.stem
        row = meta.get(image_id, {})
        superclass = row.get("lesion_superclass") or superclass_override
        if superclass not in (ds.MELANOCYTIC, ds.NON_MELANOCYTIC):
            _fail("missing-superclass",
                  f"no superclass for synthetic image {image_id!r}; provide "
                  "metadata.csv or --superclass")
        candidates.append(ds.ImageRecord(
            image_id=image_id,
            path=str(path),
            diagnosis=row.get("diagnosis", "synthetic"),
            superclass=superclass,
            patient_id=ds.SYNTH_PATIENT_PREFIX + image_id,
            source=ds.SOURCE_SYNTHETIC,
        ))

    merged, counts = ds.integrate_synthetic(real, candidates, verdicts)
    merged.write_csv(out, header_note=f"integrate: validation={validation_path}; "
                                      f"accepted={counts['synthetic_accepted']}")
    if json_twin:
        merged.write_json(Path(out).with_suffix(".json"))
    click.echo(json.dumps(counts))


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_value_option("--seed", type=int, default=0, show_default=True)
@_value_option("--fractions", default="0.7,0.15,0.15", show_default=True)
@_value_option("--strat-keys", default="superclass,fitzpatrick_group",
              show_default=True)
@_value_option("--synthetic-train-only", is_flag=True, default=False,
              help="Force all synthetic records into the training split.")
@_value_option("--json-twin/--no-json-twin", "json_twin", default=False,
               show_default=True)
@_data_errors
def split(manifest_path, out, seed, fractions, strat_keys, synthetic_train_only,
          json_twin):
    """Patient-level stratified train/val/test split."""
    try:
        fracs = tuple(float(f) for f in fractions.split(","))
        spec = ds.SplitSpec(fractions=fracs,
                            strat_keys=tuple(strat_keys.split(",")),
                            seed=seed,
                            synthetic_train_only=synthetic_train_only)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    manifest = ds.Manifest.read_csv(manifest_path)
    assigned = ds.split(manifest, spec)
    assigned.write_csv(out, header_note=f"split: seed={seed}; "
                                        f"fractions={fractions}; "
                                        f"strat_keys={strat_keys}; "
                                        f"synthetic_train_only="
                                        f"{synthetic_train_only}")
    if json_twin:
        assigned.write_json(Path(out).with_suffix(".json"))
    counts = {s: 0 for s in ds.SPLITS}
    for rec in assigned:
        counts[rec.split] += 1
    click.echo(json.dumps(counts))


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_value_option("--lambda", "lambda_", type=float, default=50.0, show_default=True,
              help="Neighbour-link strength.")
@_value_option("--sigma", type=float, default=10.0, show_default=True,
              help="Intensity-difference decay (8-bit units).")
@_value_option("--invert", is_flag=True, default=False,
              help="Segment hypopigmented (brighter-than-skin) lesions.")
@_value_option("--threads", type=int, default=None,
               help="Worker threads; solver instances are independent.")
@_data_errors
def segment(manifest_path, out_dir, lambda_, sigma, invert, threads):
    """Max-flow graph-cut lesion masks for every manifest image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ds.Manifest.read_csv(manifest_path)
    params = graphcut.GraphCutParams(lambda_=lambda_, sigma=sigma, invert=invert)

    def one(rec):
        try:
            return rec.image_id, graphcut.segment_maxflow(load_rgb(rec.path),
                                                          params)
        except DermauditError as exc:
            return rec.image_id, str(exc)
        except OSError as exc:
            return rec.image_id, f"io: {exc}"

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(one, manifest.records))

    failures = []
    done = 0
    for image_id, result in outcomes:
        if isinstance(result, str):
            failures.append((image_id, result))
            continue
        save_mask(out_dir / f"{image_id}.png", result)
        done += 1

    with open(out_dir / "segment_errors.csv", "w", newline="") as fh:
        fh.write(f"# dermaudit-segment-errors v1; lambda={lambda_}; "
                 f"sigma={sigma}; invert={invert}\n")
        writer = csv.writer(fh)
        writer.writerow(["image_id", "reason"])
        writer.writerows(failures)
    click.echo(json.dumps({"segmented": done, "failed": len(failures)}))


@main.command(name="eval-seg")
@click.option("--pred-dir", required=True, type=click.Path(exists=True))
@click.option("--truth-dir", required=True, type=click.Path(exists=True))
@click.option("--out-prefix", required=True, type=click.Path())
@_data_errors
def eval_seg(pred_dir, truth_dir, out_prefix):
    """Score predicted masks against ground truth; per-image CSV + summary."""
    truths = {p.stem: load_mask(p) for p in _list_images(Path(truth_dir))}
    if not truths:
        _fail("empty-truth", f"no mask PNGs found in {truth_dir}")
    pred_paths = {p.stem: p for p in _list_images(Path(pred_dir))}
    preds = {i: load_mask(pred_paths[i]) for i in truths if i in pred_paths}
    report = metrics.evaluate_segmentation(preds, truths)

    per_image_path = Path(f"{out_prefix}_per_image.csv")
    with open(per_image_path, "w", newline="") as fh:
        fh.write("# dermaudit-seg-eval v1\n")
        writer = csv.writer(fh)
        writer.writerow(["image_id"] + list(metrics.SegEvalReport.METRICS))
        for image_id, s in report.per_image.items():
            writer.writerow([image_id] + [_fmt(getattr(s, m))
                                          for m in metrics.SegEvalReport.METRICS])

    summary = {
        "schema": "dermaudit-seg-summary v1",
        "images": len(report.per_image),
        "means": {k: report.means[k] for k in metrics.SegEvalReport.METRICS},
        "excluded_from_mean": report.excluded,
    }
    with open(f"{out_prefix}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    with open(f"{out_prefix}_summary.csv", "w", newline="") as fh:
        fh.write("# dermaudit-seg-summary v1\n")
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "excluded_from_mean"])
        for k in metrics.SegEvalReport.METRICS:
            writer.writerow([k, _fmt(report.means[k]), report.excluded[k]])
    click.echo(json.dumps({"images": len(report.per_image),
                           "mean_iou": report.means["iou"]}))


def _fmt(value) -> str:
    if value is None:
        return "undefined"
    if value == float("inf"):
        return "inf"
    return f"{value:.6f}"


def read_predictions_csv(path) -> list:
    """(image_id, score, label) triples from a prediction CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = {"image_id", "score", "label"} - set(reader.fieldnames or ())
        if missing:
            raise DermauditError(
                f"prediction file missing columns: {sorted(missing)}")
        for row in reader:
            rows.append((row["image_id"], float(row["score"]),
                         int(row["label"])))
    if not rows:
        raise DermauditError("prediction file has no rows")
    return rows


@main.command(name="eval-cls")
@click.option("--predictions", required=True, type=click.Path(exists=True),
              help="CSV with image_id,score,label rows.")
@click.option("--out-prefix", required=True, type=click.Path())
@_data_errors
def eval_cls(predictions, out_prefix):
    """Classification metric suite over a prediction file."""
    rows = read_predictions_csv(predictions)
    scores = metrics.cls_scores([(s, y) for _, s, y in rows])

    table = [
        ("accuracy", scores.accuracy),
        ("auc", scores.auc),
        ("precision", scores.precision),
        ("recall", scores.recall),
        ("f1", scores.f1),
        ("loss", scores.loss),
    ]
    with open(f"{out_prefix}_summary.csv", "w", newline="") as fh:
        fh.write("# dermaudit-cls-summary v1; threshold=0.5\n")
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in table:
            writer.writerow([name, _fmt(value)])
        (tn, fp), (fn, tp) = scores.confusion
        writer.writerow(["confusion_tn_fp_fn_tp", f"{tn}|{fp}|{fn}|{tp}"])
    with open(f"{out_prefix}_summary.json", "w") as fh:
        json.dump({
            "schema": "dermaudit-cls-summary v1",
            "samples": len(rows),
            "metrics": {name: value for name, value in table},
            "confusion": {"tn": scores.confusion[0][0],
                          "fp": scores.confusion[0][1],
                          "fn": scores.confusion[1][0],
                          "tp": scores.confusion[1][1]},
            "auc_error": scores.auc_error,
        }, fh, indent=2)
        fh.write("\n")
    click.echo(json.dumps({"samples": len(rows), "accuracy": scores.accuracy,
                           "auc": scores.auc}))


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True),
              help="Epoch log CSV (epoch,loss_train,loss_val,acc_train,"
                   "acc_val,auc_val).")
@click.option("--out-dir", required=True, type=click.Path())
@_data_errors
def report(log_path, out_dir):
    """Training-curve report: tidy series CSV, SVG panels, best-AUC epoch."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = trainlog.parse_training_log(log_path)
    trainlog.write_tidy_series(log, out_dir / "series.csv")
    trainlog.write_summary_json(log, out_dir / "summary.json")
    trainlog.write_panel_svgs(log, out_dir)
    click.echo(json.dumps({"epochs": len(log.epochs),
                           "best_auc_epoch": log.best_auc_epoch}))


if __name__ == "__main__":
    main()
