"""Command-line pipeline: synth -> ingest -> split -> segment -> train ->
eval -> heatmap/report.

Each subcommand writes its stage outputs plus a machine-readable summary into
its output directory and exits 0 on success. Failures are categorized by
exception class and exit nonzero. A YAML config file can preseed any option;
explicit flags win.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import cv2
import yaml

from . import datasets, detectors, figures, metrics, pipeline, synth
from .errors import FakebenchError, ConfigError, MissingPrerequisite
from .explain import grad_cam, overlay, save_heatmap
from .regions import ALL_REGIONS, RegionKind

REGISTRY_ENV = "FAKEBENCH_REGISTRY"


def _fail(exc: FakebenchError) -> None:
    click.echo(f"error [{type(exc).__name__}]: {exc}", err=True)
    sys.exit(1)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FakebenchError as exc:
            _fail(exc)

    return wrapper


def apply_config(ctx, param, value):
    """--config callback: YAML values become option defaults; flags win."""
    if value is None:
        return None
    try:
        with open(value) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise click.BadParameter(str(exc))
    if not isinstance(data, dict):
        raise click.BadParameter("config file must be a mapping")
    ctx.default_map = {**(ctx.default_map or {}),
                       **{k.replace("-", "_"): v for k, v in data.items()}}
    return value


def config_option(fn):
    return click.option("--config", type=click.Path(exists=True), callback=apply_config,
                        expose_value=False, is_eager=True,
                        help="YAML file preseeding options; flags win.")(fn)


def _parse_region(name: str) -> RegionKind:
    try:
        return RegionKind(name.capitalize())
    except ValueError:
        raise ConfigError(f"unknown region {name!r}; choose from "
                          f"{[r.value for r in ALL_REGIONS]}")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@click.group()
def main():
    """Facial-region fake detection benchmark toolkit."""


@main.command("synth")
@config_option
@click.option("--out", required=True, type=click.Path())
@click.option("--identities", default=10, show_default=True)
@click.option("--videos-per-identity", default=2, show_default=True)
@click.option("--frames", default=5, show_default=True)
@click.option("--fake-fraction", default=0.5, show_default=True)
@click.option("--artifact-region", default="Mouth", show_default=True)
@click.option("--artifact-strength", default=0.8, show_default=True)
@click.option("--noise-level", default=0.2, show_default=True)
@click.option("--canvas", default=96, show_default=True, help="Square canvas side (px).")
@click.option("--seed", default=0, show_default=True)
@click.option("--assignment", type=click.Choice(["video", "identity"]),
              default="video", show_default=True,
              help="Whether fakes are assigned per video or per identity.")
@handle_errors
def cmd_synth(out, identities, videos_per_identity, frames, fake_fraction,
              artifact_region, artifact_strength, noise_level, canvas, seed,
              assignment):
    """Generate a deterministic synthetic corpus with known landmarks."""
    region = None if artifact_region.lower() == "none" else _parse_region(artifact_region)
    manifest = synth.generate_manifest(
        out, identities, videos_per_identity, frames, fake_fraction, region,
        seed, artifact_strength=artifact_strength, noise_level=noise_level,
        canvas=(canvas, canvas), fake_assignment=assignment)
    _write_json(Path(out) / "synth_summary.json", {
        "manifest": str(manifest),
        "identities": identities,
        "videos": identities * videos_per_identity,
        "frames_per_video": frames,
        "artifact_region": artifact_region,
        "seed": seed,
        "assignment": assignment,
    })
    click.echo(f"corpus written to {out}")


@main.command("ingest")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@handle_errors
def cmd_ingest(manifest, out):
    """Validate a manifest and report per-database profiles."""
    records, profiles = datasets.ingest_manifest(manifest)
    summary = {
        "records": len(records),
        "profiles": {name: asdict(p) for name, p in profiles.items()},
    }
    if out:
        _write_json(Path(out), summary)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command("split")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["identity-disjoint", "same-identity", "fixed"]),
              default="identity-disjoint", show_default=True)
@click.option("--dev-fraction", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--dev-ids", type=click.Path(exists=True), default=None,
              help="File with one dev identity per line (fixed mode).")
@click.option("--eval-ids", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_split(manifest, mode, dev_fraction, seed, dev_ids, eval_ids, out):
    """Assign videos to development/evaluation sides."""
    records, _ = datasets.ingest_manifest(manifest)
    if mode == "identity-disjoint":
        plan = datasets.make_identity_disjoint_split(records, dev_fraction, seed)
    elif mode == "same-identity":
        plan = datasets.make_same_identity_split(records, dev_fraction, seed)
    else:
        if not dev_ids or not eval_ids:
            raise ConfigError("fixed mode needs --dev-ids and --eval-ids")
        plan = datasets.make_fixed_split(
            records,
            Path(dev_ids).read_text().split(),
            Path(eval_ids).read_text().split())
    report = datasets.validate_split(plan, records)
    out = Path(out)
    datasets.save_split(plan, out)
    leakage_payload = {
        "mode": mode,
        "identity_leaked": not report.clean,
        "leaked_identities": list(report.leaked_identities),
        "dev_counts": report.dev_counts,
        "eval_counts": report.eval_counts,
    }
    _write_json(out.with_name(out.stem + "_leakage.json"), leakage_payload)
    if not report.clean:
        click.echo("WARNING: identity-leaked split; development and evaluation "
                   "share identities. Results will be misleadingly optimistic.",
                   err=True)
    click.echo(f"split written to {out} "
               f"({len(plan.dev_identities)} dev / {len(plan.eval_identities)} eval identities)")


@main.command("segment")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Corpus root containing frames/ and landmarks/.")
@click.option("--regions", default="Face,Eyes,Nose,Mouth,Rest", show_default=True)
@click.option("--frame-limit", default=100, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_segment(manifest, corpus, regions, frame_limit, out):
    """Write masked region crops for every video in the manifest."""
    records, _ = datasets.ingest_manifest(manifest)
    kinds = [_parse_region(r) for r in regions.split(",") if r]
    out = Path(out)
    count = 0
    for record in records:
        for kind in kinds:
            crop_dir = out / kind.value / record.video_id
            crop_dir.mkdir(parents=True, exist_ok=True)
            for ref, crop in pipeline.iter_region_crops(corpus, record, kind,
                                                        frame_limit):
                name = ref.split("#", 1)[1]
                cv2.imwrite(str(crop_dir / f"{name}.png"),
                            cv2.cvtColor(crop.pixels, cv2.COLOR_RGB2BGR))
                count += 1
    _write_json(out / "segment_summary.json",
                {"videos": len(records), "regions": [k.value for k in kinds],
                 "crops_written": count})
    click.echo(f"{count} crops written to {out}")


def _registry_root(registry) -> Path:
    import os

    root = registry or os.environ.get(REGISTRY_ENV)
    if not root:
        raise ConfigError(f"no registry: pass --registry or set {REGISTRY_ENV}")
    return Path(root)


@main.command("train")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", required=True, type=click.Path(exists=True))
@click.option("--database", required=True)
@click.option("--region", required=True)
@click.option("--arch", type=click.Choice(list(detectors.ARCHITECTURES)),
              default="tiny_cnn", show_default=True)
@click.option("--stage1", default=3, show_default=True, help="Head-only epochs.")
@click.option("--stage2", default=20, show_default=True, help="Full-network epochs.")
@click.option("--seed", default=0, show_default=True)
@click.option("--input-size", default=64, show_default=True)
@click.option("--frame-limit", default=100, show_default=True)
@click.option("--registry", type=click.Path(), default=None)
@click.option("--overwrite", is_flag=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_train(manifest, corpus, split_path, database, region, arch, stage1,
              stage2, seed, input_size, frame_limit, registry, overwrite, out):
    """Train one detector for a (database, region) pair on the dev side."""
    records, _ = datasets.ingest_manifest(manifest)
    plan = datasets.load_split(split_path)
    kind = _parse_region(region)
    schedule = detectors.TrainSchedule(stage1_epochs=stage1, stage2_epochs=stage2)
    run_config = pipeline.RunConfig(
        database=database, manifest=str(manifest), regions=[kind.value],
        architecture=arch, stage1_epochs=stage1, stage2_epochs=stage2,
        seed=seed, output_dir=str(out), input_size=(input_size, input_size),
        frame_limit=frame_limit)
    run_config.save(out)
    model, checkpoint = pipeline.train_region_detector(
        corpus, records, plan, database, kind, arch, schedule, seed=seed,
        input_size=(input_size, input_size), frame_limit=frame_limit)
    path = detectors.save_checkpoint(_registry_root(registry), checkpoint,
                                     overwrite=overwrite)
    _write_json(Path(out) / "train_summary.json", {
        "model_key": checkpoint.config.key(),
        "checkpoint": str(path),
        "best_epoch": checkpoint.epoch,
        "val_accuracy": checkpoint.val_accuracy,
        "trace": checkpoint.trace,
    })
    click.echo(f"trained {checkpoint.config.key()} "
               f"(best epoch {checkpoint.epoch}, val acc {checkpoint.val_accuracy:.3f})")


@main.command("eval")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--split", "split_path", required=True, type=click.Path(exists=True))
@click.option("--database", required=True)
@click.option("--region", required=True)
@click.option("--arch", type=click.Choice(list(detectors.ARCHITECTURES)),
              default="tiny_cnn", show_default=True)
@click.option("--registry", type=click.Path(), default=None)
@click.option("--metric-level", type=click.Choice(["frame", "video"]),
              default="frame", show_default=True)
@click.option("--aggregate", type=click.Choice(["mean", "median", "max"]),
              default="mean", show_default=True)
@click.option("--frame-limit", default=100, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_eval(manifest, corpus, split_path, database, region, arch, registry,
             metric_level, aggregate, frame_limit, out):
    """Score the evaluation side with a registered model and compute EER/AUC."""
    records, _ = datasets.ingest_manifest(manifest)
    plan = datasets.load_split(split_path)
    kind = _parse_region(region)
    key = f"{database}/{kind.value}/{arch}"
    try:
        model = detectors.load_registered_model(_registry_root(registry),
                                                database, kind, arch)
    except FileNotFoundError:
        raise MissingPrerequisite(f"no trained model registered under {key!r}; "
                                  "run `fakebench train` first")
    scores = pipeline.evaluate_model(model, corpus, records, plan,
                                     frame_limit=frame_limit)
    if metric_level == "video":
        scores = metrics.aggregate_to_video(scores, aggregate)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.save_scores(scores, out / "scores.csv")
    e, thr = metrics.eer(scores)
    a = metrics.auc(scores)
    leakage = datasets.validate_split(plan, records)
    _write_json(out / "metrics.json", {
        "database": database,
        "region": kind.value,
        "architecture": arch,
        "metric_level": metric_level,
        "eer": e,
        "eer_threshold": thr,
        "auc": a,
        "n_scores": len(scores.entries),
        "identity_leaked": not leakage.clean,
    })
    click.echo(f"{key}: EER {100 * e:.2f}% AUC {100 * a:.2f}%"
               + ("  [identity-leaked split]" if not leakage.clean else ""))


@main.command("heatmap")
@config_option
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--database", required=True)
@click.option("--region", required=True)
@click.option("--arch", type=click.Choice(list(detectors.ARCHITECTURES)),
              default="tiny_cnn", show_default=True)
@click.option("--registry", type=click.Path(), default=None)
@click.option("--video", "video_ids", multiple=True, required=True)
@click.option("--target", type=click.Choice(["real", "fake"]), default="fake",
              show_default=True)
@click.option("--alpha", default=0.5, show_default=True)
@click.option("--frame-limit", default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_heatmap(manifest, corpus, database, region, arch, registry, video_ids,
                target, alpha, frame_limit, out):
    """Render Grad-CAM heatmaps and overlays for selected videos."""
    records, _ = datasets.ingest_manifest(manifest)
    by_id = {r.video_id: r for r in records}
    kind = _parse_region(region)
    key = f"{database}/{kind.value}/{arch}"
    try:
        model = detectors.load_registered_model(_registry_root(registry),
                                                database, kind, arch)
    except FileNotFoundError:
        raise MissingPrerequisite(f"no trained model registered under {key!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for vid in video_ids:
        if vid not in by_id:
            raise MissingPrerequisite(f"video {vid!r} not in manifest")
        for ref, crop in pipeline.iter_region_crops(corpus, by_id[vid], kind,
                                                    frame_limit):
            hm = grad_cam(model, crop, target)
            stem = ref.replace("#", "_")
            save_heatmap(hm, out / f"{stem}_heatmap.png", model_key=key)
            blended = overlay(hm, crop, alpha=alpha)
            cv2.imwrite(str(out / f"{stem}_overlay.png"),
                        cv2.cvtColor(blended, cv2.COLOR_RGB2BGR))
            written += 1
    click.echo(f"{written} heatmaps written to {out}")


@main.command("report")
@config_option
@click.option("--eval-dir", "eval_dirs", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["markdown", "json"]),
              default="markdown", show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def cmd_report(eval_dirs, fmt, out):
    """Combine eval outputs into the per-region comparison table + figures."""
    rows: dict[tuple[str, str], dict] = {}
    notes: dict[tuple[str, str], dict] = {}
    scores_by_region: dict[str, metrics.ScoreSet] = {}
    for d in eval_dirs:
        payload = json.loads((Path(d) / "metrics.json").read_text())
        group = (payload["database"], payload["architecture"])
        rows.setdefault(group, {})[payload["region"]] = (payload["eer"], payload["auc"])
        if payload.get("identity_leaked"):
            notes.setdefault(group, {})["identity_leaked"] = True
        scores_path = Path(d) / "scores.csv"
        if scores_path.exists() and payload["region"] not in scores_by_region:
            scores_by_region[payload["region"]] = metrics.load_scores(scores_path)
    reports = [
        metrics.EvalReport(db, arch, region_metrics, notes.get((db, arch), {}))
        for (db, arch), region_metrics in sorted(rows.items())
    ]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    document = metrics.render_report(reports, format=fmt)
    suffix = "md" if fmt == "markdown" else "json"
    (out / f"report.{suffix}").write_text(document)
    figures.render_eer_bars(reports, out / "eer_by_region.png")
    if scores_by_region:
        figures.render_roc_curves(scores_by_region, out / "roc_curves.png")
    click.echo(document)


if __name__ == "__main__":
    main()
