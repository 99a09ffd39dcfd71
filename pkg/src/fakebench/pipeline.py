"""End-to-end glue: corpus frames -> region crops -> training sets -> scores.

Used by both the CLI and the acceptance suite, so desk-scale experiments can
run fully in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import detectors, metrics
from .datasets import SplitPlan, VideoRecord, sample_frames
from .errors import MissingPrerequisite
from .landmarks import LandmarkSet, load_landmarks
from .regions import (
    FaceCrop,
    RegionKind,
    RegionMask,
    apply_mask,
    build_all_masks,
)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one train/eval run."""

    database: str
    manifest: str
    regions: list
    architecture: str
    stage1_epochs: int
    stage2_epochs: int
    seed: int
    output_dir: str
    metric_level: str = "frame"
    input_size: tuple = (64, 64)
    frame_limit: int = 100

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / "run_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = asdict(self)
        payload["regions"] = [RegionKind(r).value for r in self.regions]
        payload["input_size"] = list(self.input_size)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def video_landmarks(corpus_dir: str | Path, record: VideoRecord,
                    canvas: tuple[int, int]) -> list[LandmarkSet]:
    path = Path(corpus_dir) / "landmarks" / f"{record.video_id}.csv"
    if not path.exists():
        raise MissingPrerequisite(f"no landmark file for video {record.video_id!r}: {path}")
    return load_landmarks(path, canvas)


def region_crop(frame: np.ndarray, mask: RegionMask | None, region: RegionKind,
                source_ref: str) -> FaceCrop:
    crop = FaceCrop(frame, RegionKind.FACE, source_ref)
    if region == RegionKind.FACE:
        return crop
    assert mask is not None
    return apply_mask(crop, mask)


def iter_region_crops(corpus_dir: str | Path, record: VideoRecord,
                      region: RegionKind, frame_limit: int = 100):
    """Yield (frame_ref, FaceCrop) for one video, masked to ``region``.

    Masks are built once per video from its first landmark record (the
    corpus stores per-frame rows with identical per-video coordinates).
    """
    samples = sample_frames(record, rate=1.0, limit=frame_limit)
    canvas = samples[0].image.shape[:2]
    mask = None
    if region != RegionKind.FACE:
        lm = video_landmarks(corpus_dir, record, canvas)[0]
        mask = build_all_masks(lm)[region]
    for i, sample in enumerate(samples):
        ref = f"{record.video_id}#f{i:03d}"
        yield ref, region_crop(sample.image, mask, region, ref)


def build_training_set(corpus_dir: str | Path, records, plan: SplitPlan,
                       side: str, region: RegionKind,
                       input_size: tuple[int, int] = (64, 64),
                       frame_limit: int = 100) -> detectors.TrainingSet:
    """Collect preprocessed tensors for one split side and region."""
    inputs, labels, identities, video_ids = [], [], [], []
    for record in sorted(records, key=lambda r: r.video_id):
        if plan.assignment.get(record.video_id) != side:
            continue
        for _, crop in iter_region_crops(corpus_dir, record, region, frame_limit):
            inputs.append(detectors.preprocess_crop(crop, input_size))
            labels.append(1 if record.label == "fake" else 0)
            identities.append(record.identity_id)
            video_ids.append(record.video_id)
    if not inputs:
        return detectors.TrainingSet(torch.zeros(0, 3, *input_size),
                                     torch.zeros(0, dtype=torch.long), [], [])
    return detectors.TrainingSet(torch.cat(inputs),
                                 torch.tensor(labels, dtype=torch.long),
                                 identities, video_ids)


def class_weights_from_records(records, plan: SplitPlan, side: str
                               ) -> tuple[float, float]:
    """Inverse-frequency weights; imbalance is handled here, never by
    resampling the manifest."""
    n_real = sum(1 for r in records
                 if plan.assignment.get(r.video_id) == side and r.label == "real")
    n_fake = sum(1 for r in records
                 if plan.assignment.get(r.video_id) == side and r.label == "fake")
    total = n_real + n_fake
    if n_real == 0 or n_fake == 0:
        return (1.0, 1.0)
    return (total / (2.0 * n_real), total / (2.0 * n_fake))


def train_region_detector(corpus_dir: str | Path, records, plan: SplitPlan,
                          database: str, region: RegionKind, architecture: str,
                          schedule: detectors.TrainSchedule, seed: int = 0,
                          input_size: tuple[int, int] = (64, 64),
                          frame_limit: int = 100,
                          weight_source="random-init"
                          ) -> tuple[detectors.DetectorModel, detectors.Checkpoint]:
    config = detectors.DetectorConfig(
        architecture=architecture,
        database=database,
        region=region,
        input_size=input_size,
        seed=seed,
        class_weights=class_weights_from_records(records, plan, "dev"),
    )
    model = detectors.build_detector(config, weight_source)
    dev_data = build_training_set(corpus_dir, records, plan, "dev", region,
                                  input_size, frame_limit)
    checkpoint = detectors.train_detector(model, dev_data, schedule)
    return model.eval_mode(), checkpoint


def evaluate_model(model: detectors.DetectorModel, corpus_dir: str | Path,
                   records, plan: SplitPlan, side: str = "eval",
                   frame_limit: int = 100) -> metrics.ScoreSet:
    """Frame-level fake scores over one split side."""
    entries = []
    model.eval_mode()
    for record in sorted(records, key=lambda r: r.video_id):
        if plan.assignment.get(record.video_id) != side:
            continue
        refs, crops = [], []
        for ref, crop in iter_region_crops(corpus_dir, record,
                                           model.config.region, frame_limit):
            refs.append(ref)
            crops.append(crop)
        for ref, score in zip(refs, detectors.predict_batch(model, crops)):
            entries.append(metrics.ScoreEntry(ref, score, record.label))
    return metrics.ScoreSet(tuple(entries), level="frame")
