"""Database metadata, manifest ingestion, frame sampling, and identity splits.

Manifests are JSONL: one object per line with fields video_id, identity_id,
label, database, path, generation. Splits partition *identities* so that all
of an identity's videos (real and fake) land on one side; the same-identity
split exists only to demonstrate how identity leakage inflates results and is
always flagged.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    DuplicateVideoId,
    EmptyManifest,
    MissingField,
    OverlappingLists,
    TooFewIdentities,
    UnassignedVideo,
    UndecodableSource,
)

MANIFEST_FIELDS = ("video_id", "identity_id", "label", "database", "path", "generation")

IMAGE_EXTENSIONS = (".png", ".bmp", ".ppm")


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    identity_id: str
    label: str  # "real" | "fake"
    database: str
    path: str
    generation: str  # "first" | "second"

    def __post_init__(self):
        if not self.video_id or not self.identity_id or not self.label:
            raise MissingField("video_id, identity_id and label must be nonempty")
        if self.label not in ("real", "fake"):
            raise MissingField(f"label must be real|fake, got {self.label!r}")


@dataclass(frozen=True)
class DatabaseProfile:
    name: str
    real_count: int
    fake_count: int
    generation: str
    source_notes: str = ""


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of every video to dev or eval, with the identity sets.

    dev_identities and eval_identities are disjoint for identity-disjoint
    plans; validate_split reports any overlap (the same-identity plan has one
    by design).
    """

    assignment: dict  # video_id -> "dev" | "eval"
    dev_identities: tuple[str, ...]
    eval_identities: tuple[str, ...]
    seed: int

    def side(self, video_id: str) -> str:
        return self.assignment[video_id]

    def videos(self, side: str) -> list[str]:
        return sorted(v for v, s in self.assignment.items() if s == side)


@dataclass(frozen=True)
class LeakageReport:
    leaked_identities: tuple[str, ...]
    dev_counts: dict  # {"real": n, "fake": n}
    eval_counts: dict

    @property
    def clean(self) -> bool:
        return not self.leaked_identities


def ingest_manifest(path: str | Path) -> tuple[list[VideoRecord], dict[str, DatabaseProfile]]:
    """Parse and validate a JSONL manifest.

    Returns the records plus one DatabaseProfile per database name, with
    counts computed from the records themselves. Relative ``path`` fields are
    resolved against the manifest's directory, so corpora are relocatable.
    """
    path = Path(path)
    records: list[VideoRecord] = []
    seen: set[str] = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            missing = [f for f in MANIFEST_FIELDS if f not in obj]
            if missing:
                raise MissingField(f"line {line_no}: missing fields {missing}")
            fields = {f: str(obj[f]) for f in MANIFEST_FIELDS}
            if not Path(fields["path"]).is_absolute():
                fields["path"] = str(path.parent / fields["path"])
            rec = VideoRecord(**fields)
            if rec.video_id in seen:
                raise DuplicateVideoId(f"line {line_no}: duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            records.append(rec)
    if not records:
        raise EmptyManifest(f"no records in {path}")
    profiles = {}
    for name in sorted({r.database for r in records}):
        db_recs = [r for r in records if r.database == name]
        profiles[name] = DatabaseProfile(
            name=name,
            real_count=sum(1 for r in db_recs if r.label == "real"),
            fake_count=sum(1 for r in db_recs if r.label == "fake"),
            generation=db_recs[0].generation,
        )
    return records, profiles


def _identities(records) -> list[str]:
    return sorted({r.identity_id for r in records})


def make_identity_disjoint_split(records, dev_fraction: float = 0.8,
                                 seed: int = 0) -> SplitPlan:
    """Partition identities (shuffled by seed) into dev/eval sides.

    The dev identity count is round(n * dev_fraction), clamped so both sides
    are nonempty; all videos of an identity land on its side. Deterministic
    for equal (records, dev_fraction, seed) across platforms.
    """
    ids = _identities(records)
    if len(ids) < 2:
        raise TooFewIdentities(f"need >= 2 identities, got {len(ids)}")
    rng = random.Random(seed)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    n_dev = round(len(ids) * dev_fraction)
    n_dev = min(max(n_dev, 1), len(ids) - 1)
    dev_ids = set(shuffled[:n_dev])
    assignment = {r.video_id: ("dev" if r.identity_id in dev_ids else "eval")
                  for r in records}
    return SplitPlan(
        assignment=assignment,
        dev_identities=tuple(sorted(dev_ids)),
        eval_identities=tuple(sorted(set(ids) - dev_ids)),
        seed=seed,
    )


def make_fixed_split(records, dev_ids, eval_ids) -> SplitPlan:
    """Build a plan from explicit identity lists (fixed published protocols)."""
    dev_set, eval_set = set(dev_ids), set(eval_ids)
    overlap = dev_set & eval_set
    if overlap:
        raise OverlappingLists(f"identities on both lists: {sorted(overlap)}")
    assignment = {}
    for r in records:
        if r.identity_id in dev_set:
            assignment[r.video_id] = "dev"
        elif r.identity_id in eval_set:
            assignment[r.video_id] = "eval"
        else:
            raise UnassignedVideo(
                f"video {r.video_id!r} (identity {r.identity_id!r}) on neither list"
            )
    return SplitPlan(assignment, tuple(sorted(dev_set)), tuple(sorted(eval_set)), seed=-1)


def make_same_identity_split(records, dev_fraction: float = 0.8,
                             seed: int = 0) -> SplitPlan:
    """Split *videos within each identity* across dev/eval.

    This deliberately puts the same identities on both sides (different
    videos). It reproduces the leaky protocol some studies use and exists so
    its inflated results can be demonstrated; downstream reports are flagged.
    """
    ids = _identities(records)
    if len(ids) < 2:
        raise TooFewIdentities(f"need >= 2 identities, got {len(ids)}")
    rng = random.Random(seed)
    assignment: dict[str, str] = {}
    for ident in ids:
        vids = sorted(r.video_id for r in records if r.identity_id == ident)
        rng.shuffle(vids)
        if len(vids) == 1:
            assignment[vids[0]] = "dev"
            continue
        n_dev = min(max(round(len(vids) * dev_fraction), 1), len(vids) - 1)
        for v in vids[:n_dev]:
            assignment[v] = "dev"
        for v in vids[n_dev:]:
            assignment[v] = "eval"
    by_id = {r.video_id: r.identity_id for r in records}
    dev_ids = sorted({by_id[v] for v, s in assignment.items() if s == "dev"})
    eval_ids = sorted({by_id[v] for v, s in assignment.items() if s == "eval"})
    return SplitPlan(assignment, tuple(dev_ids), tuple(eval_ids), seed=seed)


def validate_split(plan: SplitPlan, records) -> LeakageReport:
    """Report identities present on both sides plus per-side label counts."""
    by_side: dict[str, dict[str, set]] = {"dev": {}, "eval": {}}
    counts = {"dev": {"real": 0, "fake": 0}, "eval": {"real": 0, "fake": 0}}
    side_identities: dict[str, set] = {"dev": set(), "eval": set()}
    for r in records:
        side = plan.assignment[r.video_id]
        counts[side][r.label] += 1
        side_identities[side].add(r.identity_id)
    leaked = sorted(side_identities["dev"] & side_identities["eval"])
    return LeakageReport(tuple(leaked), counts["dev"], counts["eval"])


def save_split(plan: SplitPlan, path: str | Path) -> None:
    payload = {
        "seed": plan.seed,
        "dev_identities": list(plan.dev_identities),
        "eval_identities": list(plan.eval_identities),
        "assignment": dict(sorted(plan.assignment.items())),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_split(path: str | Path) -> SplitPlan:
    with open(path) as fh:
        payload = json.load(fh)
    return SplitPlan(
        assignment=payload["assignment"],
        dev_identities=tuple(payload["dev_identities"]),
        eval_identities=tuple(payload["eval_identities"]),
        seed=int(payload["seed"]),
    )


# --- frame sampling ----------------------------------------------------------


@dataclass(frozen=True)
class FrameSample:
    image: np.ndarray  # (H, W, 3) uint8, RGB
    video_id: str
    timestamp: float  # seconds


def sample_frames(record: VideoRecord, rate: float = 1.0,
                  limit: int = 100) -> list[FrameSample]:
    """Sample frames from a video file or a frame directory.

    Video files are decoded with OpenCV and sampled uniformly at ``rate``
    frames per second, truncated to ``limit``. Frame directories (image files
    in sorted order) are treated as already sampled at ``rate``, so all frames
    are taken in order up to ``limit``.
    """
    src = Path(record.path)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise UndecodableSource(f"no frame images in {src}")
        samples = []
        for i, p in enumerate(files[:limit]):
            img = cv2.imread(str(p), cv2.IMREAD_COLOR)
            if img is None:
                raise UndecodableSource(f"unreadable frame {p}")
            samples.append(FrameSample(
                cv2.cvtColor(img, cv2.COLOR_BGR2RGB), record.video_id, i / rate))
        return samples

    cap = cv2.VideoCapture(str(src))
    if not cap.isOpened():
        raise UndecodableSource(f"cannot open {src}")
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        if fps <= 0:
            raise UndecodableSource(f"no frame rate metadata in {src}")
        step = max(1, round(fps / rate))
        samples = []
        index = 0
        while len(samples) < limit:
            ok, frame = cap.read()
            if not ok:
                break
            if index % step == 0:
                samples.append(FrameSample(
                    cv2.cvtColor(frame, cv2.COLOR_BGR2RGB),
                    record.video_id, index / fps))
            index += 1
        if not samples:
            raise UndecodableSource(f"no decodable frames in {src}")
        return samples
    finally:
        cap.release()
