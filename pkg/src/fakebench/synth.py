"""Deterministic synthetic face corpus with region-localized fake artifacts.

Faces are procedural: an elliptical head with geometric eyes, nose, and mouth
drawn to match the canonical 68-point template (perturbed per identity), on a
background tinted by the identity. The background tint deliberately gives
detectors an identity shortcut, which is what makes the identity-leakage
demonstration work. A "fake" frame carries a texture perturbation applied
strictly inside one region's mask, so the pixel diff against its clean twin
is an exact subset of that region.

Everything is seeded: equal (spec, frame_seed) produce bit-identical frames,
and generate_manifest reruns are byte-identical on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import TooFewIdentities
from .landmarks import LandmarkSet, save_landmarks
from .regions import FaceCrop, RegionKind, build_region_mask, build_all_masks
from .template import canonical_template


@dataclass(frozen=True)
class SynthSpec:
    identity_seed: int
    artifact_region: RegionKind | None = None
    artifact_strength: float = 0.8
    canvas: tuple[int, int] = (96, 96)
    noise_level: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.artifact_strength <= 1.0:
            raise ValueError("artifact_strength must be in [0, 1]")
        if self.artifact_region == RegionKind.FACE:
            raise ValueError("artifact_region cannot be Face")


def _identity_rng(identity_seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(identity_seed))


def identity_landmarks(spec: SynthSpec) -> LandmarkSet:
    """The identity's landmark template (canonical layout + seeded jitter)."""
    rng = _identity_rng(spec.identity_seed)
    jitter = rng.uniform(-0.012, 0.012, size=(68, 2))
    return canonical_template(spec.canvas, frame_ref=f"id{spec.identity_seed}",
                              jitter=jitter)


def _identity_palette(identity_seed: int) -> dict:
    rng = _identity_rng(identity_seed)
    rng.uniform(size=(68, 2))  # skip the jitter draw
    bg = rng.integers(30, 226, size=3)
    skin = np.array([180, 150, 120]) + rng.integers(-40, 41, size=3)
    lips = np.array([150, 60, 60]) + rng.integers(-30, 31, size=3)
    iris = rng.integers(20, 121, size=3)
    return {
        "bg": tuple(int(v) for v in bg),
        "skin": tuple(int(np.clip(v, 0, 255)) for v in skin),
        "lips": tuple(int(np.clip(v, 0, 255)) for v in lips),
        "iris": tuple(int(v) for v in iris),
    }


def _draw_face(lm: LandmarkSet, palette: dict, canvas: tuple[int, int]) -> np.ndarray:
    h, w = canvas
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:, :] = palette["bg"]
    pts = lm.points

    jaw = pts[0:17]
    brows = pts[17:27]
    cx = float(jaw[:, 0].mean())
    cy = float((brows[:, 1].min() + jaw[:, 1].max()) / 2)
    rx = float((jaw[:, 0].max() - jaw[:, 0].min()) / 2)
    ry = float((jaw[:, 1].max() - brows[:, 1].min()) / 2) + 0.04 * h
    cv2.ellipse(img, (round(cx), round(cy)), (round(rx), round(ry)), 0, 0, 360,
                palette["skin"], -1, lineType=cv2.LINE_8)

    def poly(indices, color, thickness):
        p = np.round(pts[np.array(indices) - 1]).astype(np.int32)
        cv2.polylines(img, [p], False, color, thickness, lineType=cv2.LINE_8)

    poly(range(18, 23), (40, 30, 20), 2)   # left brow
    poly(range(23, 28), (40, 30, 20), 2)   # right brow
    poly(range(28, 32), (110, 90, 70), 2)  # nose bridge
    poly(range(32, 37), (110, 90, 70), 2)  # nostril base

    for lo, hi in ((37, 43), (43, 49)):
        eye = pts[lo - 1:hi - 1]
        ec = eye.mean(axis=0)
        erx = max(2, round((eye[:, 0].max() - eye[:, 0].min()) / 2))
        ery = max(1, round(erx * 0.55))
        cv2.ellipse(img, (round(ec[0]), round(ec[1])), (erx, ery), 0, 0, 360,
                    (245, 245, 245), -1, lineType=cv2.LINE_8)
        cv2.circle(img, (round(ec[0]), round(ec[1])), max(1, erx // 3),
                   palette["iris"], -1, lineType=cv2.LINE_8)

    mouth = pts[48:60]
    mc = mouth.mean(axis=0)
    mrx = max(2, round((mouth[:, 0].max() - mouth[:, 0].min()) / 2))
    mry = max(1, round((mouth[:, 1].max() - mouth[:, 1].min()) / 2))
    cv2.ellipse(img, (round(mc[0]), round(mc[1])), (mrx, mry), 0, 0, 360,
                palette["lips"], -1, lineType=cv2.LINE_8)
    return img


def _artifact_pattern(canvas: tuple[int, int], strength: float) -> np.ndarray:
    h, w = canvas
    ys, xs = np.mgrid[0:h, 0:w]
    checker = ((xs // 3 + ys // 3) % 2) * 2 - 1
    return (checker * 80.0 * strength)[:, :, None]


def generate_face(spec: SynthSpec, frame_seed: int
                  ) -> tuple[FaceCrop, LandmarkSet, str]:
    """Render one frame; label is "fake" iff the spec carries an artifact."""
    lm = identity_landmarks(spec)
    palette = _identity_palette(spec.identity_seed)
    base = _draw_face(lm, palette, spec.canvas).astype(np.float64)

    noise_rng = np.random.default_rng(
        np.random.PCG64([spec.identity_seed, frame_seed]))
    base += noise_rng.normal(0.0, 18.0 * spec.noise_level, size=base.shape)
    base = np.clip(np.round(base), 0, 255)

    label = "real"
    if spec.artifact_region is not None:
        label = "fake"
        if spec.artifact_strength > 0:
            if spec.artifact_region == RegionKind.REST:
                mask = build_all_masks(lm)[RegionKind.REST].bits
            else:
                mask = build_region_mask(lm, spec.artifact_region).bits
            pattern = _artifact_pattern(spec.canvas, spec.artifact_strength)
            perturbed = np.clip(base + pattern, 0, 255)
            base = np.where(mask[:, :, None], perturbed, base)

    crop = FaceCrop(base.astype(np.uint8), RegionKind.FACE,
                    f"synth-{spec.identity_seed}-{frame_seed}")
    return crop, lm, label


def _frame_seed(corpus_seed: int, ident_idx: int, vid_idx: int, frame_idx: int) -> int:
    return ((corpus_seed * 1_000_003 + ident_idx) * 1_000 + vid_idx) * 1_000 + frame_idx


def generate_manifest(out_dir: str | Path, n_identities: int,
                      videos_per_identity: int, frames_per_video: int,
                      fake_fraction: float, artifact_region: RegionKind | None,
                      seed: int, artifact_strength: float = 0.8,
                      noise_level: float = 0.2, canvas: tuple[int, int] = (96, 96),
                      fake_assignment: str = "video") -> Path:
    """Render a full corpus: frames, landmark CSVs, and a JSONL manifest.

    ``fake_assignment`` controls where the real/fake decision lives:
    "video" fakes a fraction of each identity's videos; "identity" makes
    whole identities fake (used for the leakage demonstration, where label
    correlates with the identity-tinted background).
    """
    if n_identities < 2:
        raise TooFewIdentities(f"need >= 2 identities, got {n_identities}")
    if fake_assignment not in ("video", "identity"):
        raise ValueError(f"unknown fake_assignment {fake_assignment!r}")
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    (out_dir / "landmarks").mkdir(parents=True, exist_ok=True)

    n_fake_identities = round(fake_fraction * n_identities)
    n_fake_videos = round(fake_fraction * videos_per_identity)

    manifest_lines = []
    for ident_idx in range(n_identities):
        identity_id = f"id{ident_idx:03d}"
        identity_seed = seed * 100_000 + ident_idx
        for vid_idx in range(videos_per_identity):
            video_id = f"{identity_id}_v{vid_idx}"
            if fake_assignment == "identity":
                is_fake = ident_idx < n_fake_identities
            else:
                is_fake = vid_idx < n_fake_videos
            spec = SynthSpec(
                identity_seed=identity_seed,
                artifact_region=artifact_region if is_fake else None,
                artifact_strength=artifact_strength,
                canvas=canvas,
                noise_level=noise_level,
            )
            frame_dir = out_dir / "frames" / video_id
            frame_dir.mkdir(exist_ok=True)
            landmark_sets = []
            for frame_idx in range(frames_per_video):
                fseed = _frame_seed(seed, ident_idx, vid_idx, frame_idx)
                crop, lm, label = generate_face(spec, fseed)
                name = f"f{frame_idx:03d}"
                cv2.imwrite(str(frame_dir / f"{name}.png"),
                            cv2.cvtColor(crop.pixels, cv2.COLOR_RGB2BGR))
                landmark_sets.append(
                    LandmarkSet(lm.points, name, lm.canvas))
            save_landmarks(landmark_sets, out_dir / "landmarks" / f"{video_id}.csv")
            manifest_lines.append(json.dumps({
                "video_id": video_id,
                "identity_id": identity_id,
                "label": "fake" if is_fake else "real",
                "database": "synthbench",
                "path": f"frames/{video_id}",
                "generation": "synthetic",
            }, sort_keys=True))

    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text("\n".join(manifest_lines) + "\n")
    return manifest_path
