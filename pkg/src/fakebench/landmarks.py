"""68-point facial landmark sets: CSV ingestion, validation, and detector adapters.

Landmark indices are 1-based everywhere in the public API (point 1 .. point 68),
matching the usual numbering of the 68-point annotation scheme. Coordinates are
pixels in the face-crop frame, x to the right and y down.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BackendUnavailable, EmptyFile, MalformedRecord, NoFaceFound

N_POINTS = 68

CSV_HEADER = ["frame"] + [f"x{i}" for i in range(1, N_POINTS + 1)] + [
    f"y{i}" for i in range(1, N_POINTS + 1)
]


@dataclass(frozen=True)
class LandmarkSet:
    """68 named 2-D facial points on a face-crop canvas.

    ``points`` is a (68, 2) float array of (x, y) pixel coordinates.
    ``canvas`` is (height, width) of the crop the points live on.
    """

    points: np.ndarray
    frame_ref: str
    canvas: tuple[int, int]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_POINTS, 2):
            raise MalformedRecord(
                f"expected {N_POINTS} points, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise MalformedRecord("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "canvas", (int(self.canvas[0]), int(self.canvas[1])))
        h, w = self.canvas
        if pts[:, 0].min() < 0 or pts[:, 1].min() < 0 or pts[:, 0].max() >= w or pts[:, 1].max() >= h:
            # Landmark detectors may extrapolate slightly past the crop; masks
            # are clipped at rasterization time, so this is only a warning.
            warnings.warn(
                f"landmarks of frame {self.frame_ref!r} extend outside the "
                f"{h}x{w} canvas",
                stacklevel=2,
            )

    def point(self, index: int) -> np.ndarray:
        """Return point ``index`` (1-based, 1..68) as an (x, y) pair."""
        if not 1 <= index <= N_POINTS:
            raise IndexError(f"landmark index must be in 1..{N_POINTS}, got {index}")
        return self.points[index - 1]

    def subset(self, indices: Sequence[int]) -> np.ndarray:
        """Return the (k, 2) array of points at the given 1-based indices."""
        return np.stack([self.point(i) for i in indices])

    def shifted(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(self.points + np.array([dx, dy]), self.frame_ref, self.canvas)


def _parse_record(row: Sequence[str], canvas: tuple[int, int], line_no: int) -> LandmarkSet:
    if len(row) != 1 + 2 * N_POINTS:
        raise MalformedRecord(
            f"line {line_no}: expected {1 + 2 * N_POINTS} fields, got {len(row)}"
        )
    frame_ref = row[0]
    try:
        values = np.array([float(v) for v in row[1:]], dtype=np.float64)
    except ValueError as exc:
        raise MalformedRecord(f"line {line_no}: non-numeric field ({exc})") from exc
    if not np.all(np.isfinite(values)):
        raise MalformedRecord(f"line {line_no}: non-finite coordinate")
    xs, ys = values[:N_POINTS], values[N_POINTS:]
    return LandmarkSet(np.stack([xs, ys], axis=1), frame_ref, canvas)


def load_landmarks(path: str | Path, canvas: tuple[int, int]) -> list[LandmarkSet]:
    """Load one LandmarkSet per row of a landmark CSV.

    Format: header ``frame,x1..x68,y1..y68``, one row per frame.
    Raises MalformedRecord for bad rows and EmptyFile for header-only files.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if rows and rows[0] == CSV_HEADER:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFile(f"no landmark records in {path}")
    return [_parse_record(row, canvas, i + 1) for i, row in enumerate(rows)]


def save_landmarks(sets: Iterable[LandmarkSet], path: str | Path) -> None:
    """Write landmark sets in the canonical CSV format.

    Floats are serialized with ``repr`` (shortest round-trip form), so
    load -> save of a canonically formatted file is byte-stable.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for lm in sets:
            row = [lm.frame_ref]
            row += [repr(float(v)) for v in lm.points[:, 0]]
            row += [repr(float(v)) for v in lm.points[:, 1]]
            writer.writerow(row)


# --- detector adapters -------------------------------------------------------
#
# A backend adapter maps a face-crop raster to a (68, 2) coordinate array, or
# returns None when it finds no face. External detectors (OpenFace-style
# toolboxes etc.) plug in here; the toolkit never reimplements one.

AdapterFn = Callable[[np.ndarray], "np.ndarray | None"]

_BACKENDS: dict[str, AdapterFn] = {}


def register_backend(name: str, fn: AdapterFn) -> None:
    _BACKENDS[name] = fn


def registered_backends() -> list[str]:
    return sorted(_BACKENDS)


def detect_landmarks(image: np.ndarray, backend: str, frame_ref: str = "") -> LandmarkSet:
    """Run a registered landmark backend on a face crop.

    Raises BackendUnavailable for unknown backends and NoFaceFound when the
    backend returns no detection.
    """
    if image is None or image.size == 0:
        raise NoFaceFound("empty image")
    fn = _BACKENDS.get(backend)
    if fn is None:
        raise BackendUnavailable(
            f"no landmark backend {backend!r}; registered: {registered_backends()}"
        )
    result = fn(image)
    if result is None:
        raise NoFaceFound(f"backend {backend!r} found no face")
    canvas = (image.shape[0], image.shape[1])
    return LandmarkSet(np.asarray(result, dtype=np.float64), frame_ref, canvas)
