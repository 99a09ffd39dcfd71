"""Canonical frontal 68-point landmark template.

Coordinates are defined in a unit square and scaled to a target canvas.
Index layout (1-based): 1-17 jaw, 18-22 left brow, 23-27 right brow,
28-31 nose bridge, 32-36 nostril base, 37-42 left eye, 43-48 right eye,
49-60 outer lip, 61-68 inner lip.
"""

from __future__ import annotations

import numpy as np

from .landmarks import LandmarkSet


def _unit_template() -> np.ndarray:
    pts = np.zeros((68, 2))
    # jaw: arc from left temple around the chin to the right temple
    for i in range(17):
        phi = np.pi * (1 - i / 16)
        pts[i] = (0.5 + 0.44 * np.cos(phi), 0.40 + 0.55 * np.sin(phi))
    # brows, slightly arched
    for i in range(5):
        t = i / 4
        pts[17 + i] = (0.18 + 0.24 * t, 0.30 - 0.03 * np.sin(np.pi * t))
        pts[22 + i] = (0.58 + 0.24 * t, 0.30 - 0.03 * np.sin(np.pi * (1 - t)))
    # nose bridge and nostril base
    for i, y in enumerate((0.38, 0.45, 0.52, 0.58)):
        pts[27 + i] = (0.5, y)
    base_x = (0.40, 0.45, 0.50, 0.55, 0.60)
    base_y = (0.64, 0.655, 0.66, 0.655, 0.64)
    for i in range(5):
        pts[31 + i] = (base_x[i], base_y[i])
    # eyes: 6 points each, corners at the horizontal extremes
    def eye(cx):
        return [
            (cx - 0.055, 0.40), (cx - 0.028, 0.375), (cx + 0.028, 0.375),
            (cx + 0.055, 0.40), (cx + 0.028, 0.425), (cx - 0.028, 0.425),
        ]

    pts[36:42] = eye(0.315)
    pts[42:48] = eye(0.685)
    # outer lip: 12 points on an ellipse, starting at the left corner
    for k in range(12):
        ang = np.pi - k * np.pi / 6
        pts[48 + k] = (0.5 + 0.14 * np.cos(ang), 0.78 - 0.06 * np.sin(ang))
    # inner lip: 8 points on a smaller ellipse
    for k in range(8):
        ang = np.pi - k * np.pi / 4
        pts[60 + k] = (0.5 + 0.09 * np.cos(ang), 0.78 - 0.03 * np.sin(ang))
    return pts


_UNIT = _unit_template()


def canonical_template(canvas: tuple[int, int], frame_ref: str = "template",
                       jitter: np.ndarray | None = None) -> LandmarkSet:
    """The canonical frontal template scaled to ``canvas`` (height, width).

    ``jitter``, when given, is a (68, 2) offset in unit-square coordinates
    applied before scaling (used for per-identity shape variation).
    """
    h, w = canvas
    unit = _UNIT if jitter is None else _UNIT + jitter
    pts = unit * np.array([w - 1, h - 1])
    return LandmarkSet(pts, frame_ref, canvas)
