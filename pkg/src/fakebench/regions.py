"""Facial-region mask construction and application.

Four regions are built from a 68-point landmark set:

* Eyes  - filled polygon: eyebrow points 18..27 across the top, closed along
  the bottom through upper-jaw points 17, 16, 2, 1.
* Nose  - filled polygon: 22, 28, 23 across the top, widened at mid-height
  through the inner eye corners 43 (right) and 40 (left), with the nostril
  base 36..32 along the bottom. Bridge points 29..31 lie inside this outline
  on the standard 68-point topology and are not perimeter vertices.
* Mouth - ellipse fitted by direct least squares to the 8 outer-lip points
  49, 51, 52, 53, 55, 57, 58, 59.
* Rest  - full canvas minus the union of the other three.

All indices are 1-based. Rasterization rule: a pixel belongs to a shape if
its center (integer coordinates (x, y) = (col, row)) is inside, with points
exactly on the boundary counting as inside. Masks are clipped to the canvas.
Eyes/Nose/Mouth may overlap each other; Rest is disjoint from all three by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
import yaml

from .errors import CanvasMismatch, ConfigError, DegenerateGeometry
from .landmarks import LandmarkSet

_EPS = 1e-9


class RegionKind(str, Enum):
    FACE = "Face"
    EYES = "Eyes"
    NOSE = "Nose"
    MOUTH = "Mouth"
    REST = "Rest"


FACIAL_REGIONS = (RegionKind.EYES, RegionKind.NOSE, RegionKind.MOUTH, RegionKind.REST)
ALL_REGIONS = (RegionKind.FACE,) + FACIAL_REGIONS


@dataclass(frozen=True)
class RegionRecipe:
    """Role-tagged 1-based landmark index lists defining one region's shape."""

    kind: RegionKind
    roles: dict

    def __post_init__(self):
        for role, indices in self.roles.items():
            for i in indices:
                if not 1 <= int(i) <= 68:
                    raise ConfigError(
                        f"{self.kind.value}/{role}: landmark index {i} not in 1..68"
                    )


# Frozen vertex orders. The traversal order is a toolkit decision (only the
# point sets and their roles are fixed by the region definitions); this order
# yields simple polygons on the standard frontal 68-point topology.
DEFAULT_RECIPES: dict[RegionKind, RegionRecipe] = {
    RegionKind.EYES: RegionRecipe(
        RegionKind.EYES,
        {"top": list(range(18, 28)), "bottom": [17, 16, 2, 1]},
    ),
    RegionKind.NOSE: RegionRecipe(
        RegionKind.NOSE,
        {
            "top": [22, 28, 23],
            "right_width": [43],
            "base": [36, 35, 34, 33, 32],
            "left_width": [40],
        },
    ),
    RegionKind.MOUTH: RegionRecipe(
        RegionKind.MOUTH,
        {"ellipse": [49, 51, 52, 53, 55, 57, 58, 59]},
    ),
}

_POLYGON_ROLE_ORDER = {
    RegionKind.EYES: ("top", "bottom"),
    RegionKind.NOSE: ("top", "right_width", "base", "left_width"),
}


def load_recipes(path: str | Path) -> dict[RegionKind, RegionRecipe]:
    """Load recipe overrides from a YAML file keyed by region name.

    Regions not present in the file keep their defaults.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    recipes = dict(DEFAULT_RECIPES)
    for name, roles in raw.items():
        try:
            kind = RegionKind(str(name).capitalize())
        except ValueError as exc:
            raise ConfigError(f"unknown region {name!r} in {path}") from exc
        if kind in (RegionKind.FACE, RegionKind.REST):
            raise ConfigError(f"{kind.value} takes no recipe")
        if not isinstance(roles, dict):
            raise ConfigError(f"{name}: expected role -> index-list mapping")
        recipes[kind] = RegionRecipe(kind, {r: list(v) for r, v in roles.items()})
    return recipes


@dataclass(frozen=True)
class RegionMask:
    """Binary raster identifying one facial region on a face-crop canvas."""

    bits: np.ndarray  # (H, W) bool
    kind: RegionKind
    canvas: tuple[int, int]

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != tuple(self.canvas):
            raise CanvasMismatch(
                f"mask shape {bits.shape} != canvas {tuple(self.canvas)}"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "canvas", (int(self.canvas[0]), int(self.canvas[1])))

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class FaceCrop:
    """A face crop raster, optionally masked to one region (black background)."""

    pixels: np.ndarray  # (H, W, C) uint8
    region: RegionKind
    source_ref: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim == 2:
            px = px[:, :, None]
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def canvas(self) -> tuple[int, int]:
        return (self.pixels.shape[0], self.pixels.shape[1])


# --- rasterization -----------------------------------------------------------


def _pixel_centers(canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = canvas
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def rasterize_polygon(vertices: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    """Fill a polygon on the canvas: pixel centers inside or on the boundary.

    Even-odd (crossing number) rule, vectorized over the pixel grid.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    px, py = _pixel_centers(canvas)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        # crossing-number toggle for the half-open edge
        crosses = (y1 > py) != (y2 > py)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < x_at)
        # boundary: point on the closed segment counts as inside
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = (
            (px >= min(x1, x2) - _EPS)
            & (px <= max(x1, x2) + _EPS)
            & (py >= min(y1, y2) - _EPS)
            & (py <= max(y1, y2) + _EPS)
        )
        on_edge |= within & (np.abs(cross) <= _EPS * max(1.0, abs(x2 - x1) + abs(y2 - y1)))
    return inside | on_edge


def _polygon_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class EllipseParams:
    center: tuple[float, float]
    axes: tuple[float, float]  # semi-axes (a, b)
    angle: float  # radians, rotation of the a-axis


def fit_ellipse(points: np.ndarray) -> EllipseParams:
    """Direct least-squares conic fit; falls back to the minimum enclosing
    ellipse when the fitted conic is not an ellipse."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 5 or _polygon_area(pts) < 1.0:
        raise DegenerateGeometry("too few or collinear points for an ellipse fit")
    params = _fit_ellipse_direct(pts)
    if params is None:
        params = _min_enclosing_ellipse(pts)
    return params


def _fit_ellipse_direct(pts: np.ndarray) -> EllipseParams | None:
    # Fitzgibbon-style constrained conic fit, via the generalized eigenproblem
    x, y = pts[:, 0] - pts[:, 0].mean(), pts[:, 1] - pts[:, 1].mean()
    scale = max(np.abs(np.concatenate([x, y])).max(), _EPS)
    x, y = x / scale, y / scale
    D = np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])
    S = D.T @ D
    C = np.zeros((6, 6))
    C[0, 2] = C[2, 0] = 2.0
    C[1, 1] = -1.0
    try:
        eigvals, eigvecs = np.linalg.eig(np.linalg.solve(S, C))
    except np.linalg.LinAlgError:
        return None
    mask = np.isfinite(eigvals) & (np.abs(eigvals.imag) < 1e-8) & (eigvals.real > 1e-12)
    if not np.any(mask):
        return None
    vec = eigvecs[:, np.argmax(np.where(mask, eigvals.real, -np.inf))].real
    A, B, Cc, Dd, E, F = vec
    if B * B - 4 * A * Cc >= 0:
        return None
    params = _conic_to_params(A, B, Cc, Dd, E, F)
    if params is None:
        return None
    cx, cy = params.center
    return EllipseParams(
        (cx * scale + pts[:, 0].mean(), cy * scale + pts[:, 1].mean()),
        (params.axes[0] * scale, params.axes[1] * scale),
        params.angle,
    )


def _conic_to_params(A, B, C, D, E, F) -> EllipseParams | None:
    M = np.array([[A, B / 2], [B / 2, C]])
    if abs(np.linalg.det(M)) < 1e-15:
        return None
    center = np.linalg.solve(2 * M, [-D, -E])
    cx, cy = center
    # constant term at the center
    Fc = A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F
    eigvals, eigvecs = np.linalg.eigh(M)
    if np.any(eigvals * -Fc <= 0):
        return None
    axes = np.sqrt(-Fc / eigvals)
    order = np.argsort(-axes)  # major first
    a, b = axes[order]
    vx, vy = eigvecs[:, order[0]]
    return EllipseParams((float(cx), float(cy)), (float(a), float(b)), float(np.arctan2(vy, vx)))


def _min_enclosing_ellipse(pts: np.ndarray, tol: float = 1e-7) -> EllipseParams:
    # Khachiyan's algorithm for the minimum-volume enclosing ellipse
    P = pts.T
    n, d = pts.shape[0], 2
    Q = np.vstack([P, np.ones(n)])
    u = np.full(n, 1.0 / n)
    for _ in range(1000):
        X = Q @ np.diag(u) @ Q.T
        M = np.einsum("ij,ji->i", Q.T @ np.linalg.inv(X), Q)
        j = int(np.argmax(M))
        step = (M[j] - d - 1.0) / ((d + 1) * (M[j] - 1.0))
        new_u = (1 - step) * u
        new_u[j] += step
        if np.linalg.norm(new_u - u) < tol:
            u = new_u
            break
        u = new_u
    center = P @ u
    A = np.linalg.inv(P @ np.diag(u) @ P.T - np.outer(center, center)) / d
    eigvals, eigvecs = np.linalg.eigh(A)
    axes = 1.0 / np.sqrt(eigvals)
    order = np.argsort(-axes)
    a, b = axes[order]
    vx, vy = eigvecs[:, order[0]]
    return EllipseParams(
        (float(center[0]), float(center[1])),
        (float(a), float(b)),
        float(np.arctan2(vy, vx)),
    )


def rasterize_ellipse(params: EllipseParams, canvas: tuple[int, int]) -> np.ndarray:
    """Fill an ellipse: pixel centers at quadratic-form value <= 1."""
    px, py = _pixel_centers(canvas)
    cx, cy = params.center
    a, b = params.axes
    if a < _EPS or b < _EPS:
        raise DegenerateGeometry("ellipse semi-axis collapsed to zero")
    c, s = np.cos(params.angle), np.sin(params.angle)
    dx, dy = px - cx, py - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0 + _EPS


# --- region masks ------------------------------------------------------------


def polygon_vertices(lm: LandmarkSet, kind: RegionKind,
                     recipe: RegionRecipe | None = None) -> np.ndarray:
    """The frozen perimeter vertex list for a polygonal region (Eyes/Nose)."""
    if kind not in _POLYGON_ROLE_ORDER:
        raise ValueError(f"{kind.value} is not a polygonal region")
    recipe = recipe or DEFAULT_RECIPES[kind]
    indices: list[int] = []
    for role in _POLYGON_ROLE_ORDER[kind]:
        indices.extend(recipe.roles.get(role, []))
    return lm.subset(indices)


def build_region_mask(lm: LandmarkSet, kind: RegionKind,
                      recipe: RegionRecipe | None = None) -> RegionMask:
    """Rasterize the Eyes, Nose, or Mouth mask for a landmark set.

    Raises DegenerateGeometry when the polygon area is below one pixel or the
    ellipse fit is singular. Face needs no mask and Rest is built by
    compose_rest_mask, so neither is accepted here.
    """
    if kind in (RegionKind.FACE, RegionKind.REST):
        raise ValueError(f"no direct mask for {kind.value}")
    if kind == RegionKind.MOUTH:
        recipe = recipe or DEFAULT_RECIPES[kind]
        pts = lm.subset(recipe.roles["ellipse"])
        bits = rasterize_ellipse(fit_ellipse(pts), lm.canvas)
    else:
        verts = polygon_vertices(lm, kind, recipe)
        if _polygon_area(verts) < 1.0:
            raise DegenerateGeometry(
                f"{kind.value} polygon area below one pixel"
            )
        bits = rasterize_polygon(verts, lm.canvas)
    return RegionMask(bits, kind, lm.canvas)


def compose_rest_mask(eyes: RegionMask, nose: RegionMask, mouth: RegionMask) -> RegionMask:
    """Rest = full canvas minus (Eyes | Nose | Mouth)."""
    if not (eyes.canvas == nose.canvas == mouth.canvas):
        raise CanvasMismatch(
            f"canvases differ: {eyes.canvas}, {nose.canvas}, {mouth.canvas}"
        )
    bits = ~(eyes.bits | nose.bits | mouth.bits)
    return RegionMask(bits, RegionKind.REST, eyes.canvas)


def apply_mask(crop: FaceCrop, mask: RegionMask) -> FaceCrop:
    """Keep crop pixels where the mask is set, black elsewhere; dims unchanged."""
    if crop.canvas != mask.canvas:
        raise CanvasMismatch(f"crop {crop.canvas} vs mask {mask.canvas}")
    out = crop.pixels * mask.bits[:, :, None].astype(np.uint8)
    return FaceCrop(out, mask.kind, crop.source_ref)


def segment_face(crop: FaceCrop, lm: LandmarkSet,
                 recipes: dict[RegionKind, RegionRecipe] | None = None
                 ) -> dict[RegionKind, FaceCrop]:
    """Produce the five region crops (Face untouched, four masked variants)."""
    if crop.canvas != lm.canvas:
        raise CanvasMismatch(f"crop {crop.canvas} vs landmarks {lm.canvas}")
    recipes = recipes or DEFAULT_RECIPES
    eyes = build_region_mask(lm, RegionKind.EYES, recipes.get(RegionKind.EYES))
    nose = build_region_mask(lm, RegionKind.NOSE, recipes.get(RegionKind.NOSE))
    mouth = build_region_mask(lm, RegionKind.MOUTH, recipes.get(RegionKind.MOUTH))
    rest = compose_rest_mask(eyes, nose, mouth)
    return {
        RegionKind.FACE: FaceCrop(crop.pixels, RegionKind.FACE, crop.source_ref),
        RegionKind.EYES: apply_mask(crop, eyes),
        RegionKind.NOSE: apply_mask(crop, nose),
        RegionKind.MOUTH: apply_mask(crop, mouth),
        RegionKind.REST: apply_mask(crop, rest),
    }


def build_all_masks(lm: LandmarkSet,
                    recipes: dict[RegionKind, RegionRecipe] | None = None
                    ) -> dict[RegionKind, RegionMask]:
    """Eyes/Nose/Mouth/Rest masks for one landmark set."""
    recipes = recipes or DEFAULT_RECIPES
    masks = {
        kind: build_region_mask(lm, kind, recipes.get(kind))
        for kind in (RegionKind.EYES, RegionKind.NOSE, RegionKind.MOUTH)
    }
    masks[RegionKind.REST] = compose_rest_mask(
        masks[RegionKind.EYES], masks[RegionKind.NOSE], masks[RegionKind.MOUTH]
    )
    return masks


def save_mask(mask: RegionMask, path: str | Path) -> None:
    """Write a mask as a lossless 1-bit-content PNG (0/255)."""
    cv2.imwrite(str(path), mask.bits.astype(np.uint8) * 255)


def load_mask(path: str | Path, kind: RegionKind) -> RegionMask:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise FileNotFoundError(path)
    return RegionMask(img > 127, kind, (img.shape[0], img.shape[1]))
