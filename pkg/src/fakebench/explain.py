"""Grad-CAM heatmaps and overlay rendering.

The heatmap for a target class is built from the designated final
convolutional layer: channel gradients of the target score are averaged
spatially into channel weights, the weighted channel sum is rectified,
bilinearly upsampled to the crop size, and divided by its maximum (an
identically-zero map stays zero).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
import torch
import torch.nn.functional as F

from .detectors import DetectorModel, preprocess_crop, _configure_torch
from .errors import CanvasMismatch, ModeError, NoConvLayer
from .metrics import LABELS
from .regions import FaceCrop

DEFAULT_COLORMAP = "viridis"


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # (H, W) float32 in [0, 1]
    target_label: str
    layer_name: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.min() < 0 or v.max() > 1.0 + 1e-6:
            raise ValueError("heatmap values must be in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _target_layer(module) -> torch.nn.Module:
    layer_fn = getattr(module, "gradcam_layer", None)
    if layer_fn is None:
        raise NoConvLayer("model does not designate a Grad-CAM source layer")
    return layer_fn()


def grad_cam_raw(module: torch.nn.Module, layer: torch.nn.Module,
                 x: torch.Tensor, target_index: int) -> np.ndarray:
    """Grad-CAM on an explicit module/layer pair; returns the normalized map
    at the input tensor's spatial size."""
    _configure_torch()
    acts: list[torch.Tensor] = []
    grads: list[torch.Tensor] = []

    def fwd_hook(_mod, _inp, out):
        acts.append(out)

    h1 = layer.register_forward_hook(fwd_hook)
    try:
        x = x.clone().requires_grad_(False)
        scores = module.class_scores(x)
        if not acts:
            raise NoConvLayer("designated layer saw no activations")
        activation = acts[-1]
        if scores.requires_grad:
            grad = torch.autograd.grad(scores[0, target_index], activation,
                                       retain_graph=False, allow_unused=True)[0]
        else:
            # the designated layer does not feed the score at all
            grad = None
    finally:
        h1.remove()
    if grad is None:
        grad = torch.zeros_like(activation)
    weights = grad.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * activation).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=x.shape[2:], mode="bilinear", align_corners=False)
    cam = cam[0, 0].detach().numpy()
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return cam.astype(np.float32)


def grad_cam(model: DetectorModel, crop: FaceCrop, target: str) -> Heatmap:
    """Heatmap of the regions driving the model's score for ``target``.

    Requires eval mode. The result has the crop's dimensions regardless of
    the model input size.
    """
    if model.mode != "eval":
        raise ModeError("grad_cam requires eval mode")
    if target not in LABELS:
        raise ValueError(f"target must be real|fake, got {target!r}")
    layer = _target_layer(model.module)
    x = preprocess_crop(crop, model.config.input_size)
    cam = grad_cam_raw(model.module, layer, x, LABELS.index(target))
    h, w = crop.canvas
    cam_t = torch.from_numpy(cam)[None, None]
    cam_full = F.interpolate(cam_t, size=(h, w), mode="bilinear",
                             align_corners=False)[0, 0].numpy()
    cam_full = np.clip(cam_full, 0.0, None)
    peak = cam_full.max()
    if peak > 0:
        cam_full = cam_full / peak
    return Heatmap(cam_full, target, layer.__class__.__name__)


def overlay(heatmap: Heatmap, crop: FaceCrop, alpha: float = 0.5,
            colormap: str = DEFAULT_COLORMAP) -> np.ndarray:
    """Alpha-blend the color-mapped heatmap onto the crop (uint8 RGB)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    h, w = crop.canvas
    if heatmap.values.shape != (h, w):
        raise CanvasMismatch(
            f"heatmap {heatmap.values.shape} vs crop {(h, w)}")
    cmap = matplotlib.colormaps[colormap]
    colored = (cmap(heatmap.values)[:, :, :3] * 255.0)
    base = crop.pixels.astype(np.float64)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    blended = (1.0 - alpha) * base + alpha * colored
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)


def save_heatmap(heatmap: Heatmap, path: str | Path, model_key: str = "") -> None:
    """Write the heatmap as a lossless 16-bit PNG plus a JSON sidecar."""
    import cv2

    path = Path(path)
    cv2.imwrite(str(path), (heatmap.values * 65535.0).round().astype(np.uint16))
    sidecar = {
        "model_key": model_key,
        "target": heatmap.target_label,
        "layer": heatmap.layer_name,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
