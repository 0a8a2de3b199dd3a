"""Gradient-weighted class activation maps for defect localization.

The map for a class weights the target conv block's post-relu activations
by the spatial mean of the class logit's gradient at that block, clamps
negative evidence to zero, upsamples bilinearly to the network input
resolution, and normalizes by the maximum. The default target is the
twelfth conv block, read before the final pool so the map keeps the
doubled spatial resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import BBox, RasterImage, bilinear_resize
from .owlnet import LABELS, Network, preprocess


class LocalizationError(ValueError):
    pass


@dataclass
class LocalizationMap:
    """values: (H, W) map in [0, 1] at network input resolution.
    raw_map: the un-normalized map at the tapped conv resolution."""

    values: np.ndarray
    raw_map: np.ndarray
    layer_index: int

    def argmax(self) -> tuple[int, int]:
        """(x, y) of the peak; ties take the first position in row-major order."""
        flat = int(np.argmax(self.values))
        y, x = divmod(flat, self.values.shape[1])
        return x, y


def cam_from_activations(activations: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Raw class activation map from (C, h, w) activations and gradients.

    Channel weights are the spatial means of the gradients; the weighted
    sum is clamped at zero (only positive evidence localizes).
    """
    activations = np.asarray(activations, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if activations.shape != grads.shape or activations.ndim != 3:
        raise ValueError(f"activations {activations.shape} and grads "
                         f"{grads.shape} must be matching (C, h, w)")
    alpha = grads.mean(axis=(1, 2))
    return np.maximum((alpha[:, None, None] * activations).sum(axis=0), 0.0)


def normalize_map(raw: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear-upsample a raw map and divide by its maximum. An all-zero
    map stays all-zero instead of dividing by zero."""
    up = bilinear_resize(np.asarray(raw, dtype=np.float64), out_h, out_w)
    up = np.maximum(up, 0.0)
    peak = up.max()
    return up / peak if peak > 0 else up


def grad_cam(net: Network, img: RasterImage, target_class: str = "buggy",
             layer_index: int = 12) -> LocalizationMap:
    """Localization map of one screenshot for the given class.

    Runs inference with caches kept, then backpropagates the bare target
    logit (not the softmax) down to the chosen conv block's post-relu
    activations. Deterministic for identical inputs.
    """
    if target_class not in LABELS:
        raise ValueError(f"unknown class {target_class!r}")
    tap = net.block_relu_index.get(layer_index)
    if tap is None:
        raise ValueError(f"no conv block {layer_index} in this network")
    x = preprocess(img, net.cfg, net.channel_mean, net.channel_std).astype(net.dtype)
    logits = net.forward(x[None], training=False, keep_outputs=True)
    onehot = np.zeros_like(logits)
    onehot[0, LABELS.index(target_class)] = 1.0
    grad = net.backward_to(onehot, tap)
    acts = net.layer_outputs[tap][0]
    raw = cam_from_activations(acts, grad[0])
    values = normalize_map(raw, net.cfg.input_h, net.cfg.input_w)
    return LocalizationMap(values=values, raw_map=raw, layer_index=layer_index)


def map_to_region(lmap: LocalizationMap, frac: float = 0.5) -> BBox:
    """Tight box around all pixels at or above frac * max.

    Raises LocalizationError for an all-zero map (nothing to localize) and
    ValueError for frac outside (0, 1).
    """
    if not 0.0 < frac < 1.0:
        raise ValueError(f"frac must be in (0, 1), got {frac}")
    vals = lmap.values
    peak = vals.max()
    if peak <= 0:
        raise LocalizationError("all-zero map has no region")
    ys, xs = np.nonzero(vals >= frac * peak)
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def localization_hit(lmap: LocalizationMap, truth: BBox) -> bool:
    """Whether the map's peak falls strictly inside the ground-truth box.

    The peak takes the first row-major position on ties; an all-zero map
    never hits.
    """
    if lmap.values.max() <= 0:
        return False
    x, y = lmap.argmax()
    return truth.contains(x, y)
