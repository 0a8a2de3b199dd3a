"""Near-duplicate screenshot removal via ORB-style binary features.

Keypoints come from a FAST-style segment test (16-pixel Bresenham ring,
contiguous arc of 9), oriented by the intensity centroid of a radius-15
patch, and described with 256 rotation-steered brightness comparisons on a
box-blurred image. A screenshot's signature is the per-bit frequency
vector of its descriptors; similarity is plain cosine. Single octave, no
pyramid: screenshots are compared at their native scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import RasterImage

DESCRIPTOR_BITS = 256
MAX_KEYPOINTS = 500
FAST_THRESHOLD = 20.0
_ARC_LEN = 9
_PATCH_R = 15          # intensity-centroid radius
_PAIR_R = 13           # BRIEF sampling offsets stay inside this radius
_MARGIN = 16           # keypoints closer than this to a border are dropped
_ANGLE_BINS = 24       # 15-degree bins; a 90-degree turn is exactly 6 bins

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dy, dx)
_RING = np.array([(-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2),
                  (3, 1), (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3),
                  (-2, -2), (-3, -1)], dtype=np.intp)


def _build_centroid_offsets() -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[-_PATCH_R:_PATCH_R + 1, -_PATCH_R:_PATCH_R + 1]
    inside = u * u + v * v <= _PATCH_R * _PATCH_R
    return u[inside].astype(np.intp), v[inside].astype(np.intp)


def _build_pattern() -> tuple[np.ndarray, np.ndarray]:
    """Fixed pseudo-random comparison pattern: (256, 2) float offsets for
    the two sample points of each bit, all within radius _PAIR_R."""
    rng = np.random.Generator(np.random.PCG64(0x0B5EED))
    pts = []
    while len(pts) < DESCRIPTOR_BITS * 2:
        p = rng.normal(0.0, _PAIR_R / 2.0, size=2)
        if p @ p <= _PAIR_R * _PAIR_R:
            pts.append(p)
    arr = np.array(pts)
    return arr[0::2], arr[1::2]


_CENT_U, _CENT_V = _build_centroid_offsets()
_PATTERN_P, _PATTERN_Q = _build_pattern()
_BIN_ANGLES = np.arange(_ANGLE_BINS) * (2.0 * np.pi / _ANGLE_BINS)
_BIN_COS = np.cos(_BIN_ANGLES)
_BIN_SIN = np.sin(_BIN_ANGLES)


@dataclass
class ImageSignature:
    """Per-bit frequency of an image's descriptors, plus how many there were."""

    vector: np.ndarray  # (256,) float64 in [0, 1]
    keypoint_count: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (DESCRIPTOR_BITS,):
            raise ValueError(f"signature must have {DESCRIPTOR_BITS} entries, "
                             f"got shape {self.vector.shape}")
        if (self.vector < 0).any() or (self.vector > 1).any():
            raise ValueError("signature entries must lie in [0, 1]")
        if self.keypoint_count == 0 and self.vector.any():
            raise ValueError("zero keypoints require an all-zero vector")


def _grayscale(img: RasterImage) -> np.ndarray:
    px = img.pixels.astype(np.float64)
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def _box_blur5(gray: np.ndarray) -> np.ndarray:
    """5x5 mean filter with edge padding."""
    padded = np.pad(gray, 2, mode="edge")
    c = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    h, w = gray.shape
    total = (c[5:5 + h, 5:5 + w] - c[5:5 + h, :w] - c[:h, 5:5 + w] + c[:h, :w])
    return total / 25.0


def _fast_corners(gray: np.ndarray, threshold: float
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segment-test corners: ys, xs, scores (after 3x3 non-max suppression)."""
    h, w = gray.shape
    if h < 7 or w < 7:
        return (np.empty(0, np.intp),) * 2 + (np.empty(0),)
    center = gray[3:h - 3, 3:w - 3]
    ring = np.stack([gray[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
                     for dy, dx in _RING])
    bright = ring > center + threshold
    dark = ring < center - threshold

    def has_arc(mask: np.ndarray) -> np.ndarray:
        ext = np.concatenate([mask, mask[:_ARC_LEN - 1]], axis=0)
        hit = np.zeros(center.shape, dtype=bool)
        for s in range(16):
            hit |= ext[s:s + _ARC_LEN].all(axis=0)
        return hit

    corner = has_arc(bright) | has_arc(dark)
    if not corner.any():
        return (np.empty(0, np.intp),) * 2 + (np.empty(0),)
    score_b = np.maximum(ring - center - threshold, 0).sum(axis=0)
    score_d = np.maximum(center - ring - threshold, 0).sum(axis=0)
    score = np.where(corner, np.maximum(score_b, score_d), 0.0)
    # 3x3 non-max suppression
    padded = np.pad(score, 1, constant_values=-1.0)
    neighborhood = np.stack([padded[1 + dy:1 + dy + score.shape[0],
                                    1 + dx:1 + dx + score.shape[1]]
                             for dy in (-1, 0, 1) for dx in (-1, 0, 1)])
    keep = corner & (score >= neighborhood.max(axis=0)) & (score > 0)
    ys, xs = np.nonzero(keep)
    return ys + 3, xs + 3, score[keep]


def _orientation_bin(gray: np.ndarray, y: int, x: int) -> int:
    patch = gray[y + _CENT_V, x + _CENT_U]
    m10 = float(np.dot(_CENT_U, patch))
    m01 = float(np.dot(_CENT_V, patch))
    theta = np.arctan2(m01, m10) % (2.0 * np.pi)
    return int(np.floor(theta / (2.0 * np.pi / _ANGLE_BINS) + 0.5)) % _ANGLE_BINS


def _descriptor(blur: np.ndarray, y: int, x: int, angle_bin: int) -> np.ndarray:
    c, s = _BIN_COS[angle_bin], _BIN_SIN[angle_bin]
    px = np.floor(c * _PATTERN_P[:, 0] - s * _PATTERN_P[:, 1] + 0.5).astype(np.intp)
    py = np.floor(s * _PATTERN_P[:, 0] + c * _PATTERN_P[:, 1] + 0.5).astype(np.intp)
    qx = np.floor(c * _PATTERN_Q[:, 0] - s * _PATTERN_Q[:, 1] + 0.5).astype(np.intp)
    qy = np.floor(s * _PATTERN_Q[:, 0] + c * _PATTERN_Q[:, 1] + 0.5).astype(np.intp)
    bits = blur[y + py, x + px] < blur[y + qy, x + qx]
    return np.packbits(bits)


def orb_features(img: RasterImage, max_keypoints: int = MAX_KEYPOINTS,
                 fast_threshold: float = FAST_THRESHOLD) -> np.ndarray:
    """Packed binary descriptors for an image, shape (n, 32) uint8.

    At most max_keypoints descriptors, strongest corners first. Featureless
    images (no corner passes the segment test) yield an empty (0, 32) array.
    """
    gray = _grayscale(img)
    h, w = gray.shape
    if h < 2 * _MARGIN + 1 or w < 2 * _MARGIN + 1:
        return np.empty((0, 32), dtype=np.uint8)
    ys, xs, scores = _fast_corners(gray, fast_threshold)
    inside = ((ys >= _MARGIN) & (ys < h - _MARGIN)
              & (xs >= _MARGIN) & (xs < w - _MARGIN))
    ys, xs, scores = ys[inside], xs[inside], scores[inside]
    if ys.size == 0:
        return np.empty((0, 32), dtype=np.uint8)
    # deterministic strongest-first order, position breaking score ties
    order = np.lexsort((xs, ys, -scores))[:max_keypoints]
    blur = _box_blur5(gray)
    descs = [_descriptor(blur, int(ys[i]), int(xs[i]),
                         _orientation_bin(gray, int(ys[i]), int(xs[i])))
             for i in order]
    return np.stack(descs).astype(np.uint8)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Bit difference count between two packed descriptors."""
    return int(np.unpackbits(np.bitwise_xor(a, b)).sum())


def image_signature(descriptors: np.ndarray) -> ImageSignature:
    """Per-bit frequency vector over an image's descriptors.

    An empty descriptor set maps to the all-zero vector.
    """
    descriptors = np.asarray(descriptors, dtype=np.uint8)
    if descriptors.size == 0:
        return ImageSignature(np.zeros(DESCRIPTOR_BITS), 0)
    bits = np.unpackbits(descriptors.reshape(len(descriptors), -1), axis=1)
    return ImageSignature(bits.mean(axis=0).astype(np.float64), len(descriptors))


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two signatures (or raw vectors).

    Either vector having zero norm gives 0: featureless images never count
    as duplicates of anything.
    """
    u = np.asarray(getattr(a, "vector", a), dtype=np.float64)
    v = np.asarray(getattr(b, "vector", b), dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def signature_of_image(img: RasterImage) -> ImageSignature:
    return image_signature(orb_features(img))


def _as_signature(item) -> ImageSignature:
    """Accept an image, a signature, or a bare 256-vector."""
    if isinstance(item, RasterImage):
        return signature_of_image(item)
    if isinstance(item, ImageSignature):
        return item
    vec = np.asarray(item, dtype=np.float64)
    return ImageSignature(vec, keypoint_count=1 if vec.any() else 0)


@dataclass
class DedupDecision:
    index: int
    kept: bool
    max_sim: float
    nearest: int | None  # index of the most similar previously kept item


def dedup_stream_detailed(items: Sequence, threshold: float, rng_seed: int = 0
                          ) -> tuple[list[int], list[DedupDecision]]:
    """Greedy near-duplicate scan. Returns (kept indices, per-item decisions).

    Items may be RasterImages (signatures are computed) or ImageSignatures.
    The scan order is a seeded shuffle; an item is dropped when its cosine
    similarity to any already-kept item exceeds the threshold (strictly),
    or when it has a bit-identical non-zero signature at threshold 1.0.
    Kept indices come back in the original input order.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    sigs = [_as_signature(it) for it in items]
    order = np.random.Generator(np.random.PCG64(rng_seed)).permutation(len(sigs))
    kept: list[int] = []
    decisions: dict[int, DedupDecision] = {}
    for i in order:
        i = int(i)
        best, nearest = 0.0, None
        exact = False
        for j in kept:
            sim = cosine_similarity(sigs[i], sigs[j])
            if sim > best or nearest is None:
                best, nearest = sim, j
            if (sigs[i].keypoint_count and sigs[j].keypoint_count
                    and np.array_equal(sigs[i].vector, sigs[j].vector)):
                exact = True
        drop = best > threshold or exact
        if not drop:
            kept.append(i)
        decisions[i] = DedupDecision(i, not drop, best,
                                     nearest if kept and nearest is not None else None)
    kept.sort()
    return kept, [decisions[i] for i in sorted(decisions)]


def dedup_stream(items: Sequence, threshold: float = 0.8, rng_seed: int = 0) -> list[int]:
    """Indices of items surviving the greedy near-duplicate scan, in input order."""
    kept, _ = dedup_stream_detailed(items, threshold, rng_seed)
    return kept
