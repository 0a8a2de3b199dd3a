"""Heuristic UI-defect injection: turn a clean screenshot plus its view
hierarchy into a labeled buggy screenshot.

Four defect categories are synthesized; blurred-screen is a recognized
label but is never synthesized here. Every randomized quantity comes from
a PRNG seeded per call, and each drawn sample is recorded so a run can be
replayed or audited. All pixel edits stay inside the reported bug region.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import ViewNode, ViewTree, collect_views, sample_background_color
from .imaging import (BBox, Color, RasterImage, draw_text, fill_rect, paste,
                      resize_normalize, round_half_up)

BLACK = Color(0, 0, 0)
WHITE = Color(255, 255, 255)


class BugCategory(enum.Enum):
    COMPONENT_OCCLUSION = "component_occlusion"
    TEXT_OVERLAP = "text_overlap"
    MISSING_IMAGE = "missing_image"
    NULL_VALUE = "null_value"
    BLURRED_SCREEN = "blurred_screen"


#: Categories augment() can actually synthesize, in the default corpus order.
SYNTHESIZABLE = (BugCategory.COMPONENT_OCCLUSION, BugCategory.TEXT_OVERLAP,
                 BugCategory.MISSING_IMAGE, BugCategory.NULL_VALUE)

#: Default corpus mix of synthesized categories (fractions of sources).
DEFAULT_MIX = {
    BugCategory.COMPONENT_OCCLUSION: 0.10,
    BugCategory.TEXT_OVERLAP: 0.30,
    BugCategory.MISSING_IMAGE: 0.30,
    BugCategory.NULL_VALUE: 0.30,
}


class NoCandidateError(Exception):
    """The screenshot has no view suitable for the requested defect."""


class UnsupportedCategoryError(Exception):
    """The category is a label only and cannot be synthesized."""


@dataclass
class AugmentOptions:
    """Knobs for candidate filtering and injector behavior."""

    min_view_px: int = 12          # candidate views must be at least this wide and tall
    center_icon: bool = False      # center the missing-image icon instead of the offset paste
    force_overlap: bool = False    # clamp the overlap offset so the text starts inside the view
    occlusion_min_frac: float = 0.1
    overlap_retries: int = 8


@dataclass
class AugmentationRecord:
    """Provenance of one synthesized defect."""

    source_id: str
    category: BugCategory
    bug_region: BBox
    seed: int
    target_view: BBox
    rand_draws: list[float] = field(default_factory=list)


class _RecordingRng:
    """Uniform/integer sampler that logs every draw for replay audits."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self.draws: list[float] = []

    def uniform(self, lo: float, hi: float) -> float:
        v = float(self._gen.uniform(lo, hi))
        self.draws.append(v)
        return v

    def choice_index(self, n: int) -> int:
        v = int(self._gen.integers(0, n))
        self.draws.append(float(v))
        return v


def derive_seed(global_seed: int, source_id: str) -> int:
    """Stable per-screenshot seed: hash of the global seed and source id."""
    digest = hashlib.blake2b(f"{global_seed}:{source_id}".encode("utf-8"),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little")


def default_icon() -> RasterImage:
    """The embedded 24x24 broken-image placeholder glyph."""
    px = np.full((24, 24, 3), 235, dtype=np.uint8)
    px[:2, :] = px[-2:, :] = px[:, :2] = px[:, -2:] = (90, 90, 90)
    # mountain silhouette
    for y in range(11, 22):
        half = y - 11
        lo, hi = max(3, 12 - half), min(21, 13 + half)
        px[y, lo:hi] = (130, 130, 130)
    # sun
    yy, xx = np.mgrid[0:24, 0:24]
    sun = (yy - 7) ** 2 + (xx - 16) ** 2 <= 6
    px[sun] = (170, 170, 170)
    # crack across the frame
    for i in range(20):
        x = 2 + i
        y = 2 + i
        px[min(y, 21), min(x, 21)] = (60, 60, 60)
    return RasterImage(px)


def _text_color_for(bg: Color) -> Color:
    """Black on light backgrounds, white on dark ones."""
    return BLACK if bg.luminance >= 128 else WHITE


def _view_box(view: ViewNode) -> BBox:
    x1, y1, x2, y2 = view.bounds
    return BBox(x1, y1, x2, y2)


def occlude_component(scr: RasterImage, view: ViewNode, bg: Color, rng,
                      min_frac: float = 0.1) -> tuple[RasterImage, BBox]:
    """Cover part of a view with a background-colored block.

    Draws rand ~ U(-1, 1), resampling while |rand| < min_frac. The block is
    view-wide and round(h*|rand|) tall, anchored to the view top when rand
    is nonnegative and flush with the view bottom otherwise.
    """
    x1, y1, x2, y2 = view.bounds
    h = y2 - y1
    rand = rng.uniform(-1.0, 1.0)
    while abs(rand) < min_frac:
        rand = rng.uniform(-1.0, 1.0)
    block_h = max(round_half_up(h * abs(rand)), 1)
    top = y1 if rand >= 0 else y2 + round_half_up(h * rand)
    region = BBox(x1, top, x2, top + block_h).clip(scr.width, scr.height)
    if region is None:  # cannot happen for views inside the screen
        raise NoCandidateError("occlusion block fell outside the image")
    return fill_rect(scr, region, bg), region


def overlap_text(scr: RasterImage, view: ViewNode, rng,
                 force_overlap: bool = False, retries: int = 8
                 ) -> tuple[RasterImage, BBox]:
    """Draw a second copy of a TextView's text horizontally displaced.

    The copy starts at (x2 - round(xrand), y1) with xrand ~ U(-w/2, w/2) and
    cell height equal to the view height; color follows the background
    luminance rule. Placements that render fully off-screen are resampled,
    up to `retries` draws.
    """
    x1, y1, x2, y2 = view.bounds
    w, h = x2 - x1, y2 - y1
    bg = sample_background_color(scr, _view_box(view))
    color = _text_color_for(bg)
    text = view.text or ""
    for _ in range(retries):
        xrand = rng.uniform(-0.5 * w, 0.5 * w)
        if force_overlap:
            xrand = abs(xrand)
        origin = (x2 - round_half_up(xrand), y1)
        out, box = draw_text(scr, origin, text, color, h)
        if box is not None:
            return out, box
    raise NoCandidateError(
        f"text copy stayed off-screen after {retries} placements")


def missing_image(scr: RasterImage, view: ViewNode, bg: Color,
                  icon: RasterImage, center_icon: bool = False
                  ) -> tuple[RasterImage, BBox]:
    """Replace an ImageView's content with background plus a placeholder icon.

    The icon scales to a min(w,h)/2 square and pastes with its top-left at
    (x1 + round(w/2), y1 + round(h/2)) (or centered with center_icon),
    clipped to the view. The bug region is the whole view.
    """
    region = _view_box(view)
    w, h = region.width, region.height
    side = max(round_half_up(min(w, h) / 2), 1)
    scaled = resize_normalize(icon, side, side)
    if center_icon:
        pos = (region.x1 + round_half_up((w - side) / 2),
               region.y1 + round_half_up((h - side) / 2))
    else:
        pos = (region.x1 + round_half_up(0.5 * w), region.y1 + round_half_up(0.5 * h))
    out = fill_rect(scr, region, bg)
    out = paste(out, scaled, pos, clip=region)
    return out, region


def null_value(scr: RasterImage, view: ViewNode, bg: Color) -> tuple[RasterImage, BBox]:
    """Replace a TextView's content with the literal string "null".

    The view fills with background, then "null" is drawn at (x1, y1) with
    cell height equal to the view height (clipped to the view so narrow
    views truncate the text). The bug region is the whole view.
    """
    region = _view_box(view)
    out = fill_rect(scr, region, bg)
    color = _text_color_for(bg)
    out, _ = draw_text(out, (region.x1, region.y1), "null", color,
                       region.height, clip=region)
    return out, region


def _scaled_candidates(scr: RasterImage, tree: ViewTree, wanted: str,
                       min_px: int) -> list[ViewNode]:
    """Wanted views with bounds mapped into screenshot pixel coordinates."""
    views = collect_views(tree, wanted)
    sx = scr.width / tree.screen_w
    sy = scr.height / tree.screen_h
    out = []
    for v in views:
        if sx != 1.0 or sy != 1.0:
            x1, y1, x2, y2 = v.bounds
            b = (round_half_up(x1 * sx), round_half_up(y1 * sy),
                 round_half_up(x2 * sx), round_half_up(y2 * sy))
            v = ViewNode(v.class_name, b, v.text, v.visible, v.children)
        if not v.bounds_well_formed():
            continue
        x1, y1, x2, y2 = v.bounds
        if x1 < 0 or y1 < 0 or x2 > scr.width or y2 > scr.height:
            continue
        if v.width >= min_px and v.height >= min_px:
            out.append(v)
    return out


def augment(scr: RasterImage, tree: ViewTree, category: BugCategory,
            icon: RasterImage | None = None, seed: int = 0, source_id: str = "",
            options: AugmentOptions | None = None
            ) -> tuple[RasterImage, AugmentationRecord]:
    """Synthesize one defect of the given category on a clean screenshot.

    Picks a uniformly random candidate view of the right class (TextView
    for text defects, ImageView for missing-image), then applies the
    category's injector. Deterministic for a fixed (seed, inputs) pair.

    Raises UnsupportedCategoryError for blurred-screen and NoCandidateError
    when no view qualifies or placement keeps failing.
    """
    if category == BugCategory.BLURRED_SCREEN:
        raise UnsupportedCategoryError("blurred_screen is a label, not a synthesizable defect")
    if category not in SYNTHESIZABLE:
        raise UnsupportedCategoryError(f"unknown category {category!r}")
    opts = options or AugmentOptions()
    wanted = "ImageView" if category == BugCategory.MISSING_IMAGE else "TextView"
    candidates = _scaled_candidates(scr, tree, wanted, opts.min_view_px)
    if not candidates:
        raise NoCandidateError(f"no usable {wanted} for {category.value} in {source_id or 'screenshot'}")
    rng = _RecordingRng(seed)
    view = candidates[rng.choice_index(len(candidates))]
    bg = sample_background_color(scr, _view_box(view))
    if category == BugCategory.COMPONENT_OCCLUSION:
        out, region = occlude_component(scr, view, bg, rng,
                                        min_frac=opts.occlusion_min_frac)
    elif category == BugCategory.TEXT_OVERLAP:
        out, region = overlap_text(scr, view, rng, force_overlap=opts.force_overlap,
                                   retries=opts.overlap_retries)
    elif category == BugCategory.MISSING_IMAGE:
        out, region = missing_image(scr, view, bg, icon or default_icon(),
                                    center_icon=opts.center_icon)
    else:
        out, region = null_value(scr, view, bg)
    record = AugmentationRecord(source_id=source_id, category=category,
                                bug_region=region, seed=seed,
                                target_view=_view_box(view), rand_draws=rng.draws)
    return out, record


def assign_categories(source_ids: list[str], mix: dict[BugCategory, float],
                      seed: int) -> dict[str, BugCategory | None]:
    """Deterministic stratified category assignment over a corpus.

    Sorted ids are shuffled with the seed, then sliced into contiguous
    blocks sized by the cumulative mix fractions (boundaries round
    half-up). Ids beyond the covered fractions map to None (clean only).
    """
    total = sum(mix.values())
    if total > 1.0 + 1e-9 or any(f < 0 for f in mix.values()):
        raise ValueError(f"mix fractions must be nonnegative and sum to at most 1, got {mix}")
    ids = sorted(source_ids)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    assignment: dict[str, BugCategory | None] = {sid: None for sid in ids}
    cum = 0.0
    start = 0
    for cat, frac in mix.items():
        cum += frac
        end = round_half_up(cum * len(ids))
        for sid in shuffled[start:end]:
            assignment[sid] = cat
        start = end
    return assignment
