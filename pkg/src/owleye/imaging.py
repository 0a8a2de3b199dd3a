"""Raster image model plus the drawing and preprocessing primitives.

Images are thin wrappers around (H, W, 3) uint8 arrays in row-major order.
Every operation returns a new image and never mutates its inputs. All
fractional pixel quantities round half-up (0.5 always goes toward +inf);
numpy's own rounding is banker's, so don't use it for pixel math.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .font_data import GLYPH_COLS, GLYPH_ROWS, glyph_mask

log = logging.getLogger("owleye.imaging")


def round_half_up(x):
    """Round to the nearest integer with ties going up: floor(x + 0.5)."""
    arr = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)
    if arr.ndim == 0:
        return int(arr)
    return arr


@dataclass(frozen=True)
class Color:
    """An sRGB color with 8-bit channels."""

    r: int
    g: int
    b: int

    def __post_init__(self):
        for v in (self.r, self.g, self.b):
            if not (isinstance(v, (int, np.integer)) and 0 <= v <= 255):
                raise ValueError(f"channel out of range: {v!r}")

    @property
    def packed(self) -> int:
        """(r << 16) | (g << 8) | b, used for deterministic tie-breaking."""
        return (int(self.r) << 16) | (int(self.g) << 8) | int(self.b)

    @property
    def luminance(self) -> float:
        return 0.299 * self.r + 0.587 * self.g + 0.114 * self.b

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.uint8)


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: x in [x1, x2), y in [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 < self.x2 and 0 <= self.y1 < self.y2):
            raise ValueError(f"degenerate box: {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        return self.x1 <= x < self.x2 and self.y1 <= y < self.y2

    def clip(self, width: int, height: int) -> "BBox | None":
        """Intersect with an image of the given size; None if empty."""
        return clip_box(self.x1, self.y1, self.x2, self.y2, width, height)

    def to_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


def clip_box(x1, y1, x2, y2, width, height) -> BBox | None:
    """Intersect a raw (possibly out-of-range) box with [0,width)x[0,height)."""
    cx1, cy1 = max(int(x1), 0), max(int(y1), 0)
    cx2, cy2 = min(int(x2), int(width)), min(int(y2), int(height))
    if cx1 >= cx2 or cy1 >= cy2:
        return None
    return BBox(cx1, cy1, cx2, cy2)


class RasterImage:
    """An RGB raster backed by a (H, W, 3) uint8 array."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.dtype != np.uint8:
            # refuse silent truncation of float or wide-integer data
            raise ValueError(f"pixels must be uint8, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, color: Color) -> "RasterImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color.as_array()
        return cls(px)

    @classmethod
    def load(cls, path) -> "RasterImage":
        """Read a PNG or JPEG file, converting to RGB."""
        try:
            with Image.open(path) as im:
                return cls(np.asarray(im.convert("RGB")))
        except OSError:
            raise
        except Exception as exc:  # PIL raises a small zoo of types
            raise OSError(f"cannot read image {path}: {exc}") from exc

    def save_png(self, path) -> None:
        """Write a PNG. Encoder settings are pinned so output bytes are
        reproducible for identical pixel data."""
        Image.fromarray(self.pixels).save(path, format="PNG",
                                          compress_level=6, optimize=False)

    def copy(self) -> "RasterImage":
        return RasterImage(self.pixels.copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels)

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height})"


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned bilinear sampling of a float (H, W[, C]) array.

    Output pixel (i, j) samples the source at ((i+0.5)*H/out_h - 0.5,
    (j+0.5)*W/out_w - 0.5), clamped to the source extent. No rounding;
    callers quantize. This is a direct stretch, not an antialiased filter.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad target size {out_w}x{out_h}")
    arr = np.asarray(arr, dtype=np.float64)
    in_h, in_w = arr.shape[:2]
    sy = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = sy - y0
    wx = sx - x0
    if arr.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_normalize(img: RasterImage, target_h: int, target_w: int) -> RasterImage:
    """Resize to exactly target_h x target_w by bilinear resampling.

    Same-size calls return an identical copy. Values are rounded half-up
    back to uint8.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"bad target size {target_w}x{target_h}")
    if (target_h, target_w) == (img.height, img.width):
        return img.copy()
    out = bilinear_resize(img.pixels, target_h, target_w)
    return RasterImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def rotate_to_portrait(img: RasterImage) -> RasterImage:
    """Rotate 90 degrees clockwise iff the image is wider than tall.

    Input pixel (x, y) lands at output (height-1-y, x). Square and portrait
    images come back unchanged (as a copy).
    """
    if img.width <= img.height:
        return img.copy()
    return RasterImage(np.ascontiguousarray(img.pixels.transpose(1, 0, 2)[:, ::-1]))


def fill_rect(img: RasterImage, box: BBox, color: Color) -> RasterImage:
    """Fill a solid rectangle, silently clipping at the image edge.

    A box entirely outside the image is a no-op (logged as a warning).
    """
    out = img.copy()
    clipped = box.clip(img.width, img.height)
    if clipped is None:
        log.warning("fill_rect: box %s lies outside %dx%d image, nothing filled",
                    box.to_list(), img.width, img.height)
        return out
    out.pixels[clipped.y1:clipped.y2, clipped.x1:clipped.x2] = color.as_array()
    return out


def paste(img: RasterImage, patch: RasterImage, origin: tuple[int, int],
          clip: BBox | None = None) -> RasterImage:
    """Copy a patch with its top-left at origin, clipped to the image bounds
    (and additionally to `clip` when given)."""
    ox, oy = int(origin[0]), int(origin[1])
    out = img.copy()
    x1, y1 = max(ox, 0), max(oy, 0)
    x2, y2 = min(ox + patch.width, img.width), min(oy + patch.height, img.height)
    if clip is not None:
        x1, y1 = max(x1, clip.x1), max(y1, clip.y1)
        x2, y2 = min(x2, clip.x2), min(y2, clip.y2)
    if x1 >= x2 or y1 >= y2:
        return out
    out.pixels[y1:y2, x1:x2] = patch.pixels[y1 - oy:y2 - oy, x1 - ox:x2 - ox]
    return out


def text_layout(text: str, cell_h: int) -> tuple[int, int, int]:
    """Glyph metrics at a given cell height: (glyph_w, spacing, advance).

    The 5x7 base glyph scales uniformly so its height is exactly cell_h;
    widths round half-up from the 5/7 and 1/7 proportions.
    """
    glyph_w = round_half_up(GLYPH_COLS * cell_h / GLYPH_ROWS)
    spacing = round_half_up(cell_h / GLYPH_ROWS)
    return glyph_w, spacing, glyph_w + spacing


def draw_text(img: RasterImage, origin: tuple[int, int], text: str, color: Color,
              cell_h: int, clip: BBox | None = None) -> tuple[RasterImage, BBox | None]:
    """Draw monospaced text with its top-left at origin.

    Glyphs are the embedded 5x7 bitmaps scaled (nearest-neighbour) so the
    glyph height equals cell_h; one scaled column of spacing separates
    glyphs. Drawing clips silently at the image edge and at `clip`.

    Returns (new image, drawn box). The box spans the glyph cells actually
    laid out, trailing inter-glyph spacing excluded, intersected with the
    image (and `clip`); it is None when nothing could be drawn, including
    the empty-text case.
    """
    if cell_h < GLYPH_ROWS:
        raise ValueError(f"cell_h {cell_h} below the {GLYPH_ROWS}px glyph floor")
    out = img.copy()
    if not text:
        log.warning("draw_text: empty text, nothing drawn")
        return out, None
    glyph_w, _, advance = text_layout(text, cell_h)
    ox, oy = int(origin[0]), int(origin[1])
    # nearest-neighbour row/col of the 7x5 mask for each output pixel
    src_r = (np.arange(cell_h) * GLYPH_ROWS) // cell_h
    src_c = (np.arange(glyph_w) * GLYPH_COLS) // glyph_w
    rgb = color.as_array()
    lim_x1, lim_y1, lim_x2, lim_y2 = 0, 0, img.width, img.height
    if clip is not None:
        lim_x1, lim_y1 = max(lim_x1, clip.x1), max(lim_y1, clip.y1)
        lim_x2, lim_y2 = min(lim_x2, clip.x2), min(lim_y2, clip.y2)
    for i, ch in enumerate(text):
        mask = glyph_mask(ch)[src_r][:, src_c]
        gx = ox + i * advance
        x1, y1 = max(gx, lim_x1), max(oy, lim_y1)
        x2, y2 = min(gx + glyph_w, lim_x2), min(oy + cell_h, lim_y2)
        if x1 >= x2 or y1 >= y2:
            continue
        sub = mask[y1 - oy:y2 - oy, x1 - gx:x2 - gx]
        out.pixels[y1:y2, x1:x2][sub] = rgb
    layout_x2 = ox + (len(text) - 1) * advance + glyph_w
    box = clip_box(max(ox, lim_x1), max(oy, lim_y1),
                   min(layout_x2, lim_x2), min(oy + cell_h, lim_y2),
                   img.width, img.height)
    return out, box


def overlay_heatmap(img: RasterImage, values, alpha: float) -> RasterImage:
    """Blend a [0,1] heat map over an image.

    out = (1 - alpha*m) * original + alpha*m * heat(m), where heat ramps
    linearly from blue (0,0,255) at m=0 to red (255,0,0) at m=1. alpha=0 or
    an all-zero map returns the original pixels.
    """
    vals = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if vals.shape != (img.height, img.width):
        raise ValueError(f"map shape {vals.shape} does not match image "
                         f"{img.height}x{img.width}")
    if vals.min() < 0 or vals.max() > 1:
        raise ValueError("map values must lie in [0, 1]")
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    m = vals[..., None]
    heat = np.concatenate(
        [255.0 * m, np.zeros_like(m), 255.0 * (1.0 - m)], axis=2)
    out = (1.0 - alpha * m) * img.pixels.astype(np.float64) + alpha * m * heat
    return RasterImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
