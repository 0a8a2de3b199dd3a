"""Shared fixtures: a deterministic synthetic corpus of app screens.

Each synthetic screen is a portrait 256x384 raster with a header bar,
a few text rows, and one or two image panels, plus a matching
Rico-style hierarchy document. Content is a pure function of the app
and variant numbers so tests can regenerate identical inputs.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from owleye.imaging import BBox, Color, RasterImage, draw_text, fill_rect, paste

SCREEN_W = 256
SCREEN_H = 384

_PALETTE = [
    Color(52, 94, 170), Color(160, 60, 60), Color(50, 130, 90),
    Color(120, 80, 160), Color(180, 120, 40), Color(40, 110, 140),
]

_WORDS = ["Alarm", "Backup", "Charge", "Device", "Events", "Filter",
          "Gallery", "History", "Inbox", "Journal", "Keypad", "Layout",
          "Monitor", "Network", "Options", "Profile"]


def _node(cls: str, bounds, text=None, children=None) -> dict:
    node = {"class": cls, "bounds": list(bounds), "visibility": "visible",
            "visible-to-user": True, "children": children or []}
    if text is not None:
        node["text"] = text
    return node


def make_screen(app: int, variant: int) -> tuple[RasterImage, str, str]:
    """Build one synthetic screen. Returns (image, hierarchy json, source_id)."""
    rng = np.random.default_rng(70_000 + app * 17 + variant)
    accent = _PALETTE[app % len(_PALETTE)]
    bg_val = 244 - (app % 3) * 6
    img = RasterImage.filled(SCREEN_W, SCREEN_H, Color(bg_val, bg_val, bg_val))
    children = []

    header = BBox(0, 0, SCREEN_W, 44)
    img = fill_rect(img, header, accent)
    title = _WORDS[app % len(_WORDS)] + f" {variant}"
    img, tbox = draw_text(img, (12, 12), title, Color(255, 255, 255), 20)
    children.append(_node("android.widget.TextView", tbox.to_list(), text=title))

    y = 62
    n_rows = 3 + int(rng.integers(0, 2))
    for row in range(n_rows):
        word = _WORDS[int(rng.integers(len(_WORDS)))]
        text = f"{word} {int(rng.integers(10, 99))}"
        shade = int(rng.integers(20, 70))
        img, box = draw_text(img, (16, y), text, Color(shade, shade, shade), 18)
        children.append(_node("android.widget.TextView", box.to_list(), text=text))
        y = box.y2 + 14

    panel_w = 96 + int(rng.integers(0, 64))
    panel_h = 84 + int(rng.integers(0, 48))
    px = 16 + int(rng.integers(0, SCREEN_W - panel_w - 32))
    py = y + 8
    panel = BBox(px, py, px + panel_w, py + panel_h)
    img = _paint_panel(img, panel, rng, accent)
    children.append(_node("android.widget.ImageView", panel.to_list()))

    if py + panel_h + 96 < SCREEN_H - 20 and rng.integers(2):
        p2h = 72
        p2 = BBox(24, py + panel_h + 16, 24 + 120, py + panel_h + 16 + p2h)
        img = _paint_panel(img, p2, rng, accent)
        children.append(_node("android.widget.ImageView", p2.to_list()))

    root = _node("android.widget.FrameLayout", [0, 0, SCREEN_W, SCREEN_H],
                 children=children)
    doc = {"activity": {"root": root}}
    return img, json.dumps(doc), f"app{app:03d}_s{variant}"


def _paint_panel(img: RasterImage, box: BBox, rng, accent: Color) -> RasterImage:
    """Busy photo-like content so a flat background fill is conspicuous."""
    kind = int(rng.integers(3))
    if kind == 0:
        h, w = box.height, box.width
        gx = np.linspace(60, 220, w, dtype=np.float64)
        gy = np.linspace(0, 35, h, dtype=np.float64)
        tile = np.zeros((h, w, 3), np.uint8)
        tile[..., 0] = np.clip(gx[None, :] + gy[:, None], 0, 255)
        tile[..., 1] = np.clip(gx[::-1][None, :], 0, 255)
        tile[..., 2] = accent.b
        return paste(img, RasterImage(tile), (box.x1, box.y1))
    if kind == 1:
        out = fill_rect(img, box, Color(accent.r // 2, accent.g // 2, accent.b // 2))
        step = 16
        for i, yy in enumerate(range(box.y1, box.y2, step)):
            for j, xx in enumerate(range(box.x1, box.x2, step)):
                if (i + j) % 2 == 0:
                    out = fill_rect(out, BBox(xx, yy, min(xx + step, box.x2),
                                              min(yy + step, box.y2)),
                                    Color(235, 225, 150))
        return out
    out = fill_rect(img, box, Color(70, 90, 110))
    for _ in range(6):
        cx = box.x1 + int(rng.integers(4, max(5, box.width - 16)))
        cy = box.y1 + int(rng.integers(4, max(5, box.height - 16)))
        side = int(rng.integers(8, 20))
        blob = BBox(cx, cy, min(cx + side, box.x2), min(cy + side, box.y2))
        if blob.x2 > blob.x1 and blob.y2 > blob.y1:
            out = fill_rect(out, blob, Color(int(rng.integers(140, 255)),
                                             int(rng.integers(140, 255)),
                                             int(rng.integers(60, 200))))
    return out


@pytest.fixture(scope="session")
def screen_factory():
    return make_screen


@pytest.fixture()
def sample_screen():
    img, doc, sid = make_screen(1, 0)
    return img, doc, sid


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """20 training-app sources + 10 held-out-app sources on disk."""
    root = tmp_path_factory.mktemp("corpus")
    for app in range(10):
        for variant in range(2):
            img, doc, sid = make_screen(app, variant)
            img.save_png(str(root / f"{sid}.png"))
            (root / f"{sid}.json").write_text(doc, encoding="utf-8")
    for app in range(100, 105):
        for variant in range(2):
            img, doc, sid = make_screen(app, variant)
            img.save_png(str(root / f"{sid}.png"))
            (root / f"{sid}.json").write_text(doc, encoding="utf-8")
    return root
