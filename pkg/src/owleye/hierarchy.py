"""Parsing of app view-hierarchy JSON dumps (Rico-style layout captures).

A document is a JSON object wrapping an activity hierarchy; each node may
carry "class", "bounds" ([x1, y1, x2, y2]), "text", "visibility" or
"visible-to-user", and "children". Screen dimensions come from the root
node's bounds. Nodes with malformed bounds are kept in the tree but flagged
not visible so they never become augmentation candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imaging import BBox, Color, RasterImage

WANTED_CLASSES = ("TextView", "ImageView")


class HierarchyError(ValueError):
    """Unusable hierarchy document. `offset` is a byte position for syntax
    errors, None for schema problems."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


@dataclass
class ViewNode:
    class_name: str
    bounds: tuple[int, int, int, int]
    text: str | None
    visible: bool
    children: list["ViewNode"] = field(default_factory=list)

    def bounds_well_formed(self) -> bool:
        x1, y1, x2, y2 = self.bounds
        return x1 < x2 and y1 < y2

    @property
    def width(self) -> int:
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self) -> int:
        return self.bounds[3] - self.bounds[1]


@dataclass
class ViewTree:
    root: ViewNode
    screen_w: int
    screen_h: int


def _parse_bounds(raw) -> tuple[tuple[int, int, int, int], bool]:
    """Returns (bounds, ok). Malformed input yields ((0,0,0,0), False)."""
    if (isinstance(raw, (list, tuple)) and len(raw) == 4
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)):
        b = tuple(int(v) for v in raw)
        return b, b[0] < b[2] and b[1] < b[3]
    return (0, 0, 0, 0), False


def _parse_node(obj) -> ViewNode:
    if not isinstance(obj, dict):
        raise HierarchyError(f"node is not an object: {type(obj).__name__}")
    bounds, ok = _parse_bounds(obj.get("bounds"))
    visible = ok
    if "visibility" in obj:
        visible = visible and obj["visibility"] == "visible"
    if "visible-to-user" in obj:
        visible = visible and bool(obj["visible-to-user"])
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        text = str(text)
    children = obj.get("children") or []
    if not isinstance(children, list):
        raise HierarchyError("children must be a list")
    kids = [_parse_node(c) for c in children if c is not None]
    return ViewNode(class_name=str(obj.get("class") or ""), bounds=bounds,
                    text=text, visible=visible, children=kids)


def parse_hierarchy(document: str) -> ViewTree:
    """Parse a JSON hierarchy document into a ViewTree.

    Raises HierarchyError with a byte offset on malformed JSON, and without
    one when the document has no recognizable root node or degenerate
    screen bounds.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise HierarchyError(f"invalid JSON at byte {exc.pos}: {exc.msg}",
                             offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise HierarchyError("document root is not an object")
    node_obj = None
    activity = doc.get("activity")
    if isinstance(activity, dict) and isinstance(activity.get("root"), dict):
        node_obj = activity["root"]
    elif isinstance(doc.get("root"), dict):
        node_obj = doc["root"]
    elif any(k in doc for k in ("class", "bounds", "children")):
        node_obj = doc
    if node_obj is None:
        raise HierarchyError("no root node found in document")
    root = _parse_node(node_obj)
    x1, y1, x2, y2 = root.bounds
    if not root.bounds_well_formed():
        raise HierarchyError(f"root bounds {list(root.bounds)} are degenerate")
    return ViewTree(root=root, screen_w=x2 - x1, screen_h=y2 - y1)


def _node_to_obj(node: ViewNode) -> dict:
    obj: dict = {"class": node.class_name, "bounds": list(node.bounds)}
    if node.text is not None:
        obj["text"] = node.text
    obj["visible-to-user"] = node.visible
    if node.children:
        obj["children"] = [_node_to_obj(c) for c in node.children]
    return obj


def serialize_hierarchy(tree: ViewTree) -> str:
    """Inverse of parse_hierarchy on the retained fields."""
    return json.dumps({"activity": {"root": _node_to_obj(tree.root)}})


def collect_views(tree: ViewTree, wanted: str) -> list[ViewNode]:
    """Depth-first (pre-order) list of visible wanted-class views.

    `wanted` is "TextView" or "ImageView"; a node matches when its class
    name ends with that suffix. Matches must have well-formed bounds lying
    fully inside the root's screen rectangle; TextViews additionally need
    non-blank text.
    """
    if wanted not in WANTED_CLASSES:
        raise ValueError(f"wanted must be one of {WANTED_CLASSES}, got {wanted!r}")
    sx1, sy1, sx2, sy2 = tree.root.bounds
    found: list[ViewNode] = []

    def visit(node: ViewNode) -> None:
        if node.visible and node.class_name.endswith(wanted) and node.bounds_well_formed():
            x1, y1, x2, y2 = node.bounds
            inside = sx1 <= x1 and sy1 <= y1 and x2 <= sx2 and y2 <= sy2
            if inside and (wanted != "TextView"
                           or (node.text is not None and node.text.strip())):
                found.append(node)
        for child in node.children:
            visit(child)

    visit(tree.root)
    return found


def sample_background_color(img: RasterImage, box: BBox) -> Color:
    """Modal color of the 1px perimeter of box (clipped to the image).

    Ties break toward the lowest packed RGB value. Raises ValueError when
    the box lies outside the image.
    """
    clipped = box.clip(img.width, img.height)
    if clipped is None:
        raise ValueError(f"box {box.to_list()} lies outside the image")
    px = img.pixels
    parts = [px[clipped.y1, clipped.x1:clipped.x2],
             px[clipped.y2 - 1, clipped.x1:clipped.x2]]
    if clipped.height > 2:
        parts.append(px[clipped.y1 + 1:clipped.y2 - 1, clipped.x1])
        parts.append(px[clipped.y1 + 1:clipped.y2 - 1, clipped.x2 - 1])
    perimeter = np.concatenate([p.reshape(-1, 3).astype(np.int64) for p in parts])
    packed = (perimeter[:, 0] << 16) | (perimeter[:, 1] << 8) | perimeter[:, 2]
    values, counts = np.unique(packed, return_counts=True)
    # np.unique sorts ascending, argmax takes the first max: lowest packed wins ties
    best = int(values[np.argmax(counts)])
    return Color((best >> 16) & 0xFF, (best >> 8) & 0xFF, best & 0xFF)
