"""JSONL corpus manifests shared by the augment, dedup, train and eval stages.

Rows carry at least {"path", "source_id", "label"}; buggy rows add
"category", "bug_region" and "seed". Paths are stored relative to the
manifest file so a corpus directory can be moved or compared byte-for-byte;
readers get an extra "_abs_path" key with the resolved location.
"""

from __future__ import annotations

import json
import os

ROW_KEYS = ("path", "source_id", "label", "category", "bug_region", "seed")
LABELS = ("clean", "buggy")


class ManifestError(ValueError):
    pass


def write_manifest(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            ordered = {k: row[k] for k in ROW_KEYS if k in row}
            ordered.update({k: v for k, v in row.items()
                            if k not in ROW_KEYS and not k.startswith("_")})
            fh.write(json.dumps(ordered) + "\n")


def read_manifest(path) -> list[dict]:
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(row, dict) or "path" not in row:
                raise ManifestError(f"{path}:{lineno}: row must be an object with a path")
            label = row.get("label")
            if label is not None and label not in LABELS:
                raise ManifestError(f"{path}:{lineno}: unknown label {label!r}")
            row["_abs_path"] = os.path.normpath(os.path.join(base, row["path"]))
            rows.append(row)
    return rows


def app_id(source_id: str) -> str:
    """App prefix of a source id: the part before the last underscore
    ("app003_s1" -> "app003"); ids without an underscore are their own app."""
    head, _, _ = source_id.rpartition("_")
    return head or source_id
