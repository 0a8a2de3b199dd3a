"""Batch command-line interface.

Subcommands: augment, dedup, train, eval, detect, localize. Machine output
is JSONL on stdout (or files under --out); human-readable progress goes to
stderr. OWLEYE_LOG={error,info,debug} sets verbosity. Exit codes: 0 ok,
1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import shutil
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .augmentor import (DEFAULT_MIX, SYNTHESIZABLE, AugmentOptions, BugCategory,
                        NoCandidateError, UnsupportedCategoryError, assign_categories,
                        augment, derive_seed)
from .dedup import dedup_stream_detailed, signature_of_image
from .gradcam import LocalizationError, grad_cam, map_to_region
from .hierarchy import HierarchyError, parse_hierarchy
from .imaging import RasterImage, overlay_heatmap, resize_normalize, rotate_to_portrait
from .manifest import ManifestError, read_manifest, write_manifest
from .owlnet import (CheckpointError, ConfigError, NetworkConfig, NumericError,
                     TrainConfig, build_network, classify, evaluate, format_metric,
                     load_checkpoint, save_checkpoint, train)

log = logging.getLogger("owleye")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CATEGORY_TITLES = {
    "component_occlusion": "Component occlusion",
    "text_overlap": "Text overlap",
    "missing_image": "Missing image",
    "null_value": "NULL value",
    "blurred_screen": "Blurred screen",
}


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Everything the commands can read from a JSON config file. Any CLI
    flag with the same name wins over the file value."""

    input_dir: str | None = None
    output_dir: str | None = None
    icon_dir: str | None = None
    seed: int = 0
    jobs: int = 1
    preset: str = "paper"
    mix_occlusion: float = 0.10
    mix_text_overlap: float = 0.30
    mix_missing_image: float = 0.30
    mix_null_value: float = 0.30
    min_view_px: int = 12
    center_icon: bool = False
    force_overlap: bool = False
    dedup_threshold: float = 0.8
    epochs: int = 100
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    decay_epochs: tuple[int, ...] = (60, 85)
    frac: float = 0.5
    alpha: float = 0.5
    layer_index: int = 12

    def validate(self) -> None:
        mix = [self.mix_occlusion, self.mix_text_overlap,
               self.mix_missing_image, self.mix_null_value]
        if any(f < 0 for f in mix) or sum(mix) > 1.0 + 1e-9:
            raise UsageError(f"mix fractions must be nonnegative and sum to at most 1: {mix}")
        if not 0.0 < self.dedup_threshold <= 1.0:
            raise UsageError(f"dedup threshold must be in (0, 1]: {self.dedup_threshold}")
        if self.preset not in ("paper", "desk"):
            raise UsageError(f"preset must be paper or desk: {self.preset!r}")
        if self.jobs < 1:
            raise UsageError("jobs must be at least 1")
        if self.input_dir and self.output_dir:
            if os.path.abspath(self.input_dir) == os.path.abspath(self.output_dir):
                raise UsageError("input and output directories must differ")
        if not 0.0 < self.frac < 1.0:
            raise UsageError(f"frac must be in (0, 1): {self.frac}")
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError(f"alpha must be in [0, 1]: {self.alpha}")

    def mix(self) -> dict[BugCategory, float]:
        return {BugCategory.COMPONENT_OCCLUSION: self.mix_occlusion,
                BugCategory.TEXT_OVERLAP: self.mix_text_overlap,
                BugCategory.MISSING_IMAGE: self.mix_missing_image,
                BugCategory.NULL_VALUE: self.mix_null_value}

    def augment_options(self) -> AugmentOptions:
        return AugmentOptions(min_view_px=self.min_view_px,
                              center_icon=self.center_icon,
                              force_overlap=self.force_overlap)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, momentum=self.momentum,
                           decay_epochs=tuple(self.decay_epochs), seed=self.seed)


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config document must be a JSON object")
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **{k: tuple(v) if isinstance(v, list) else v
                              for k, v in doc.items()})
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _setup_logging() -> None:
    level_name = os.environ.get("OWLEYE_LOG", "info").lower()
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(level_name, logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("owleye").setLevel(level)


def _discover_pairs(input_dir: str) -> list[tuple[str, str, str]]:
    """(source_id, image path, json path) for matched basename pairs."""
    try:
        names = sorted(os.listdir(input_dir))
    except OSError as exc:
        raise DataError(f"cannot list input dir {input_dir}: {exc}") from exc
    images = {}
    jsons = {}
    for name in names:
        stem, ext = os.path.splitext(name)
        ext = ext.lower()
        if ext in (".png", ".jpg", ".jpeg"):
            images.setdefault(stem, os.path.join(input_dir, name))
        elif ext == ".json":
            jsons[stem] = os.path.join(input_dir, name)
    pairs = []
    for stem in sorted(images):
        if stem in jsons:
            pairs.append((stem, images[stem], jsons[stem]))
        else:
            log.warning("augment: %s has no matching hierarchy json, skipped", stem)
    for stem in sorted(set(jsons) - set(images)):
        log.warning("augment: %s has no matching screenshot, skipped", stem)
    return pairs


def _load_icons(icon_dir: str | None) -> list[RasterImage] | None:
    if not icon_dir:
        return None
    icons = []
    for name in sorted(os.listdir(icon_dir)):
        if os.path.splitext(name)[1].lower() in (".png", ".jpg", ".jpeg"):
            icons.append(RasterImage.load(os.path.join(icon_dir, name)))
    if not icons:
        raise DataError(f"icon dir {icon_dir} contains no readable images")
    return icons


def _augment_one(task) -> tuple[str, dict | None, str | None]:
    """Worker: synthesize one buggy screenshot. Returns (source_id, row, skip_reason)."""
    (sid, img_path, json_path, category_value, seed, out_dir,
     opts, icons) = task
    img = RasterImage.load(img_path)
    try:
        with open(json_path, "r", encoding="utf-8") as fh:
            tree = parse_hierarchy(fh.read())
    except HierarchyError as exc:
        return sid, None, f"bad hierarchy: {exc}"
    categories = [BugCategory(category_value)] if category_value else []
    categories += [c for c in SYNTHESIZABLE if c.value != category_value]
    icon = None
    if icons:
        pick = np.random.Generator(np.random.PCG64(derive_seed(seed, "icon")))
        icon = icons[int(pick.integers(len(icons)))]
    last_reason = "no category assigned"
    for cat in categories:
        try:
            buggy, record = augment(img, tree, cat, icon=icon, seed=seed,
                                    source_id=sid, options=opts)
        except NoCandidateError as exc:
            last_reason = str(exc)
            continue
        rel = os.path.join("augmented", f"{sid}__{cat.value}.png")
        buggy.save_png(os.path.join(out_dir, rel))
        row = {"path": rel, "source_id": sid, "label": "buggy",
               "category": cat.value, "bug_region": record.bug_region.to_list(),
               "seed": seed}
        return sid, row, None
    return sid, None, last_reason


def cmd_augment(cfg: PipelineConfig) -> int:
    if not cfg.input_dir or not cfg.output_dir:
        raise UsageError("augment needs --in and --out directories")
    pairs = _discover_pairs(cfg.input_dir)
    os.makedirs(os.path.join(cfg.output_dir, "augmented"), exist_ok=True)
    os.makedirs(os.path.join(cfg.output_dir, "clean"), exist_ok=True)
    icons = _load_icons(cfg.icon_dir)
    assignment = assign_categories([sid for sid, _, _ in pairs], cfg.mix(), cfg.seed)
    opts = cfg.augment_options()
    tasks = [(sid, img_path, json_path,
              assignment[sid].value if assignment[sid] else None,
              derive_seed(cfg.seed, sid), cfg.output_dir, opts, icons)
             for sid, img_path, json_path in pairs]
    if cfg.jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(cfg.jobs) as pool:
            results = pool.map(_augment_one, tasks)
    else:
        results = [_augment_one(t) for t in tasks]

    rows = []
    skipped = 0
    for sid, row, reason in results:
        if row is None:
            skipped += 1
            log.warning("augment: %s skipped (%s)", sid, reason)
        else:
            rows.append(row)
    for sid, img_path, _ in pairs:
        rel = os.path.join("clean", f"{sid}.png")
        dst = os.path.join(cfg.output_dir, rel)
        if os.path.splitext(img_path)[1].lower() == ".png":
            shutil.copyfile(img_path, dst)
        else:
            RasterImage.load(img_path).save_png(dst)
        rows.append({"path": rel, "source_id": sid, "label": "clean",
                     "category": None, "bug_region": None, "seed": None})
    write_manifest(os.path.join(cfg.output_dir, "manifest.jsonl"), rows)
    n_buggy = sum(1 for r in rows if r["label"] == "buggy")
    log.info("augment: %d sources -> %d buggy + %d clean rows (%d skipped)",
             len(pairs), n_buggy, len(pairs), skipped)
    return EXIT_OK


def cmd_dedup(cfg: PipelineConfig, manifest_path: str, out_path: str | None) -> int:
    rows = read_manifest(manifest_path)
    if cfg.jobs > 1 and len(rows) > 1:
        with multiprocessing.Pool(cfg.jobs) as pool:
            sigs = pool.map(_signature_for_row, [r["_abs_path"] for r in rows])
    else:
        sigs = [_signature_for_row(r["_abs_path"]) for r in rows]
    kept, decisions = dedup_stream_detailed(sigs, cfg.dedup_threshold, cfg.seed)
    kept_set = set(kept)
    for row, decision in zip(rows, decisions):
        report = {"path": row["path"], "kept": decision.kept,
                  "max_sim": round(decision.max_sim, 6),
                  "nearest": rows[decision.nearest]["path"]
                  if decision.nearest is not None else None}
        sys.stdout.write(json.dumps(report) + "\n")
    if out_path:
        write_manifest(out_path, [rows[i] for i in kept])

    def balance(indices) -> dict:
        counts: dict[str, int] = {}
        for i in indices:
            label = rows[i].get("label") or "unlabeled"
            counts[label] = counts.get(label, 0) + 1
        return counts

    log.info("dedup: kept %d of %d (before %s, after %s)", len(kept), len(rows),
             balance(range(len(rows))), balance(kept))
    return EXIT_OK


def _signature_for_row(path: str):
    return signature_of_image(RasterImage.load(path))


def cmd_train(cfg: PipelineConfig, train_path: str, val_path: str,
              ckpt_path: str) -> int:
    train_rows = read_manifest(train_path)
    val_rows = read_manifest(val_path)
    net = build_network(NetworkConfig.from_preset(cfg.preset), seed=cfg.seed)
    net, history = train(net, train_rows, val_rows, cfg.train_config())
    best = max((h["val_f1"] or -1.0) for h in history) if history else None
    save_checkpoint(net, ckpt_path, epoch=len(history),
                    metrics={"best_val_f1": best,
                             "final_loss": history[-1]["loss"] if history else None})
    for h in history:
        log.debug("epoch %3d loss %.4f val_f1 %s lr %g", h["epoch"], h["loss"],
                  format_metric(h["val_f1"]), h["lr"])
    log.info("train: %d epochs, best val F1 %s, checkpoint %s",
             len(history), format_metric(best if best != -1.0 else None), ckpt_path)
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, ckpt_path: str, manifest_path: str) -> int:
    net, _ = load_checkpoint(ckpt_path)
    rows = read_manifest(manifest_path)
    report = evaluate(net, rows)
    lines = [("Overall", report.precision, report.recall, report.f1)]
    for cat, m in report.per_category.items():
        lines.append((CATEGORY_TITLES.get(cat, cat), m.precision, m.recall, m.f1))
    name_w = max(len(name) for name, *_ in lines)
    print(f"{'':<{name_w}}  Precision  Recall  F1", file=sys.stderr)
    for name, p, r, f1 in lines:
        print(f"{name:<{name_w}}  {format_metric(p):>9}  {format_metric(r):>6}"
              f"  {format_metric(f1):>5}", file=sys.stderr)
    payload = {"tp": report.tp, "fp": report.fp, "fn": report.fn, "tn": report.tn,
               "precision": report.precision, "recall": report.recall,
               "f1": report.f1,
               "per_category": {cat: {"n": m.n, "tp": m.tp, "precision": m.precision,
                                      "recall": m.recall, "f1": m.f1}
                                for cat, m in report.per_category.items()}}
    sys.stdout.write(json.dumps(payload) + "\n")
    return EXIT_OK


def _image_files(directory: str) -> list[str]:
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise DataError(f"cannot list {directory}: {exc}") from exc
    return [os.path.join(directory, n) for n in names
            if os.path.splitext(n)[1].lower() in (".png", ".jpg", ".jpeg")]


def cmd_detect(cfg: PipelineConfig, ckpt_path: str, directory: str) -> int:
    net, _ = load_checkpoint(ckpt_path)
    for path in _image_files(directory):
        try:
            img = RasterImage.load(path)
        except OSError as exc:
            log.warning("detect: %s unreadable, skipped (%s)", path, exc)
            continue
        det = classify(net, img)
        sys.stdout.write(json.dumps({"path": path, "label": det.label,
                                     "p_buggy": det.p_buggy}) + "\n")
    return EXIT_OK


def cmd_localize(cfg: PipelineConfig, ckpt_path: str, directory: str,
                 out_dir: str) -> int:
    net, _ = load_checkpoint(ckpt_path)
    os.makedirs(out_dir, exist_ok=True)
    for path in _image_files(directory):
        try:
            img = RasterImage.load(path)
        except OSError as exc:
            log.warning("localize: %s unreadable, skipped (%s)", path, exc)
            continue
        det = classify(net, img)
        lmap = grad_cam(net, img, target_class="buggy",
                        layer_index=cfg.layer_index)
        try:
            region = map_to_region(lmap, cfg.frac).to_list()
        except LocalizationError:
            region = None
        base = resize_normalize(rotate_to_portrait(img), net.cfg.input_h,
                                net.cfg.input_w)
        heat = overlay_heatmap(base, lmap.values, cfg.alpha)
        stem = os.path.splitext(os.path.basename(path))[0]
        heat.save_png(os.path.join(out_dir, f"{stem}_heat.png"))
        sys.stdout.write(json.dumps({"path": path, "p_buggy": det.p_buggy,
                                     "region": region,
                                     "argmax": list(lmap.argmax())}) + "\n")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="owleye",
                     description="Synthesize, deduplicate, detect and localize "
                                 "UI display issues in app screenshots.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--preset", choices=("paper", "desk"), default=None)

    p = sub.add_parser("augment", help="synthesize labeled buggy screenshots")
    common(p)
    p.add_argument("--in", dest="input_dir", default=None,
                   help="directory of (png, json) screenshot/hierarchy pairs")
    p.add_argument("--out", dest="output_dir", default=None)
    p.add_argument("--icons", dest="icon_dir", default=None)
    p.add_argument("--mix-occlusion", type=float, default=None)
    p.add_argument("--mix-text-overlap", type=float, default=None)
    p.add_argument("--mix-missing-image", type=float, default=None)
    p.add_argument("--mix-null-value", type=float, default=None)
    p.add_argument("--min-view-px", type=int, default=None)
    p.add_argument("--center-icon", action="store_true", default=None)
    p.add_argument("--force-overlap", action="store_true", default=None)

    p = sub.add_parser("dedup", help="drop near-duplicate screenshots from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", dest="out_path", default=None,
                   help="write the filtered manifest here")
    p.add_argument("--threshold", dest="dedup_threshold", type=float, default=None)

    p = sub.add_parser("train", help="train the detector on augmented manifests")
    common(p)
    p.add_argument("--train", dest="train_path", required=True)
    p.add_argument("--val", dest="val_path", required=True)
    p.add_argument("--out", dest="ckpt_path", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)

    p = sub.add_parser("eval", help="score a checkpoint against a labeled manifest")
    common(p)
    p.add_argument("--ckpt", dest="ckpt_path", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("detect", help="classify every screenshot in a directory")
    common(p)
    p.add_argument("--ckpt", dest="ckpt_path", required=True)
    p.add_argument("--dir", dest="directory", required=True)

    p = sub.add_parser("localize", help="write defect heat maps for a directory")
    common(p)
    p.add_argument("--ckpt", dest="ckpt_path", required=True)
    p.add_argument("--dir", dest="directory", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--frac", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)

    return parser


_CONFIG_KEYS = {f.name for f in fields(PipelineConfig)}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
        cfg = load_config(args.config, overrides)
        if args.command == "augment":
            return cmd_augment(cfg)
        if args.command == "dedup":
            return cmd_dedup(cfg, args.manifest, args.out_path)
        if args.command == "train":
            return cmd_train(cfg, args.train_path, args.val_path, args.ckpt_path)
        if args.command == "eval":
            return cmd_eval(cfg, args.ckpt_path, args.manifest)
        if args.command == "detect":
            return cmd_detect(cfg, args.ckpt_path, args.directory)
        if args.command == "localize":
            return cmd_localize(cfg, args.ckpt_path, args.directory, args.out_dir)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, ManifestError, HierarchyError, CheckpointError,
            UnsupportedCategoryError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s (epoch=%s batch=%s)", exc, exc.epoch, exc.batch)
        for name, norm in sorted(exc.layer_norms.items()):
            log.debug("  |%s| = %g", name, norm)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
