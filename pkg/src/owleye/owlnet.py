"""The screenshot-defect classifier: network assembly, preprocessing,
training, evaluation, and the OWLNET01 checkpoint format.

The architecture is fixed in shape (12 conv+batchnorm+relu blocks with six
interleaved 2x2 max pools, then four fully connected layers ending in two
classes) and scalable in width via presets: "paper" runs 768x448 inputs,
"desk" is a narrow 192x128 variant that trains in minutes on a CPU.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import nncore
from .imaging import RasterImage, resize_normalize, rotate_to_portrait
from .manifest import ManifestError, app_id
from .nncore import (BatchNorm, Conv2D, Dense, Flatten, Layer, MaxPool2x2,
                     ReLU, SGD, softmax, softmax_cross_entropy)

LABELS = ("clean", "buggy")
BUGGY = 1
CHECKPOINT_MAGIC = b"OWLNET01"

N_CONV = 12
N_POOL = 6
N_FC = 4


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    """Training hit a non-finite value; carries where it happened."""

    def __init__(self, message: str, epoch: int | None = None,
                 batch: int | None = None, layer_norms: dict | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer_norms = layer_norms or {}


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    """Width/size parameters of the fixed-topology detector."""

    input_h: int
    input_w: int
    conv_channels: tuple[int, ...]
    pool_after: tuple[int, ...]  # 1-indexed conv positions followed by a pool
    fc_sizes: tuple[int, ...]
    bn_momentum: float = 0.1
    preset: str | None = None

    @classmethod
    def paper(cls) -> "NetworkConfig":
        return cls(input_h=768, input_w=448,
                   conv_channels=(16, 16, 16, 16, 32, 32, 64, 64, 128, 128, 128, 128),
                   pool_after=(2, 4, 6, 8, 10, 12),
                   fc_sizes=(4096, 1024, 128, 2), preset="paper")

    @classmethod
    def desk(cls) -> "NetworkConfig":
        return cls(input_h=192, input_w=128,
                   conv_channels=(4, 4, 4, 4, 8, 8, 16, 16, 32, 32, 32, 32),
                   pool_after=(2, 4, 6, 8, 10, 12),
                   fc_sizes=(256, 64, 32, 2), preset="desk")

    @classmethod
    def from_preset(cls, name: str) -> "NetworkConfig":
        try:
            return {"paper": cls.paper, "desk": cls.desk}[name]()
        except KeyError:
            raise ConfigError(f"unknown preset {name!r} (expected paper or desk)") from None

    def validate(self) -> None:
        if len(self.conv_channels) != N_CONV:
            raise ConfigError(f"need {N_CONV} conv channel counts, got {len(self.conv_channels)}")
        if len(self.fc_sizes) != N_FC:
            raise ConfigError(f"need {N_FC} fc widths, got {len(self.fc_sizes)}")
        if self.fc_sizes[-1] != 2:
            raise ConfigError("final fc width must be 2 (clean/buggy)")
        pools = tuple(sorted(self.pool_after))
        if len(pools) != N_POOL or len(set(pools)) != N_POOL:
            raise ConfigError(f"need {N_POOL} distinct pool positions, got {self.pool_after}")
        if any(not 1 <= p <= N_CONV for p in pools):
            raise ConfigError(f"pool positions must be within 1..{N_CONV}")
        if min(self.conv_channels) < 1 or min(self.fc_sizes) < 1:
            raise ConfigError("channel and fc widths must be positive")
        if self.input_h < 1 or self.input_w < 1:
            raise ConfigError("input dims must be positive")
        self.shape_chain()  # raises on odd dims at a pool

    def shape_chain(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-stage output shapes, (C, H, W) through the conv stack then
        flat widths; validates pool placement."""
        h, w = self.input_h, self.input_w
        chain: list[tuple[str, tuple[int, ...]]] = [("input", (3, h, w))]
        pools = set(self.pool_after)
        for i, c in enumerate(self.conv_channels, start=1):
            chain.append((f"conv{i}", (c, h, w)))
            if i in pools:
                if h % 2 or w % 2:
                    raise ConfigError(
                        f"pool after conv{i} needs even dims, got {h}x{w}")
                h, w = h // 2, w // 2
                chain.append((f"pool@conv{i}", (c, h, w)))
        feats = self.conv_channels[-1] * h * w
        chain.append(("flatten", (feats,)))
        for j, width in enumerate(self.fc_sizes, start=1):
            chain.append((f"fc{j}", (width,)))
        return chain

    def feature_count(self) -> int:
        return self.shape_chain()[-(N_FC + 1)][1][0]

    def to_dict(self) -> dict:
        return {"input_h": self.input_h, "input_w": self.input_w,
                "conv_channels": list(self.conv_channels),
                "pool_after": list(self.pool_after),
                "fc_sizes": list(self.fc_sizes),
                "bn_momentum": self.bn_momentum, "preset": self.preset}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        try:
            return cls(input_h=int(d["input_h"]), input_w=int(d["input_w"]),
                       conv_channels=tuple(d["conv_channels"]),
                       pool_after=tuple(d["pool_after"]),
                       fc_sizes=tuple(d["fc_sizes"]),
                       bn_momentum=float(d.get("bn_momentum", 0.1)),
                       preset=d.get("preset"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad network config: {exc}") from exc


class Network:
    """The assembled detector. Carries the per-channel input statistics so
    a checkpoint is self-contained."""

    def __init__(self, cfg: NetworkConfig, layers: list[Layer], dtype=np.float32):
        self.cfg = cfg
        self.layers = layers
        self.dtype = dtype
        self.channel_mean = np.zeros(3, dtype=np.float64)
        self.channel_std = np.ones(3, dtype=np.float64)
        # index of the post-relu activation of each conv block, for localization
        self.block_relu_index = {}
        block = 0
        for i, layer in enumerate(layers):
            if isinstance(layer, Conv2D):
                block += 1
            if isinstance(layer, ReLU) and block and (block not in self.block_relu_index):
                if isinstance(layers[i - 1], BatchNorm):
                    self.block_relu_index[block] = i

    def forward(self, x: np.ndarray, training: bool = False,
                keep_outputs: bool = False) -> np.ndarray:
        outputs = [] if keep_outputs else None
        for layer in self.layers:
            x = layer.forward(x, training=training)
            if keep_outputs:
                outputs.append(x)
        self.layer_outputs = outputs
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def backward_to(self, grad: np.ndarray, stop_index: int) -> np.ndarray:
        """Backpropagate through layers above stop_index; the return value
        is the gradient with respect to layers[stop_index]'s output."""
        for layer in reversed(self.layers[stop_index + 1:]):
            grad = layer.backward(grad)
        return grad

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k, v in layer.params().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k, v in layer.grads().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus batchnorm running stats, checkpoint-ordered."""
        out = dict(self.params())
        for layer in self.layers:
            for k, v in layer.buffers().items():
                out[f"{layer.name}.{k}"] = v
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = self.state()
        missing = set(mine) - set(state)
        extra = set(state) - set(mine)
        if missing or extra:
            raise CheckpointError(f"state mismatch: missing {sorted(missing)}, "
                                  f"unexpected {sorted(extra)}")
        for k, v in state.items():
            if mine[k].shape != v.shape:
                raise CheckpointError(f"shape mismatch for {k}: "
                                      f"{mine[k].shape} vs {v.shape}")
            mine[k][...] = v.astype(mine[k].dtype)


def build_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Assemble a freshly initialized detector for a validated config."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    pools = set(cfg.pool_after)
    c_prev = 3
    n_pool = 0
    for i, c in enumerate(cfg.conv_channels, start=1):
        layers.append(Conv2D(c_prev, c, rng, dtype=dtype, name=f"conv{i}"))
        layers.append(BatchNorm(c, momentum=cfg.bn_momentum, dtype=dtype, name=f"bn{i}"))
        layers.append(ReLU(name=f"relu{i}"))
        if i in pools:
            n_pool += 1
            layers.append(MaxPool2x2(name=f"pool{n_pool}"))
        c_prev = c
    layers.append(Flatten())
    d_prev = cfg.feature_count()
    for j, width in enumerate(cfg.fc_sizes, start=1):
        fc = Dense(d_prev, width, rng, dtype=dtype, name=f"fc{j}")
        if j == len(cfg.fc_sizes):
            # Shrink the classifier head so initial logits sit near zero and
            # the starting loss lands at ln(2) for balanced batches.
            fc.w *= 0.01
        layers.append(fc)
        if j < len(cfg.fc_sizes):
            layers.append(ReLU(name=f"fcrelu{j}"))
        d_prev = width
    return Network(cfg, layers, dtype=dtype)


def preprocess(img: RasterImage, cfg: NetworkConfig,
               mean: np.ndarray | None = None,
               std: np.ndarray | None = None) -> np.ndarray:
    """Screenshot -> (3, H, W) float32 network input.

    Rotates landscape captures to portrait, stretches to the configured
    input size, scales to [0, 1], then standardizes per channel. Without
    explicit statistics the standardization is the identity (mean 0, std 1).
    """
    mean = np.zeros(3) if mean is None else np.asarray(mean, dtype=np.float64)
    std = np.ones(3) if std is None else np.asarray(std, dtype=np.float64)
    resized = resize_normalize(rotate_to_portrait(img), cfg.input_h, cfg.input_w)
    x = resized.pixels.astype(np.float32) / 255.0
    x = x.transpose(2, 0, 1)
    return ((x - mean[:, None, None]) / std[:, None, None]).astype(np.float32)


@dataclass
class Detection:
    label: str
    p_buggy: float


def classify(net: Network, img: RasterImage) -> Detection:
    """Run one screenshot through the detector. Buggy at p >= 0.5."""
    x = preprocess(img, net.cfg, net.channel_mean, net.channel_std).astype(net.dtype)
    logits = net.forward(x[None], training=False)
    p = float(softmax(logits.astype(np.float64))[0, BUGGY])
    return Detection(LABELS[BUGGY] if p >= 0.5 else LABELS[0], p)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    decay_epochs: tuple[int, ...] = (60, 85)
    decay_factor: float = 0.1
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        drops = sum(1 for d in self.decay_epochs if epoch >= d)
        return self.lr * (self.decay_factor ** drops)


def _row_image(row: dict) -> RasterImage:
    if "image" in row:
        return row["image"]
    path = row.get("_abs_path", row.get("path"))
    return RasterImage.load(path)


def _row_label(row: dict) -> int:
    label = row.get("label")
    if label not in LABELS:
        raise ManifestError(f"row for {row.get('path')} lacks a clean/buggy label")
    return LABELS.index(label)


def load_dataset(rows: list[dict], cfg: NetworkConfig
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Rows -> (X, y): unstandardized [0,1] input tensors and labels."""
    xs, ys = [], []
    for row in rows:
        img = _row_image(row)
        xs.append(preprocess(img, cfg))  # identity standardization
        ys.append(_row_label(row))
    return np.stack(xs), np.array(ys, dtype=np.intp)


def check_split_disjoint(train_rows: list[dict], val_rows: list[dict]) -> None:
    """Refuse train/val manifests that share an app prefix: screenshots of
    one app must never straddle the split."""
    train_apps = {app_id(r.get("source_id") or r.get("path", "")) for r in train_rows}
    val_apps = {app_id(r.get("source_id") or r.get("path", "")) for r in val_rows}
    shared = train_apps & val_apps
    if shared:
        raise ManifestError(f"train and val share app prefixes: {sorted(shared)[:5]}")


def _binary_f1(pred: np.ndarray, truth: np.ndarray) -> float | None:
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    p, r, f1 = precision_recall_f1(tp, fp, fn)
    return f1


def _predict_batched(net: Network, x: np.ndarray, batch: int = 32) -> np.ndarray:
    probs = []
    for i in range(0, len(x), batch):
        logits = net.forward(x[i:i + batch].astype(net.dtype), training=False)
        probs.append(softmax(logits.astype(np.float64))[:, BUGGY])
    return np.concatenate(probs) if probs else np.empty(0)


def train(net: Network, train_rows: list[dict], val_rows: list[dict],
          hyper: TrainConfig | None = None) -> tuple[Network, list[dict]]:
    """Mini-batch SGD training; returns the net restored to its best
    validation-F1 epoch, plus the per-epoch history.

    Channel statistics are computed once over the training images and
    frozen into the network before the first epoch. Identical seeds and
    manifests reproduce identical histories. A non-finite loss aborts with
    a NumericError carrying the epoch, batch and per-layer weight norms.
    """
    hyper = hyper or TrainConfig()
    if not train_rows or not val_rows:
        raise ManifestError("train and val manifests must both be non-empty")
    check_split_disjoint(train_rows, val_rows)
    x_train, y_train = load_dataset(train_rows, net.cfg)
    x_val, y_val = load_dataset(val_rows, net.cfg)
    mean = x_train.mean(axis=(0, 2, 3), dtype=np.float64)
    std = x_train.std(axis=(0, 2, 3), dtype=np.float64)
    std = np.maximum(std, 1e-6)
    net.channel_mean = mean
    net.channel_std = std
    x_train = ((x_train - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)
    x_val = ((x_val - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)

    rng = np.random.default_rng(hyper.seed)
    opt = SGD(hyper.lr, hyper.momentum)
    params = net.params()
    grads = net.grads()
    history: list[dict] = []
    best_f1 = -1.0
    best_state = copy.deepcopy(net.state())
    best_stats = (mean.copy(), std.copy())
    for epoch in range(hyper.epochs):
        opt.lr = hyper.lr_at(epoch)
        order = rng.permutation(len(x_train))
        total_loss = 0.0
        for bi, start in enumerate(range(0, len(order), hyper.batch_size)):
            idx = order[start:start + hyper.batch_size]
            logits = net.forward(x_train[idx].astype(net.dtype), training=True)
            loss, _, grad = softmax_cross_entropy(logits, y_train[idx])
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
                raise NumericError(
                    f"non-finite loss {loss} at epoch {epoch} batch {bi}",
                    epoch=epoch, batch=bi, layer_norms=norms)
            net.backward(grad)
            opt.step(params, grads)
            total_loss += loss * len(idx)
        epoch_loss = total_loss / len(x_train)
        val_pred = (_predict_batched(net, x_val) >= 0.5).astype(int)
        val_f1 = _binary_f1(val_pred, y_val)
        history.append({"epoch": epoch, "loss": epoch_loss,
                        "val_f1": val_f1, "lr": opt.lr})
        score = -1.0 if val_f1 is None else val_f1
        if score > best_f1:
            best_f1 = score
            best_state = copy.deepcopy(net.state())
    net.load_state(best_state)
    net.channel_mean, net.channel_std = best_stats
    return net, history


def precision_recall_f1(tp: int, fp: int, fn: int
                        ) -> tuple[float | None, float | None, float | None]:
    """Binary precision/recall/F1 from counts. A zero denominator makes the
    metric undefined and it is reported as None, never coerced to 0."""
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass
class CategoryMetrics:
    n: int
    tp: int
    precision: float | None
    recall: float | None
    f1: float | None


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    per_category: dict[str, CategoryMetrics] = field(default_factory=dict)


def evaluate(net: Network, rows: list[dict], classify_fn=None) -> MetricsReport:
    """Run the detector over a labeled manifest and tally binary metrics.

    Buggy is the positive class. The per-category breakdown counts each
    buggy sample toward its own category's recall; category precision is
    taken over the predictions whose ground-truth category matches, so
    clean false positives surface only in the overall row. The result is
    independent of row order.
    """
    classify_fn = classify_fn or classify
    tp = fp = fn = tn = 0
    cat_n: dict[str, int] = {}
    cat_tp: dict[str, int] = {}
    for row in rows:
        truth = _row_label(row)
        pred = classify_fn(net, _row_image(row))
        predicted_buggy = pred.label == LABELS[BUGGY]
        if truth == BUGGY:
            cat = row.get("category") or "uncategorized"
            cat_n[cat] = cat_n.get(cat, 0) + 1
            if predicted_buggy:
                tp += 1
                cat_tp[cat] = cat_tp.get(cat, 0) + 1
            else:
                fn += 1
        else:
            if predicted_buggy:
                fp += 1
            else:
                tn += 1
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    per_category = {}
    for cat in sorted(cat_n):
        n = cat_n[cat]
        ctp = cat_tp.get(cat, 0)
        c_recall = ctp / n if n else None
        c_precision = 1.0 if ctp else None  # all same-category predictions are correct
        if c_precision is None or c_recall is None or c_precision + c_recall == 0:
            c_f1 = None
        else:
            c_f1 = 2 * c_precision * c_recall / (c_precision + c_recall)
        per_category[cat] = CategoryMetrics(n=n, tp=ctp, precision=c_precision,
                                            recall=c_recall, f1=c_f1)
    return MetricsReport(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision,
                         recall=recall, f1=f1, per_category=per_category)


def format_metric(x: float | None) -> str:
    """Three decimals, ties rounding half-up; None prints as '-'."""
    if x is None:
        return "-"
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"),
                                                rounding=ROUND_HALF_UP))


def save_checkpoint(net: Network, path, epoch: int = 0,
                    metrics: dict | None = None) -> None:
    """Binary checkpoint: OWLNET01 magic, JSON header (config, channel
    stats, epoch, metrics), then named float32 parameter blocks. Batchnorm
    running stats are stored as ordinary blocks."""
    header = {"config": net.cfg.to_dict(),
              "channel_mean": [float(v) for v in net.channel_mean],
              "channel_std": [float(v) for v in net.channel_std],
              "epoch": int(epoch), "metrics": metrics}
    blocks = net.state()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        hdr = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild a Network from a checkpoint file; returns (net, meta) where
    meta carries the stored epoch and metrics."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a detector checkpoint")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        cfg = NetworkConfig.from_dict(header.get("config", {}))
        (n_blocks,) = struct.unpack("<I", _read_exact(fh, 4, "block count"))
        state: dict[str, np.ndarray] = {}
        for _ in range(n_blocks):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"data of {name}")
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    net = build_network(cfg, seed=0)
    net.load_state(state)
    net.channel_mean = np.asarray(header.get("channel_mean", [0, 0, 0]), dtype=np.float64)
    net.channel_std = np.asarray(header.get("channel_std", [1, 1, 1]), dtype=np.float64)
    return net, {"epoch": header.get("epoch", 0), "metrics": header.get("metrics")}


def network_grad_spot_check(net: Network, x: np.ndarray, labels: np.ndarray,
                            n_params: int = 20, seed: int = 0) -> float:
    """Central-difference check of dLoss/dparam on randomly chosen
    parameter entries of a full network (use a float64 net).

    The loss is only piecewise smooth: if a perturbation flips a ReLU sign
    or a pooling argmax anywhere downstream, the two central-difference
    evaluations straddle a kink and no longer estimate the derivative.
    Each probe therefore shrinks eps until both evaluations select the
    same linear piece; probes that stay kink-crossed even at the smallest
    eps are redrawn.
    """
    rng = np.random.default_rng(seed)
    params = net.params()

    def loss_and_selection() -> tuple[float, bytes]:
        logits = net.forward(x, training=True)
        h = hashlib.blake2b(digest_size=16)
        for layer in net.layers:
            if isinstance(layer, ReLU):
                h.update(layer._mask.tobytes())
            elif isinstance(layer, MaxPool2x2):
                h.update(layer._cache[0].tobytes())
        return softmax_cross_entropy(logits, labels)[0], h.digest()

    _, base_sel = loss_and_selection()
    logits = net.forward(x, training=True)
    _, _, grad = softmax_cross_entropy(logits, labels)
    net.backward(grad)
    analytic = {k: v.copy() for k, v in net.grads().items()}

    keys = sorted(params)
    worst = 0.0
    done = 0
    attempts = 0
    while done < n_params:
        attempts += 1
        if attempts > 40 * n_params:
            raise RuntimeError("could not find enough kink-free probe points")
        key = keys[int(rng.integers(len(keys)))]
        flat = params[key].reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        numeric = None
        for eps in (1e-4, 1e-5, 1e-6):
            flat[i] = orig + eps
            f_plus, sel_plus = loss_and_selection()
            flat[i] = orig - eps
            f_minus, sel_minus = loss_and_selection()
            flat[i] = orig
            if sel_plus == sel_minus == base_sel:
                numeric = (f_plus - f_minus) / (2 * eps)
                break
        if numeric is None:
            continue
        a = float(analytic[key].reshape(-1)[i])
        err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
        worst = max(worst, err)
        done += 1
    return worst


def train_accuracy(net: Network, rows: list[dict]) -> float:
    """Fraction of rows the detector labels correctly."""
    x, y = load_dataset(rows, net.cfg)
    x = ((x - net.channel_mean[None, :, None, None])
         / net.channel_std[None, :, None, None]).astype(np.float32)
    pred = (_predict_batched(net, x) >= 0.5).astype(int)
    return float((pred == y).mean())
