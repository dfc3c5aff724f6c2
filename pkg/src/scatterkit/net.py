"""Shallow CNN backbone with optional PIHA blocks, SGD training and checkpoints.

Each stage is conv -> ReLU -> 2x2 max-pool, followed by a PIHA block when the
stage is listed in ``piha_after_stage``.  The head is global average pooling
and a dense layer.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import serialize
from .dataset import Dataset
from .parallel import pmap
from .piha import PihaBlock, PihaConfig, PihaState, resample_bilinear
from .tensor import ops
from .tensor.core import Tensor, no_grad

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite."""


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    first_kernel: int = 5
    kernel: int = 3
    input_size: int = 64
    in_channels: int = 1
    n_classes: int = 8
    piha_after_stage: tuple[int, ...] | None = None   # None: every stage
    groups: int = 4
    reduction: int = 16
    sse_reduction: int = 4
    sap_threshold: float = 0.05
    pir_enabled: bool = True
    fixed_pase_scale: float | None = None
    se_enabled: bool = True

    def __post_init__(self):
        if not self.channels:
            raise ValueError("need at least one stage")
        if self.input_size % (2 ** len(self.channels)):
            raise ValueError(f"input_size {self.input_size} must be divisible by "
                             f"2^{len(self.channels)} (one 2x2 pool per stage)")
        for s in self.piha_stages:
            if not 0 <= s < len(self.channels):
                raise ValueError(f"PIHA stage {s} out of range")
            if self.channels[s] % self.groups:
                raise ValueError(f"stage {s} channels {self.channels[s]} not divisible by K={self.groups}")
            try:
                self.piha_config(s)
            except ValueError as exc:
                raise ValueError(f"PIHA stage {s}: {exc}") from None

    @property
    def piha_stages(self) -> tuple[int, ...]:
        if self.piha_after_stage is None:
            return tuple(range(len(self.channels)))
        return tuple(sorted(set(self.piha_after_stage)))

    def stage_size(self, stage: int) -> int:
        return self.input_size >> (stage + 1)

    def piha_config(self, stage: int) -> PihaConfig:
        return PihaConfig(self.channels[stage], self.groups, self.reduction, self.sse_reduction,
                          self.sap_threshold, 3, self.pir_enabled, self.fixed_pase_scale,
                          self.se_enabled)

    def baseline(self) -> "BackboneConfig":
        return replace(self, piha_after_stage=())

    def to_config(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "piha_after_stage":
                v = "all" if v is None else ",".join(map(str, v))
            elif isinstance(v, tuple):
                v = ",".join(map(str, v))
            out[f.name] = str(v)
        return out

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "BackboneConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name].strip()
            if f.name == "channels":
                kw[f.name] = tuple(int(v) for v in raw.split(","))
            elif f.name == "piha_after_stage":
                kw[f.name] = None if raw == "all" else tuple(int(v) for v in raw.split(",") if v)
            elif f.name == "fixed_pase_scale":
                kw[f.name] = None if raw == "None" else float(raw)
            elif f.name in ("pir_enabled", "se_enabled"):
                kw[f.name] = _parse_bool(raw)
            elif f.name == "sap_threshold":
                kw[f.name] = float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 1000
    early_stop_patience: int = 200
    repeats: int = 5
    rng_seed: int = 0
    stop_at_perfect: bool = True    # stop once validation accuracy reaches 100 %
    precision: str = "single"

    def __post_init__(self):
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        if min(self.batch_size, self.max_epochs, self.early_stop_patience, self.repeats) < 1:
            raise ValueError("batch_size, max_epochs, patience and repeats must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience must not exceed max_epochs")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @classmethod
    def from_config(cls, values: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        base = cls() if base is None else base
        kw = {}
        for f in fields(cls):
            if f.name in values:
                t = type(getattr(base, f.name))
                raw = values[f.name]
                kw[f.name] = _parse_bool(raw) if t is bool else t(float(raw)) if t in (int, float) else raw
        return replace(base, **kw)


# ---------------------------------------------------------------- model

def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per sample (constant samples are only centered)."""
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    sd = x.std(axis=axes, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1).astype(x.dtype)


def _kaiming(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Model:
    """Parameters live in an ordered name -> Tensor dict."""

    def __init__(self, cfg: BackboneConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.blocks: dict[int, PihaBlock] = {}
        for s in cfg.piha_stages:
            prefix = f"piha{s}."
            st = PihaState(**{k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)})
            self.blocks[s] = PihaBlock(cfg.piha_config(s), st)

    @classmethod
    def init(cls, cfg: BackboneConfig, seed: int = 0, dtype=np.float32) -> "Model":
        rng = np.random.default_rng([seed, 0x5EED])
        params: dict[str, Tensor] = {}
        c_in = cfg.in_channels
        for s, c_out in enumerate(cfg.channels):
            k = cfg.first_kernel if s == 0 else cfg.kernel
            params[f"conv{s}.w"] = Tensor(_kaiming(rng, (c_out, c_in, k, k), c_in * k * k, dtype), True)
            params[f"conv{s}.b"] = Tensor(np.zeros(c_out, dtype), True)
            if s in cfg.piha_stages:
                st = PihaState.init(cfg.piha_config(s), rng, dtype)
                params.update({f"piha{s}.{n}": t for n, t in st.parameters().items()})
            c_in = c_out
        params["head.w"] = Tensor(_kaiming(rng, (cfg.n_classes, c_in), c_in, dtype), True)
        params["head.b"] = Tensor(np.zeros(cfg.n_classes, dtype), True)
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def stage_maps(self, components: np.ndarray | None) -> dict[int, np.ndarray]:
        """Component maps resampled to every PIHA stage's feature size."""
        if not self.blocks:
            return {}
        if components is None:
            raise ValueError("this model has PIHA blocks and needs component maps")
        if components.ndim != 4 or components.shape[1] != self.cfg.groups:
            raise ValueError(f"expected (N, {self.cfg.groups}, H, W) component maps, got {components.shape}")
        out = {}
        for s in self.blocks:
            size = self.cfg.stage_size(s)
            out[s] = resample_bilinear(components.astype(self.dtype, copy=False), size, size)
        return out

    def _input(self, chips: np.ndarray) -> np.ndarray:
        x = np.asarray(chips, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        size = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels or x.shape[2:] != (size, size):
            raise ValueError(f"input {x.shape} does not match the model's "
                             f"{self.cfg.in_channels}x{size}x{size} resolution")
        return standardize(x)

    def forward(self, chips: np.ndarray, maps: dict[int, np.ndarray] | None = None,
                traces: dict | None = None) -> Tensor:
        """Logits for a batch; ``maps`` comes from :meth:`stage_maps`."""
        h = Tensor(self._input(chips))
        maps = maps or {}
        for s in range(len(self.cfg.channels)):
            k = self.params[f"conv{s}.w"].shape[-1]
            h = ops.conv2d(h, self.params[f"conv{s}.w"], self.params[f"conv{s}.b"], pad=k // 2)
            h = ops.maxpool2d(ops.relu(h), 2)
            if s in self.blocks:
                if s not in maps:
                    raise ValueError(f"missing component maps for PIHA stage {s}")
                trace = None
                if traces is not None:
                    trace = traces.setdefault(s, {})
                h = self.blocks[s](h, maps[s], trace)
        return ops.dense(ops.gap(h), self.params["head.w"], self.params["head.b"])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ValueError("state keys do not match model parameters")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)


# ---------------------------------------------------------------- optimizer

class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float, weight_decay: float):
        self.params = params
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        dt = next(iter(self.params.values())).dtype.type
        lr, mu, wd = dt(self.lr), dt(self.momentum), dt(self.weight_decay)
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            g = g + wd * p.data
            v = self.velocity[k]
            v *= mu
            v += g
            p.data -= lr * v


# ---------------------------------------------------------------- training

@dataclass
class Prepared:
    chips: np.ndarray
    maps: dict[int, np.ndarray]
    labels: np.ndarray

    def batch(self, index) -> tuple[np.ndarray, dict[int, np.ndarray], np.ndarray]:
        return self.chips[index], {s: m[index] for s, m in self.maps.items()}, self.labels[index]


def prepare(model: Model, ds: Dataset) -> Prepared:
    return Prepared(model._input(ds.chips), model.stage_maps(ds.components if model.blocks else None),
                    np.asarray(ds.labels, dtype=np.int64))


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]
    best_epoch: int
    best_val_acc: float
    stopped_epoch: int
    reason: str

    def write_history(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "val_acc"))
            for e, loss, acc in self.history:
                w.writerow((e, f"{loss:.9g}", f"{acc:.6f}"))


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(np.argmax(scores, axis=1) == labels)) if len(labels) else 0.0


def train(model: Model, train_set: Dataset, val_set: Dataset, cfg: TrainConfig,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """SGD on softmax cross-entropy with early stopping on validation accuracy.

    The best-validation weights are restored before returning.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    n_cls = model.cfg.n_classes
    for name, ds in (("train", train_set), ("validation", val_set)):
        if ds.labels.min() < 0 or ds.labels.max() >= n_cls:
            raise ValueError(f"{name} labels fall outside the model's {n_cls} classes")
    tr = prepare(model, train_set)
    va = prepare(model, val_set)
    opt = SGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.rng_seed, 0xBA7C])
    n = len(train_set)
    best_acc, best_epoch, best_state = -1.0, -1, model.state_dict()
    history = []
    reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, maps, y = tr.batch(idx)
            opt.zero_grad()
            loss = ops.cross_entropy(model.forward(x, maps), y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}; "
                                       f"lower the learning rate (lr={cfg.lr})")
            loss.backward()
            opt.step()
            total += value * len(idx)
        train_loss = total / n
        val_acc = accuracy(_scores(model, va), va.labels)
        history.append((epoch, train_loss, val_acc))
        log.info("epoch %d loss %.5f val_acc %.2f", epoch, train_loss, val_acc)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch, best_state = val_acc, epoch, model.state_dict()
        if cfg.stop_at_perfect and val_acc >= 100.0:
            reason = "perfect_validation"
            break
        if epoch - best_epoch >= cfg.early_stop_patience:
            reason = "patience"
            break
    model.load_state(best_state)
    return TrainResult(history, best_epoch, best_acc, history[-1][0], reason)


def _scores(model: Model, prep: Prepared, batch_size: int = 128) -> np.ndarray:
    def one(start):
        with no_grad():
            x, maps, _ = prep.batch(slice(start, start + batch_size))
            return ops.softmax(model.forward(x, maps), axis=1).data

    out = pmap(one, range(0, len(prep.labels), batch_size))
    if not out:
        return np.zeros((0, model.cfg.n_classes))
    return np.concatenate(out).astype(np.float64)


def predict(model: Model, ds: Dataset, batch_size: int = 128) -> np.ndarray:
    """Softmax class scores, one row per sample in input order."""
    return _scores(model, prepare(model, ds), batch_size)


def predict_arrays(model: Model, chips: np.ndarray, components: np.ndarray | None,
                   batch_size: int = 128) -> np.ndarray:
    labels = np.zeros(len(chips), dtype=np.int64)
    prep = Prepared(model._input(chips), model.stage_maps(components), labels)
    return _scores(model, prep, batch_size)


# ---------------------------------------------------------------- checkpoints

MANIFEST = "manifest.txt"


def _file_name(param: str) -> str:
    return param.replace(".", "_") + ".skb"


def save_checkpoint(model: Model, path) -> Path:
    """One SKB1 file per parameter plus a ``key = value`` manifest with SHA-256 digests."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = {f"backbone.{k}": v for k, v in model.cfg.to_config().items()}
    for name, t in model.params.items():
        blob = serialize.pack_skb(t.data)
        fname = _file_name(name)
        (root / fname).write_bytes(blob)
        entries[f"param.{name}"] = f"{fname} sha256:{hashlib.sha256(blob).hexdigest()}"
    entries["dtype"] = np.dtype(model.dtype).name
    (root / MANIFEST).write_text(serialize.format_config(entries), encoding="utf-8")
    return root / MANIFEST


def load_checkpoint(path, dtype=None) -> Model:
    root = Path(path)
    entries = serialize.read_config(root / MANIFEST)
    cfg = BackboneConfig.from_config({k[len("backbone."):]: v for k, v in entries.items()
                                      if k.startswith("backbone.")})
    dtype = np.dtype(entries.get("dtype", "float32")) if dtype is None else dtype
    model = Model.init(cfg, 0, dtype)
    state = {}
    for key, value in entries.items():
        if not key.startswith("param."):
            continue
        fname, digest = value.split()
        blob = (root / fname).read_bytes()
        if digest != f"sha256:{hashlib.sha256(blob).hexdigest()}":
            raise serialize.FormatError(f"checkpoint file {fname} does not match its digest")
        state[key[len("param."):]], _ = serialize.unpack_skb(blob)
    model.load_state(state)
    return model
