"""Joint source/target optimization with Adam and polynomial decay."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import model as mdl
from .autodiff.tensor import ParameterStore, Tensor, backward
from .errors import ConfigError, DataError, ScheduleError, ShapeError
from .geo_encoding import EncoderSettings, encode_pipeline
from .synthetic import GeoSample, crop_offsets

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "loss_seg", "loss_uda_s", "loss_uda_t", "val_miou")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr0: float = 0.001
    max_epochs: int = 200
    patience: int = 30
    seed: int = 18
    alpha: float = 0.5
    poly_power: float = 0.9
    crop_size: int = 256

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch normalization)")
        if not self.lr0 > 0 or not self.poly_power > 0:
            raise ConfigError("lr0 and poly_power must be positive")
        if self.max_epochs < 1 or self.crop_size < 1:
            raise ConfigError("max_epochs and crop_size must be positive")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must lie in [0, max_epochs]")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")


# --- schedule and optimizer --------------------------------------------------


def poly_lr(lr0: float, t: int, total: int, power: float) -> float:
    if not 0 <= t <= total:
        raise ScheduleError(f"step {t} outside [0, {total}]")
    return lr0 * (1.0 - t / total) ** power


@dataclass
class AdamState:
    m: OrderedDict = field(default_factory=OrderedDict)
    v: OrderedDict = field(default_factory=OrderedDict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_store(cls, store: ParameterStore) -> "AdamState":
        st = cls()
        for name, t in store.named_parameters():
            st.m[name] = np.zeros_like(t.data)
            st.v[name] = np.zeros_like(t.data)
        return st


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.data.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- data -------------------------------------------------------------------


def images_to_input(images: np.ndarray) -> np.ndarray:
    """N x H x W x 3 uint8 -> N x 3 x H x W float64 roughly in [-2, 2]."""
    x = np.asarray(images, dtype=np.float64)
    return ((x - 127.5) / 64.0).transpose(0, 3, 1, 2)


def attach_encodings(samples: list[GeoSample], settings: EncoderSettings) -> None:
    """Compute each patch's normalized GRID target once (patch-level metadata)."""
    for s in samples:
        s.encoding = encode_pipeline(settings, s.coord).values


class SourceBatch(NamedTuple):
    images: np.ndarray
    labels: np.ndarray
    encodings: np.ndarray


class TargetBatch(NamedTuple):
    images: np.ndarray
    encodings: np.ndarray


@dataclass(frozen=True)
class TargetSample:
    """Label-free view of a target-domain patch."""

    image: np.ndarray
    encoding: np.ndarray
    patch_id: str


def as_target_samples(samples: list[GeoSample]) -> list[TargetSample]:
    return [TargetSample(s.image, s.encoding, s.patch_id) for s in samples]


def _steps_per_epoch(n_source: int, batch_size: int) -> int:
    return max(1, n_source // batch_size)


def _crop_batch(images, rng, size, labels=None):
    crops, lab = [], []
    for i, img in enumerate(images):
        y, x = crop_offsets(img.shape[0], img.shape[1], size, rng)
        crops.append(img[y : y + size, x : x + size])
        if labels is not None:
            lab.append(labels[i][y : y + size, x : x + size])
    return np.stack(crops), (np.stack(lab) if labels is not None else None)


def source_batches(samples: list[GeoSample], cfg: TrainConfig, rng: np.random.Generator) -> Iterator[SourceBatch]:
    if len(samples) < 2:
        raise DataError("need at least two labelled source patches per epoch")
    bs = min(cfg.batch_size, len(samples))
    order = rng.permutation(len(samples))
    for b in range(_steps_per_epoch(len(samples), bs)):
        idx = order[b * bs : (b + 1) * bs]
        imgs, labs = _crop_batch(
            [samples[i].image for i in idx], rng, cfg.crop_size, [samples[i].labels for i in idx]
        )
        enc = np.stack([samples[i].encoding for i in idx])
        yield SourceBatch(images_to_input(imgs), labs.astype(np.int64), enc)


def target_batches(samples: list[TargetSample], cfg: TrainConfig, rng: np.random.Generator) -> Iterator[TargetBatch]:
    """Endless cycle over shuffled target patches; never sees a label."""
    if len(samples) < 2:
        raise DataError("need at least two target patches")
    bs = min(cfg.batch_size, len(samples))
    while True:
        order = rng.permutation(len(samples))
        for b in range(len(samples) // bs):
            idx = order[b * bs : (b + 1) * bs]
            imgs, _ = _crop_batch([samples[i].image for i in idx], rng, cfg.crop_size)
            enc = np.stack([samples[i].encoding for i in idx])
            yield TargetBatch(images_to_input(imgs), enc)


# --- loop -------------------------------------------------------------------


@dataclass
class TrainState:
    adam: AdamState
    global_step: int
    total_steps: int
    lr_history: list[float] = field(default_factory=list)


@dataclass
class EpochMetrics:
    lr: float
    loss_seg: float
    loss_uda_s: float
    loss_uda_t: float
    steps: int


def train_step(store: ParameterStore, src: SourceBatch, tgt: TargetBatch, cfg: TrainConfig, norm_kind: str = "l1"):
    out = mdl.forward(store, Tensor(src.images), Tensor(tgt.images), training=True, norm_kind=norm_kind)
    terms = mdl.total_loss(
        out.seg_probs, src.labels, out.c_hat_source, src.encodings, out.c_hat_target, tgt.encodings, cfg.alpha
    )
    store.zero_grad()
    backward(terms.total)
    return terms


def train_epoch(
    store: ParameterStore,
    source_iter,
    target_iter,
    cfg: TrainConfig,
    state: TrainState,
    norm_kind: str = "l1",
) -> EpochMetrics:
    seg, uda_s, uda_t = [], [], []
    first_lr = None
    params = OrderedDict(store.named_parameters())
    for src in source_iter:
        tgt = next(target_iter, None)
        if tgt is None:
            raise DataError("target iterator exhausted")
        lr = poly_lr(cfg.lr0, state.global_step, state.total_steps, cfg.poly_power)
        first_lr = lr if first_lr is None else first_lr
        terms = train_step(store, src, tgt, cfg, norm_kind)
        adam_step(params, {k: t.grad for k, t in params.items()}, state.adam, lr)
        state.lr_history.append(lr)
        state.global_step += 1
        seg.append(terms.seg.item())
        uda_s.append(terms.uda_source.item())
        uda_t.append(terms.uda_target.item())
    if not seg:
        raise DataError("source iterator yielded no batches")
    return EpochMetrics(first_lr, float(np.mean(seg)), float(np.mean(uda_s)), float(np.mean(uda_t)), len(seg))


@dataclass
class FitResult:
    best_state: OrderedDict
    best_epoch: int
    best_val: float
    log: list[dict]
    final_state: OrderedDict


def fit(
    train_cfg: TrainConfig,
    model_cfg: mdl.ModelConfig,
    source_train: list[GeoSample],
    target_train: list[TargetSample],
    validate: Callable[[ParameterStore, int], float],
    norm_kind: str = "l1",
    on_epoch: Callable[[dict], None] | None = None,
) -> FitResult:
    """Train until ``validate`` (source-val mIoU) stalls for more than ``patience`` epochs.

    Every sample must already carry its encoding (see ``attach_encodings``).
    """
    if not source_train or not target_train:
        raise DataError("fit needs source-train and target-train samples")
    store = mdl.build_model(model_cfg, train_cfg.seed)
    steps = _steps_per_epoch(len(source_train), min(train_cfg.batch_size, len(source_train)))
    state = TrainState(AdamState.for_store(store), 0, steps * train_cfg.max_epochs)
    target_rng = np.random.default_rng([train_cfg.seed, 1])
    target_iter = target_batches(target_train, train_cfg, target_rng)

    best_val, best_epoch, best_state = -math.inf, 0, store.snapshot()
    bad_epochs = 0
    rows = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        rng = np.random.default_rng([train_cfg.seed, 0, epoch])
        em = train_epoch(store, source_batches(source_train, train_cfg, rng), target_iter, train_cfg, state, norm_kind)
        val = float(validate(store, epoch))
        row = {
            "epoch": epoch,
            "lr": em.lr,
            "loss_seg": em.loss_seg,
            "loss_uda_s": em.loss_uda_s,
            "loss_uda_t": em.loss_uda_t,
            "val_miou": val,
        }
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.info("epoch %d lr=%.3g seg=%.4f uda_s=%.4f uda_t=%.4f val=%.4f", epoch, em.lr, em.loss_seg, em.loss_uda_s, em.loss_uda_t, val)
        if val > best_val:
            best_val, best_epoch, best_state = val, epoch, store.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > train_cfg.patience:
                break
    return FitResult(best_state, best_epoch, best_val, rows, store.snapshot())


def format_log_csv(rows: list[dict]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for r in rows:
        lines.append(",".join([str(r["epoch"])] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]]))
    return "\n".join(lines) + "\n"
