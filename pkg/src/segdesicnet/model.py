"""Toy-scale U-Net with a SegDesic coordinate-regression head.

Source and target images share the encoder. Only source bottlenecks are
decoded into segmentation maps; both domains' bottlenecks are max-pooled
and passed through the six-layer head, whose output is normalized and
compared to the GRID encoding of the patch location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ParameterStore, Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 6
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    segdesic_hidden: tuple[int, ...] = (256, 128, 128, 64, 64)
    encoding_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "segdesic_hidden", tuple(int(c) for c in self.segdesic_hidden))
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must be a nonempty list of positive widths")
        if len(self.segdesic_hidden) != 5 or min(self.segdesic_hidden) < 1:
            raise ConfigError("segdesic_hidden must hold exactly 5 positive widths (six linear layers)")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("need in_channels >= 1 and num_classes >= 2")
        if self.encoding_dim < 4 or self.encoding_dim % 4:
            raise ConfigError(f"encoding_dim must be 4*S, got {self.encoding_dim}")

    @property
    def num_stages(self) -> int:
        return len(self.encoder_channels)

    def check_grid(self, num_scales: int) -> None:
        if self.encoding_dim != 4 * num_scales:
            raise ConfigError(
                f"encoding_dim {self.encoding_dim} != 4 * num_scales ({4 * num_scales})"
            )


@dataclass
class ForwardOutput:
    seg_probs: Tensor
    c_hat_source: Tensor
    c_hat_target: Tensor | None = None
    extras: dict = field(default_factory=dict)


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_conv(store, rng, name, cin, cout, k):
    store.add_param(f"{name}.weight", _he_uniform(rng, (cout, cin, k, k), cin * k * k))
    store.add_param(f"{name}.bias", np.zeros(cout))


def _add_upconv(store, rng, name, cin, cout, k=2, stride=2):
    # each output pixel of a k=stride transpose conv sees exactly cin inputs
    fan_in = max(1, cin * k * k // (stride * stride))
    store.add_param(f"{name}.weight", _he_uniform(rng, (cin, cout, k, k), fan_in))
    store.add_param(f"{name}.bias", np.zeros(cout))


def _add_bn(store, name, c):
    store.add_param(f"{name}.gamma", np.ones(c))
    store.add_param(f"{name}.beta", np.zeros(c))
    store.add_buffer(f"{name}.running_mean", np.zeros(c))
    store.add_buffer(f"{name}.running_var", np.ones(c))


def _add_fc(store, rng, name, fin, fout):
    store.add_param(f"{name}.weight", _he_uniform(rng, (fout, fin), fin))
    store.add_param(f"{name}.bias", np.zeros(fout))


def build_model(cfg: ModelConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    chans = cfg.encoder_channels
    cin = cfg.in_channels
    for i, c in enumerate(chans):
        _add_conv(store, rng, f"enc{i}.conv", cin, c, 3)
        _add_bn(store, f"enc{i}.bn", c)
        cin = c
    for j in range(len(chans) - 2, -1, -1):
        _add_upconv(store, rng, f"dec{j}.up", chans[j + 1], chans[j])
        _add_conv(store, rng, f"dec{j}.conv", 2 * chans[j], chans[j], 3)
        _add_bn(store, f"dec{j}.bn", chans[j])
    _add_upconv(store, rng, "dec_out.up", chans[0], chans[0])
    _add_bn(store, "dec_out.bn", chans[0])
    _add_conv(store, rng, "seg_head", chans[0], cfg.num_classes, 1)

    widths = (chans[-1],) + cfg.segdesic_hidden + (cfg.encoding_dim,)
    for i in range(6):
        _add_fc(store, rng, f"segdesic{i}.fc", widths[i], widths[i + 1])
        if i < 5:
            _add_bn(store, f"segdesic{i}.bn", widths[i + 1])
    return store


def _bn(store: ParameterStore, name: str, x: Tensor, training: bool) -> Tensor:
    return ops.batch_norm(
        x,
        store[f"{name}.gamma"],
        store[f"{name}.beta"],
        store.buffer(f"{name}.running_mean"),
        store.buffer(f"{name}.running_var"),
        training,
    )


def _num_stages(store: ParameterStore) -> int:
    n = 0
    while f"enc{n}.conv.weight" in store:
        n += 1
    return n


def forward_encoder(store: ParameterStore, images: Tensor, training: bool = False) -> tuple[Tensor, list[Tensor]]:
    """Strided conv-BN-ReLU stages; returns the bottleneck and the earlier stage outputs."""
    stages = _num_stages(store)
    if images.ndim != 4:
        raise ShapeError(f"images must be N x B x H x W, got {images.shape}")
    h, w = images.shape[2:]
    if h % (2**stages) or w % (2**stages):
        raise ShapeError(f"spatial dims {h}x{w} not divisible by 2^{stages}")
    x = images
    feats = []
    for i in range(stages):
        x = ops.conv2d(x, store[f"enc{i}.conv.weight"], store[f"enc{i}.conv.bias"], stride=2, padding=1)
        x = ops.relu(_bn(store, f"enc{i}.bn", x, training))
        feats.append(x)
    return feats[-1], feats[:-1]


def forward_decoder(store: ParameterStore, bottleneck: Tensor, skips: list[Tensor], training: bool = False) -> Tensor:
    x = bottleneck
    for j in range(len(skips) - 1, -1, -1):
        x = ops.conv2d_transpose(x, store[f"dec{j}.up.weight"], store[f"dec{j}.up.bias"], stride=2)
        if x.shape[2:] != skips[j].shape[2:]:
            raise ShapeError(f"skip {j} has spatial dims {skips[j].shape[2:]}, decoder {x.shape[2:]}")
        x = ops.concat_channels([x, skips[j]])
        x = ops.conv2d(x, store[f"dec{j}.conv.weight"], store[f"dec{j}.conv.bias"], padding=1)
        x = ops.relu(_bn(store, f"dec{j}.bn", x, training))
    x = ops.conv2d_transpose(x, store["dec_out.up.weight"], store["dec_out.up.bias"], stride=2)
    x = ops.relu(_bn(store, "dec_out.bn", x, training))
    logits = ops.conv2d(x, store["seg_head.weight"], store["seg_head.bias"])
    return ops.softmax(logits, axis=1)


def forward_segdesic(
    store: ParameterStore, bottleneck: Tensor, training: bool = False, norm_kind: str = "l1"
) -> Tensor:
    """Global max pool, six linear layers, then row normalization of the prediction."""
    x = ops.global_max_pool(bottleneck)
    for i in range(6):
        x = ops.linear(x, store[f"segdesic{i}.fc.weight"], store[f"segdesic{i}.fc.bias"])
        if i < 5:
            x = ops.relu(_bn(store, f"segdesic{i}.bn", x, training))
    return ops.normalize_rows(x, norm_kind)


def forward(
    store: ParameterStore,
    source_images: Tensor,
    target_images: Tensor | None = None,
    training: bool = False,
    norm_kind: str = "l1",
) -> ForwardOutput:
    z_s, skips = forward_encoder(store, source_images, training)
    seg = forward_decoder(store, z_s, skips, training)
    c_hat_s = forward_segdesic(store, z_s, training, norm_kind)
    c_hat_t = None
    if target_images is not None:
        z_t, _ = forward_encoder(store, target_images, training)
        c_hat_t = forward_segdesic(store, z_t, training, norm_kind)
    return ForwardOutput(seg, c_hat_s, c_hat_t)


def predict(store: ParameterStore, images: Tensor) -> np.ndarray:
    """Eval-mode class probabilities for a batch (no graph recorded by the caller's context)."""
    z, skips = forward_encoder(store, images, training=False)
    return forward_decoder(store, z, skips, training=False).data


@dataclass
class LossTerms:
    total: Tensor
    seg: Tensor
    uda_source: Tensor
    uda_target: Tensor


def total_loss(seg_probs, labels, c_hat_s, c_s, c_hat_t, c_t, alpha: float) -> LossTerms:
    """Segmentation cross-entropy plus alpha-weighted batch-mean domain terms."""
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    seg = ops.cross_entropy(seg_probs, labels)
    d_s = ops.mean(ops.cosine_dissimilarity(c_s, c_hat_s))
    d_t = ops.mean(ops.cosine_dissimilarity(c_t, c_hat_t))
    if alpha == 0:
        total = seg
    else:
        total = ops.add(seg, ops.mul(ops.add(d_s, d_t), float(alpha)))
    return LossTerms(total, seg, d_s, d_t)
