"""Spiking classifier backbones emitting real-valued logits per timestep.

Three presets share one forward contract: input [T, B, C, H, W] statically
encoded over T steps, output [T, B, num_classes]. Convolutions and
batch-norm run once on the time-merged batch (effective batch T*B, so
normalization statistics pool over time); the spiking nonlinearity then
runs stepwise on the unmerged tensor, carrying membrane state across t.
The classification head is a plain linear map on spatially pooled spikes,
so the logits are real numbers, not spike counts, and the same weights
accept any T >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .lif import LifParams, lif_scan
from .optim import ParamStore

_PRESETS = {
    "mlp": dict(hidden_sizes=(256, 256)),
    "mini_resnet": dict(stem_channels=16, stage_blocks=(1, 1, 1), stage_widths=(16, 32, 64)),
    "resnet19": dict(stem_channels=128, stage_blocks=(3, 3, 2), stage_widths=(128, 256, 512)),
}


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "mlp"
    num_classes: int = 10
    in_channels: int = 1
    image_size: int = 28
    lif: LifParams = field(default_factory=LifParams)
    neuron: str = "lif"  # "relu" gives the T=1 non-spiking degenerate mode
    stem_spiking: bool = True
    hidden_sizes: tuple = ()
    stem_channels: int = 0
    stage_blocks: tuple = ()
    stage_widths: tuple = ()

    def __post_init__(self):
        if self.kind not in _PRESETS:
            raise ValueError(f"unknown backbone kind '{self.kind}' (choose from {sorted(_PRESETS)})")
        if self.neuron not in ("lif", "relu"):
            raise ValueError(f"unknown neuron '{self.neuron}'")


def preset_config(kind, **overrides) -> BackboneConfig:
    cfg = BackboneConfig(kind=kind, **{k: v for k, v in overrides.items() if k not in _PRESETS[kind]})
    filled = {k: overrides.get(k, v) for k, v in _PRESETS[kind].items()}
    return replace(cfg, **filled)


def _kaiming(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear:
    def __init__(self, store, name, in_features, out_features, rng):
        self.w = store.register(f"{name}.w", Tensor(_kaiming(rng, (in_features, out_features), in_features)))
        self.b = store.register(f"{name}.b", Tensor(np.zeros(out_features, dtype=np.float32)))

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


class Conv2d:
    def __init__(self, store, name, in_ch, out_ch, kernel, stride, padding, rng):
        fan_in = in_ch * kernel * kernel
        self.w = store.register(
            f"{name}.w", Tensor(_kaiming(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        )
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return ad.conv2d(x, self.w, stride=self.stride, padding=self.padding)


class BatchNorm:
    def __init__(self, store, name, channels):
        self.gamma = store.register(f"{name}.gamma", Tensor(np.ones(channels, dtype=np.float32)))
        self.beta = store.register(f"{name}.beta", Tensor(np.zeros(channels, dtype=np.float32)))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.training = True

    def __call__(self, x):
        return ad.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training,
        )


def _merge_time(x):
    t, b = x.shape[0], x.shape[1]
    return ad.reshape(x, (t * b,) + tuple(x.shape[2:])), t, b


def _split_time(x, t, b):
    return ad.reshape(x, (t, b) + tuple(x.shape[1:]))


class _Net:
    """Shared plumbing: parameter store, train/eval mode, activation."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        self.store = ParamStore()
        self._bns = []

    def train(self):
        for bn in self._bns:
            bn.training = True
        return self

    def eval(self):
        for bn in self._bns:
            bn.training = False
        return self

    def _bn(self, name, channels):
        bn = BatchNorm(self.store, name, channels)
        self._bns.append(bn)
        return bn

    def _activate(self, x_temporal):
        if self.config.neuron == "relu":
            return ad.relu(x_temporal)
        return lif_scan(x_temporal, self.config.lif)


class SpikingMLP(_Net):
    def __init__(self, config: BackboneConfig, rng):
        super().__init__(config)
        d = config.in_channels * config.image_size * config.image_size
        self.hidden = []
        prev = d
        for i, width in enumerate(config.hidden_sizes):
            self.hidden.append(Linear(self.store, f"hidden{i}", prev, width, rng))
            prev = width
        self.head = Linear(self.store, "head", prev, config.num_classes, rng)

    def forward(self, x):
        t, b = x.shape[0], x.shape[1]
        h = ad.reshape(x, (t * b, -1))
        for layer in self.hidden:
            h = layer(h)
            h = _merge_time(self._activate(_split_time(h, t, b)))[0]
        return _split_time(self.head(h), t, b)


class SpikingBasicBlock:
    """conv-bn-act-conv-bn plus shortcut, spiking activation after the add."""

    def __init__(self, net: _Net, name, in_ch, out_ch, stride, rng):
        self.net = net
        self.conv1 = Conv2d(net.store, f"{name}.conv1", in_ch, out_ch, 3, stride, 1, rng)
        self.bn1 = net._bn(f"{name}.bn1", out_ch)
        self.conv2 = Conv2d(net.store, f"{name}.conv2", out_ch, out_ch, 3, 1, 1, rng)
        self.bn2 = net._bn(f"{name}.bn2", out_ch)
        self.downsample = stride != 1 or in_ch != out_ch
        if self.downsample:
            self.conv_sc = Conv2d(net.store, f"{name}.sc", in_ch, out_ch, 1, stride, 0, rng)
            self.bn_sc = net._bn(f"{name}.bn_sc", out_ch)

    def forward_parts(self, x):
        """Returns (pre_activation, spikes); the test hook for residuals."""
        h, t, b = _merge_time(x)
        h = self.bn1(self.conv1(h))
        h = _merge_time(self.net._activate(_split_time(h, t, b)))[0]
        h = self.bn2(self.conv2(h))
        if self.downsample:
            sc = self.bn_sc(self.conv_sc(_merge_time(x)[0]))
        else:
            sc = _merge_time(x)[0]
        pre = _split_time(h + sc, t, b)
        return pre, self.net._activate(pre)

    def __call__(self, x):
        return self.forward_parts(x)[1]


class SpikingResNet(_Net):
    def __init__(self, config: BackboneConfig, rng):
        super().__init__(config)
        self.stem_conv = Conv2d(
            self.store, "stem.conv", config.in_channels, config.stem_channels, 3, 1, 1, rng
        )
        self.stem_bn = self._bn("stem.bn", config.stem_channels)
        self.blocks = []
        in_ch = config.stem_channels
        for s, (n_blocks, width) in enumerate(zip(config.stage_blocks, config.stage_widths)):
            for i in range(n_blocks):
                stride = 2 if (s > 0 and i == 0) else 1
                self.blocks.append(
                    SpikingBasicBlock(self, f"stage{s}.block{i}", in_ch, width, stride, rng)
                )
                in_ch = width
        self.head = Linear(self.store, "head", in_ch, config.num_classes, rng)

    def forward(self, x):
        h, t, b = _merge_time(x)
        h = self.stem_bn(self.stem_conv(h))
        h = _split_time(h, t, b)
        if self.config.stem_spiking:
            h = self._activate(h)
        for block in self.blocks:
            h = block(h)
        pooled = ad.tmean(h, axis=(3, 4))  # [T, B, C]
        flat, t, b = _merge_time(pooled)
        return _split_time(self.head(flat), t, b)


def build_backbone(config: BackboneConfig, rng):
    if config.kind == "mlp":
        return SpikingMLP(config, rng)
    return SpikingResNet(config, rng)


def forward(model, x_temporal: Tensor) -> Tensor:
    """Temporal logits [T, B, num_classes] for statically encoded input."""
    if x_temporal.data.ndim != 5:
        raise ShapeError(
            f"expected [T, B, C, H, W] input, got shape {x_temporal.shape}"
        )
    if x_temporal.shape[0] < 1:
        raise ShapeError("need at least one timestep")
    return model.forward(x_temporal)


def time_average(h: Tensor) -> Tensor:
    """Mean over the time axis: [T, B, C] -> [B, C]."""
    return ad.tmean(h, axis=0)


def predict(h_bar, task_mask=None):
    """Argmax class indices; ties break toward the lowest class index.

    With a task mask (task-incremental protocol), the argmax is restricted
    to the masked class set; without one, all classes compete.
    """
    scores = np.asarray(h_bar.data if isinstance(h_bar, Tensor) else h_bar)
    if task_mask is None:
        return np.argmax(scores, axis=-1)
    mask = sorted(set(int(c) for c in task_mask))
    if not mask:
        raise ValueError("task mask must not be empty")
    restricted = np.argmax(scores[..., mask], axis=-1)
    return np.asarray(mask)[restricted]
