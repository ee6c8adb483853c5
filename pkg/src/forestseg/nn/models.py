"""The four encoder-decoder segmentation architectures.

All are built from scratch (seeded random init, no pretrained weights) and
parameterized by input channel count, a width multiplier and encoder depth so
the same wiring runs at desk scale or at full scale:

* ``unet``            symmetric encoder/decoder with skip concatenations
* ``attention_unet``  U-Net with an additive attention gate on every skip
* ``segnet_resnet50`` residual bottleneck encoder, plain learned-upsampling
                      decoder, no skip concatenations
* ``fcn32_vgg16``     VGG-style plain conv encoder with a single whole-factor
                      upsampling head

Every model maps (N, C, H, W) inputs to (N, 1, H, W) sigmoid probabilities
and requires H and W divisible by 2**depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DataError
from . import ops
from .autodiff import Tensor, no_grad
from .modules import (
    AttentionGate,
    Bottleneck,
    Conv2d,
    ConvBlock,
    ConvBNRelu,
    Module,
    ModuleList,
    UpBlock,
)

SCENARIO_CHANNEL_COUNTS = (2, 4, 6, 7)


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "unet"
    in_channels: int = 2
    base_width: int = 16
    depth: int = 4
    seed: int = 0
    dtype: str = "float32"
    # segnet: residual blocks per encoder stage; fcn32: convs per stage.
    # None picks the desk-scale default (1 block / 2 convs per stage).
    blocks_per_stage: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigurationError(
                f"unknown arch {self.arch!r}; available: {sorted(ARCHITECTURES)}"
            )
        if self.in_channels not in SCENARIO_CHANNEL_COUNTS:
            raise ConfigurationError(
                f"in_channels must match a scenario arity {SCENARIO_CHANNEL_COUNTS}, "
                f"got {self.in_channels}"
            )
        if self.base_width < 4:
            raise ConfigurationError(f"base_width must be >= 4, got {self.base_width}")
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32|float64, got {self.dtype}")
        if self.blocks_per_stage is not None:
            object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
            if len(self.blocks_per_stage) != self.depth:
                raise ConfigurationError(
                    "blocks_per_stage must list one entry per encoder stage"
                )

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "depth": self.depth,
            "seed": self.seed,
            "dtype": self.dtype,
            "blocks_per_stage": list(self.blocks_per_stage)
            if self.blocks_per_stage
            else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        bps = d.get("blocks_per_stage")
        return cls(
            arch=d["arch"],
            in_channels=int(d["in_channels"]),
            base_width=int(d["base_width"]),
            depth=int(d["depth"]),
            seed=int(d["seed"]),
            dtype=d.get("dtype", "float32"),
            blocks_per_stage=tuple(bps) if bps else None,
        )


class SegmentationModel(Module):
    """Base class: input validation shared by all four architectures."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        object.__setattr__(self, "config", config)

    def validate_input(self, x: np.ndarray):
        if x.ndim != 4:
            raise DataError(f"expected (N, C, H, W) batch, got shape {x.shape}")
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise DataError(
                f"expected {self.config.in_channels} input channels, got {c}"
            )
        div = 2 ** self.config.depth
        if h % div or w % div:
            raise DataError(
                f"spatial dims {h}x{w} must be divisible by 2**depth = {div}"
            )


class UNet(SegmentationModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        w, d, dt = config.base_width, config.depth, config.np_dtype
        widths = [w * 2**i for i in range(d)]
        self.enc = ModuleList()
        cin = config.in_channels
        for wi in widths:
            self.enc.append(ConvBlock(cin, wi, rng, dtype=dt))
            cin = wi
        self.bottleneck = ConvBlock(widths[-1], w * 2**d, rng, dtype=dt)
        self.up = ModuleList()
        self.dec = ModuleList()
        prev = w * 2**d
        for wi in reversed(widths):
            self.up.append(UpBlock(prev, wi, rng, dtype=dt))
            self.dec.append(ConvBlock(2 * wi, wi, rng, dtype=dt))
            prev = wi
        self.head = Conv2d(w, 1, 1, rng, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        self.validate_input(x.data)
        skips = []
        h = x
        for block in self.enc:
            s = block(h)
            skips.append(s)
            h = ops.maxpool2(s)
        h = self.bottleneck(h)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            h = up(h)
            h = dec(ops.concat_channels([h, skip]))
        return ops.sigmoid(self.head(h))


class AttentionUNet(SegmentationModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        w, d, dt = config.base_width, config.depth, config.np_dtype
        widths = [w * 2**i for i in range(d)]
        self.enc = ModuleList()
        cin = config.in_channels
        for wi in widths:
            self.enc.append(ConvBlock(cin, wi, rng, dtype=dt))
            cin = wi
        self.bottleneck = ConvBlock(widths[-1], w * 2**d, rng, dtype=dt)
        self.up = ModuleList()
        self.gates = ModuleList()
        self.dec = ModuleList()
        prev = w * 2**d
        for wi in reversed(widths):
            self.up.append(UpBlock(prev, wi, rng, dtype=dt))
            self.gates.append(AttentionGate(wi, wi, rng, dtype=dt))
            self.dec.append(ConvBlock(2 * wi, wi, rng, dtype=dt))
            prev = wi
        self.head = Conv2d(w, 1, 1, rng, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        self.validate_input(x.data)
        skips = []
        h = x
        for block in self.enc:
            s = block(h)
            skips.append(s)
            h = ops.maxpool2(s)
        h = self.bottleneck(h)
        for up, gate, dec, skip in zip(self.up, self.gates, self.dec, reversed(skips)):
            h = up(h)
            gated = gate(skip, h)
            h = dec(ops.concat_channels([h, gated]))
        return ops.sigmoid(self.head(h))


class SegNetResNet(SegmentationModel):
    """Residual bottleneck encoder + learned-upsampling decoder, no skips."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        w, d, dt = config.base_width, config.depth, config.np_dtype
        blocks = config.blocks_per_stage or tuple([1] * d)
        self.stem = ConvBNRelu(config.in_channels, w, rng, dtype=dt)
        self.stages = ModuleList()
        cin = w
        for i in range(d):
            mid = w * 2**i
            stage = ModuleList()
            stage.append(Bottleneck(cin, mid, rng, stride=2, dtype=dt))
            for _ in range(blocks[i] - 1):
                stage.append(Bottleneck(mid * Bottleneck.EXPANSION, mid, rng, dtype=dt))
            self.stages.append(_Stage(stage))
            cin = mid * Bottleneck.EXPANSION
        self.dec = ModuleList()
        prev = cin
        for i in reversed(range(d)):
            wi = w * 2**i
            self.dec.append(UpBlock(prev, wi, rng, dtype=dt))
            prev = wi
        self.head = Conv2d(w, 1, 1, rng, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        self.validate_input(x.data)
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
        for up in self.dec:
            h = up(h)
        return ops.sigmoid(self.head(h))


class _Stage(Module):
    def __init__(self, blocks: ModuleList):
        super().__init__()
        self.blocks = blocks

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


class FCN32VGG(SegmentationModel):
    """Plain-conv encoder with one whole-factor upsampling head: the deepest
    feature map is scored with a 1x1 conv and expanded 2**depth-fold in a
    single step, so predictions are constant over 2**depth-pixel blocks."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        w, d, dt = config.base_width, config.depth, config.np_dtype
        convs = config.blocks_per_stage or tuple([2] * d)
        self.stages = ModuleList()
        cin = config.in_channels
        for i in range(d):
            wi = w * 2 ** min(i, 3)  # width caps like the VGG stacks
            stage = ModuleList()
            for _ in range(convs[i]):
                stage.append(ConvBNRelu(cin, wi, rng, dtype=dt))
                cin = wi
            self.stages.append(_Stage(stage))
        self.classifier = ConvBNRelu(cin, 2 * cin, rng, dtype=dt)
        self.score = Conv2d(2 * cin, 1, 1, rng, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        self.validate_input(x.data)
        h = x
        for stage in self.stages:
            h = ops.maxpool2(stage(h))
        h = self.score(self.classifier(h))
        h = ops.upsample_nearest(h, 2 ** self.config.depth)
        return ops.sigmoid(h)


ARCHITECTURES = {
    "unet": UNet,
    "attention_unet": AttentionUNet,
    "segnet_resnet50": SegNetResNet,
    "fcn32_vgg16": FCN32VGG,
}

# Stage patterns of the full-size backbones, usable via blocks_per_stage
# together with base_width=64 and the matching depth.
RESNET50_BLOCKS = (3, 4, 6, 3)
VGG16_CONVS = (2, 2, 3, 3, 3)


def build_model(config: ModelConfig) -> SegmentationModel:
    """Instantiate an architecture with seeded, deterministic initialization."""
    rng = np.random.default_rng(config.seed)
    model = ARCHITECTURES[config.arch](config, rng)
    return model


def predict_proba(model: SegmentationModel, batch: np.ndarray) -> np.ndarray:
    """Run inference on an (N, C, H, W) batch, returning (N, 1, H, W)
    probabilities. Uses running BN statistics so samples stay independent."""
    batch = np.asarray(batch, dtype=model.config.np_dtype)
    model.validate_input(batch)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(Tensor(batch))
    finally:
        model.train(was_training)
    return out.data


def parameter_checksum(model: SegmentationModel) -> str:
    """Order-independent digest of all parameter tensors, for determinism
    checks."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
