"""
3D U-Net assembled from a declarative :class:`ModelConfig`.

Layout for ``levels=L``: L encoder stages (``blocks_per_level`` conv blocks followed by 2x2x2 max pooling),
a bottleneck stage, L decoder stages (transposed convolution, concatenation ``[skip, upsampled]`` along the
channel axis, conv blocks) and a final 1x1x1 convolution with a per-channel sigmoid.
"""
import numpy as np
from dataclasses import dataclass, asdict
from typing import Tuple
from .errors import ConfigError, ShapeError
from .layers import Layer, Mode, NormKind, Sequential, ConvBlock, Conv3d, ConvTranspose3d, MaxPool3d, Sigmoid
from .tensor import SplitMix64, assert_finite

FINAL_ACTIVATIONS = ('sigmoid', 'linear')


@dataclass
class ModelConfig:
    in_channels: int = 1
    out_channels: int = 3
    features_per_level: Tuple[int, ...] = (32, 64, 128)
    levels: int = 2
    blocks_per_level: int = 2
    norm_kind: NormKind = NormKind.BATCH_NORM
    conv_kernel: int = 3
    final_activation: str = 'sigmoid'
    momentum: float = 0.01
    eps: float = 1e-5
    r_max: float = 3.0
    d_max: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.features_per_level = tuple(int(f) for f in self.features_per_level)
        if isinstance(self.norm_kind, str):
            self.norm_kind = NormKind(self.norm_kind)

    def validate(self):
        if self.levels < 1:
            raise ConfigError('A U-Net needs at least one level, got levels={0}'.format(self.levels))
        if self.blocks_per_level < 1:
            raise ConfigError('blocks_per_level must be positive, got {0}'.format(self.blocks_per_level))
        if len(self.features_per_level) != self.levels + 1:
            raise ConfigError('features_per_level needs {0} entries (one per level plus the bottleneck), got {1}'
                              .format(self.levels + 1, self.features_per_level))
        if any(b <= a for a, b in zip(self.features_per_level, self.features_per_level[1:])) \
                or self.features_per_level[0] < 1:
            raise ConfigError('features_per_level must be positive and strictly increasing, got {0}'
                              .format(self.features_per_level))
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError('conv_kernel must be odd, got {0}'.format(self.conv_kernel))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError('Channel counts must be positive')
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ConfigError('final_activation must be one of {0}, got {1}'
                              .format(FINAL_ACTIVATIONS, self.final_activation))
        return self

    @property
    def alignment(self):
        return 2 ** self.levels

    def to_dict(self):
        result = asdict(self)
        result['norm_kind'] = self.norm_kind.value
        result['features_per_level'] = list(self.features_per_level)
        return result

    @classmethod
    def from_dict(cls, values):
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigError('Unknown model configuration keys: {0}'.format(sorted(unknown)))
        return cls(**values)


def _stage(in_channels, out_channels, config):
    blocks = []
    for index in range(config.blocks_per_level):
        blocks.append(ConvBlock(in_channels if index == 0 else out_channels, out_channels, kind=config.norm_kind,
                                kernel=config.conv_kernel, momentum=config.momentum, eps=config.eps,
                                r_max=config.r_max, d_max=config.d_max))
    return Sequential(*blocks, names=['block{0}'.format(i) for i in range(len(blocks))])


class UNet(Layer):

    def __init__(self, config):
        super(UNet, self).__init__()
        self.config = config.validate()
        self.trained_steps = 0
        features = config.features_per_level
        levels = config.levels
        self.encoders = [_stage(config.in_channels if level == 0 else features[level - 1], features[level], config)
                         for level in range(levels)]
        self.pools = [MaxPool3d() for _ in range(levels)]
        self.bottleneck = _stage(features[levels - 1], features[levels], config)
        self.upsamplers = [ConvTranspose3d(features[level + 1], features[level]) for level in range(levels)]
        self.decoders = [_stage(2 * features[level], features[level], config) for level in range(levels)]
        self.head = Conv3d(features[0], config.out_channels, kernel=1)
        self.activation = Sigmoid(linear=config.final_activation == 'linear')

    @property
    def in_channels(self):
        return self.config.in_channels

    @property
    def out_channels(self):
        return self.config.out_channels

    @property
    def alignment(self):
        return self.config.alignment

    def children(self):
        named = []
        for level in range(self.config.levels):
            named.append(('encoder{0}'.format(level), self.encoders[level]))
            named.append(('pool{0}'.format(level), self.pools[level]))
        named.append(('bottleneck', self.bottleneck))
        for level in reversed(range(self.config.levels)):
            named.append(('upsample{0}'.format(level), self.upsamplers[level]))
            named.append(('decoder{0}'.format(level), self.decoders[level]))
        named.append(('head', self.head))
        named.append(('activation', self.activation))
        return named

    def check_input(self, x):
        if x.ndim != 5:
            raise ShapeError('U-Net expects an [N, C, D, H, W] tile, got shape {0}'.format(x.shape))
        if x.shape[1] != self.config.in_channels:
            raise ShapeError('U-Net expects {0} input channels, got {1}'.format(self.config.in_channels, x.shape[1]))
        if any(extent % self.alignment for extent in x.shape[2:]):
            raise ShapeError('Spatial extents {0} must be divisible by {1}'.format(x.shape[2:], self.alignment))

    def forward(self, x, mode, commit=True, record=True):
        self.check_input(x)
        skips = []
        for encoder, pool in zip(self.encoders, self.pools):
            x = encoder.forward(x, mode, commit=commit, record=record)
            skips.append(x)
            x = pool.forward(x, mode, commit=commit, record=record)
        x = self.bottleneck.forward(x, mode, commit=commit, record=record)
        for level in reversed(range(self.config.levels)):
            up = self.upsamplers[level].forward(x, mode, commit=commit, record=record)
            x = np.concatenate([skips[level], up], axis=1)
            x = self.decoders[level].forward(x, mode, commit=commit, record=record)
        x = self.head.forward(x, mode, commit=commit, record=record)
        x = self.activation.forward(x, mode, commit=commit, record=record)
        return assert_finite(x, 'U-Net output')

    def backward(self, upstream):
        upstream = self.activation.backward(upstream)
        upstream = self.head.backward(upstream)
        skip_grads = []
        for level in range(self.config.levels):
            upstream = self.decoders[level].backward(upstream)
            width = self.config.features_per_level[level]
            skip_grads.append(upstream[:, :width])
            upstream = self.upsamplers[level].backward(np.ascontiguousarray(upstream[:, width:]))
        upstream = self.bottleneck.backward(upstream)
        for level in reversed(range(self.config.levels)):
            upstream = self.pools[level].backward(upstream) + skip_grads[level]
            upstream = self.encoders[level].backward(upstream)
        return upstream

    def _encoder_footprint(self, level, lo, hi):
        lo, hi = self.encoders[level].footprint(lo, hi)
        if level == 0:
            return lo, hi
        return self._encoder_footprint(level - 1, *self.pools[level - 1].footprint(lo, hi))

    def _decoder_footprint(self, level, lo, hi):
        lo, hi = self.decoders[level].footprint(lo, hi)
        skip_lo, skip_hi = self._encoder_footprint(level, lo, hi)
        up_lo, up_hi = self.upsamplers[level].footprint(lo, hi)
        if level + 1 < self.config.levels:
            up_lo, up_hi = self._decoder_footprint(level + 1, up_lo, up_hi)
        else:
            up_lo, up_hi = self.bottleneck.footprint(up_lo, up_hi)
            up_lo, up_hi = self._encoder_footprint(level, *self.pools[level].footprint(up_lo, up_hi))
        return min(skip_lo, up_lo), max(skip_hi, up_hi)

    def footprint(self, lo, hi):
        return self._decoder_footprint(0, *self.head.footprint(lo, hi))

    def set_renorm_progress(self, progress):
        for _, layer in self.norm_layers():
            if layer.kind is NormKind.BATCH_RENORM:
                layer.set_renorm_progress(progress)


def build(config):
    """
    Instantiates a U-Net with He-normal convolution weights drawn from ``config.seed``. Biases start at zero,
    ``gamma`` at one, ``beta`` at zero and the running statistics at mean zero, variance one.
    """
    model = UNet(config)
    model.initialize(SplitMix64(config.seed))
    return model


def forward(model, tile, mode):
    return model.forward(tile, mode)


def backward(model, loss_grad):
    model.backward(loss_grad)
    return model.flat_gradients()


def parameter_count(config):
    """
    Closed-form number of trainable parameters:

        conv(a, b)  = b * a * k^3 + b
        block(a, b) = conv(a, b) + 2 * b                  (no affine term for the identity norm)
        stage(a, b) = block(a, b) + (B - 1) * block(b, b)
        total = sum_l stage(f[l-1], f[l])  (f[-1] = in_channels)
              + stage(f[L-1], f[L])
              + sum_l [f[l+1] * f[l] * 8 + f[l]] + sum_l stage(2 f[l], f[l])
              + out * f[0] + out
    """
    config.validate()
    k3 = config.conv_kernel ** 3
    affine = 0 if config.norm_kind is NormKind.IDENTITY else 2

    def block(a, b):
        return b * a * k3 + b + affine * b

    def stage(a, b):
        return block(a, b) + (config.blocks_per_level - 1) * block(b, b)

    f = config.features_per_level
    total = 0
    for level in range(config.levels):
        total += stage(config.in_channels if level == 0 else f[level - 1], f[level])
        total += f[level + 1] * f[level] * 8 + f[level]
        total += stage(2 * f[level], f[level])
    total += stage(f[config.levels - 1], f[config.levels])
    total += config.out_channels * f[0] + config.out_channels
    return total
