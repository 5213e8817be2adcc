import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..backbones.basic import ConvUnit, init_conv
from ..utils.image import hwc_to_tensor
from ..utils.errors import ConfigError, ShapeError


@dataclass
class GeneratorConfig:
    """Desk-scale defaults (2 blocks x 3 RRDBs, 32 channels) train on a CPU in minutes.
    The full-scale setting of the ESRGAN lineage is num_blocks=8, base_channels=64, growth_channels=32.
    ``extra_convs=False`` drops the conv+PReLU layers after each upsampling unit and before the output.
    """
    scale: int = 4
    num_blocks: int = 2
    rrdbs_per_block: int = 3
    base_channels: int = 32
    residual_scale: float = 0.2
    growth_channels: int = 16
    extra_convs: bool = True

    def validate(self):
        if self.scale not in (4, 8):
            raise ConfigError('generator scale must be 4 or 8, got %s' % self.scale)
        if not 0 < self.residual_scale <= 1:
            raise ConfigError('residual_scale must be in (0, 1], got %s' % self.residual_scale)
        for name in ('num_blocks', 'rrdbs_per_block', 'base_channels', 'growth_channels'):
            if getattr(self, name) < 1:
                raise ConfigError('generator %s must be >= 1, got %s' % (name, getattr(self, name)))
        return self


class RRDB(nn.Module):
    """Densely connected 5-conv block; the scaled output is added back onto its input."""

    def __init__(self, c, gc, beta, convs=5):
        super().__init__()
        self.beta = beta
        self.convs = nn.ModuleList([ConvUnit(c + i * gc, gc, 3, activ='lrelu_0.2', init_scale=0.1)
                                    for i in range(convs - 1)])
        self.last = nn.Conv2d(c + (convs - 1) * gc, c, 3, 1, 1)
        init_conv(self.last, 0.1)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(conv(torch.cat(feats, 1)))
        return x + self.beta * self.last(torch.cat(feats, 1))


class RRDBGroup(nn.Module):
    """A block of RRDBs whose merge node scales the chain's output before adding the block input."""

    def __init__(self, c, gc, beta, count):
        super().__init__()
        self.beta = beta
        self.rrdbs = nn.Sequential(*[RRDB(c, gc, beta) for _ in range(count)])

    def forward(self, x):
        return x + self.beta * self.rrdbs(x)


class Upsample2x(nn.Module):

    def __init__(self, c, extra_convs):
        super().__init__()
        self.conv = nn.Conv2d(c, c * 4, 3, 1, 1)
        init_conv(self.conv)
        self.shuffle = nn.PixelShuffle(2)
        self.activ = nn.PReLU(c)
        self.post = nn.Sequential(*[ConvUnit(c, c, 3, activ='prelu') for _ in range(2 if extra_convs else 0)])

    def forward(self, x):
        return self.post(self.activ(self.shuffle(self.conv(x))))


def rescale_output(x):
    """Maps tanh output [-1, 1] onto [0, 1]: 0.5 * (x - 1) + 1 == 0.5 * x + 0.5."""
    return 0.5 * x + 0.5


class Generator(nn.Module):

    kind = 'generator'

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        c, gc, beta = config.base_channels, config.growth_channels, config.residual_scale
        self.conv_first = nn.Conv2d(3, c, 3, 1, 1)
        init_conv(self.conv_first)
        self.blocks = nn.Sequential(*[RRDBGroup(c, gc, beta, config.rrdbs_per_block) for _ in range(config.num_blocks)])
        self.trunk = nn.Conv2d(c, c, 3, 1, 1)
        init_conv(self.trunk)
        self.upsample = nn.Sequential(*[Upsample2x(c, config.extra_convs) for _ in range(int(math.log2(config.scale)))])
        self.tail = nn.Sequential(*[ConvUnit(c, c, 3, activ='prelu') for _ in range(2 if config.extra_convs else 0)])
        self.conv_last = nn.Conv2d(c, 3, 3, 1, 1)
        init_conv(self.conv_last, 0.1)

    @property
    def scale(self):
        return self.config.scale

    @property
    def receptive_radius(self):
        """How many LR pixels away an input pixel can still change an output pixel.
        Walks the layers back from the output: each 3x3 conv adds one pixel at its own resolution,
        each pixel shuffle halves the distance (rounded up).
        """
        cfg = self.config
        extra = 2 if cfg.extra_convs else 0
        r = extra + 1                      # tail + conv_last
        for _ in range(int(math.log2(cfg.scale))):
            r = math.ceil((r + extra) / 2) + 1
        return r + 2 + cfg.num_blocks * cfg.rrdbs_per_block * 5   # conv_first, trunk, 5 convs per RRDB

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError('generator expects (N, 3, H, W) input, got %s' % (tuple(x.shape),))
        fea = self.conv_first(x)
        fea = fea + self.trunk(self.blocks(fea))   # global residual
        x = self.upsample(fea)                     # [bs, c, H*scale, W*scale]
        x = self.tail(x)
        x = torch.tanh(self.conv_last(x))
        return rescale_output(x)


def build_generator(config):
    return Generator(config)


def generator_forward(generator, lr, batch_size=8):
    """Inference on a batch given as (N, H, W, 3) numpy array or (N, 3, H, W) tensor.
    Returns the same kind of object it was given.
    """
    as_numpy = isinstance(lr, np.ndarray)
    if as_numpy and lr.ndim != 4:
        raise ShapeError('generator input must be an (N, H, W, 3) batch, got shape %s' % (lr.shape,))
    x = hwc_to_tensor(lr) if as_numpy else lr
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError('generator input must have 3 channels, got shape %s' % (tuple(lr.shape),))
    dv = next(generator.parameters()).device
    outs = []
    generator.eval()
    with torch.inference_mode():
        for i in range(0, x.shape[0], batch_size):
            outs.append(generator(x[i:i + batch_size].to(dv, torch.float32)).cpu())
    out = torch.cat(outs)
    return out.numpy().transpose(0, 2, 3, 1) if as_numpy else out
