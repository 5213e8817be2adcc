from dataclasses import dataclass

import torch
import torch.nn as nn

from ..backbones.basic import ConvUnit
from ..utils.errors import ConfigError, ShapeError

TOTAL_STRIDE = 8


@dataclass
class DiscriminatorConfig:
    input_px: int = 128
    base_channels: int = 32
    dense_features: int = 64

    def validate(self):
        if self.input_px < TOTAL_STRIDE or self.input_px % TOTAL_STRIDE:
            raise ConfigError('discriminator input_px must be a multiple of %u, got %s' % (TOTAL_STRIDE, self.input_px))
        if self.base_channels < 1 or self.dense_features < 1:
            raise ConfigError('discriminator channel counts must be >= 1')
        return self


class Discriminator(nn.Module):
    """SRGAN-style classifier: pairs of 3x3 convs (stride 1 then 2) doubling channels per level,
    three levels deep, then two dense layers down to a single "real HR" probability.
    """

    kind = 'discriminator'

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        c = config.base_channels
        chans = [(3, c, 1), (c, c, 2), (c, 2 * c, 1), (2 * c, 2 * c, 2), (2 * c, 4 * c, 1), (4 * c, 4 * c, 2)]
        self.features = nn.Sequential(*[ConvUnit(cin, cout, 3, s, 1, activ='lrelu_0.2') for cin, cout, s in chans])
        side = config.input_px // TOTAL_STRIDE
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(4 * c * side * side, config.dense_features),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(config.dense_features, 1)
        )

    def forward(self, x):
        px = self.config.input_px
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, px, px):
            raise ShapeError('discriminator expects (N, 3, %u, %u) input, got %s' % (px, px, tuple(x.shape)))
        x = self.features(x)
        return torch.sigmoid(self.head(x)).squeeze(1)


def build_discriminator(input_px, base_channels, dense_features=64):
    return Discriminator(DiscriminatorConfig(input_px, base_channels, dense_features))
