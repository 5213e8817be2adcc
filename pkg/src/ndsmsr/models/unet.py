import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..backbones.basic import ConvUnit
from ..utils.image import hwc_to_tensor
from ..utils.errors import ConfigError, ShapeError

OUTPUT_ACTIVATIONS = ('nonneg',)


@dataclass
class NdsmNetConfig:
    depth: int = 3
    base_channels: int = 16
    output_activation: str = 'nonneg'

    def validate(self):
        if self.depth < 2:
            raise ConfigError('ndsm_net depth must be >= 2, got %s' % self.depth)
        if self.base_channels < 1:
            raise ConfigError('ndsm_net base_channels must be >= 1, got %s' % self.base_channels)
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError('unknown ndsm_net output_activation "%s". Available options are %s'
                              % (self.output_activation, ', '.join(OUTPUT_ACTIVATIONS)))
        return self


class DoubleConv(nn.Sequential):

    def __init__(self, cin, cout):
        super().__init__(ConvUnit(cin, cout, 3, activ='relu'), ConvUnit(cout, cout, 3, activ='relu'))


class NdsmNet(nn.Module):
    """U-Net encoder-decoder mapping an RGB image in [0, 1] to a heightmap in meters.
    ``depth`` counts encoder levels, so the bottleneck runs at 1/2^(depth-1) resolution.
    Inputs of any size are replicate-padded to a multiple of that factor and cropped back.
    """

    kind = 'ndsm'

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        c = config.base_channels
        widths = [c * 2 ** i for i in range(config.depth)]
        self.encoders = nn.ModuleList([DoubleConv(3 if i == 0 else widths[i - 1], w) for i, w in enumerate(widths)])
        self.ups = nn.ModuleList([nn.ConvTranspose2d(widths[i + 1], widths[i], 2, 2) for i in reversed(range(config.depth - 1))])
        self.decoders = nn.ModuleList([DoubleConv(2 * widths[i], widths[i]) for i in reversed(range(config.depth - 1))])
        self.final = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError('ndsm network expects (N, 3, H, W) input, got %s' % (tuple(x.shape),))
        h, w = x.shape[2:]
        m = 2 ** (self.config.depth - 1)
        ph, pw = -h % m, -w % m
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode='replicate')

        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        x = skips.pop()
        for up, dec in zip(self.ups, self.decoders):
            x = dec(torch.cat([up(x), skips.pop()], 1))

        x = F.softplus(self.final(x))   # heights are >= 0
        return x[:, :, :h, :w]


def build_ndsm_net(config):
    return NdsmNet(config)


def ndsm_forward(ndsm_net, rgb, batch_size=8):
    """Heightmaps for an (N, H, W, 3) numpy batch (returns (N, H, W, 1)) or an (N, 3, H, W) tensor."""
    as_numpy = isinstance(rgb, np.ndarray)
    x = hwc_to_tensor(rgb) if as_numpy else rgb
    dv = next(ndsm_net.parameters()).device
    outs = []
    ndsm_net.eval()
    with torch.inference_mode():
        for i in range(0, x.shape[0], batch_size):
            outs.append(ndsm_net(x[i:i + batch_size].to(dv, torch.float32)).cpu())
    out = torch.cat(outs)
    return out.numpy().transpose(0, 2, 3, 1) if as_numpy else out


def freeze(model):
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def is_frozen(model):
    return not any(p.requires_grad for p in model.parameters())


def parameter_checksum(model):
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode('utf-8'))
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
