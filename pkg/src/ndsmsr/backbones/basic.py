import torch.nn as nn


class ConvUnit(nn.Module):
    """Conv + optional activation. No normalization layers: batch norm is removed everywhere
    in these networks, so the only knobs are the activation and the init gain.
    """

    def __init__(self, cin, cout, k=3, s=1, p=None, activ=None, init_scale=1.0):
        super().__init__()

        cin, cout = int(cin), int(cout)
        p = k // 2 if p is None else p
        self.conv = nn.Conv2d(cin, cout, k, s, p, bias=True)
        init_conv(self.conv, init_scale)

        if activ == None:
            self.activ = None
        elif activ == 'relu':
            self.activ = nn.ReLU(inplace=True)
        elif activ == 'prelu':
            self.activ = nn.PReLU(cout)
        elif activ.startswith('lrelu'):
            leak = float(activ.split('_')[1])
            self.activ = nn.LeakyReLU(leak, inplace=True)
        else:
            raise ValueError('unknown activation "%s"' % activ)

    def forward(self, x, add=None):
        x = self.conv(x)
        if add is not None:
            x = x + add
        if self.activ:
            x = self.activ(x)
        return x


def init_conv(conv, scale=1.0):
    # fan-in scaled normal, scaled down by 0.1 on residual branches
    nn.init.kaiming_normal_(conv.weight, a=0, mode='fan_in')
    conv.weight.data.mul_(scale)
    nn.init.zeros_(conv.bias)


def count_parameters(model, trainable_only=True):
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)

