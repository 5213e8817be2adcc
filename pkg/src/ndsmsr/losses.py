import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .models.unet import is_frozen
from .utils.errors import ConfigError, ShapeError

# scores are clamped to [DELTA, 1 - DELTA] before any log
DELTA = 1e-7
NDSM_REDUCTIONS = ('mean', 'norm')


@dataclass
class LossWeights:
    """Weights of the combined objective: total = alpha * ndsm + content + adv_weight * adversarial.
    ``epsilon`` is the Huber transition point; None means "twice the MAE of the pretrained generator".
    """
    alpha: float = 0.01
    adv_weight: float = 0.001
    epsilon: Optional[float] = None
    label_smoothing: float = 0.2

    def validate(self):
        if self.alpha < 0:
            raise ConfigError('weights.alpha must be >= 0, got %s' % self.alpha)
        if self.adv_weight < 0:
            raise ConfigError('weights.adv_weight must be >= 0, got %s' % self.adv_weight)
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError('weights.epsilon must be > 0, got %s' % self.epsilon)
        if not 0 <= self.label_smoothing < 0.5:
            raise ConfigError('weights.label_smoothing must be in [0, 0.5), got %s' % self.label_smoothing)
        return self


@dataclass
class LossBreakdown:
    content: float
    ndsm: float
    adversarial: float
    total: float

    def to_record(self, step, phase=None):
        rec = {'step': step, 'content': self.content, 'ndsm': self.ndsm, 'adversarial': self.adversarial, 'total': self.total}
        if phase:
            rec['phase'] = phase
        return rec


def check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError('%s: shapes %s and %s differ' % (what, tuple(a.shape), tuple(b.shape)))


def huber_content(sr, hr, epsilon):
    """Mean Huber loss with transition point ``epsilon``: a^2/2 inside, eps*|a| - eps^2/2 outside."""
    check_same_shape(sr, hr, 'content loss')
    if not epsilon > 0:
        raise ConfigError('Huber epsilon must be > 0, got %s' % epsilon)
    return F.huber_loss(sr, hr, reduction='mean', delta=float(epsilon))


def mae_loss(sr, hr):
    check_same_shape(sr, hr, 'MAE loss')
    return F.l1_loss(sr, hr)


def ndsm_loss(sr, hr, ndsm_net, reduction='mean'):
    """Height-map consistency through a frozen nDSM network.
    'mean': mean squared difference over batch and pixels.
    'norm': L2 norm of each image's height difference, averaged over the batch.
    The hr branch is evaluated without a graph, so gradients reach ``sr`` only.
    """
    check_same_shape(sr, hr, 'nDSM loss')
    if reduction not in NDSM_REDUCTIONS:
        raise ConfigError('unknown nDSM loss reduction "%s". Available options are %s' % (reduction, ', '.join(NDSM_REDUCTIONS)))
    if not is_frozen(ndsm_net):
        raise ConfigError('the nDSM network must be frozen before it is used as a loss')
    with torch.no_grad():
        target = ndsm_net(hr)
    diff = ndsm_net(sr) - target
    if reduction == 'norm':
        return diff.flatten(1).norm(dim=1).mean()
    return diff.pow(2).mean()


def adversarial_g_loss(fake_scores):
    """Non-saturating generator loss: mean of -log D(G(x))."""
    return -torch.log(fake_scores.clamp(min=DELTA)).mean()


def discriminator_loss(real_scores, fake_scores, label_smoothing=0.2):
    """BCE on real scores with target 1 - label_smoothing plus BCE on fake scores with target 0,
    each averaged over its batch. Only real labels are smoothed.
    """
    real = real_scores.clamp(DELTA, 1 - DELTA)
    fake = fake_scores.clamp(DELTA, 1 - DELTA)
    real_loss = F.binary_cross_entropy(real, torch.full_like(real, 1 - label_smoothing))
    fake_loss = F.binary_cross_entropy(fake, torch.zeros_like(fake))
    return real_loss + fake_loss


def weighted_total(content, ndsm, adversarial, weights):
    # works on floats and on tensors alike; the training step backpropagates through this
    return weights.alpha * ndsm + content + weights.adv_weight * adversarial


def combined_loss(content, ndsm, adversarial, weights):
    content, ndsm, adversarial = (float(v) for v in (content, ndsm, adversarial))
    return LossBreakdown(content, ndsm, adversarial, weighted_total(content, ndsm, adversarial, weights))


def select_epsilon(pretrain_mae):
    """Huber transition point for GAN training: twice the MAE of the pretrained generator."""
    if pretrain_mae is None or not math.isfinite(pretrain_mae) or pretrain_mae <= 0:
        raise ConfigError('cannot derive epsilon from pretrain MAE %s (degenerate pretraining)' % pretrain_mae)
    return 2 * pretrain_mae
