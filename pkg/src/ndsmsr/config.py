import hashlib
import os.path as osp
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Optional, Tuple

import yaml

from .losses import LossWeights, NDSM_REDUCTIONS
from .models.generator import GeneratorConfig
from .models.unet import NdsmNetConfig
from .utils.errors import ConfigError

NESTED = ('weights', 'generator', 'ndsm_net')
# the generator's scale always follows TrainConfig.scale
DERIVED_KEYS = ('generator.scale',)
# keys that may change between a checkpoint and its resume without invalidating it
RESUMABLE_KEYS = ('ndsm_steps', 'pretrain_steps', 'gan_steps', 'checkpoint_every', 'log_every', 'device', 'weights.epsilon')


@dataclass
class TrainConfig:
    """Desk-scale training recipe. Full scale is patch_px=520 with the full-size generator."""
    scale: int = 4
    patch_px: int = 128
    learning_rate: float = 1e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    batch_size: int = 4
    ndsm_steps: int = 500
    pretrain_steps: int = 800
    gan_steps: int = 500
    patches_per_scene: int = 8
    seed: int = 0
    checkpoint_every: int = 100
    log_every: int = 50
    ndsm_reduction: str = 'mean'
    device: Optional[str] = None
    discriminator_channels: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    ndsm_net: NdsmNetConfig = field(default_factory=NdsmNetConfig)

    def validate(self):
        if self.scale not in (4, 8):
            raise ConfigError('scale must be 4 or 8, got %s' % self.scale)
        if not self.learning_rate > 0:
            raise ConfigError('learning_rate must be > 0, got %s' % self.learning_rate)
        if self.patch_px < 8 or self.patch_px % self.scale or self.patch_px % 8:
            raise ConfigError('patch_px must be divisible by the scale (%u) and by 8, got %s' % (self.scale, self.patch_px))
        for name in ('batch_size', 'ndsm_steps', 'pretrain_steps', 'gan_steps', 'patches_per_scene', 'checkpoint_every', 'log_every'):
            if getattr(self, name) < 1:
                raise ConfigError('%s must be >= 1, got %s' % (name, getattr(self, name)))
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigError('adam_betas must be two values in [0, 1), got %s' % (self.adam_betas,))
        if self.ndsm_reduction not in NDSM_REDUCTIONS:
            raise ConfigError('unknown ndsm_reduction "%s". Available options are %s' % (self.ndsm_reduction, ', '.join(NDSM_REDUCTIONS)))
        if self.discriminator_channels < 1:
            raise ConfigError('discriminator_channels must be >= 1')
        self.weights.validate()
        self.generator_config().validate()
        self.ndsm_net.validate()
        return self

    def generator_config(self):
        return replace(self.generator, scale=self.scale)

    @property
    def lr_px(self):
        return self.patch_px // self.scale


def coerce(value, default, key):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError('expected true/false')
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError('expected an integer')
            return int(float(value))
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(v) for v in value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError('bad value for "%s": %r (%s)' % (key, value, e))
    return value


def coerce_or_null(value, default, key):
    # only keys whose default is null (device, weights.epsilon) accept null
    if value is None:
        if default is not None:
            raise ConfigError('"%s" cannot be null' % key)
        return None
    if default is None:
        return coerce(value, 0.0 if key == 'weights.epsilon' else '', key)
    return coerce(value, default, key)


def to_flat(cfg):
    """{dotted key: value} for every field, nested configs expanded as ``weights.alpha`` etc."""
    flat = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            for sub in fields(v):
                key = '%s.%s' % (f.name, sub.name)
                if key not in DERIVED_KEYS:
                    flat[key] = getattr(v, sub.name)
        else:
            flat[f.name] = list(v) if isinstance(v, tuple) else v
    return flat


def from_flat(flat, base=None):
    base = base or TrainConfig()
    known = to_flat(base)
    unknown = sorted(k for k in flat if k not in known)
    if unknown:
        raise ConfigError('unknown config keys: %s' % ', '.join(unknown))
    top, nested = {}, {name: {} for name in NESTED}
    for key, value in flat.items():
        if '.' in key:
            group, name = key.split('.', 1)
            nested[group][name] = coerce_or_null(value, getattr(getattr(base, group), name), key)
        else:
            top[key] = coerce_or_null(value, getattr(base, key), key)
    for name in NESTED:
        top[name] = replace(getattr(base, name), **nested[name])
    return replace(base, **top).validate()


def load_config(path, **overrides):
    """Reads a flat YAML mapping. Omitted keys keep their defaults; ``overrides`` (dotted keys
    allowed via dict unpacking) are applied on top, e.g. the CLI's --seed.
    """
    if not osp.isfile(path):
        raise ConfigError('config file not found: %s' % path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError('cannot parse %s: %s' % (path, e))
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError('%s must hold a key: value mapping' % path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return from_flat(data)


def dump_config(cfg):
    return yaml.safe_dump(to_flat(cfg), sort_keys=True)


def save_config(cfg, path):
    with open(path, 'w') as f:
        f.write(dump_config(cfg))


def config_hash(cfg):
    """Hash of everything that changes what a training run computes (step budgets excluded)."""
    flat = {k: v for k, v in to_flat(cfg).items() if k not in RESUMABLE_KEYS}
    return hashlib.sha1(yaml.safe_dump(flat, sort_keys=True).encode('utf-8')).hexdigest()[:16]
