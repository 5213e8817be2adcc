import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import yaml

from .errors import BundleError, BundleKindError

MAGIC = b'SRBUNDLE'
FORMAT_VERSION = 1
KINDS = ('generator', 'discriminator', 'ndsm')

U16, U32, U64 = struct.Struct('<H'), struct.Struct('<I'), struct.Struct('<Q')
DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8'), 2: np.dtype('<f2'), 3: np.dtype('<i8'), 4: np.dtype('<i4'), 5: np.dtype('u1')}
DTYPE_CODES = {(dt.kind, dt.itemsize): code for code, dt in DTYPES.items()}


@dataclass
class ModelBundle:
    """A network's parameters plus everything needed to rebuild it. ``parameters`` maps
    state_dict names to numpy arrays; ``training_meta`` holds small YAML-safe values
    (step count, pretrain MAE, validation MAE in meters, ...).
    """
    kind: str
    config: object
    parameters: OrderedDict
    format_version: int = FORMAT_VERSION
    training_meta: dict = field(default_factory=dict)


def atomic_write(path, data):
    """Bytes to ``path`` through a temp file and a rename, so readers never see half a file."""
    tmp = path + '.tmp'
    with open(tmp, 'wb') as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def pack_block(data):
    return U32.pack(len(data)) + data


def encode_bundle(bundle):
    cfg = bundle.config if isinstance(bundle.config, dict) else asdict(bundle.config)
    out = [MAGIC, U32.pack(bundle.format_version),
           pack_block(bundle.kind.encode('utf-8')),
           pack_block(yaml.safe_dump(cfg, sort_keys=True).encode('utf-8')),
           pack_block(yaml.safe_dump(dict(bundle.training_meta), sort_keys=True).encode('utf-8')),
           U32.pack(len(bundle.parameters))]
    for name, arr in bundle.parameters.items():
        arr = np.ascontiguousarray(arr)
        code = DTYPE_CODES.get((arr.dtype.kind, arr.dtype.itemsize))
        if code is None:
            raise BundleError('parameter %s has unsupported dtype %s' % (name, arr.dtype))
        payload = arr.astype(DTYPES[code], copy=False).tobytes()
        nm = name.encode('utf-8')
        out += [U16.pack(len(nm)), nm, bytes([code, arr.ndim])]
        out += [U32.pack(d) for d in arr.shape]
        out += [U64.pack(len(payload)), payload]
    return b''.join(out)


class Reader:

    def __init__(self, data, path):
        self.data, self.path, self.pos = data, path, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise BundleError('bundle %s is truncated (needed %u bytes at offset %u, file has %u)'
                              % (self.path, n, self.pos, len(self.data)))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st):
        return st.unpack(self.take(st.size))[0]

    def block(self):
        return self.take(self.unpack(U32))


def decode_bundle(data, path='<memory>'):
    r = Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise BundleError('%s is not a model bundle (bad magic)' % path)
    version = r.unpack(U32)
    if version != FORMAT_VERSION:
        raise BundleError('%s has bundle format version %u, this build reads version %u' % (path, version, FORMAT_VERSION))
    try:
        kind = r.block().decode('utf-8')
        config = yaml.safe_load(r.block().decode('utf-8')) or {}
        meta = yaml.safe_load(r.block().decode('utf-8')) or {}
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise BundleError('%s has a corrupt header: %s' % (path, e))
    if kind not in KINDS:
        raise BundleError('%s has unknown model kind "%s"' % (path, kind))
    params = OrderedDict()
    for _ in range(r.unpack(U32)):
        name = r.take(r.unpack(U16)).decode('utf-8')
        code, ndim = r.take(2)
        if code not in DTYPES:
            raise BundleError('%s: parameter %s has unknown dtype code %u' % (path, name, code))
        shape = tuple(r.unpack(U32) for _ in range(ndim))
        payload = r.take(r.unpack(U64))
        dt = DTYPES[code]
        if len(payload) != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise BundleError('%s: parameter %s payload does not match shape %s' % (path, name, shape))
        params[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder('='))
    if r.pos != len(data):
        raise BundleError('%s has %u trailing bytes' % (path, len(data) - r.pos))
    return ModelBundle(kind, config, params, version, meta)


def bundle_from_model(model, meta=None):
    params = OrderedDict((k, v.detach().cpu().numpy().copy()) for k, v in model.state_dict().items())
    return ModelBundle(model.kind, model.config, params, FORMAT_VERSION, dict(meta or {}))


def save_bundle(model, path, meta=None):
    """Serializes a generator / discriminator / ndsm network (or a ready ModelBundle) to ``path``."""
    bundle = model if isinstance(model, ModelBundle) else bundle_from_model(model, meta)
    atomic_write(path, encode_bundle(bundle))
    return bundle


def load_bundle(path, expected_kind=None):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise BundleError('cannot read bundle %s: %s' % (path, e))
    bundle = decode_bundle(data, path)
    if expected_kind and bundle.kind != expected_kind:
        raise BundleKindError('%s holds a "%s" model where a "%s" was expected' % (path, bundle.kind, expected_kind))
    return bundle


def load_weights(model, bundle):
    """Copies bundle parameters into ``model`` after checking that every name and shape
    matches what the model's config implies. Nothing is copied if anything differs.
    """
    own = model.state_dict()
    missing = [k for k in own if k not in bundle.parameters]
    extra = [k for k in bundle.parameters if k not in own]
    if missing or extra:
        raise BundleError('bundle does not fit the model: missing %s, unexpected %s' % (missing[:5], extra[:5]))
    wd = OrderedDict()
    for k, t in own.items():
        arr = bundle.parameters[k]
        if tuple(arr.shape) != tuple(t.shape):
            raise BundleError('parameter %s has shape %s, model expects %s' % (k, tuple(arr.shape), tuple(t.shape)))
        wd[k] = torch.from_numpy(arr.copy())
    model.load_state_dict(wd)
    return model


def build_from_bundle(bundle, device='cpu'):
    """Rebuilds the network a bundle describes and loads its parameters."""
    from ..models.discriminator import Discriminator, DiscriminatorConfig
    from ..models.generator import Generator, GeneratorConfig
    from ..models.unet import NdsmNet, NdsmNetConfig

    classes = {'generator': (Generator, GeneratorConfig),
               'discriminator': (Discriminator, DiscriminatorConfig),
               'ndsm': (NdsmNet, NdsmNetConfig)}
    model_cls, cfg_cls = classes[bundle.kind]
    cfg = bundle.config
    if isinstance(cfg, dict):
        try:
            cfg = cfg_cls(**cfg)
        except TypeError as e:
            raise BundleError('bundle config does not describe a %s: %s' % (bundle.kind, e))
    model = load_weights(model_cls(cfg), bundle)
    return model.to(device)


def load_model(path, expected_kind=None, device='cpu'):
    return build_from_bundle(load_bundle(path, expected_kind), device)
