from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .raster import RasterGrid
from ..utils.errors import ConfigError, DataError, ShapeError

SCALES = (4, 8)
DOWNSAMPLE_FACTORS = (2, 4, 8)


@dataclass(frozen=True)
class ScenePair:
    rgb: RasterGrid
    ndsm: RasterGrid
    id: str
    # what the synthetic generator drew: (kind, row, col, height_px, width_px, meters); empty for real data
    placements: Tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.rgb.channels != 3 or self.ndsm.channels != 1:
            raise ShapeError('scene %s: expected 3-channel rgb and 1-channel ndsm, got %u and %u' % (
                self.id, self.rgb.channels, self.ndsm.channels))
        if (self.rgb.height, self.rgb.width) != (self.ndsm.height, self.ndsm.width):
            raise ShapeError('scene %s: rgb is %ux%u but ndsm is %ux%u' % (
                self.id, self.rgb.height, self.rgb.width, self.ndsm.height, self.ndsm.width))
        if self.rgb.geo is not None and self.ndsm.geo is not None and self.rgb.geo != self.ndsm.geo:
            raise ShapeError('scene %s: rgb and ndsm carry different georeferencing' % self.id)


@dataclass(frozen=True)
class Crop:
    hr: RasterGrid
    hr_ndsm: RasterGrid
    row: int
    col: int


@dataclass(frozen=True)
class PatchPair:
    lr: RasterGrid
    hr: RasterGrid
    hr_ndsm: RasterGrid
    scale: int

    def __post_init__(self):
        s = self.scale
        if (self.hr.height, self.hr.width) != (s * self.lr.height, s * self.lr.width):
            raise ShapeError('hr %ux%u is not %u x lr %ux%u' % (self.hr.height, self.hr.width, s, self.lr.height, self.lr.width))
        if (self.hr_ndsm.height, self.hr_ndsm.width) != (self.hr.height, self.hr.width):
            raise ShapeError('hr_ndsm does not match hr dimensions')


def cubic_kernel(x, a=-0.5):
    """Keys cubic convolution kernel; a = -0.5 is the Catmull-Rom spline, same as GDAL's cubic."""
    x = np.abs(x)
    x2, x3 = x ** 2, x ** 3
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def cubic_weights(in_size, out_size):
    """(out_size, in_size) matrix resampling one axis with pixel-center alignment and
    edge replication. No antialiasing on decimation, i.e. plain 4-tap bicubic.
    """
    scale = in_size / out_size
    centers = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    W = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    for tap in range(-1, 3):
        idx = base + tap
        w = cubic_kernel(centers - idx)
        np.add.at(W, (rows, np.clip(idx, 0, in_size - 1)), w)
    return W


def resample_to(grid, height, width):
    """Separable bicubic resampling of every channel to (height, width). Nodata masks follow by nearest neighbour."""
    wy = cubic_weights(grid.height, height)
    wx = cubic_weights(grid.width, width)
    v = grid.values.astype(np.float64)
    out = np.einsum('oh,hwc,pw->opc', wy, v, wx).astype(np.float32)
    mask = None
    if grid.nodata_mask is not None:
        ri = np.minimum((np.arange(height) + 0.5) * grid.height // height, grid.height - 1).astype(np.int64)
        ci = np.minimum((np.arange(width) + 0.5) * grid.width // width, grid.width - 1).astype(np.int64)
        mask = grid.nodata_mask[np.ix_(ri, ci)]
    geo = None
    if grid.geo is not None:
        geo = grid.geo.scaled(height / grid.height)
    return RasterGrid(out, geo, mask)


def bicubic_downsample(img, factor):
    if factor not in DOWNSAMPLE_FACTORS:
        raise ConfigError('downsampling factor must be one of %s, got %s' % (DOWNSAMPLE_FACTORS, factor))
    if img.height % factor or img.width % factor:
        raise ShapeError('%ux%u is not divisible by %u; crop the image to a multiple of the factor first' % (
            img.height, img.width, factor))
    return resample_to(img, img.height // factor, img.width // factor)


def bicubic_upsample(img, factor, clip=True):
    """The BICUBIC baseline: same kernel as the downsampling that produced the LR image."""
    out = resample_to(img, img.height * factor, img.width * factor)
    if clip:
        out = RasterGrid(np.clip(out.values, 0, 1), out.geo, out.nodata_mask)
    return out


def crop_patches(scene, patch_px, count, rng_seed, max_tries=50):
    """Random square windows sampled at the same place from rgb and ndsm.
    Windows touching nodata in either grid are rejected and redrawn.
    """
    h, w = scene.rgb.height, scene.rgb.width
    if h < patch_px or w < patch_px:
        raise DataError('scene %s (%ux%u) is smaller than the %upx patch' % (scene.id, h, w, patch_px))
    if count < 1:
        raise ConfigError('patch count must be >= 1, got %d' % count)
    masks = [g.nodata_mask for g in (scene.rgb, scene.ndsm) if g.nodata_mask is not None]
    rng = np.random.default_rng(rng_seed)
    crops = []
    tries = 0
    while len(crops) < count:
        if tries >= count * max_tries:
            raise DataError('scene %s: could not find %u nodata-free %upx windows' % (scene.id, count, patch_px))
        tries += 1
        r = int(rng.integers(0, h - patch_px + 1))
        c = int(rng.integers(0, w - patch_px + 1))
        if any(m[r:r + patch_px, c:c + patch_px].any() for m in masks):
            continue
        crops.append(Crop(scene.rgb.window(r, c, patch_px), scene.ndsm.window(r, c, patch_px), r, c))
    return crops


def make_pairs(crops, scale):
    if scale not in SCALES:
        raise ConfigError('scale must be one of %s, got %s' % (SCALES, scale))
    pairs = []
    for crop in crops:
        lr = bicubic_downsample(crop.hr, scale)
        # negative kernel lobes overshoot around sharp edges
        lr = RasterGrid(np.clip(lr.values, 0, 1), lr.geo, lr.nodata_mask)
        pairs.append(PatchPair(lr, crop.hr, crop.hr_ndsm, scale))
    return pairs
