import math
from dataclasses import dataclass

import cv2
import numpy as np

from .raster import RasterGrid
from ..utils.errors import ConfigError, ShapeError

MODES = ('identity', 'constant_shift', 'random_transform')
DIRECTIONS = ('up', 'down', 'left', 'right', 'random')
# (row step, col step) the content moves by
DIRECTION_STEPS = {'up': (-1, 0), 'down': (1, 0), 'left': (0, -1), 'right': (0, 1)}


@dataclass(frozen=True)
class PerturbSpec:
    """How to misalign an nDSM against its RGB image for the alignment ablation.
    ``direction='random'`` draws one of up/down/left/right per grid from ``rng_seed``.
    """
    mode: str = 'identity'
    shift_px: int = 2
    direction: str = 'random'
    max_rotation_deg: float = 0.0
    max_skew: float = 0.0
    rng_seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError('unknown perturbation mode "%s". Available options are %s' % (self.mode, ', '.join(MODES)))
        if self.direction not in DIRECTIONS:
            raise ConfigError('unknown shift direction "%s". Available options are %s' % (self.direction, ', '.join(DIRECTIONS)))
        if self.mode == 'constant_shift' and self.shift_px < 1:
            raise ConfigError('constant_shift needs shift_px >= 1, got %d' % self.shift_px)
        if self.mode == 'random_transform' and not (self.max_rotation_deg > 0 or self.max_skew > 0):
            raise ConfigError('random_transform needs max_rotation_deg > 0 or max_skew > 0')
        return self

    def for_item(self, index):
        """Same perturbation with a seed of its own for the index-th grid of a dataset."""
        seed = int(np.random.SeedSequence([self.rng_seed, index]).generate_state(1)[0])
        return PerturbSpec(self.mode, self.shift_px, self.direction, self.max_rotation_deg, self.max_skew, seed)


def shift_values(values, shift_px, direction):
    """Integer translation with edge replication: for 'right', out[r, c] = in[r, c - shift_px]."""
    dr, dc = DIRECTION_STEPS[direction]
    h, w = values.shape[:2]
    n = shift_px
    padded = np.pad(values, ((n, n), (n, n)) + ((0, 0),) * (values.ndim - 2), mode='edge')
    r0, c0 = n - dr * n, n - dc * n
    return padded[r0:r0 + h, c0:c0 + w].copy()


def draw_transform(spec):
    """(rotation in degrees, horizontal skew) drawn uniformly from the PerturbSpec ranges."""
    rng = np.random.default_rng(spec.rng_seed)
    angle = float(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg)) if spec.max_rotation_deg > 0 else 0.0
    skew = float(rng.uniform(-spec.max_skew, spec.max_skew)) if spec.max_skew > 0 else 0.0
    return angle, skew


def affine_matrix(angle_deg, skew, height, width):
    """2x3 forward map (x=col, y=row) rotating by ``angle_deg`` and shearing x by ``skew`` about the grid center."""
    cx, cy = (width - 1) / 2, (height - 1) / 2
    t = math.radians(angle_deg)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, skew], [0.0, 1.0]])
    a = rot @ shear
    center = np.array([cx, cy])
    offset = center - a @ center
    return np.hstack([a, offset[:, None]])


def warp_nearest(values, matrix):
    h, w = values.shape[:2]
    out = cv2.warpAffine(values, matrix, (w, h), flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_REPLICATE)
    if out.ndim < values.ndim:
        out = out[..., None]
    return out


def perturb_ndsm(ndsm, spec):
    spec.validate()
    if spec.mode == 'identity':
        mask = None if ndsm.nodata_mask is None else ndsm.nodata_mask.copy()
        return RasterGrid(ndsm.values.copy(), ndsm.geo, mask)

    if spec.mode == 'constant_shift':
        if spec.shift_px >= min(ndsm.height, ndsm.width):
            raise ShapeError('shift of %upx does not fit a %ux%u grid' % (spec.shift_px, ndsm.height, ndsm.width))
        direction = spec.direction
        if direction == 'random':
            direction = ('up', 'down', 'left', 'right')[np.random.default_rng(spec.rng_seed).integers(4)]
        values = shift_values(ndsm.values, spec.shift_px, direction)
        mask = None if ndsm.nodata_mask is None else shift_values(ndsm.nodata_mask, spec.shift_px, direction)
        return RasterGrid(values, ndsm.geo, mask)

    angle, skew = draw_transform(spec)
    m = affine_matrix(angle, skew, ndsm.height, ndsm.width)
    values = warp_nearest(ndsm.values, m)
    mask = None
    if ndsm.nodata_mask is not None:
        mask = warp_nearest(ndsm.nodata_mask.astype(np.uint8), m)[..., 0] > 0
    return RasterGrid(values.astype(np.float32), ndsm.geo, mask)
