from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .data.raster import RasterGrid
from .utils.errors import ConfigError, ShapeError
from .utils.image import from_tensor, hwc_to_tensor
from .utils.pbar import progress

BLENDS = ('feather', 'crop-center')


@dataclass
class TileSpec:
    """Tile geometry in output (SR) pixels. All sizes must be multiples of the scale.
    Each tile is run with ``context_px`` of extra input around it, which is cut away afterwards.
    With the default (None) the context covers the generator's receptive radius and tiling
    reproduces whole-image inference.
    """
    tile_px: int = 512
    overlap_px: int = 64
    blend: str = 'feather'
    context_px: Optional[int] = None

    def validate(self, scale):
        if self.blend not in BLENDS:
            raise ConfigError('unknown blend "%s". Available options are %s' % (self.blend, ', '.join(BLENDS)))
        if self.tile_px < scale or self.tile_px % scale:
            raise ConfigError('tile_px %s is not a multiple of the x%u scale' % (self.tile_px, scale))
        if self.overlap_px < 0 or self.overlap_px % scale:
            raise ConfigError('overlap_px %s is not a multiple of the x%u scale' % (self.overlap_px, scale))
        if not self.overlap_px < self.tile_px / 2:
            raise ConfigError('overlap_px must be < tile_px / 2, got %s >= %s' % (self.overlap_px, self.tile_px / 2))
        if self.context_px is not None and (self.context_px < 0 or self.context_px % scale):
            raise ConfigError('context_px %s is not a multiple of the x%u scale' % (self.context_px, scale))
        return self


def tile_starts(length, tile, overlap):
    """Start offsets covering [0, length) with tiles of ``tile`` px overlapping by at least ``overlap``.
    The last tile is snapped to the end, so its overlap with the previous one may be larger.
    """
    if length <= tile:
        return [0]
    starts = list(range(0, length - tile, tile - overlap))
    if starts[-1] != length - tile:
        starts.append(length - tile)
    return starts


def edge_ramp(size, overlap, lead, trail, blend):
    """1-D weights of one tile along one axis. Interior edges (``lead``/``trail``) fade out,
    image borders keep full weight.
    """
    d = np.arange(size, dtype=np.float64) + 0.5
    if blend == 'feather':
        ramp = lambda x: np.clip((x - overlap / 4) / (overlap / 2), 0, 1) if overlap else np.ones_like(x)
    else:
        ramp = lambda x: (x >= overlap / 2).astype(np.float64)
    w = np.ones(size)
    if lead:
        w = np.minimum(w, ramp(d))
    if trail:
        w = np.minimum(w, ramp(size - d))
    return w


def tiled_infer(generator, lr, tiles, verbose=False):
    """Super-resolves an (H, W, 3) array in overlapping tiles and blends them into (sH, sW, 3).
    Inputs that fit in one tile run whole.
    """
    s = generator.scale
    tiles.validate(s)
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ShapeError('inference input must be (H, W, 3), got %s' % (lr.shape,))
    h, w = lr.shape[:2]
    t, o = tiles.tile_px // s, tiles.overlap_px // s
    c = generator.receptive_radius if tiles.context_px is None else tiles.context_px // s
    ys, xs = tile_starts(h, t, o), tile_starts(w, t, o)
    out = np.zeros((h * s, w * s, 3), dtype=np.float64)
    norm = np.zeros((h * s, w * s, 1), dtype=np.float64)
    dv = next(generator.parameters()).device
    generator.eval()
    with progress(len(ys) * len(xs), 'Tiles', verbose, unit='tile') as pbar, torch.inference_mode():
        for y in ys:
            for x in xs:
                y0, y1 = max(0, y - c), min(h, y + t + c)
                x0, x1 = max(0, x - c), min(w, x + t + c)
                patch = lr[y0:y1, x0:x1]
                sr = from_tensor(generator(hwc_to_tensor(patch[None]).to(dv)))[0]
                th, tw = min(t, h - y) * s, min(t, w - x) * s
                sr = sr[(y - y0) * s:(y - y0) * s + th, (x - x0) * s:(x - x0) * s + tw]
                wy = edge_ramp(th, tiles.overlap_px, y > 0, y + t < h, tiles.blend)
                wx = edge_ramp(tw, tiles.overlap_px, x > 0, x + t < w, tiles.blend)
                wt = (wy[:, None] * wx[None, :])[..., None]
                out[y * s:y * s + th, x * s:x * s + tw] += wt * sr
                norm[y * s:y * s + th, x * s:x * s + tw] += wt
                pbar.update(1)
    return (out / norm).astype(np.float32)


def infer_raster(generator, grid, tiles, verbose=False):
    """RasterGrid in, RasterGrid out; georeferencing keeps the origin and divides the pixel size by the scale."""
    if grid.channels != 3:
        raise ShapeError('inference needs a 3-channel RGB raster, got %u channels' % grid.channels)
    values = tiled_infer(generator, grid.values, tiles, verbose)
    geo = None if grid.geo is None else grid.geo.scaled(generator.scale)
    mask = None
    if grid.nodata_mask is not None:
        s = generator.scale
        mask = np.repeat(np.repeat(grid.nodata_mask, s, axis=0), s, axis=1)
    return RasterGrid(values, geo, mask)
