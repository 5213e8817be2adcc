from collections import OrderedDict

import numpy as np

from .data.raster import RasterGrid, load_raster
from .data.sampling import bicubic_downsample, bicubic_upsample
from .inference import tiled_infer
from .metrics import evaluate_pairs
from .models.generator import generator_forward
from .prep import get_raster_paths, match_ids
from .utils.errors import ShapeError
from .utils.pbar import progress


def crop_to_multiple(grid, factor):
    h, w = grid.height - grid.height % factor, grid.width - grid.width % factor
    if (h, w) == (grid.height, grid.width):
        return grid
    mask = None if grid.nodata_mask is None else grid.nodata_mask[:h, :w]
    return RasterGrid(grid.values[:h, :w], grid.geo, mask)


def lr_from_hr(hr, scale):
    """The LR input the way training builds it: bicubic decimation clipped to [0, 1]."""
    lr = bicubic_downsample(hr, scale)
    return RasterGrid(np.clip(lr.values, 0, 1), lr.geo, lr.nodata_mask)


def super_resolve(generator, lr, tiles=None):
    if tiles is None:
        return generator_forward(generator, lr[None])[0]
    return tiled_infer(generator, lr, tiles)


def evaluate_scenes(generator, scenes, tiles=None, params=None, verbose=False):
    """SR and BICUBIC columns for held-out scenes: each scene's RGB is the HR reference,
    its bicubic decimation the LR input. Returns {column: MetricReport}.
    """
    s = generator.scale
    sr_pairs, bic_pairs = [], []
    with progress(len(scenes), 'Super-resolving', verbose, unit='scene') as pbar:
        for scene in scenes:
            hr = crop_to_multiple(scene.rgb, s)
            lr = lr_from_hr(hr, s)
            sr_pairs.append((super_resolve(generator, lr.values, tiles), hr.values, scene.id))
            bic_pairs.append((bicubic_upsample(lr, s).values, hr.values, scene.id))
            pbar.update(1)
    return OrderedDict([('SR', evaluate_pairs(sr_pairs, params)), ('BICUBIC', evaluate_pairs(bic_pairs, params))])


def scale_between(hr, lr, image_id):
    s = hr.height // lr.height
    if s < 1 or (lr.height * s, lr.width * s) != (hr.height, hr.width):
        raise ShapeError('%s: hr %ux%u is not an integer multiple of lr %ux%u' % (
            image_id, hr.height, hr.width, lr.height, lr.width))
    return s


def evaluate_dirs(sr_dir, hr_dir, lr_dir=None, extra=None, params=None, verbose=False):
    """Scores id-matched rasters of ``sr_dir`` (and every extra {name: dir}) against ``hr_dir``.
    With ``lr_dir``, a BICUBIC column is added from bicubic upsampling of the LR inputs.
    """
    hr_paths = get_raster_paths(hr_dir)
    columns = OrderedDict([('SR', get_raster_paths(sr_dir))])
    for name, d in (extra or {}).items():
        columns[name] = get_raster_paths(d)
    if lr_dir:
        columns['LR'] = get_raster_paths(lr_dir)
    match_ids(hr_paths, columns)

    pairs = OrderedDict((name, []) for name in columns if name != 'LR')
    if lr_dir:
        pairs['BICUBIC'] = []
    with progress(len(hr_paths), 'Loading', verbose, unit='img') as pbar:
        for image_id, hr_path in hr_paths.items():
            hr = load_raster(hr_path).values
            for name, paths in columns.items():
                img = load_raster(paths[image_id])
                if name == 'LR':
                    s = scale_between(RasterGrid(hr), img, image_id)
                    pairs['BICUBIC'].append((bicubic_upsample(img, s).values, hr, image_id))
                else:
                    pairs[name].append((img.values, hr, image_id))
            pbar.update(1)
    return OrderedDict((name, evaluate_pairs(p, params)) for name, p in pairs.items())
