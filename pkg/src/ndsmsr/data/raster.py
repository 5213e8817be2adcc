import os
import os.path as osp
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import cv2
import numpy as np
import rasterio
from rasterio.errors import RasterioIOError
from rasterio.transform import from_origin

from ..utils.errors import AlignmentError, ConfigError, RasterError, ShapeError

NDSM_MAGIC = b'NDSM'
NDSM_HEADER = struct.Struct('<4sIII')  # magic, height, width, reserved
GEOTIFF_EXTENSIONS = ('.tif', '.tiff')
PNG_EXTENSIONS = ('.png',)
RAW_EXTENSIONS = ('.ndsm',)


@dataclass(frozen=True)
class GeoInfo:
    """North-up georeferencing: top-left origin in CRS units and positive pixel sizes."""
    origin_x: float
    origin_y: float
    pixel_x: float
    pixel_y: float
    crs: Optional[str] = None

    def scaled(self, factor):
        return replace(self, pixel_x=self.pixel_x / factor, pixel_y=self.pixel_y / factor)


@dataclass(frozen=True)
class RasterGrid:
    """A float32 (height, width, channels) array with optional georeferencing and nodata mask.
    Masked cells hold 0 in ``values`` so that arithmetic on whole grids stays finite.
    """
    values: np.ndarray
    geo: Optional[GeoInfo] = None
    nodata_mask: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError('raster values must be (height, width, channels), got shape %s' % (self.values.shape,))
        if self.nodata_mask is not None and self.nodata_mask.shape != self.values.shape[:2]:
            raise ShapeError('nodata mask shape %s does not match raster %s' % (self.nodata_mask.shape, self.values.shape[:2]))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    def has_nodata(self):
        return self.nodata_mask is not None and bool(self.nodata_mask.any())

    def window(self, row, col, size):
        mask = None if self.nodata_mask is None else self.nodata_mask[row:row + size, col:col + size].copy()
        geo = None
        if self.geo is not None:
            geo = replace(self.geo, origin_x=self.geo.origin_x + col * self.geo.pixel_x,
                          origin_y=self.geo.origin_y - row * self.geo.pixel_y)
        return RasterGrid(self.values[row:row + size, col:col + size].copy(), geo, mask)


@dataclass(frozen=True)
class AlignmentReport:
    ok: bool
    pixel_offset_estimate: Tuple[float, float]  # (columns, rows) in RGB pixels
    reason: str = ''


def as_float(arr):
    """Integer inputs are scaled by their dtype maximum (uint8 -> 1/255), floats are kept as-is."""
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float32) / np.iinfo(arr.dtype).max
    return arr.astype(np.float32)


def load_raster(path):
    """Reads a GeoTIFF, PNG or raw "NDSM" heightmap into a RasterGrid.
    Declared nodata cells are masked; non-finite values without a nodata declaration are an error.
    """
    if not osp.isfile(path):
        raise RasterError('raster file not found: %s' % path)
    ext = osp.splitext(path)[1].lower()
    if ext in GEOTIFF_EXTENSIONS:
        values, geo, nodata = read_geotiff(path)
    elif ext in PNG_EXTENSIONS:
        values, geo, nodata = read_png(path), None, None
    elif ext in RAW_EXTENSIONS:
        values, geo, nodata = read_raw_ndsm(path), None, None
    else:
        raise RasterError('unsupported raster container "%s" (expected one of %s)' %
                          (ext, ', '.join(GEOTIFF_EXTENSIONS + PNG_EXTENSIONS + RAW_EXTENSIONS)))

    if values.shape[2] not in (1, 3):
        raise RasterError('unsupported channel count: %u in %s (expected 1 or 3)' % (values.shape[2], path))

    mask = None
    if nodata is not None:
        mask = np.isnan(values).any(axis=2) if np.isnan(nodata) else (values == nodata).any(axis=2)
    finite = np.isfinite(values).all(axis=2)
    if mask is None and not finite.all():
        raise RasterError('non-finite values in %s and no nodata value declared' % path)
    if mask is not None:
        mask = mask | ~finite

    if np.issubdtype(values.dtype, np.integer) and values.shape[2] == 1:
        values = values.astype(np.float32)
    values = as_float(values)
    if mask is not None:
        values[mask] = 0
        if not mask.any():
            mask = None
    return RasterGrid(values, geo, mask)


def read_geotiff(path):
    try:
        with rasterio.open(path) as src:
            data = src.read()  # (bands, rows, cols)
            t = src.transform
            crs = src.crs.to_string() if src.crs else None
            geo = GeoInfo(t.c, t.f, abs(t.a), abs(t.e), crs) if not t.is_identity else None
            nodata = src.nodata
    except RasterioIOError as e:
        raise RasterError('unreadable raster %s: %s' % (path, e))
    return np.ascontiguousarray(data.transpose(1, 2, 0)), geo, nodata


def read_png(path):
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise RasterError('unreadable raster %s' % path)
    if img.ndim == 2:
        return img[:, :, None]
    if img.shape[2] == 3:
        return np.ascontiguousarray(img[:, :, ::-1])  # BGR to RGB
    return img


def read_raw_ndsm(path):
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < NDSM_HEADER.size:
        raise RasterError('truncated NDSM header in %s' % path)
    magic, h, w, _ = NDSM_HEADER.unpack_from(data)
    if magic != NDSM_MAGIC:
        raise RasterError('bad magic in %s (expected "NDSM")' % path)
    if len(data) - NDSM_HEADER.size != h * w * 4:
        raise RasterError('NDSM payload of %s does not hold %ux%u float32 values' % (path, h, w))
    arr = np.frombuffer(data, dtype='<f4', offset=NDSM_HEADER.size).reshape(h, w, 1)
    return arr.astype(np.float32)


def save_raster(grid, path):
    """Writes GeoTIFF (float32, georeferenced when ``grid.geo`` is set), PNG (8-bit) or raw NDSM."""
    ext = osp.splitext(path)[1].lower()
    tmp = path + '.tmp' + ext
    if ext in GEOTIFF_EXTENSIONS:
        write_geotiff(grid, tmp)
    elif ext in PNG_EXTENSIONS:
        img = np.clip(np.round(grid.values * 255), 0, 255).astype(np.uint8)
        if grid.channels == 3:
            img = img[:, :, ::-1]
        if not cv2.imwrite(tmp, img):
            raise RasterError('could not write %s' % path)
    elif ext in RAW_EXTENSIONS:
        if grid.channels != 1:
            raise RasterError('NDSM files hold a single band, got %u' % grid.channels)
        with open(tmp, 'wb') as f:
            f.write(NDSM_HEADER.pack(NDSM_MAGIC, grid.height, grid.width, 0))
            f.write(grid.values[:, :, 0].astype('<f4').tobytes())
    else:
        raise RasterError('unsupported raster container "%s"' % ext)
    os.replace(tmp, path)


def write_geotiff(grid, path, nodata=-9999.0):
    data = grid.values.transpose(2, 0, 1).astype(np.float32)
    profile = dict(driver='GTiff', height=grid.height, width=grid.width, count=grid.channels, dtype='float32')
    if grid.geo is not None:
        g = grid.geo
        profile['transform'] = from_origin(g.origin_x, g.origin_y, g.pixel_x, g.pixel_y)
        if g.crs:
            profile['crs'] = g.crs
    if grid.nodata_mask is not None:
        data = data.copy()
        data[:, grid.nodata_mask] = nodata
        profile['nodata'] = nodata
    with rasterio.open(path, 'w', **profile) as dst:
        dst.write(data)


def validate_alignment(rgb, ndsm, resample_ratio=1):
    """Checks that an nDSM covers the same ground as its RGB image.
    ``resample_ratio`` is how many RGB pixels fit into one nDSM pixel (10 for 5 cm RGB vs 50 cm LiDAR).
    A CRS mismatch is a hard error; an origin offset beyond half an RGB pixel gives ok=False.
    """
    if (rgb.geo is None) != (ndsm.geo is None):
        raise AlignmentError('only one of the two grids is georeferenced')
    r = resample_ratio
    dims_ok = (abs(ndsm.height * r - rgb.height) < r and abs(ndsm.width * r - rgb.width) < r)
    dims_reason = '' if dims_ok else 'dimensions %ux%u (rgb) vs %ux%u (ndsm) are inconsistent with ratio %u' % (
        rgb.height, rgb.width, ndsm.height, ndsm.width, r)

    if rgb.geo is None:
        return AlignmentReport(dims_ok, (0.0, 0.0), dims_reason)

    a, b = rgb.geo, ndsm.geo
    if a.crs != b.crs:
        raise AlignmentError('CRS mismatch: %s vs %s' % (a.crs, b.crs))
    dx = (b.origin_x - a.origin_x) / a.pixel_x
    dy = (a.origin_y - b.origin_y) / a.pixel_y
    reasons = [dims_reason] if dims_reason else []
    if abs(dx) >= 0.5 or abs(dy) >= 0.5:
        reasons.append('origins differ by (%.2f, %.2f) rgb pixels' % (dx, dy))
    if not np.isclose(b.pixel_x, a.pixel_x * r) or not np.isclose(b.pixel_y, a.pixel_y * r):
        reasons.append('pixel sizes (%g, %g) vs (%g, %g) are inconsistent with ratio %u' % (
            a.pixel_x, a.pixel_y, b.pixel_x, b.pixel_y, r))
    return AlignmentReport(not reasons, (float(dx), float(dy)), '; '.join(reasons))


def normalize_unit(grid, lo, hi):
    if hi <= lo:
        raise ConfigError('normalize_unit needs hi > lo, got lo=%g hi=%g' % (lo, hi))
    values = np.clip((grid.values - lo) / (hi - lo), 0, 1).astype(np.float32)
    if grid.nodata_mask is not None:
        values[grid.nodata_mask] = 0
    return RasterGrid(values, grid.geo, grid.nodata_mask)


def as_heightmap(grid, name='heightmap', verbose=False):
    """Checks that ``grid`` is single-band and clips negative unmasked heights to 0."""
    if grid.channels != 1:
        raise RasterError('%s must be single-band, got %u bands' % (name, grid.channels))
    negative = grid.values[:, :, 0] < 0
    if grid.nodata_mask is not None:
        negative &= ~grid.nodata_mask
    if not negative.any():
        return grid
    if verbose:
        print('NOTE: clipped %u negative cells of %s to 0' % (np.count_nonzero(negative), name))
    values = grid.values.copy()
    values[negative] = 0
    return RasterGrid(values, grid.geo, grid.nodata_mask)


def ndsm_from_dsm_dem(dsm, dem, verbose=False):
    """Above-ground heights (DSM - DEM). Negative residuals (LiDAR noise, DEM overshoot) are clipped to 0."""
    report = validate_alignment(dsm, dem, 1)
    if not report.ok:
        raise AlignmentError('DSM and DEM are not aligned: %s' % report.reason)
    if dsm.channels != 1 or dem.channels != 1:
        raise RasterError('DSM and DEM must be single-band')
    mask = None
    if dsm.nodata_mask is not None or dem.nodata_mask is not None:
        mask = np.zeros((dsm.height, dsm.width), dtype=bool)
        for m in (dsm.nodata_mask, dem.nodata_mask):
            if m is not None:
                mask |= m
    diff = dsm.values - dem.values
    negative = diff < 0
    if mask is not None:
        negative[mask] = False
    if verbose and negative.any():
        print('NOTE: clipped %u negative nDSM cells to 0' % np.count_nonzero(negative))
    values = np.maximum(diff, 0).astype(np.float32)
    if mask is not None:
        values[mask] = 0
    return RasterGrid(values, dsm.geo, mask)
