import json
import math
import os.path as osp
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy import signal

from .utils.errors import ConfigError, DataError, ShapeError
from .utils.image import values_of
from .utils.pbar import progress
from .utils.weights import atomic_write


@dataclass
class SsimParams:
    window_px: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def validate(self):
        if self.window_px < 3 or self.window_px % 2 == 0:
            raise ConfigError('SSIM window_px must be odd and >= 3, got %s' % self.window_px)
        if not (self.k1 > 0 and self.k2 > 0 and self.dynamic_range > 0 and self.window_sigma > 0):
            raise ConfigError('SSIM k1, k2, window_sigma and dynamic_range must all be > 0')
        return self


def check_pair(a, b):
    a, b = np.asarray(values_of(a), dtype=np.float64), np.asarray(values_of(b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError('cannot compare images of shapes %s and %s' % (a.shape, b.shape))
    return a, b


def psnr(a, b, max_value=1.0):
    """Over all channels jointly. Identical images give ``float('inf')``."""
    a, b = check_pair(a, b)
    if not max_value > 0:
        raise ConfigError('max_value must be > 0, got %s' % max_value)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float('inf')
    return float(10 * np.log10(max_value ** 2 / mse))


def gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, params):
    """Per-window SSIM of two single-channel float64 images; only windows fully inside the image."""
    win = gaussian_window(params.window_px, params.window_sigma)
    C1 = (params.k1 * params.dynamic_range) ** 2
    C2 = (params.k2 * params.dynamic_range) ** 2

    filt = lambda x: signal.convolve2d(x, win, mode='valid')
    ma, mb = filt(a), filt(b)
    va = filt(a * a) - ma * ma
    vb = filt(b * b) - mb * mb
    cov = filt(a * b) - ma * mb
    num = (2 * ma * mb + C1) * (2 * cov + C2)
    den = (ma * ma + mb * mb + C1) * (va + vb + C2)
    return num / den


def ssim(a, b, params=None):
    """Mean windowed SSIM; multi-channel images are scored per channel and averaged."""
    params = (params or SsimParams()).validate()
    a, b = check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < params.window_px:
        raise ShapeError('image %ux%u is smaller than the %upx SSIM window' % (a.shape[0], a.shape[1], params.window_px))
    return float(np.mean([ssim_map(a[..., c], b[..., c], params).mean() for c in range(a.shape[2])]))


@dataclass
class ImageScore:
    id: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    """Per-image scores plus their means. Infinite PSNRs (identical images) are left out of
    ``mean_psnr_db`` and counted in ``psnr_inf_count``.
    """
    per_image: List[ImageScore] = field(default_factory=list)
    mean_psnr_db: float = float('nan')
    mean_ssim: float = float('nan')
    psnr_inf_count: int = 0

    @classmethod
    def from_scores(cls, scores):
        scores = sorted(scores, key=lambda s: s.id)
        finite = [s.psnr_db for s in scores if math.isfinite(s.psnr_db)]
        n_inf = len(scores) - len(finite)
        mean_psnr = float(np.mean(finite)) if finite else float('inf')
        return cls(scores, mean_psnr, float(np.mean([s.ssim for s in scores])), n_inf)

    def summary(self):
        s = 'PSNR %.3f dB, SSIM %.4f over %u images' % (self.mean_psnr_db, self.mean_ssim, len(self.per_image))
        if self.psnr_inf_count:
            s += ' (%u identical images excluded from mean PSNR)' % self.psnr_inf_count
        return s


def evaluate_pairs(pairs, params=None, max_value=1.0, verbose=False):
    """``pairs`` is an iterable of (sr, hr, id); images are arrays or RasterGrids in [0, 1]."""
    pairs = list(pairs)
    if not pairs:
        raise DataError('nothing to evaluate: the list of image pairs is empty')
    params = (params or SsimParams()).validate()
    scores = []
    with progress(len(pairs), 'Scoring', verbose, unit='img') as pbar:
        for sr, hr, image_id in pairs:
            scores.append(ImageScore(image_id, psnr(sr, hr, max_value), ssim(sr, hr, params)))
            pbar.update(1)
    return MetricReport.from_scores(scores)


def report_table(reports):
    """pandas table with one (PSNR, SSIM) column pair per report and a trailing mean row."""
    frames = []
    for name, rep in reports.items():
        df = pd.DataFrame([(s.id, s.psnr_db, s.ssim) for s in rep.per_image], columns=['id', 'psnr_db', 'ssim']).set_index('id')
        df.loc['mean'] = [rep.mean_psnr_db, rep.mean_ssim]
        df.columns = pd.MultiIndex.from_product([[name], df.columns])
        frames.append(df)
    return pd.concat(frames, axis=1)


def as_columns(reports):
    return reports if isinstance(reports, dict) else OrderedDict([('SR', reports)])


def write_report(reports, path):
    """Writes ``path`` (JSON lines: column, id, psnr_db, ssim) and a text table next to it.
    ``reports`` is a MetricReport or a {column name: MetricReport} mapping. Returns the table path.
    """
    reports = as_columns(reports)
    lines = []
    for name, rep in reports.items():
        for s in rep.per_image:
            lines.append(json.dumps({'column': name, 'id': s.id, 'psnr_db': s.psnr_db, 'ssim': s.ssim}))
    atomic_write(path, ('\n'.join(lines) + '\n').encode('utf-8'))

    table = report_table(reports).to_string(float_format=lambda v: '%.4f' % v)
    notes = ['%s: %s' % (name, rep.summary()) for name, rep in reports.items()]
    table_path = osp.splitext(path)[0] + '.txt'
    atomic_write(table_path, (table + '\n\n' + '\n'.join(notes) + '\n').encode('utf-8'))
    return table_path


def read_report(path):
    """Parses a record stream written by ``write_report`` back into {column name: MetricReport}."""
    if not osp.isfile(path):
        raise DataError('report not found: %s' % path)
    cols = OrderedDict()
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cols.setdefault(rec.get('column', 'SR'), []).append(ImageScore(rec['id'], float(rec['psnr_db']), float(rec['ssim'])))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError('%s:%u is not a metric record: %s' % (path, n, e))
    return OrderedDict((name, MetricReport.from_scores(scores)) for name, scores in cols.items())
