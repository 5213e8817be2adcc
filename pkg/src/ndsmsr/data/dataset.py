import hashlib
import json
import os
import os.path as osp
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .perturb import perturb_ndsm
from .raster import RasterGrid, as_heightmap, load_raster, ndsm_from_dsm_dem, save_raster, validate_alignment
from .sampling import ScenePair, resample_to
from .synth import generate_scene
from ..utils.errors import AlignmentError, ConfigError, DataError
from ..utils.pbar import progress

MANIFEST_NAME = 'manifest.jsonl'
SPLITS = ('train', 'val', 'test')


def id_hash(scene_id):
    return hashlib.sha1(scene_id.encode('utf-8')).hexdigest()


def split_by_hash(ids, fractions=(0.8, 0.1, 0.1)):
    """Deterministic 80/10/10 split: ids are ordered by the hash of their name and cut into
    consecutive runs, so a scene's split never depends on which other scenes exist beside it
    beyond the counts. Returns {id: split}.
    """
    ordered = sorted(ids, key=id_hash)
    n = len(ordered)
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    if n >= 3:
        n_val, n_test = max(n_val, 1), max(n_test, 1)
    n_train = n - n_val - n_test
    labels = ['train'] * n_train + ['val'] * n_val + ['test'] * n_test
    return dict(zip(ordered, labels))


def scene_seeds(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass
class SceneDataset:
    train: List[ScenePair] = field(default_factory=list)
    val: List[ScenePair] = field(default_factory=list)
    test: List[ScenePair] = field(default_factory=list)

    def __len__(self):
        return len(self.train) + len(self.val) + len(self.test)

    def split(self, name):
        return getattr(self, name)

    @classmethod
    def from_scenes(cls, scenes):
        labels = split_by_hash([s.id for s in scenes])
        ds = cls()
        for s in sorted(scenes, key=lambda s: s.id):
            ds.split(labels[s.id]).append(s)
        return ds

    @classmethod
    def synthetic(cls, count, size, seed):
        return cls.from_scenes([generate_scene(s, size) for s in scene_seeds(seed, count)])

    @classmethod
    def from_manifest(cls, path, resample_ratio=1, verbose=False):
        """Loads every scene a manifest lists. ``resample_ratio`` applies to records without their own."""
        records = read_manifest(path)
        root = osp.dirname(osp.abspath(path))
        ds = cls()
        with progress(len(records), 'Loading scenes', verbose) as pbar:
            for rec in records:
                ds.split(rec['split']).append(load_scene(rec, root, rec.get('resample_ratio', resample_ratio), verbose))
                pbar.update(1)
        return ds

    def perturbed(self, spec):
        """Copy with every train/val nDSM perturbed, each scene with its own seed. Test scenes are
        only ever used through their RGB, so they stay as they are.
        """
        out = SceneDataset(test=list(self.test))
        for name in ('train', 'val'):
            for i, s in enumerate(self.split(name)):
                k = i if name == 'train' else len(self.train) + i
                out.split(name).append(ScenePair(s.rgb, perturb_ndsm(s.ndsm, spec.for_item(k)), s.id, s.placements))
        return out


def load_scene(rec, root, resample_ratio=1, verbose=False):
    """One manifest record as a ScenePair. Heights come from ``ndsm`` or from ``dsm`` - ``dem``;
    with ``resample_ratio`` > 1 they are bicubic-resampled onto the RGB grid after the alignment check.
    """
    rgb = load_raster(osp.join(root, rec['rgb']))
    if 'ndsm' in rec:
        ndsm = as_heightmap(load_raster(osp.join(root, rec['ndsm'])), 'nDSM of scene %s' % rec['id'], verbose)
    else:
        dsm, dem = load_raster(osp.join(root, rec['dsm'])), load_raster(osp.join(root, rec['dem']))
        ndsm = ndsm_from_dsm_dem(dsm, dem, verbose)
    report = validate_alignment(rgb, ndsm, resample_ratio)
    if not report.ok:
        raise AlignmentError('scene %s is misaligned: %s' % (rec['id'], report.reason))
    if (ndsm.height, ndsm.width) != (rgb.height, rgb.width):
        ndsm = as_heightmap(resample_to(ndsm, rgb.height, rgb.width), 'resampled nDSM of scene %s' % rec['id'])
    # validated above: the heights now live on the RGB grid
    ndsm = RasterGrid(ndsm.values, rgb.geo, ndsm.nodata_mask)
    return ScenePair(rgb, ndsm, rec['id'])


def read_manifest(path):
    if not osp.isfile(path):
        raise DataError('dataset manifest not found: %s' % path)
    records = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError('%s:%u is not a JSON record: %s' % (path, n, e))
            missing = [k for k in ('id', 'rgb', 'split') if k not in rec]
            if 'ndsm' not in rec:
                missing += [k for k in ('dsm', 'dem') if k not in rec]
            if missing:
                raise DataError('%s:%u lacks %s' % (path, n, ', '.join(missing)))
            if rec['split'] not in SPLITS:
                raise DataError('%s:%u has unknown split "%s"' % (path, n, rec['split']))
            ratio = rec.get('resample_ratio', 1)
            if isinstance(ratio, bool) or not isinstance(ratio, int) or ratio < 1:
                raise DataError('%s:%u has resample_ratio %r, expected an integer >= 1' % (path, n, ratio))
            records.append(rec)
    return records


def write_dataset(scenes, out_dir, verbose=False):
    """Writes every scene as <id>_rgb.png + <id>_ndsm.ndsm under out_dir/scenes and the manifest."""
    if not scenes:
        raise ConfigError('nothing to write: scene count is 0')
    scene_dir = osp.join(out_dir, 'scenes')
    try:
        os.makedirs(scene_dir, exist_ok=True)
    except OSError as e:
        raise DataError('cannot create %s: %s' % (scene_dir, e))
    labels = split_by_hash([s.id for s in scenes])
    lines = []
    with progress(len(scenes), 'Writing scenes', verbose) as pbar:
        for s in sorted(scenes, key=lambda s: s.id):
            rgb_rel = osp.join('scenes', s.id + '_rgb.png')
            ndsm_rel = osp.join('scenes', s.id + '_ndsm.ndsm')
            try:
                save_raster(s.rgb, osp.join(out_dir, rgb_rel))
                save_raster(s.ndsm, osp.join(out_dir, ndsm_rel))
            except OSError as e:
                raise DataError('cannot write scene %s: %s' % (s.id, e))
            lines.append(json.dumps({'id': s.id, 'rgb': rgb_rel, 'ndsm': ndsm_rel, 'split': labels[s.id]}))
            pbar.update(1)
    path = osp.join(out_dir, MANIFEST_NAME)
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    return path
