import contextlib
import io
import json
import os
import os.path as osp
import tempfile
import unittest

import numpy as np
import torch
import yaml

from ndsmsr.__main__ import build_parser, main
from ndsmsr.data.dataset import read_manifest
from ndsmsr.data.perturb import PerturbSpec
from ndsmsr.data.raster import GeoInfo, RasterGrid, load_raster, save_raster
from ndsmsr.data.sampling import bicubic_downsample, bicubic_upsample
from ndsmsr.main import cmd_ablate_alignment, cmd_evaluate, cmd_infer, cmd_synth, cmd_train
from ndsmsr.metrics import read_report
from ndsmsr.models.generator import GeneratorConfig, build_generator
from ndsmsr.utils.errors import CheckpointError, ConfigError, DataError
from ndsmsr.utils.weights import save_bundle

TINY_CONFIG = {
    'scale': 4, 'patch_px': 32, 'batch_size': 2, 'ndsm_steps': 3, 'pretrain_steps': 3, 'gan_steps': 3,
    'patches_per_scene': 2, 'checkpoint_every': 3, 'log_every': 3, 'device': 'cpu', 'discriminator_channels': 4,
    'generator.num_blocks': 1, 'generator.rrdbs_per_block': 1, 'generator.base_channels': 8,
    'generator.growth_channels': 4, 'ndsm_net.depth': 2, 'ndsm_net.base_channels': 4,
}


def run_main(argv):
    """(exit code, stdout) of the console entry point."""
    out = io.StringIO()
    code = 0
    with contextlib.redirect_stdout(out):
        try:
            main(argv)
        except SystemExit as e:
            code = e.code
    return code, out.getvalue()


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, *parts):
        return osp.join(self.dir, *parts)

    def write_config(self, **changes):
        path = self.path('train.yaml')
        with open(path, 'w') as f:
            yaml.safe_dump(dict(TINY_CONFIG, **changes), f)
        return path


class TestSynth(CliTestCase):

    def test_split_and_determinism(self):
        cmd_synth(7, 10, 64, self.path('a'), verbose=False)
        cmd_synth(7, 10, 64, self.path('b'), verbose=False)
        records = read_manifest(self.path('a', 'manifest.jsonl'))
        self.assertEqual(len(records), 10)
        self.assertEqual([r['split'] for r in records].count('train'), 8)
        self.assertEqual([r['split'] for r in records].count('val'), 1)
        for name in sorted(os.listdir(self.path('a', 'scenes'))) + ['../manifest.jsonl']:
            with open(self.path('a', 'scenes', name), 'rb') as fa, open(self.path('b', 'scenes', name), 'rb') as fb:
                self.assertEqual(fa.read(), fb.read(), name)

    def test_zero_count(self):
        with self.assertRaises(ConfigError):
            cmd_synth(0, 0, 64, self.path('z'), verbose=False)
        code, out = run_main(['synth', '-n', '0', '--out', self.path('z')])
        self.assertEqual(code, 2)
        self.assertTrue(out.startswith('ERROR: '))

    def test_global_flags_either_side(self):
        self.assertEqual(run_main(['--seed', '3', '--out', self.path('x'), 'synth', '-n', '2', '--size', '64', '-q'])[0], 0)
        self.assertEqual(run_main(['synth', '-n', '2', '--size', '64', '--seed', '3', '--out', self.path('y'), '--quiet'])[0], 0)
        a, b = read_manifest(self.path('x', 'manifest.jsonl')), read_manifest(self.path('y', 'manifest.jsonl'))
        self.assertEqual(a, b)


class TestTrain(CliTestCase):

    def setUp(self):
        super().setUp()
        cmd_synth(0, 10, 64, self.path('data'), verbose=False)

    def test_all_phases(self):
        cfg = self.write_config()
        histories = cmd_train(cfg, self.path('data'), self.path('run'), 'all', verbose=False)
        self.assertEqual(list(histories), ['ndsm', 'sr-pretrain', 'gan'])
        for phase in ('ndsm', 'sr-pretrain', 'gan'):
            self.assertTrue(osp.isfile(self.path('run', phase, 'manifest.txt')))
        with open(self.path('run', 'sr-pretrain', 'manifest.txt')) as f:
            pretrain_mae = yaml.safe_load(f)['pretrain_mae']
        with open(self.path('run', 'gan', 'manifest.txt')) as f:
            self.assertEqual(yaml.safe_load(f)['epsilon'], 2 * pretrain_mae)
        with open(self.path('run', 'gan', 'history.log')) as f:
            self.assertEqual(len([json.loads(line) for line in f]), 3)
        self.assertTrue(osp.isfile(self.path('run', 'config.yaml')))

    def test_resume_extends_phase(self):
        cmd_train(self.write_config(), self.path('data'), self.path('run'), 'ndsm', verbose=False)
        cmd_train(self.write_config(ndsm_steps=5), self.path('data'), self.path('run'), 'ndsm', resume=True, verbose=False)
        with open(self.path('run', 'ndsm', 'manifest.txt')) as f:
            self.assertEqual(yaml.safe_load(f)['step'], 5)

    def test_gan_needs_pretrained_generator(self):
        with self.assertRaisesRegex(CheckpointError, 'generator pretrain bundle missing'):
            cmd_train(self.write_config(), self.path('data'), self.path('run'), 'gan', verbose=False)
        code, out = run_main(['train', self.path('data'), '--config', self.write_config(), '--out', self.path('run'), '-p', 'gan', '-q'])
        self.assertEqual(code, 4)
        self.assertIn('generator pretrain bundle missing', out)

    def test_unknown_config_key(self):
        path = self.path('bad.yaml')
        with open(path, 'w') as f:
            f.write('lr: 0.001\n')
        with self.assertRaisesRegex(ConfigError, 'lr'):
            cmd_train(path, self.path('data'), self.path('run'), verbose=False)

    def test_missing_dataset(self):
        code, _ = run_main(['train', self.path('nothing'), '--out', self.path('run'), '-q'])
        self.assertEqual(code, 3)


class TestInfer(CliTestCase):

    def setUp(self):
        super().setUp()
        torch.manual_seed(0)
        self.bundle = self.path('g.bundle')
        save_bundle(build_generator(GeneratorConfig(scale=4, num_blocks=1, rrdbs_per_block=1, base_channels=8, growth_channels=4)), self.bundle)

    def test_geometry(self):
        src = self.path('in.tif')
        values = np.random.default_rng(0).uniform(0, 1, (130, 130, 3)).astype(np.float32)
        save_raster(RasterGrid(values, GeoInfo(1000.0, 5000.0, 0.2, 0.2, 'EPSG:2169')), src)
        cmd_infer(self.bundle, src, self.path('out.tif'), verbose=False)
        out = load_raster(self.path('out.tif'))
        self.assertEqual(out.values.shape, (520, 520, 3))
        self.assertAlmostEqual(out.geo.pixel_x, 0.05)
        self.assertEqual((out.geo.origin_x, out.geo.origin_y), (1000.0, 5000.0))

    def test_rejects_heightmap_and_wrong_kind(self):
        src = self.path('h.ndsm')
        save_raster(RasterGrid(np.zeros((16, 16, 1), dtype=np.float32)), src)
        code, out = run_main(['infer', self.bundle, src, '--out', self.path('o.tif')])
        self.assertEqual(code, 3)
        rgb = self.path('rgb.png')
        save_raster(RasterGrid(np.zeros((16, 16, 3), dtype=np.float32)), rgb)
        code, _ = run_main(['infer', self.bundle, rgb, '--out', self.path('o.png'), '--tile-px', '130'])
        self.assertEqual(code, 2)
        disc = self.path('d.bundle')
        from ndsmsr.models.discriminator import build_discriminator
        save_bundle(build_discriminator(32, 4), disc)
        code, _ = run_main(['infer', disc, rgb, '--out', self.path('o.png')])
        self.assertEqual(code, 4)

    def test_no_ndsm_input(self):
        sub = next(a for a in build_parser()._actions if a.dest == 'command')
        options = [o for a in sub.choices['infer']._actions for o in a.option_strings]
        self.assertFalse(any('ndsm' in o for o in options))


class TestEvaluate(CliTestCase):

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(0)
        for d in ('hr', 'lr', 'sr'):
            os.makedirs(self.path(d))
        for i in range(3):
            hr = RasterGrid(rng.uniform(0, 1, (32, 32, 3)).astype(np.float32))
            lr = bicubic_downsample(hr, 4)
            save_raster(hr, self.path('hr', 'img%u.tif' % i))
            save_raster(lr, self.path('lr', 'img%u.tif' % i))
            save_raster(bicubic_upsample(lr, 4), self.path('sr', 'img%u.tif' % i))

    def test_identical_dirs(self):
        reports = cmd_evaluate(self.path('hr'), self.path('hr'), self.path('same.jsonl'), verbose=False)
        self.assertAlmostEqual(reports['SR'].mean_ssim, 1.0, delta=1e-9)
        self.assertEqual(reports['SR'].psnr_inf_count, 3)
        self.assertTrue(osp.isfile(self.path('same.txt')))

    def test_bicubic_column(self):
        report = self.path('r.jsonl')
        cmd_evaluate(self.path('sr'), self.path('hr'), report, self.path('lr'), {'COPY': self.path('sr')}, verbose=False)
        parsed = read_report(report)
        self.assertEqual(list(parsed), ['SR', 'COPY', 'BICUBIC'])
        self.assertEqual(parsed['SR'].per_image, parsed['BICUBIC'].per_image)

    def test_missing_id(self):
        os.remove(self.path('sr', 'img1.tif'))
        with self.assertRaisesRegex(DataError, 'img1'):
            cmd_evaluate(self.path('sr'), self.path('hr'), self.path('r.jsonl'), verbose=False)
        code, out = run_main(['evaluate', self.path('sr'), self.path('hr'), '--out', self.path('r.jsonl')])
        self.assertEqual(code, 3)
        self.assertIn('img1', out)

    def test_extra_parsing(self):
        code, _ = run_main(['evaluate', self.path('sr'), self.path('hr'), '--out', self.path('r.jsonl'), '--extra', 'nodir'])
        self.assertEqual(code, 2)


class TestAblation(CliTestCase):

    def setUp(self):
        super().setUp()
        cmd_synth(0, 10, 64, self.path('data'), verbose=False)

    def test_identity_matches_reference(self):
        reports = cmd_ablate_alignment(self.path('data'), self.write_config(), PerturbSpec('identity'), self.path('abl'), verbose=False)
        self.assertEqual(list(reports), ['reference', 'perturbed', 'BICUBIC'])
        self.assertEqual(reports['reference'].per_image, reports['perturbed'].per_image)

    def test_constant_shift(self):
        reports = cmd_ablate_alignment(self.path('data'), self.write_config(), PerturbSpec('constant_shift', 2), self.path('abl'), verbose=False)
        parsed = read_report(self.path('abl', 'ablation.jsonl'))
        self.assertEqual(list(parsed), ['reference', 'perturbed', 'BICUBIC'])
        self.assertEqual(len(parsed['perturbed'].per_image), len(reports['reference'].per_image))

    def test_invalid_perturbation(self):
        with self.assertRaises(ConfigError):
            cmd_ablate_alignment(self.path('data'), self.write_config(), PerturbSpec('random_transform'), self.path('abl'), verbose=False)


if __name__ == '__main__':
    unittest.main()
