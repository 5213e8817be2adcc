import os
import os.path as osp
import tempfile
import unittest
from dataclasses import replace

import yaml

from ndsmsr.config import TrainConfig
from ndsmsr.data.dataset import SceneDataset
from ndsmsr.data.synth import generate_scene
from ndsmsr.evaluation import evaluate_scenes
from ndsmsr.main import cmd_synth, cmd_train, load_dataset
from ndsmsr.models.unet import parameter_checksum
from ndsmsr.training import build_pool, evaluate_generator_mae, pretrain_sr_mae, read_manifest
from ndsmsr.utils.weights import build_from_bundle, load_bundle, load_model

SLOW = os.environ.get('NDSMSR_SLOW') == '1'


@unittest.skipUnless(SLOW, 'desk-scale run takes tens of minutes; set NDSMSR_SLOW=1')
class TestDeskScaleRun(unittest.TestCase):
    """64 synthetic 256px scenes through all three phases with the default desk-scale recipe."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        d = cls.tmp.name
        cmd_synth(0, 64, 256, osp.join(d, 'data'), verbose=False)
        cls.config = osp.join(d, 'train.yaml')
        with open(cls.config, 'w') as f:
            yaml.safe_dump({'device': 'cpu'}, f)
        cls.run = osp.join(d, 'run')
        cls.histories = cmd_train(cls.config, osp.join(d, 'data'), cls.run, 'all', verbose=False)
        cls.dataset = load_dataset(osp.join(d, 'data'), verbose=False)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_step_budget(self):
        self.assertLessEqual(sum(len(h.records) for h in self.histories.values()), 2000)

    def test_ndsm_beats_zero_predictor(self):
        meta = load_bundle(osp.join(self.run, 'ndsm', 'ndsm.bundle'), 'ndsm').training_meta
        self.assertLess(meta['val_mae_m'], meta['zero_mae_m'])

    def test_epsilon_and_frozen_ndsm(self):
        pretrain = read_manifest(osp.join(self.run, 'sr-pretrain'))
        self.assertEqual(read_manifest(osp.join(self.run, 'gan'))['epsilon'], 2 * pretrain['pretrain_mae'])
        before = parameter_checksum(load_model(osp.join(self.run, 'ndsm', 'ndsm.bundle'), 'ndsm'))
        after = parameter_checksum(load_model(osp.join(self.run, 'gan', 'ndsm.bundle'), 'ndsm'))
        self.assertEqual(before, after)

    def test_beats_bicubic(self):
        gen = load_model(osp.join(self.run, 'gan', 'generator.bundle'), 'generator')
        cols = evaluate_scenes(gen, self.dataset.test + self.dataset.val)
        sr, bic = cols['SR'], cols['BICUBIC']
        self.assertGreaterEqual(sr.mean_psnr_db, bic.mean_psnr_db + 0.5, '%s vs %s' % (sr.summary(), bic.summary()))
        self.assertGreaterEqual(sr.mean_ssim, bic.mean_ssim)


@unittest.skipUnless(SLOW, 'overfit run takes minutes; set NDSMSR_SLOW=1')
class TestOverfit(unittest.TestCase):

    def test_fixed_patches(self):
        # one training scene and no validation split: the pool is exactly 8 patches
        ds = SceneDataset(train=[generate_scene(11, 256)])
        cfg = replace(TrainConfig(), pretrain_steps=400, patches_per_scene=8, batch_size=8, device='cpu')
        bundle, history = pretrain_sr_mae(ds, cfg)
        pool = build_pool(ds.train, cfg)
        self.assertEqual(len(pool), 8)
        mae = evaluate_generator_mae(build_from_bundle(bundle), pool, 'cpu')
        self.assertLess(mae, 0.03)
        self.assertLess(history.pretrain_final_mae, 0.03)


if __name__ == '__main__':
    unittest.main()
