import os.path as osp
import tempfile
import unittest
from dataclasses import replace

import numpy as np
import torch
import torch.nn as nn

from ndsmsr.backbones.basic import count_parameters
from ndsmsr.models.discriminator import DiscriminatorConfig, build_discriminator
from ndsmsr.models.generator import RRDB, GeneratorConfig, Upsample2x, build_generator, generator_forward, rescale_output
from ndsmsr.models.unet import NdsmNetConfig, build_ndsm_net, freeze, is_frozen, ndsm_forward, parameter_checksum
from ndsmsr.utils.errors import BundleError, BundleKindError, ConfigError, ShapeError
from ndsmsr.utils.weights import (MAGIC, encode_bundle, load_bundle, load_model, load_weights, save_bundle)

TINY = GeneratorConfig(scale=4, num_blocks=1, rrdbs_per_block=1, base_channels=8, growth_channels=4)


class TestGenerator(unittest.TestCase):

    def test_upsampling_units(self):
        for scale, units in ((4, 2), (8, 3)):
            g = build_generator(replace(TINY, scale=scale))
            self.assertEqual(sum(isinstance(m, Upsample2x) for m in g.modules()), units)
            self.assertEqual(sum(isinstance(m, nn.PixelShuffle) for m in g.modules()), units)

    def test_extra_convs_add_parameters(self):
        full = count_parameters(build_generator(GeneratorConfig()))
        plain = count_parameters(build_generator(GeneratorConfig(extra_convs=False)))
        self.assertGreater(full, plain)

    def test_no_batch_norm(self):
        g = build_generator(GeneratorConfig())
        self.assertFalse(any(isinstance(m, nn.modules.batchnorm._BatchNorm) for m in g.modules()))

    def test_rrdb_count(self):
        g = build_generator(GeneratorConfig(num_blocks=2, rrdbs_per_block=3))
        self.assertEqual(len(g.blocks), 2)
        self.assertEqual([len(b.rrdbs) for b in g.blocks], [3, 3])

    def test_forward_x4(self):
        torch.manual_seed(0)
        g = build_generator(TINY)
        lr = np.random.default_rng(0).uniform(0, 1, (1, 130, 130, 3)).astype(np.float32)
        sr = generator_forward(g, lr)
        self.assertEqual(sr.shape, (1, 520, 520, 3))
        self.assertGreaterEqual(sr.min(), 0)
        self.assertLessEqual(sr.max(), 1)

    def test_forward_x8(self):
        torch.manual_seed(0)
        g = build_generator(replace(TINY, scale=8))
        sr = generator_forward(g, torch.rand(2, 3, 65, 65))
        self.assertIsInstance(sr, torch.Tensor)
        self.assertEqual(tuple(sr.shape), (2, 3, 520, 520))

    def test_forward_range_on_extreme_input(self):
        torch.manual_seed(1)
        g = build_generator(TINY)
        sr = generator_forward(g, torch.full((1, 3, 16, 16), 1e4))
        self.assertTrue(bool((sr >= 0).all() and (sr <= 1).all()))

    def test_channel_mismatch(self):
        g = build_generator(TINY)
        with self.assertRaises(ShapeError):
            generator_forward(g, np.zeros((1, 16, 16, 4), dtype=np.float32))
        with self.assertRaises(ShapeError):
            generator_forward(g, np.zeros((16, 16, 3), dtype=np.float32))

    def test_invalid_config(self):
        for cfg in (replace(TINY, scale=3), replace(TINY, residual_scale=0), replace(TINY, residual_scale=1.5),
                    replace(TINY, num_blocks=0)):
            with self.assertRaises(ConfigError):
                build_generator(cfg)

    def test_rescale_output(self):
        out = rescale_output(torch.tensor([-1.0, 0.0, 1.0]))
        np.testing.assert_allclose(out.numpy(), [0.0, 0.5, 1.0])

    def test_rrdb_zero_weights_identity(self):
        rrdb = RRDB(8, 4, 0.2)
        with torch.no_grad():
            for m in rrdb.modules():
                if isinstance(m, nn.Conv2d):
                    m.weight.zero_()
                    m.bias.zero_()
        x = torch.rand(2, 8, 12, 12)
        np.testing.assert_array_equal(rrdb(x).detach().numpy(), x.numpy())


class TestDiscriminator(unittest.TestCase):

    def test_scores(self):
        torch.manual_seed(0)
        d = build_discriminator(32, 8).eval()
        x = torch.rand(4, 3, 32, 32)
        with torch.no_grad():
            a, b = d(x), d(x)
        self.assertEqual(tuple(a.shape), (4,))
        self.assertTrue(bool(((a > 0) & (a < 1)).all()))
        np.testing.assert_array_equal(a.numpy(), b.numpy())

    def test_input_px_stride(self):
        with self.assertRaises(ConfigError):
            build_discriminator(100, 8)
        with self.assertRaises(ConfigError):
            DiscriminatorConfig(input_px=4).validate()

    def test_wrong_input_size(self):
        d = build_discriminator(32, 8)
        with self.assertRaises(ShapeError):
            d(torch.rand(1, 3, 40, 40))

    def test_width_follows_base_channels(self):
        self.assertGreater(count_parameters(build_discriminator(32, 16)), count_parameters(build_discriminator(32, 8)))


class TestNdsmNet(unittest.TestCase):

    def test_forward(self):
        torch.manual_seed(0)
        net = build_ndsm_net(NdsmNetConfig(depth=3, base_channels=4))
        rgb = np.random.default_rng(0).uniform(0, 1, (2, 37, 50, 3)).astype(np.float32)
        h = ndsm_forward(net, rgb)
        self.assertEqual(h.shape, (2, 37, 50, 1))
        self.assertGreaterEqual(h.min(), 0)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            build_ndsm_net(NdsmNetConfig(depth=1))
        with self.assertRaises(ConfigError):
            build_ndsm_net(NdsmNetConfig(output_activation='relu'))

    def test_freeze(self):
        net = build_ndsm_net(NdsmNetConfig(depth=2, base_channels=4))
        self.assertFalse(is_frozen(net))
        before = parameter_checksum(net)
        freeze(net)
        self.assertTrue(is_frozen(net))
        self.assertFalse(net.training)
        self.assertEqual(parameter_checksum(net), before)
        with torch.no_grad():
            next(net.parameters()).add_(1.0)
        self.assertNotEqual(parameter_checksum(net), before)


class TestBundles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = osp.join(self.tmp.name, 'g.bundle')
        torch.manual_seed(0)
        self.model = build_generator(TINY)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_bundle(self.model, self.path, {'step': 12, 'pretrain_mae': 0.05})
        bundle = load_bundle(self.path, 'generator')
        self.assertEqual(bundle.training_meta, {'step': 12, 'pretrain_mae': 0.05})
        self.assertEqual(bundle.config['scale'], 4)
        loaded = load_model(self.path, 'generator')
        self.assertEqual(loaded.config, self.model.config)
        x = torch.rand(1, 3, 16, 16)
        np.testing.assert_array_equal(generator_forward(loaded, x).numpy(), generator_forward(self.model, x).numpy())

    def test_kind_mismatch(self):
        save_bundle(self.model, self.path)
        with self.assertRaises(BundleKindError):
            load_bundle(self.path, 'discriminator')

    def test_truncated(self):
        data = encode_bundle(save_bundle(self.model, self.path))
        with open(self.path, 'wb') as f:
            f.write(data[:len(data) // 2])
        with self.assertRaisesRegex(BundleError, 'truncated'):
            load_bundle(self.path)

    def test_trailing_bytes(self):
        data = encode_bundle(save_bundle(self.model, self.path))
        with open(self.path, 'wb') as f:
            f.write(data + b'\0')
        with self.assertRaisesRegex(BundleError, 'trailing'):
            load_bundle(self.path)

    def test_bad_magic_and_version(self):
        data = encode_bundle(save_bundle(self.model, self.path))
        with open(self.path, 'wb') as f:
            f.write(b'X' + data[1:])
        with self.assertRaisesRegex(BundleError, 'magic'):
            load_bundle(self.path)
        with open(self.path, 'wb') as f:
            f.write(MAGIC + (99).to_bytes(4, 'little') + data[len(MAGIC) + 4:])
        with self.assertRaisesRegex(BundleError, 'version'):
            load_bundle(self.path)

    def test_shape_mismatch(self):
        bundle = save_bundle(self.model, self.path)
        wider = build_generator(replace(TINY, base_channels=12))
        with self.assertRaises(BundleError):
            load_weights(wider, bundle)

    def test_missing_file(self):
        with self.assertRaises(BundleError):
            load_bundle(osp.join(self.tmp.name, 'nope.bundle'))


if __name__ == '__main__':
    unittest.main()
