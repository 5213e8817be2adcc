import unittest

import numpy as np
import torch

from ndsmsr.data.raster import GeoInfo, RasterGrid
from ndsmsr.inference import TileSpec, edge_ramp, infer_raster, tile_starts, tiled_infer
from ndsmsr.models.generator import GeneratorConfig, build_generator, generator_forward
from ndsmsr.utils.errors import ConfigError, ShapeError


def tiny_generator(scale=4):
    torch.manual_seed(0)
    return build_generator(GeneratorConfig(scale=scale, num_blocks=1, rrdbs_per_block=1, base_channels=8, growth_channels=4)).eval()


class TestTiling(unittest.TestCase):

    def test_tile_starts(self):
        self.assertEqual(tile_starts(30, 40, 4), [0])
        self.assertEqual(tile_starts(40, 40, 4), [0])
        starts = tile_starts(100, 40, 8)
        self.assertEqual(starts[0], 0)
        self.assertEqual(starts[-1], 60)
        for a, b in zip(starts, starts[1:]):
            self.assertGreaterEqual(a + 40 - b, 8)

    def test_partition_of_unity(self):
        size, overlap = 48, 16
        starts = tile_starts(120, size, overlap)
        for blend in ('feather', 'crop-center'):
            total = np.zeros(120)
            for s in starts:
                total[s:s + size] += edge_ramp(size, overlap, s > 0, s + size < 120, blend)
            self.assertTrue((total > 0).all(), blend)
            if blend == 'feather':
                # up to the snapped last tile, overlaps are exactly ``overlap`` wide
                np.testing.assert_allclose(total[:starts[-2]], 1.0)

    def test_tile_spec_validation(self):
        TileSpec(64, 16).validate(4)
        for spec in (TileSpec(62, 16), TileSpec(64, 14), TileSpec(64, 32), TileSpec(64, 16, 'linear'), TileSpec(64, -4),
                     TileSpec(64, 16, 'feather', 6), TileSpec(64, 16, 'feather', -4)):
            with self.assertRaises(ConfigError):
                spec.validate(4)


class TestInference(unittest.TestCase):

    def test_tiled_matches_whole(self):
        torch.manual_seed(0)
        g = build_generator(GeneratorConfig()).eval()
        lr = np.random.default_rng(0).uniform(0, 1, (200, 200, 3)).astype(np.float32)
        whole = generator_forward(g, lr[None])[0]
        tiled = tiled_infer(g, lr, TileSpec())
        self.assertEqual(tiled.shape, (800, 800, 3))
        self.assertLess(np.abs(tiled - whole)[32:-32, 32:-32].max(), 1e-3)
        np.testing.assert_allclose(tiled, whole, atol=1e-4)

    def test_small_context_shows_seams(self):
        g = tiny_generator()
        lr = np.random.default_rng(4).uniform(0, 1, (96, 96, 3)).astype(np.float32)
        whole = generator_forward(g, lr[None])[0]
        full = tiled_infer(g, lr, TileSpec(192, 32))
        bare = tiled_infer(g, lr, TileSpec(192, 32, 'feather', 0))
        np.testing.assert_allclose(full, whole, atol=1e-4)
        self.assertGreater(np.abs(bare - whole).max(), 1e-5)

    def test_receptive_radius(self):
        self.assertEqual(build_generator(GeneratorConfig()).receptive_radius, 36)
        g = tiny_generator()
        r = g.receptive_radius
        self.assertEqual(r, 11)
        lr = np.random.default_rng(5).uniform(0, 1, (48, 48, 3)).astype(np.float32)
        moved = lr.copy()
        moved[24, 24] = 1 - moved[24, 24]
        diff = np.abs(generator_forward(g, moved[None])[0] - generator_forward(g, lr[None])[0]).max(axis=2)
        lo, hi = (24 - r) * 4, (24 + r + 1) * 4
        self.assertGreater(diff[lo:hi, lo:hi].max(), 0)
        diff[lo:hi, lo:hi] = 0
        self.assertLessEqual(diff.max(), 1e-6)

    def test_single_tile(self):
        g = tiny_generator()
        lr = np.random.default_rng(1).uniform(0, 1, (30, 20, 3)).astype(np.float32)
        out = tiled_infer(g, lr, TileSpec(512, 64))
        np.testing.assert_allclose(out, generator_forward(g, lr[None])[0], atol=1e-6)

    def test_crop_center_output_shape(self):
        g = tiny_generator(8)
        lr = np.random.default_rng(2).uniform(0, 1, (40, 33, 3)).astype(np.float32)
        out = tiled_infer(g, lr, TileSpec(128, 32, 'crop-center'))
        self.assertEqual(out.shape, (320, 264, 3))
        self.assertTrue(np.isfinite(out).all())
        self.assertTrue(0 <= out.min() and out.max() <= 1)

    def test_raster_geometry(self):
        g = tiny_generator()
        mask = np.zeros((130, 130), dtype=bool)
        mask[0, 0] = True
        grid = RasterGrid(np.random.default_rng(3).uniform(0, 1, (130, 130, 3)).astype(np.float32),
                          GeoInfo(4000.0, 9000.0, 0.2, 0.2, 'EPSG:2169'), mask)
        out = infer_raster(g, grid, TileSpec(520, 64))
        self.assertEqual(out.values.shape, (520, 520, 3))
        self.assertAlmostEqual(out.geo.pixel_x, 0.05)
        self.assertAlmostEqual(out.geo.pixel_y, 0.05)
        self.assertEqual((out.geo.origin_x, out.geo.origin_y, out.geo.crs), (4000.0, 9000.0, 'EPSG:2169'))
        self.assertEqual(int(out.nodata_mask.sum()), 16)

    def test_channel_mismatch(self):
        g = tiny_generator()
        with self.assertRaises(ShapeError):
            infer_raster(g, RasterGrid(np.zeros((16, 16, 1), dtype=np.float32)), TileSpec())
        with self.assertRaises(ConfigError):
            tiled_infer(g, np.zeros((16, 16, 3), dtype=np.float32), TileSpec(510, 64))


if __name__ == '__main__':
    unittest.main()
