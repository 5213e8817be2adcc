import cv2
import numpy as np

from .raster import RasterGrid
from .sampling import ScenePair
from ..utils.errors import ConfigError

# px of shadow cast per meter of height, towards the bottom-right (sun in the upper left)
SHADOW_PX_PER_M = 0.35
BUILDING_HEIGHTS = (3.0, 20.0)
TREE_HEIGHTS = (2.0, 10.0)


def smooth_noise(rng, size, sigma, channels=1):
    n = rng.standard_normal((size, size, channels)).astype(np.float32)
    out = np.stack([cv2.GaussianBlur(n[..., c], (0, 0), sigma, borderType=cv2.BORDER_REFLECT) for c in range(channels)], axis=-1)
    return out / (out.std() + 1e-6)


def free(occupied, r0, c0, r1, c1, margin):
    h, w = occupied.shape
    return not occupied[max(r0 - margin, 0):min(r1 + margin, h), max(c0 - margin, 0):min(c1 + margin, w)].any()


def place_buildings(rng, size, occupied, ndsm, placements):
    count = int(rng.integers(size // 48, size // 24 + 1))
    for _ in range(count * 10):
        if count == 0:
            break
        bh, bw = (int(v) for v in rng.integers(8, max(size // 5, 9), size=2))
        r, c = (int(v) for v in rng.integers(0, size - np.array([bh, bw]) + 1))
        if not free(occupied, r, c, r + bh, c + bw, margin=3):
            continue
        height = float(np.float32(rng.uniform(*BUILDING_HEIGHTS)))
        occupied[r:r + bh, c:c + bw] = True
        ndsm[r:r + bh, c:c + bw] = height
        placements.append(('building', r, c, bh, bw, height))
        count -= 1


def place_trees(rng, size, occupied, ndsm, placements):
    count = int(rng.integers(size // 32, size // 12 + 1))
    yy, xx = np.mgrid[:size, :size]
    for _ in range(count * 10):
        if count == 0:
            break
        rad = int(rng.integers(3, 11))
        r, c = (int(v) for v in rng.integers(rad, size - rad, size=2))
        if not free(occupied, r - rad, c - rad, r + rad + 1, c + rad + 1, margin=2):
            continue
        disk = (yy - r) ** 2 + (xx - c) ** 2 <= rad ** 2
        height = float(np.float32(rng.uniform(*TREE_HEIGHTS)))
        occupied[disk] = True
        ndsm[disk] = height
        placements.append(('tree', r, c, rad, rad, height))
        count -= 1


def cast_shadows(ndsm):
    """Boolean map of ground pixels shadowed by any object; a pixel is shaded if some
    pixel up-left of it along the diagonal is tall enough to reach it.
    """
    size = ndsm.shape[0]
    shadow = np.zeros_like(ndsm, dtype=bool)
    max_len = int(np.ceil(BUILDING_HEIGHTS[1] * SHADOW_PX_PER_M)) + 1
    for d in range(1, max_len + 1):
        src = np.zeros_like(ndsm)
        src[d:, d:] = ndsm[:-d, :-d]
        shadow |= src * SHADOW_PX_PER_M >= d
    shadow &= ndsm == 0
    return shadow


def render_rgb(rng, size, ndsm, placements):
    ground = np.array([0.42, 0.40, 0.30], dtype=np.float32)
    tex = smooth_noise(rng, size, 6.0, 3) * 0.05 + smooth_noise(rng, size, 1.0, 3) * 0.02
    rgb = ground + tex
    for kind, r, c, h, w, m in placements:
        if kind == 'building':
            # taller roofs are brighter: the height signal the nDSM network learns from
            tone = 0.55 + 0.02 * m
            roof = np.full((h, w, 3), tone, dtype=np.float32) * np.array([1.0, 0.97, 0.93], dtype=np.float32)
            roof += rng.standard_normal((h, w, 1)).astype(np.float32) * 0.015
            roof[:2, :] += 0.08  # lit edge towards the sun
            roof[:, :2] += 0.08
            rgb[r:r + h, c:c + w] = roof
    yy, xx = np.mgrid[:size, :size]
    for kind, r, c, rad, _, m in placements:
        if kind == 'tree':
            disk = (yy - r) ** 2 + (xx - c) ** 2 <= rad ** 2
            leaves = np.array([0.16, 0.32, 0.12], dtype=np.float32) * (0.8 + 0.03 * m)
            noise = rng.standard_normal((int(disk.sum()), 3)).astype(np.float32) * 0.04
            rgb[disk] = leaves + noise
    rgb[cast_shadows(ndsm)] *= 0.45
    return np.clip(rgb, 0, 1).astype(np.float32)


def generate_scene(seed, size):
    """Synthetic aerial scene: textured ground with rectangular buildings and round trees.
    The nDSM holds exactly the programmed heights (0 on the ground); the RGB carries
    height-dependent roof tones and cast shadows. Pure function of (seed, size).
    """
    if size < 64 or size % 8:
        raise ConfigError('scene size must be >= 64 and divisible by 8, got %s' % size)
    rng = np.random.default_rng(seed)
    occupied = np.zeros((size, size), dtype=bool)
    ndsm = np.zeros((size, size), dtype=np.float32)
    placements = []
    place_buildings(rng, size, occupied, ndsm, placements)
    place_trees(rng, size, occupied, ndsm, placements)
    rgb = render_rgb(rng, size, ndsm, placements)
    return ScenePair(RasterGrid(rgb), RasterGrid(ndsm[:, :, None]), 'scene_%u' % seed, tuple(placements))
