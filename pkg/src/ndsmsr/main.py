import os.path as osp
from collections import OrderedDict

import torch

from .config import from_flat, load_config, save_config
from .data.dataset import MANIFEST_NAME, SceneDataset, write_dataset, scene_seeds
from .data.perturb import PerturbSpec
from .data.raster import load_raster, save_raster
from .data.synth import generate_scene
from .evaluation import evaluate_dirs, evaluate_scenes
from .inference import TileSpec, infer_raster
from .metrics import write_report
from .prep import check_limited_option, check_out_dir, require_bundle
from .training import MANIFEST, PHASES, pretrain_ndsm, pretrain_sr_mae, read_manifest, train_gan
from .utils.errors import ConfigError, DataError, ShapeError
from .utils.pbar import progress, say
from .utils.weights import load_bundle, load_model


def get_config(config_path=None, seed=None):
    if config_path:
        return load_config(config_path, seed=seed)
    return from_flat({} if seed is None else {'seed': seed})


def cmd_synth(seed=0, count=10, size=256, out_dir=None, verbose=True):
    """Writes ``count`` synthetic scenes plus manifest.jsonl (80/10/10 split by id hash) to ``out_dir``."""
    if count < 1:
        raise ConfigError('scene count must be >= 1, got %d' % count)
    if not out_dir:
        raise ConfigError('please specify an output directory with --out')
    check_out_dir(out_dir)
    scenes = []
    with progress(count, 'Generating scenes', verbose, unit='scene') as pbar:
        for s in scene_seeds(seed, count):
            scenes.append(generate_scene(s, size))
            pbar.update(1)
    path = write_dataset(scenes, out_dir, verbose)
    say('Wrote %u scenes and %s to: %s' % (count, MANIFEST_NAME, out_dir), verbose)
    return path


def load_dataset(data_dir, verbose=True):
    path = osp.join(data_dir, MANIFEST_NAME) if osp.isdir(data_dir) else data_dir
    ds = SceneDataset.from_manifest(path, verbose=verbose)
    say('Dataset: %u train / %u val / %u test scenes' % (len(ds.train), len(ds.val), len(ds.test)), verbose)
    return ds


def resume_dir(phase_dir, resume):
    return phase_dir if resume and osp.isfile(osp.join(phase_dir, MANIFEST)) else None


def run_phases(dataset, cfg, out_dir, phase='all', resume=False, verbose=True):
    """Runs one phase or all three in order under ``out_dir``/<phase>/. Later phases read the
    bundles earlier ones left on disk. Returns {phase: history}.
    """
    check_limited_option(phase, 'phase', list(PHASES) + ['all'])
    check_out_dir(out_dir)
    save_config(cfg, osp.join(out_dir, 'config.yaml'))
    dirs = {p: osp.join(out_dir, p) for p in PHASES}
    histories = OrderedDict()

    if phase in ('ndsm', 'all'):
        _, histories['ndsm'] = pretrain_ndsm(dataset, cfg, dirs['ndsm'], resume_dir(dirs['ndsm'], resume), verbose)
    if phase in ('sr-pretrain', 'all'):
        _, histories['sr-pretrain'] = pretrain_sr_mae(dataset, cfg, dirs['sr-pretrain'], resume_dir(dirs['sr-pretrain'], resume), verbose)
    if phase in ('gan', 'all'):
        gen_b = load_bundle(require_bundle(osp.join(dirs['sr-pretrain'], 'generator.bundle'), 'generator pretrain bundle'), 'generator')
        nd_b = load_bundle(require_bundle(osp.join(dirs['ndsm'], 'ndsm.bundle'), 'ndsm bundle'), 'ndsm')
        *_, histories['gan'] = train_gan(dataset, gen_b, nd_b, cfg, dirs['gan'], resume_dir(dirs['gan'], resume), verbose)
        m = read_manifest(dirs['gan'])
        say('Final epsilon %.6f (pretrain MAE %s)' % (m['epsilon'], m.get('pretrain_mae')), verbose)
    return histories


def cmd_train(config_path=None, data_dir=None, out_dir=None, phase='all', seed=None, resume=False, verbose=True):
    if not data_dir or not out_dir:
        raise ConfigError('train needs a dataset directory and --out')
    cfg = get_config(config_path, seed)
    dataset = load_dataset(data_dir, verbose)
    histories = run_phases(dataset, cfg, out_dir, phase, resume, verbose)
    say('Saved checkpoints to: %s' % out_dir, verbose)
    return histories


def cmd_infer(generator_bundle, in_raster, out_raster, tiles=None, device=None, verbose=True):
    """Super-resolves a 3-channel raster with a generator bundle. No nDSM is involved."""
    if not out_raster:
        raise ConfigError('please specify the output raster with --out')
    device = device or ('cuda:0' if torch.cuda.is_available() else 'cpu')
    generator = load_model(generator_bundle, 'generator', device)
    tiles = (tiles or TileSpec()).validate(generator.scale)
    grid = load_raster(in_raster)
    if grid.channels != 3:
        raise ShapeError('%s has %u channels, inference needs an RGB raster' % (in_raster, grid.channels))
    say('Super-resolving %s (%ux%u) x%u' % (in_raster, grid.height, grid.width, generator.scale), verbose)
    out = infer_raster(generator, grid, tiles, verbose)
    save_raster(out, out_raster)
    say('Saved %ux%u result to: %s' % (out.height, out.width, out_raster), verbose)
    return out


def cmd_evaluate(sr_dir, hr_dir, report_path, lr_dir=None, extra=None, verbose=True):
    if not report_path:
        raise ConfigError('please specify the report path with --out')
    reports = evaluate_dirs(sr_dir, hr_dir, lr_dir, extra, verbose=verbose)
    table_path = write_report(reports, report_path)
    for name, rep in reports.items():
        say('%s: %s' % (name, rep.summary()), verbose)
    say('Saved report to: %s and %s' % (report_path, table_path), verbose)
    return reports


def held_out(dataset):
    scenes = dataset.test or dataset.val
    if not scenes:
        raise DataError('the dataset has no test or val scenes to evaluate on')
    return scenes


def cmd_ablate_alignment(data_dir, config_path=None, perturb=None, out_dir=None, seed=None, verbose=True):
    """Trains the full pipeline twice with the same seed, once on the dataset as it is and once with
    perturbed nDSMs, and reports both generators side by side on the held-out scenes.
    """
    if not out_dir:
        raise ConfigError('please specify an output directory with --out')
    perturb = (perturb or PerturbSpec()).validate()
    cfg = get_config(config_path, seed)
    dataset = load_dataset(data_dir, verbose)
    check_out_dir(out_dir)

    say('Reference run', verbose)
    run_phases(dataset, cfg, osp.join(out_dir, 'reference'), 'all', verbose=verbose)
    say('Perturbed run (%s)' % perturb.mode, verbose)
    run_phases(dataset.perturbed(perturb), cfg, osp.join(out_dir, 'perturbed'), 'all', verbose=verbose)

    scenes = held_out(dataset)
    reports = OrderedDict()
    for name in ('reference', 'perturbed'):
        gen = load_model(osp.join(out_dir, name, 'gan', 'generator.bundle'), 'generator')
        cols = evaluate_scenes(gen, scenes, verbose=verbose)
        reports[name] = cols['SR']
    reports['BICUBIC'] = cols['BICUBIC']
    path = osp.join(out_dir, 'ablation.jsonl')
    write_report(reports, path)
    for name, rep in reports.items():
        say('%s: %s' % (name, rep.summary()), verbose)
    say('Saved report to: %s' % path, verbose)
    return reports
