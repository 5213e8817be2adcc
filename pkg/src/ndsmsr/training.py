import io
import json
import os
import os.path as osp
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from .config import config_hash
from .data.raster import validate_alignment
from .data.sampling import crop_patches, make_pairs
from .losses import (adversarial_g_loss, combined_loss, discriminator_loss, huber_content,
                     mae_loss, ndsm_loss, select_epsilon, weighted_total)
from .models.discriminator import build_discriminator
from .models.generator import build_generator
from .models.unet import build_ndsm_net, freeze, parameter_checksum
from .utils.errors import AlignmentError, BundleKindError, CheckpointError, ConfigError, DataError
from .utils.image import hwc_to_tensor
from .utils.pbar import progress, say
from .utils.weights import atomic_write, bundle_from_model, load_bundle, load_weights, save_bundle, build_from_bundle

PHASES = ('ndsm', 'sr-pretrain', 'gan')
PHASE_IDS = {'ndsm': 1, 'sr-pretrain': 2, 'gan': 3}
# which bundles each phase's checkpoint directory holds
PHASE_BUNDLES = {'ndsm': ('ndsm',), 'sr-pretrain': ('generator',), 'gan': ('generator', 'discriminator', 'ndsm')}
MANIFEST, HISTORY, OPTIMIZER = 'manifest.txt', 'history.log', 'optimizer.state'
MAE_TAIL = 50
SPLIT_IDS = {'train': 0, 'val': 1, 'test': 2}


def set_seed(seed):
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False
    torch.manual_seed(seed)
    torch.cuda.manual_seed_all(seed)
    np.random.seed(seed % 2 ** 32)
    random.seed(seed)


def resolve_device(cfg):
    return torch.device(cfg.device or ('cuda:0' if torch.cuda.is_available() else 'cpu'))


def derive_seed(*keys):
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class PatchPool:
    """All training patches of a split, extracted once. Batches are drawn from it by index,
    seeded by (run seed, phase, step), so any step's batch can be recomputed on resume.
    """
    lr: np.ndarray
    hr: np.ndarray
    ndsm: np.ndarray
    ids: List[str]

    def __len__(self):
        return len(self.ids)

    def batch_indices(self, seed, phase, step, batch_size):
        rng = np.random.default_rng([seed, PHASE_IDS[phase], step])
        return rng.choice(len(self), size=batch_size, replace=len(self) < batch_size)

    def tensors(self, idx, device):
        return (hwc_to_tensor(self.lr[idx]).to(device), hwc_to_tensor(self.hr[idx]).to(device),
                hwc_to_tensor(self.ndsm[idx]).to(device))

    def chunks(self, size, device):
        for i in range(0, len(self), size):
            yield self.tensors(np.arange(i, min(i + size, len(self))), device)


def build_pool(scenes, cfg, split='train'):
    if not scenes:
        raise DataError('the %s split has no scenes' % split)
    lr, hr, nd, ids = [], [], [], []
    for i, scene in enumerate(scenes):
        report = validate_alignment(scene.rgb, scene.ndsm, 1)
        if not report.ok:
            raise AlignmentError('scene %s is misaligned: %s' % (scene.id, report.reason))
        crops = crop_patches(scene, cfg.patch_px, cfg.patches_per_scene, derive_seed(cfg.seed, SPLIT_IDS[split], i))
        for k, p in enumerate(make_pairs(crops, cfg.scale)):
            lr.append(p.lr.values)
            hr.append(p.hr.values)
            nd.append(p.hr_ndsm.values)
            ids.append('%s#%u' % (scene.id, k))
    return PatchPool(np.stack(lr), np.stack(hr), np.stack(nd), ids)


@dataclass
class TrainHistory:
    """Per-step loss records of one phase (``LossBreakdown.to_record`` plus phase extras)."""
    phase: str
    records: List[dict] = field(default_factory=list)
    pretrain_final_mae: Optional[float] = None
    val_mae: Optional[float] = None
    zero_mae: Optional[float] = None
    wall_time: float = 0.0
    g_updates: int = 0
    d_updates: int = 0

    def losses(self, key='total'):
        return np.array([r[key] for r in self.records])

    def tail_mean(self, key='content', n=MAE_TAIL):
        return float(np.mean(self.losses(key)[-n:]))


def read_history(path):
    if not osp.isfile(path):
        return []
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def save_torch_state(obj, path):
    buf = io.BytesIO()
    torch.save(obj, buf)
    atomic_write(path, buf.getvalue())


def write_checkpoint(ckpt_dir, phase, cfg, step, models, optimizers, history, extra=None, fixed=None):
    """Bundles first, then optimizer state and history, the manifest last. Every file carries
    the step so a reader can tell a checkpoint interrupted mid-write from a consistent one.
    ``fixed`` bundles (the frozen nDSM network of the GAN phase) are written once, as they are.
    """
    os.makedirs(ckpt_dir, exist_ok=True)
    meta = dict(extra or {}, step=step, phase=phase)
    for kind, model in models.items():
        save_bundle(model, osp.join(ckpt_dir, kind + '.bundle'), meta)
    for kind, bundle in (fixed or {}).items():
        if not osp.isfile(osp.join(ckpt_dir, kind + '.bundle')):
            save_bundle(bundle, osp.join(ckpt_dir, kind + '.bundle'))
    save_torch_state(dict({k: o.state_dict() for k, o in optimizers.items()}, step=step), osp.join(ckpt_dir, OPTIMIZER))
    lines = ''.join(json.dumps(r) + '\n' for r in history.records)
    atomic_write(osp.join(ckpt_dir, HISTORY), lines.encode('utf-8'))
    manifest = dict(meta, config_hash=config_hash(cfg), scale=cfg.scale, wall_time=history.wall_time,
                    g_updates=history.g_updates, d_updates=history.d_updates)
    atomic_write(osp.join(ckpt_dir, MANIFEST), yaml.safe_dump(manifest, sort_keys=True).encode('utf-8'))


def read_manifest(ckpt_dir):
    path = osp.join(ckpt_dir, MANIFEST)
    if not osp.isfile(path):
        raise CheckpointError('no checkpoint in %s (%s missing)' % (ckpt_dir, MANIFEST))
    try:
        with open(path) as f:
            manifest = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise CheckpointError('corrupt checkpoint manifest %s: %s' % (path, e))
    if not isinstance(manifest, dict) or 'step' not in manifest or 'phase' not in manifest:
        raise CheckpointError('corrupt checkpoint manifest %s' % path)
    return manifest


def load_checkpoint(ckpt_dir, phase, cfg, device):
    """Checks a phase checkpoint against ``cfg`` and returns (manifest, bundles, optimizer state, history records)."""
    manifest = read_manifest(ckpt_dir)
    if manifest['phase'] != phase:
        raise CheckpointError('%s holds a "%s" checkpoint, not "%s"' % (ckpt_dir, manifest['phase'], phase))
    if manifest.get('scale') != cfg.scale:
        raise CheckpointError('checkpoint in %s was trained at scale %s, config asks for %s'
                              % (ckpt_dir, manifest.get('scale'), cfg.scale))
    if manifest.get('config_hash') != config_hash(cfg):
        raise CheckpointError('config does not match the one the checkpoint in %s was trained with' % ckpt_dir)
    step = manifest['step']
    bundles = {}
    for kind in PHASE_BUNDLES[phase]:
        b = load_bundle(osp.join(ckpt_dir, kind + '.bundle'), kind)
        if (kind != 'ndsm' or phase == 'ndsm') and b.training_meta.get('step') != step:
            raise CheckpointError('inconsistent checkpoint in %s: %s.bundle is at step %s, manifest at %s'
                                  % (ckpt_dir, kind, b.training_meta.get('step'), step))
        bundles[kind] = b
    try:
        opt_state = torch.load(osp.join(ckpt_dir, OPTIMIZER), map_location=device)
    except (OSError, RuntimeError, EOFError) as e:
        raise CheckpointError('cannot read optimizer state in %s: %s' % (ckpt_dir, e))
    if opt_state.get('step') != step:
        raise CheckpointError('inconsistent checkpoint in %s: optimizer state is at step %s' % (ckpt_dir, opt_state.get('step')))
    records = read_history(osp.join(ckpt_dir, HISTORY))
    if len(records) != step:
        raise CheckpointError('inconsistent checkpoint in %s: %u history records for step %u' % (ckpt_dir, len(records), step))
    return manifest, bundles, opt_state, records


def make_adam(params, cfg):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=tuple(cfg.adam_betas))


def run_steps(phase, total, history, step_fn, cfg, save_fn=None, verbose=False):
    """Executes steps len(history.records)+1 .. total, logging every ``log_every`` and
    checkpointing every ``checkpoint_every`` steps and at the end.
    """
    start = len(history.records)
    t0 = time.time() - history.wall_time
    with progress(total, phase, verbose, unit='step') as pbar:
        pbar.update(start)
        for step in range(start + 1, total + 1):
            rec = step_fn(step)
            history.records.append(rec)
            history.wall_time = time.time() - t0
            pbar.update(1)
            if step % cfg.log_every == 0 or step == total:
                say('[%s] step %u/%u  content %.5f  ndsm %.5f  adv %.5f  total %.5f' % (
                    phase, step, total, rec['content'], rec['ndsm'], rec['adversarial'], rec['total']), verbose)
            if save_fn and (step % cfg.checkpoint_every == 0 or step == total):
                save_fn(step)
    history.wall_time = time.time() - t0
    return history


def start_history(phase, records, manifest=None):
    h = TrainHistory(phase, list(records))
    if manifest:
        h.wall_time = manifest.get('wall_time', 0.0)
        h.g_updates = manifest.get('g_updates', 0)
        h.d_updates = manifest.get('d_updates', 0)
    return h


def check_resume(resume_from):
    if resume_from and not osp.isfile(osp.join(resume_from, MANIFEST)):
        raise CheckpointError('no checkpoint to resume from in %s' % resume_from)
    return resume_from or None


def evaluate_ndsm(net, pool, device, batch_size=8):
    """(MAE of the network, MAE of the all-zero prediction), both in meters."""
    err, zero, n = 0.0, 0.0, 0
    net.eval()
    with torch.no_grad():
        for _, hr, nd in pool.chunks(batch_size, device):
            err += (net(hr) - nd).abs().sum().item()
            zero += nd.abs().sum().item()
            n += nd.numel()
    return err / n, zero / n


def evaluate_generator_mae(generator, pool, device, batch_size=8):
    err, n = 0.0, 0
    generator.eval()
    with torch.no_grad():
        for lr, hr, _ in pool.chunks(batch_size, device):
            err += (generator(lr) - hr).abs().sum().item()
            n += hr.numel()
    return err / n


def pretrain_ndsm(dataset, cfg, ckpt_dir=None, resume_from=None, verbose=False):
    """Phase 1: fits the U-Net to the ground-truth heightmaps with MAE.
    Returns the ndsm ModelBundle (validation MAE in meters in its meta) and the history.
    """
    cfg.validate()
    if len(dataset) == 0 or not dataset.train:
        raise DataError('cannot pretrain the nDSM network on an empty dataset')
    dv = resolve_device(cfg)
    set_seed(cfg.seed)
    pool = build_pool(dataset.train, cfg, 'train')
    val_pool = build_pool(dataset.val, cfg, 'val') if dataset.val else pool

    net = build_ndsm_net(cfg.ndsm_net).to(dv)
    opt = make_adam(net.parameters(), cfg)
    history = TrainHistory('ndsm')
    if check_resume(resume_from):
        manifest, bundles, opt_state, records = load_checkpoint(resume_from, 'ndsm', cfg, dv)
        load_weights(net, bundles['ndsm'])
        opt.load_state_dict(opt_state['ndsm'])
        history = start_history('ndsm', records, manifest)

    say('Training nDSM network for %u steps on %u patches (%s)' % (cfg.ndsm_steps, len(pool), dv), verbose)

    def step_fn(step):
        idx = pool.batch_indices(cfg.seed, 'ndsm', step, cfg.batch_size)
        _, hr, nd = pool.tensors(idx, dv)
        net.train()
        loss = F.l1_loss(net(hr), nd)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.g_updates += 1
        v = loss.item()
        return dict(combined_loss(v, 0.0, 0.0, cfg.weights).to_record(step, 'ndsm'), batch=idx.tolist())

    def save_fn(step):
        write_checkpoint(ckpt_dir, 'ndsm', cfg, step, {'ndsm': net}, {'ndsm': opt}, history)

    run_steps('ndsm', cfg.ndsm_steps, history, step_fn, cfg, save_fn if ckpt_dir else None, verbose)

    history.val_mae, history.zero_mae = evaluate_ndsm(net, val_pool, dv)
    meta = dict(step=len(history.records), phase='ndsm', val_mae_m=history.val_mae, zero_mae_m=history.zero_mae)
    say('nDSM network: validation MAE %.3f m (zero predictor %.3f m), %.1f s' % (
        history.val_mae, history.zero_mae, history.wall_time), verbose)
    if ckpt_dir:
        save_bundle(net, osp.join(ckpt_dir, 'ndsm.bundle'), meta)
    return bundle_from_model(net, meta), history


def pretrain_sr_mae(dataset, cfg, ckpt_dir=None, resume_from=None, verbose=False):
    """Phase 2: trains the generator on mean absolute pixel error only.
    ``history.pretrain_final_mae`` is the validation MAE, or the mean of the last 50 training steps
    when there is no validation split.
    """
    cfg.validate()
    if len(dataset) == 0 or not dataset.train:
        raise DataError('cannot pretrain the generator on an empty dataset')
    dv = resolve_device(cfg)
    set_seed(cfg.seed)
    pool = build_pool(dataset.train, cfg, 'train')
    val_pool = build_pool(dataset.val, cfg, 'val') if dataset.val else None

    gen = build_generator(cfg.generator_config()).to(dv)
    opt = make_adam(gen.parameters(), cfg)
    history = TrainHistory('sr-pretrain')
    if check_resume(resume_from):
        manifest, bundles, opt_state, records = load_checkpoint(resume_from, 'sr-pretrain', cfg, dv)
        load_weights(gen, bundles['generator'])
        opt.load_state_dict(opt_state['generator'])
        history = start_history('sr-pretrain', records, manifest)

    say('Training generator (MAE pretraining) for %u steps on %u patches (%s)' % (cfg.pretrain_steps, len(pool), dv), verbose)

    def step_fn(step):
        idx = pool.batch_indices(cfg.seed, 'sr-pretrain', step, cfg.batch_size)
        lr, hr, _ = pool.tensors(idx, dv)
        gen.train()
        loss = mae_loss(gen(lr), hr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.g_updates += 1
        return dict(combined_loss(loss.item(), 0.0, 0.0, cfg.weights).to_record(step, 'sr-pretrain'), batch=idx.tolist())

    def save_fn(step):
        write_checkpoint(ckpt_dir, 'sr-pretrain', cfg, step, {'generator': gen}, {'generator': opt}, history)

    run_steps('sr-pretrain', cfg.pretrain_steps, history, step_fn, cfg, save_fn if ckpt_dir else None, verbose)

    if val_pool is not None:
        history.pretrain_final_mae = evaluate_generator_mae(gen, val_pool, dv)
    else:
        history.pretrain_final_mae = history.tail_mean('content')
    meta = dict(step=len(history.records), phase='sr-pretrain', pretrain_mae=history.pretrain_final_mae)
    say('Generator pretraining done: MAE %.5f, %.1f s' % (history.pretrain_final_mae, history.wall_time), verbose)
    if ckpt_dir:
        save_bundle(gen, osp.join(ckpt_dir, 'generator.bundle'), meta)
        write_manifest_field(ckpt_dir, pretrain_mae=history.pretrain_final_mae)
    return bundle_from_model(gen, meta), history


def write_manifest_field(ckpt_dir, **fields):
    manifest = read_manifest(ckpt_dir)
    manifest.update(fields)
    atomic_write(osp.join(ckpt_dir, MANIFEST), yaml.safe_dump(manifest, sort_keys=True).encode('utf-8'))


def bundle_scale(bundle):
    cfg = bundle.config if isinstance(bundle.config, dict) else asdict(bundle.config)
    return cfg.get('scale')


def gan_epsilon(cfg, generator_bundle):
    if cfg.weights.epsilon is not None:
        return float(cfg.weights.epsilon)
    mae = generator_bundle.training_meta.get('pretrain_mae')
    if mae is None:
        raise ConfigError('weights.epsilon is unset and the generator bundle records no pretrain MAE')
    return select_epsilon(mae)


def train_gan(dataset, generator_bundle, ndsm_bundle, cfg, ckpt_dir=None, resume_from=None, verbose=False):
    """Phase 3: alternating discriminator / generator updates (1:1) on the combined objective.
    The nDSM network is frozen throughout; ``history.records`` holds every loss component per step.
    Returns (generator bundle, discriminator bundle, history).
    """
    cfg.validate()
    if generator_bundle is None:
        raise CheckpointError('generator pretrain bundle missing (run the sr-pretrain phase first)')
    if ndsm_bundle is None:
        raise CheckpointError('ndsm bundle missing (run the ndsm phase first)')
    if generator_bundle.kind != 'generator':
        raise BundleKindError('expected a generator bundle, got "%s"' % generator_bundle.kind)
    if ndsm_bundle.kind != 'ndsm':
        raise BundleKindError('expected an ndsm bundle, got "%s"' % ndsm_bundle.kind)
    if bundle_scale(generator_bundle) != cfg.scale:
        raise CheckpointError('generator bundle is for scale %s, config asks for %u' % (bundle_scale(generator_bundle), cfg.scale))
    if not dataset.train:
        raise DataError('cannot train the GAN on an empty dataset')

    dv = resolve_device(cfg)
    set_seed(cfg.seed)
    pool = build_pool(dataset.train, cfg, 'train')
    pretrain_mae = generator_bundle.training_meta.get('pretrain_mae')
    epsilon = gan_epsilon(cfg, generator_bundle)

    gen = build_from_bundle(generator_bundle, dv)
    ndsm_net = freeze(build_from_bundle(ndsm_bundle, dv))
    checksum = parameter_checksum(ndsm_net)
    disc = build_discriminator(cfg.patch_px, cfg.discriminator_channels).to(dv)
    opt_g, opt_d = make_adam(gen.parameters(), cfg), make_adam(disc.parameters(), cfg)
    history = TrainHistory('gan', pretrain_final_mae=pretrain_mae)
    if check_resume(resume_from):
        manifest, bundles, opt_state, records = load_checkpoint(resume_from, 'gan', cfg, dv)
        load_weights(gen, bundles['generator'])
        load_weights(disc, bundles['discriminator'])
        opt_g.load_state_dict(opt_state['generator'])
        opt_d.load_state_dict(opt_state['discriminator'])
        epsilon = manifest['epsilon']
        history = start_history('gan', records, manifest)
        history.pretrain_final_mae = manifest.get('pretrain_mae', pretrain_mae)
    weights = replace(cfg.weights, epsilon=epsilon)

    say('Training GAN for %u steps on %u patches, epsilon %.5f (%s)' % (cfg.gan_steps, len(pool), epsilon, dv), verbose)

    def step_fn(step):
        idx = pool.batch_indices(cfg.seed, 'gan', step, cfg.batch_size)
        lr, hr, _ = pool.tensors(idx, dv)
        gen.train()
        disc.train()
        sr = gen(lr)

        # discriminator sees generator outputs detached from the generator graph
        disc.requires_grad_(True)
        real, fake = disc(hr), disc(sr.detach())
        d_loss = discriminator_loss(real, fake, weights.label_smoothing)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()
        history.d_updates += 1

        disc.requires_grad_(False)
        content = huber_content(sr, hr, epsilon)
        nd = ndsm_loss(sr, hr, ndsm_net, cfg.ndsm_reduction)
        adv = adversarial_g_loss(disc(sr))
        total = weighted_total(content, nd, adv, weights)
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        history.g_updates += 1

        rec = combined_loss(content.item(), nd.item(), adv.item(), weights).to_record(step, 'gan')
        rec.update(d_loss=d_loss.item(), d_real=real.mean().item(), d_fake=fake.mean().item(), batch=idx.tolist())
        return rec

    extra = dict(epsilon=epsilon, pretrain_mae=pretrain_mae)

    def save_fn(step):
        write_checkpoint(ckpt_dir, 'gan', cfg, step, {'generator': gen, 'discriminator': disc},
                         {'generator': opt_g, 'discriminator': opt_d}, history, extra, {'ndsm': ndsm_bundle})

    run_steps('gan', cfg.gan_steps, history, step_fn, cfg, save_fn if ckpt_dir else None, verbose)
    disc.requires_grad_(True)

    if parameter_checksum(ndsm_net) != checksum:
        raise CheckpointError('nDSM network parameters changed during GAN training')
    meta = dict(extra, step=len(history.records), phase='gan')
    say('GAN training done: %u generator / %u discriminator updates, %.1f s' % (
        history.g_updates, history.d_updates, history.wall_time), verbose)
    return bundle_from_model(gen, meta), bundle_from_model(disc, meta), history


def resume(ckpt_dir, cfg, dataset, upstream=None, verbose=False):
    """Continues whichever phase ``ckpt_dir`` holds up to the step budget in ``cfg``.
    ``upstream`` is only needed for phases that take bundles: {'generator': ..., 'ndsm': ...};
    a GAN checkpoint carries its own.
    """
    phase = read_manifest(ckpt_dir)['phase']
    if phase == 'ndsm':
        return pretrain_ndsm(dataset, cfg, ckpt_dir, ckpt_dir, verbose)
    if phase == 'sr-pretrain':
        return pretrain_sr_mae(dataset, cfg, ckpt_dir, ckpt_dir, verbose)
    if phase == 'gan':
        gen_b = (upstream or {}).get('generator') or load_bundle(osp.join(ckpt_dir, 'generator.bundle'), 'generator')
        nd_b = (upstream or {}).get('ndsm') or load_bundle(osp.join(ckpt_dir, 'ndsm.bundle'), 'ndsm')
        return train_gan(dataset, gen_b, nd_b, cfg, ckpt_dir, ckpt_dir, verbose)
    raise CheckpointError('unknown phase "%s" in %s' % (phase, ckpt_dir))
