import argparse
import sys

from .data.perturb import DIRECTIONS, MODES, PerturbSpec
from .inference import BLENDS, TileSpec
from .main import cmd_ablate_alignment, cmd_evaluate, cmd_infer, cmd_synth, cmd_train
from .prep import parse_named_dirs
from .training import PHASES
from .utils.errors import NdsmSrError


class CustomHelpFormatter(argparse.HelpFormatter):

    def __init__(self, prog):
        super().__init__(prog, max_help_position=40, width=120)

    # https://stackoverflow.com/a/29485128
    def _split_lines(self, text, width):
        return super()._split_lines(text, width) + ['']

    # https://stackoverflow.com/a/31124505
    def _format_action_invocation(self, action):
        if not action.option_strings or action.nargs == 0:
            return super()._format_action_invocation(action)
        default = self._get_default_metavar_for_optional(action)
        args_string = self._format_args(action, default)
        return ', '.join(action.option_strings) + ' ' + args_string


def add_global_args(parser):
    # SUPPRESS keeps a value given before the subcommand from being reset by the subparser's default
    parser.add_argument('--seed', metavar='INT', type=int, default=argparse.SUPPRESS, help='The single seed every random choice is derived from (scene synthesis, patch sampling, weight init, batch order). Overrides "seed" from --config. Defaults to 0.')
    parser.add_argument('--config', metavar='PATH', default=argparse.SUPPRESS, help='Path to a flat YAML training config whose keys mirror the config field names, with dotted keys for nested ones (e.g. "weights.alpha: 0.01", "generator.num_blocks: 2"). Unknown keys are an error. Omitted keys keep the desk-scale defaults.')
    parser.add_argument('--out', metavar='PATH', default=argparse.SUPPRESS, help='Output location: the dataset directory for "synth", the run directory for "train" and "ablate-alignment", the SR raster for "infer" and the .jsonl report for "evaluate".')
    parser.add_argument('-q', '--quiet', action='store_true', default=argparse.SUPPRESS, help='Don\'t print status lines and progress bars.')


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    add_global_args(common)

    parser = argparse.ArgumentParser(prog='ndsmsr', formatter_class=CustomHelpFormatter, description='Super-resolution of aerial RGB imagery trained with an elevation-aware (nDSM) loss.')
    add_global_args(parser)
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    p = sub.add_parser('synth', parents=[common], formatter_class=CustomHelpFormatter, help='Generate a synthetic RGB + nDSM dataset.')
    p.add_argument('-n', '--count', metavar='INT', type=int, default=10, help='How many scenes to generate. The default is 10. Scenes are split 80/10/10 into train/val/test by a hash of their id.')
    p.add_argument('--size', metavar='PX', type=int, default=256, help='Side length of every square scene in pixels. The default is 256.')

    p = sub.add_parser('train', parents=[common], formatter_class=CustomHelpFormatter, help='Run one training phase or the whole pipeline.')
    p.add_argument('data_dir', metavar='DATA', help='A dataset directory with manifest.jsonl (as written by "synth") or a path to the manifest itself. Each record names "rgb" and either "ndsm" or a "dsm" + "dem" pair (the nDSM is then their difference). A record with "resample_ratio": N holds heights N times coarser than its RGB; they are resampled onto the RGB grid.')
    p.add_argument('-p', '--phase', metavar='TEXT', default='all', choices=list(PHASES) + ['all'], help='Accepted values: "ndsm", "sr-pretrain", "gan", "all" (the default). "gan" needs the bundles of the two earlier phases to be present under --out. Each phase keeps its checkpoints in "<--out>/<phase>".')
    p.add_argument('--resume', action='store_true', help='Continue every selected phase from its last checkpoint instead of starting over. A phase without a checkpoint starts from scratch. The config must match the one the checkpoint was written with, apart from step counts, logging intervals, device and epsilon.')

    p = sub.add_parser('infer', parents=[common], formatter_class=CustomHelpFormatter, help='Super-resolve an RGB raster. No nDSM is needed.')
    p.add_argument('bundle', metavar='BUNDLE', help='Path to a generator bundle, e.g. "<run>/gan/generator.bundle".')
    p.add_argument('raster', metavar='RASTER', help='Input 3-channel raster (GeoTIFF or PNG). The output keeps its georeferencing with the pixel size divided by the scale.')
    p.add_argument('--tile-px', metavar='PX', type=int, default=512, help='Tile size in output pixels. Must be a multiple of the model scale. The default is 512. Rasters smaller than one tile are processed whole.')
    p.add_argument('--overlap-px', metavar='PX', type=int, default=64, help='Overlap between neighbouring tiles in output pixels. Must be a multiple of the scale and less than half of --tile-px. The default is 64.')
    p.add_argument('--blend', metavar='TEXT', default='feather', choices=BLENDS, help='Accepted values: "feather" (the default; linear cross-fade inside the overlaps), "crop-center" (each overlap is split in the middle).')
    p.add_argument('--context-px', metavar='PX', type=int, help='Extra input around each tile in output pixels, discarded after inference. Must be a multiple of the scale. By default it covers the receptive field of the generator, so tile seams are invisible; smaller values are faster but let tile borders show.')
    p.add_argument('-d', '--device', metavar='TEXT', help='Accepts everything that torch.device accepts. Defaults to "cuda:0" if a GPU is available and to "cpu" otherwise.')

    p = sub.add_parser('evaluate', parents=[common], formatter_class=CustomHelpFormatter, help='Score SR rasters against HR references (PSNR, SSIM).')
    p.add_argument('sr_dir', metavar='SR_DIR', help='Directory with super-resolved rasters. Files are matched to --hr by name without extension.')
    p.add_argument('hr_dir', metavar='HR_DIR', help='Directory with the high-resolution references.')
    p.add_argument('--lr', metavar='DIR', help='Directory with the LR inputs. If given, a BICUBIC column (bicubic upsampling of the inputs) is added to the report.')
    p.add_argument('--extra', metavar='NAME=DIR', action='append', help='An externally produced SR directory to report as an additional column. Can be repeated.')

    p = sub.add_parser('ablate-alignment', parents=[common], formatter_class=CustomHelpFormatter, help='Train twice, with and without misaligned nDSMs, and compare.')
    p.add_argument('data_dir', metavar='DATA', help='A dataset directory with manifest.jsonl.')
    p.add_argument('-m', '--mode', metavar='TEXT', default='constant_shift', choices=MODES, help='Accepted values: "identity", "constant_shift" (the default), "random_transform".')
    p.add_argument('--shift-px', metavar='PX', type=int, default=2, help='For "constant_shift", how many pixels to move every nDSM. The default is 2.')
    p.add_argument('--direction', metavar='TEXT', default='random', choices=DIRECTIONS, help='For "constant_shift": "up", "down", "left", "right" or "random" (the default; drawn per scene).')
    p.add_argument('--max-rotation', metavar='DEG', type=float, default=0.0, help='For "random_transform", rotations are drawn uniformly from [-DEG, DEG].')
    p.add_argument('--max-skew', metavar='FLOAT', type=float, default=0.0, help='For "random_transform", horizontal skew factors are drawn uniformly from [-FLOAT, FLOAT].')
    return parser


def run(args):
    seed = getattr(args, 'seed', None)
    config = getattr(args, 'config', None)
    out = getattr(args, 'out', None)
    verbose = not getattr(args, 'quiet', False)
    if args.command == 'synth':
        return cmd_synth(0 if seed is None else seed, args.count, args.size, out, verbose)
    if args.command == 'train':
        return cmd_train(config, args.data_dir, out, args.phase, seed, args.resume, verbose)
    if args.command == 'infer':
        tiles = TileSpec(args.tile_px, args.overlap_px, args.blend, args.context_px)
        return cmd_infer(args.bundle, args.raster, out, tiles, args.device, verbose)
    if args.command == 'evaluate':
        return cmd_evaluate(args.sr_dir, args.hr_dir, out, args.lr, parse_named_dirs(args.extra), verbose)
    if args.command == 'ablate-alignment':
        perturb = PerturbSpec(args.mode, args.shift_px, args.direction, args.max_rotation, args.max_skew, 0 if seed is None else seed)
        return cmd_ablate_alignment(args.data_dir, config, perturb, out, seed, verbose)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except NdsmSrError as e:
        print('ERROR: %s' % e)
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
