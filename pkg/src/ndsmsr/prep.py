import os
import os.path as osp

from .data.raster import GEOTIFF_EXTENSIONS, PNG_EXTENSIONS, RAW_EXTENSIONS
from .utils.errors import CheckpointError, ConfigError, DataError

RASTER_EXTENSIONS = GEOTIFF_EXTENSIONS + PNG_EXTENSIONS + RAW_EXTENSIONS


def get_raster_paths(target_dir):
    """{id: path} for every raster directly inside ``target_dir``; the id is the file name without extension."""
    if not osp.isdir(target_dir):
        raise DataError('%s doesn\'t exist or isn\'t a directory' % target_dir)
    paths = sorted(e.path for e in os.scandir(target_dir) if e.is_file() and e.name.lower().endswith(RASTER_EXTENSIONS))
    return {osp.splitext(osp.basename(p))[0]: p for p in paths}


def check_limited_option(val, arg_name, possible_vals):
    if val not in possible_vals:
        raise ConfigError('unknown %s "%s". Available options are %s' % (arg_name, val, ', '.join(['"%s"' % v for v in possible_vals])))
    return val


def check_out_dir(path):
    """Creates ``path`` if needed and makes sure files can be written into it."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataError('cannot create output directory %s: %s' % (path, e))
    if not os.access(path, os.W_OK):
        raise DataError('output directory %s is not writable' % path)
    return path


def require_bundle(path, what):
    if not osp.isfile(path):
        raise CheckpointError('%s missing (expected at %s)' % (what, path))
    return path


def parse_named_dirs(items):
    """["NAME=DIR", ...] into {NAME: DIR} for extra evaluation columns."""
    out = {}
    for item in items or []:
        name, sep, path = item.partition('=')
        if not sep or not name or not path:
            raise ConfigError('expected NAME=DIR, got "%s"' % item)
        if name in out:
            raise ConfigError('column name "%s" given twice' % name)
        out[name] = path
    return out


def match_ids(reference, others):
    """Checks that every {id: path} mapping in ``others`` has exactly the ids of ``reference``."""
    for name, paths in others.items():
        missing = sorted(set(reference) - set(paths))
        extra = sorted(set(paths) - set(reference))
        if missing or extra:
            msg = []
            if missing:
                msg.append('missing in %s: %s' % (name, ', '.join(missing)))
            if extra:
                msg.append('unmatched in %s: %s' % (name, ', '.join(extra)))
            raise DataError('ids do not match; ' + '; '.join(msg))
