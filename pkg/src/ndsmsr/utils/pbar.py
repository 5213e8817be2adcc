from tqdm.auto import tqdm


def progress(total, desc=None, verbose=True, unit='it'):
    """A tqdm bar that turns into a silent counter when ``verbose`` is off (tests, library calls)."""
    return tqdm(total=total, desc=desc, unit=unit, disable=not verbose, leave=False)


def say(msg, verbose=True):
    # tqdm.write keeps an active bar intact instead of tearing it with a plain print
    if verbose:
        tqdm.write(msg)
