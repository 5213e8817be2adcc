class NdsmSrError(Exception):
    """Base for every error the package raises on purpose. ``exit_code`` is what the CLI exits with."""
    exit_code = 1


class ConfigError(NdsmSrError, ValueError):
    exit_code = 2


class DataError(NdsmSrError):
    exit_code = 3


class RasterError(DataError):
    pass


class AlignmentError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class CheckpointError(NdsmSrError):
    exit_code = 4


class BundleError(CheckpointError):
    pass


class BundleKindError(BundleError, TypeError):
    pass
