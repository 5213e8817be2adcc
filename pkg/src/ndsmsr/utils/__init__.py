from .pbar import tqdm, progress, say
from .errors import NdsmSrError, ConfigError, DataError, CheckpointError
