import numpy as np
import torch


def values_of(x):
    # RasterGrid or plain (H, W, C) array
    return x if isinstance(x, np.ndarray) else x.values


def hwc_to_tensor(batch):
    """(N, H, W, C) numpy batch to a float32 (N, C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2), dtype=np.float32))


def from_tensor(t):
    """(N, C, H, W) tensor to an (N, H, W, C) float32 numpy array."""
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float32)
