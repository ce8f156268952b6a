"""Small torch helpers shared by all model modules."""

import hashlib

import numpy as np
import torch
from torch import nn


def deterministic_torch(seed: int) -> None:
    """Single-threaded, seeded torch. Call at every training/sampling entry."""
    torch.set_num_threads(1)
    torch.manual_seed(int(seed))


def num_groups(channels: int) -> int:
    """Largest of 8/4/2/1 dividing the width, so tiny test configs still build."""
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


def group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(num_groups(channels), channels)


def zero_module(module: nn.Module) -> nn.Module:
    """Zero all parameters in place; used for zero convolutions and out layers."""
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def params_sha256(module: nn.Module) -> str:
    """Order-stable hash of all parameters and buffers, for freeze audits."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        arr = state[name].detach().cpu().numpy()
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def to_batch(images: np.ndarray) -> torch.Tensor:
    """(B,H,W,3) or (H,W,3) float arrays -> (B,3,H,W) float32 tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def to_images(batch: torch.Tensor) -> np.ndarray:
    """(B,3,H,W) tensor -> (B,H,W,3) float32 array."""
    return batch.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float32)
