"""Building blocks shared by the VAE, the denoising U-Net, and the control nets."""

import math

import torch
from torch import nn

from ..nnutil import group_norm


class ResBlock(nn.Module):
    """norm-act-conv twice with a residual skip; optional timestep injection.

    A stride > 1 or width change moves the skip through a matching 1x1 conv.
    """

    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None = None, stride: int = 1):
        super().__init__()
        self.norm1 = group_norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm2 = group_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None
        if in_ch == out_ch and stride == 1:
            self.skip = nn.Identity()
        else:
            self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        if self.time_proj is not None and t_emb is not None:
            h = h + self.time_proj(torch.nn.functional.silu(t_emb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Spatial queries attend over conditioning tokens; residual output."""

    def __init__(self, dim: int, ctx_dim: int, heads: int = 1):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"attention width {dim} not divisible by heads {heads}")
        self.heads = heads
        self.norm = group_norm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(ctx_dim, dim, bias=False)
        self.to_v = nn.Linear(ctx_dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if ctx.ndim == 2:
            ctx = ctx[:, None, :]
        flat = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(flat)
        k = self.to_k(ctx)
        v = self.to_v(ctx)
        hd = c // self.heads

        def split(t):
            return t.reshape(b, -1, self.heads, hd).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, h * w, c)
        out = self.to_out(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class TimestepEmbedding(nn.Module):
    """Sinusoidal features of the integer step, refined by two linear layers."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError(f"timestep embedding dim must be even, got {dim}")
        self.dim = dim
        self.proj1 = nn.Linear(dim, dim)
        self.proj2 = nn.Linear(dim, dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.proj1.weight.dtype
        t = t.to(dtype).reshape(-1, 1)
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1)
        )
        ang = t * freqs[None, :]
        emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
        return self.proj2(torch.nn.functional.silu(self.proj1(emb)))


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(torch.nn.functional.interpolate(x, scale_factor=2.0, mode="nearest"))
