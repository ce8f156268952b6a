"""Conditional denoising U-Net over latents.

Conditioning enters two ways: the semantic prompt as a cross-attention
token at every scale, and optional per-scale control residuals added to the
skip tensors right before the decoder consumes them (the middle path is
never touched). The output convolution starts at zero so the net begins as
an unbiased noise predictor.
"""

import torch
from torch import nn

from ..config import UNetConfig
from ..errors import ShapeError
from ..nnutil import group_norm, zero_module
from .blocks import CrossAttention, Downsample, ResBlock, TimestepEmbedding, Upsample


class ConditionalUNet(nn.Module):
    def __init__(self, cfg: UNetConfig, z_channels: int, ctx_dim: int):
        super().__init__()
        if len(cfg.channel_mults) < 2:
            raise ShapeError(f"need at least 2 scales, got mults {cfg.channel_mults}")
        widths = [cfg.base_channels * m for m in cfg.channel_mults]
        self.widths = widths
        self.scales = len(widths)
        self.ctx_dim = ctx_dim
        self.z_channels = z_channels

        self.stem = nn.Conv2d(z_channels, widths[0], 3, padding=1)
        self.time = TimestepEmbedding(cfg.time_dim)
        self.enc_res = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        for s, w in enumerate(widths):
            in_ch = widths[s - 1] if s > 0 else widths[0]
            self.enc_res.append(ResBlock(in_ch, w, time_dim=cfg.time_dim))
            self.enc_attn.append(CrossAttention(w, ctx_dim))
            if s < self.scales - 1:
                self.downs.append(Downsample(w))

        mid = widths[-1]
        self.mid_res1 = ResBlock(mid, mid, time_dim=cfg.time_dim)
        self.mid_attn = CrossAttention(mid, ctx_dim)
        self.mid_res2 = ResBlock(mid, mid, time_dim=cfg.time_dim)

        self.dec_res = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for s, w in enumerate(widths):
            in_ch = (widths[s + 1] if s < self.scales - 1 else w) + w
            self.dec_res.append(ResBlock(in_ch, w, time_dim=cfg.time_dim))
            self.dec_attn.append(CrossAttention(w, ctx_dim))
            if s < self.scales - 1:
                self.ups.append(Upsample(widths[s + 1]))

        self.out_norm = group_norm(widths[0])
        self.out_conv = zero_module(nn.Conv2d(widths[0], z_channels, 3, padding=1))

    def _prep_context(self, context: torch.Tensor, batch: int) -> torch.Tensor:
        if context.ndim == 2:
            context = context[:, None, :]
        if context.ndim != 3 or context.shape[-1] != self.ctx_dim:
            raise ShapeError(
                f"context must have dim {self.ctx_dim}, got shape {tuple(context.shape)}"
            )
        if context.shape[0] != batch:
            raise ShapeError(
                f"context batch {context.shape[0]} != latent batch {batch}"
            )
        return context

    def _prep_t(self, t, batch: int) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.tensor([int(t)] * batch)
        if t.ndim == 0:
            t = t.reshape(1).repeat(batch)
        return t

    def skip_shapes(self, z_shape) -> list[tuple[int, int, int]]:
        """Expected (C,H,W) of each scale's skip tensor for a latent shape."""
        _, _, h, w = z_shape
        out = []
        for s, width in enumerate(self.widths):
            out.append((width, h // (2**s), w // (2**s)))
        return out

    def forward(
        self,
        z_t: torch.Tensor,
        t,
        context: torch.Tensor,
        control: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        if z_t.ndim != 4 or z_t.shape[1] != self.z_channels:
            raise ShapeError(
                f"latent must be (B,{self.z_channels},h,w), got {tuple(z_t.shape)}"
            )
        if z_t.shape[2] % 2 ** (self.scales - 1) or z_t.shape[3] % 2 ** (self.scales - 1):
            raise ShapeError(
                f"latent sides must divide by {2 ** (self.scales - 1)}, got {tuple(z_t.shape[2:])}"
            )
        b = z_t.shape[0]
        context = self._prep_context(context, b)
        t_emb = self.time(self._prep_t(t, b))

        h = self.stem(z_t)
        skips = []
        for s in range(self.scales):
            h = self.enc_res[s](h, t_emb)
            h = self.enc_attn[s](h, context)
            skips.append(h)
            if s < self.scales - 1:
                h = self.downs[s](h)

        if control is not None:
            if len(control) != self.scales:
                raise ShapeError(
                    f"control must carry {self.scales} residuals, got {len(control)}"
                )
            for s, (skip, res) in enumerate(zip(skips, control)):
                if res.shape != skip.shape:
                    raise ShapeError(
                        f"control residual {s} shape {tuple(res.shape)} != skip {tuple(skip.shape)}"
                    )
                skips[s] = skip + res

        h = self.mid_res1(h, t_emb)
        h = self.mid_attn(h, context)
        h = self.mid_res2(h, t_emb)

        for s in range(self.scales - 1, -1, -1):
            h = torch.cat([h, skips[s]], dim=1)
            h = self.dec_res[s](h, t_emb)
            h = self.dec_attn[s](h, context)
            if s > 0:
                h = self.ups[s - 1](h)

        return self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
