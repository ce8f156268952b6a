"""Image-guided control: degradation-modulated encoder, zero-conv branch,
and the training-only reconstruction decoder.

The control encoder turns the degraded image into a feature at latent
resolution, with each block's channels gated by the degradation prompt. A
width-matched copy of the U-Net's encoder path then turns that feature plus
the noisy latent into per-scale residuals, each leaving through a 1x1
convolution initialized to zero so the branch starts silent.
"""

import torch
from torch import nn

from .backbone.blocks import CrossAttention, Downsample, ResBlock, TimestepEmbedding, Upsample
from .backbone.unet import ConditionalUNet
from .config import ControlConfig, UNetConfig
from .errors import ShapeError
from .nnutil import group_norm, zero_module


class DMB(nn.Module):
    """Two residual blocks with a prompt-driven channel gate between them."""

    def __init__(self, in_ch: int, out_ch: int, deg_dim: int, stride: int = 1, gated: bool = True):
        super().__init__()
        self.in_ch = in_ch
        self.gated = gated
        self.block1 = ResBlock(in_ch, out_ch, stride=stride)
        self.gate = nn.Linear(deg_dim, out_ch)
        self.block2 = ResBlock(out_ch, out_ch)

    def modulation(self, p_d: torch.Tensor) -> torch.Tensor:
        """Per-channel gate values, each strictly inside (0, 1)."""
        if p_d.shape[-1] != self.gate.in_features:
            raise ShapeError(
                f"degradation prompt dim {p_d.shape[-1]} != expected {self.gate.in_features}"
            )
        return torch.sigmoid(self.gate(p_d))

    def forward(self, f: torch.Tensor, p_d: torch.Tensor) -> torch.Tensor:
        if f.shape[1] != self.in_ch:
            raise ShapeError(f"feature has {f.shape[1]} channels, block expects {self.in_ch}")
        h = self.block1(f)
        if self.gated:
            h = h * self.modulation(p_d)[:, :, None, None]
        return self.block2(h)


class ControlEncoder(nn.Module):
    """Four DMBs, downsampling twice, ending at the U-Net's stem width."""

    def __init__(self, widths: tuple[int, int, int], c_match: int, deg_dim: int, gated: bool = True):
        super().__init__()
        w1, w2, w3 = widths
        self.blocks = nn.ModuleList(
            [
                DMB(3, w1, deg_dim, stride=1, gated=gated),
                DMB(w1, w2, deg_dim, stride=2, gated=gated),
                DMB(w2, w3, deg_dim, stride=2, gated=gated),
                DMB(w3, c_match, deg_dim, stride=1, gated=gated),
            ]
        )

    def forward(self, i_lq: torch.Tensor, p_d: torch.Tensor) -> torch.Tensor:
        if i_lq.ndim != 4 or i_lq.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) image batch, got {tuple(i_lq.shape)}")
        if i_lq.shape[2] % 4 or i_lq.shape[3] % 4:
            raise ShapeError(f"image sides must be divisible by 4, got {tuple(i_lq.shape[2:])}")
        h = i_lq
        for block in self.blocks:
            h = block(h, p_d)
        return h


class ControlDecoder(nn.Module):
    """Four residual blocks back to a full-resolution image; training only."""

    def __init__(self, c_match: int, widths: tuple[int, int, int]):
        super().__init__()
        w1, w2, w3 = widths
        self.block1 = ResBlock(c_match, w3)
        self.up1 = Upsample(w3)
        self.block2 = ResBlock(w3, w2)
        self.up2 = Upsample(w2)
        self.block3 = ResBlock(w2, w1)
        self.block4 = ResBlock(w1, w1)
        self.norm_out = group_norm(w1)
        self.conv_out = nn.Conv2d(w1, 3, 3, padding=1)

    def forward(self, cond: torch.Tensor) -> torch.Tensor:
        h = self.up1(self.block1(cond))
        h = self.up2(self.block2(h))
        h = self.block4(self.block3(h))
        return torch.sigmoid(self.conv_out(torch.nn.functional.silu(self.norm_out(h))))


class ControlNetBranch(nn.Module):
    """Copy of the U-Net encoder path emitting zero-conv residuals per scale."""

    def __init__(self, cfg: UNetConfig, z_channels: int, ctx_dim: int,
                 use_timestep: bool = True, use_context: bool = True):
        super().__init__()
        widths = [cfg.base_channels * m for m in cfg.channel_mults]
        self.widths = widths
        self.scales = len(widths)
        self.ctx_dim = ctx_dim
        self.use_timestep = use_timestep
        self.use_context = use_context
        self.stem = nn.Conv2d(z_channels, widths[0], 3, padding=1)
        self.time = TimestepEmbedding(cfg.time_dim)
        self.enc_res = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.zero_convs = nn.ModuleList()
        for s, w in enumerate(widths):
            in_ch = widths[s - 1] if s > 0 else widths[0]
            self.enc_res.append(ResBlock(in_ch, w, time_dim=cfg.time_dim))
            self.enc_attn.append(CrossAttention(w, ctx_dim))
            self.zero_convs.append(zero_module(nn.Conv2d(w, w, 1)))
            if s < self.scales - 1:
                self.downs.append(Downsample(w))

    def init_from_unet(self, unet: ConditionalUNet) -> None:
        """Adopt the denoiser's current encoder weights; zero convs stay zero."""
        self.stem.load_state_dict(unet.stem.state_dict())
        self.time.load_state_dict(unet.time.state_dict())
        for s in range(self.scales):
            self.enc_res[s].load_state_dict(unet.enc_res[s].state_dict())
            self.enc_attn[s].load_state_dict(unet.enc_attn[s].state_dict())
            if s < self.scales - 1:
                self.downs[s].load_state_dict(unet.downs[s].state_dict())

    def forward(self, z_t: torch.Tensor, t, context: torch.Tensor, cond: torch.Tensor) -> list[torch.Tensor]:
        b = z_t.shape[0]
        if context.ndim == 2:
            context = context[:, None, :]
        if context.shape[-1] != self.ctx_dim:
            raise ShapeError(
                f"context must have dim {self.ctx_dim}, got shape {tuple(context.shape)}"
            )
        if not self.use_context:
            context = torch.zeros_like(context)
        if not torch.is_tensor(t):
            t = torch.tensor([int(t)] * b)
        if t.ndim == 0:
            t = t.reshape(1).repeat(b)
        t_emb = self.time(t)
        if not self.use_timestep:
            t_emb = torch.zeros_like(t_emb)

        h = self.stem(z_t)
        if cond.shape != h.shape:
            raise ShapeError(
                f"control feature shape {tuple(cond.shape)} does not match stem output {tuple(h.shape)}"
            )
        h = h + cond
        residuals = []
        for s in range(self.scales):
            h = self.enc_res[s](h, t_emb)
            h = self.enc_attn[s](h, context)
            residuals.append(self.zero_convs[s](h))
            if s < self.scales - 1:
                h = self.downs[s](h)
        return residuals


class ControlModule(nn.Module):
    """Encoder + residual branch + training-only decoder, with ablation flags."""

    def __init__(self, ctrl_cfg: ControlConfig, unet_cfg: UNetConfig, z_channels: int,
                 ctx_dim: int, deg_dim: int):
        super().__init__()
        c_match = unet_cfg.base_channels * unet_cfg.channel_mults[0]
        self.dmb_enabled = ctrl_cfg.dmb_enabled
        self.decoder_enabled = ctrl_cfg.decoder_enabled
        self.encoder = ControlEncoder(
            tuple(ctrl_cfg.widths), c_match, deg_dim, gated=ctrl_cfg.dmb_enabled
        )
        self.net = ControlNetBranch(
            unet_cfg, z_channels, ctx_dim,
            use_timestep=ctrl_cfg.use_timestep, use_context=ctrl_cfg.use_context,
        )
        self.decoder = ControlDecoder(c_match, tuple(ctrl_cfg.widths))

    def init_from_unet(self, unet: ConditionalUNet) -> None:
        self.net.init_from_unet(unet)

    def encode(self, i_lq: torch.Tensor, p_d: torch.Tensor) -> torch.Tensor:
        return self.encoder(i_lq, p_d)

    def residuals(self, z_t: torch.Tensor, t, context: torch.Tensor, cond: torch.Tensor) -> list[torch.Tensor]:
        return self.net(z_t, t, context, cond)

    def decode(self, cond: torch.Tensor) -> torch.Tensor:
        return self.decoder(cond)


def recon_loss(i_cd: torch.Tensor, i_gt: torch.Tensor) -> torch.Tensor:
    """Mean squared reconstruction error for the control decoder."""
    if i_cd.shape != i_gt.shape:
        raise ShapeError(f"shape mismatch: {tuple(i_cd.shape)} vs {tuple(i_gt.shape)}")
    return torch.mean((i_cd - i_gt) ** 2)
