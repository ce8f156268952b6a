"""Degradation-aware refinement decoder and its stage-2 training losses.

The refined decoder replays the plain VAE decoder's exact op sequence,
inserting one refinement block per tap resolution. Each block fuses the
degraded image's encoder tap into the decoder feature under a prompt-driven
gate, through a correction path whose final convolution starts at zero, so
a freshly built refined decoder is the plain decoder.
"""

import torch
from torch import nn

from .backbone.vae import ToyVAE, VAEDecoder
from .errors import MissingComponentError, ShapeError
from .nnutil import group_norm, zero_module


class DRB(nn.Module):
    """Concat-fuse the LQ tap, gate channels by the prompt, correct residually."""

    def __init__(self, ch: int, lq_ch: int, deg_dim: int):
        super().__init__()
        self.ch = ch
        self.lq_ch = lq_ch
        self.fuse = nn.Conv2d(ch + lq_ch, ch, 3, padding=1)
        self.gate = nn.Linear(deg_dim, ch)
        self.norm1 = group_norm(ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = group_norm(ch)
        self.conv2 = zero_module(nn.Conv2d(ch, ch, 3, padding=1))

    def forward(self, z: torch.Tensor, z_lq: torch.Tensor, p_d: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.ch or z_lq.shape[1] != self.lq_ch:
            raise ShapeError(
                f"channel mismatch: got ({z.shape[1]}, {z_lq.shape[1]}), "
                f"expected ({self.ch}, {self.lq_ch})"
            )
        if z.shape[-2:] != z_lq.shape[-2:] or z.shape[0] != z_lq.shape[0]:
            raise ShapeError(
                f"features must be aligned: {tuple(z.shape)} vs {tuple(z_lq.shape)}"
            )
        if p_d.shape[-1] != self.gate.in_features:
            raise ShapeError(
                f"degradation prompt dim {p_d.shape[-1]} != expected {self.gate.in_features}"
            )
        h = self.fuse(torch.cat([z, z_lq], dim=1))
        h = h * torch.sigmoid(self.gate(p_d))[:, :, None, None]
        h = self.conv1(torch.nn.functional.silu(self.norm1(h)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + z


class RefinedDecoder(nn.Module):
    """Plain decoder weights plus one DRB at each of the three tap scales."""

    def __init__(self, base_channels: int, z_channels: int, deg_dim: int, drb_enabled: bool = True):
        super().__init__()
        self.base = VAEDecoder(base_channels, z_channels)
        w = self.base.stage_channels  # (fine, mid, coarse) widths
        # Taps arrive fine->coarse with the same widths per scale.
        self.drb3 = DRB(w[2], w[2], deg_dim)
        self.drb2 = DRB(w[1], w[1], deg_dim)
        self.drb1 = DRB(w[0], w[0], deg_dim)
        self.drb_enabled = drb_enabled

    def init_from_vae(self, vae: ToyVAE) -> None:
        self.base.load_state_dict(vae.decoder.state_dict())

    def forward(self, z: torch.Tensor, taps: list[torch.Tensor] | None, p_d: torch.Tensor) -> torch.Tensor:
        d = self.base
        use_drb = self.drb_enabled
        if use_drb and (taps is None or len(taps) != 3):
            raise ShapeError("refined decoding needs the three encoder taps of the degraded image")
        h = d.block3(d.conv_in(z))
        if use_drb:
            h = self.drb3(h, taps[2], p_d)
        h = d.block2(d.up2(h))
        if use_drb:
            h = self.drb2(h, taps[1], p_d)
        h = d.block1(d.up1(h))
        if use_drb:
            h = self.drb1(h, taps[0], p_d)
        return torch.sigmoid(d.conv_out(torch.nn.functional.silu(d.norm_out(h))))


class PatchDiscriminator(nn.Module):
    """Four plain conv layers; logits over patches, not the whole image."""

    def __init__(self, base: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, base, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base * 2, base * 2, 4, stride=1, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base * 2, 1, 4, stride=1, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class PerceptualExtractor:
    """Frozen feature stack over a trained vision encoder's conv stages."""

    def __init__(self, encoder):
        if encoder is None:
            raise MissingComponentError("perceptual loss needs a loaded feature extractor")
        self.encoder = encoder
        self.encoder.eval()
        for p in self.encoder.parameters():
            p.requires_grad_(False)

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        feats_a = self.encoder.features(a)
        with torch.no_grad():
            feats_b = self.encoder.features(b)
        total = a.new_zeros(())
        for fa, fb in zip(feats_a, feats_b):
            total = total + torch.mean((fa - fb) ** 2)
        return total / len(feats_a)


def generator_adv_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Nonsaturating generator loss: softplus(-D(fake))."""
    return torch.nn.functional.softplus(-fake_logits).mean()


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return (
        torch.nn.functional.relu(1.0 - real_logits).mean()
        + torch.nn.functional.relu(1.0 + fake_logits).mean()
    )


def decoder_losses(
    i_gen: torch.Tensor,
    i_gt: torch.Tensor,
    disc: PatchDiscriminator,
    extractor: PerceptualExtractor,
    lambda_per: float = 0.1,
    lambda_adv: float = 0.001,
):
    """Stage-2 generator objective: (l_gen, l_per, l_adv, l_dec)."""
    if i_gen.shape != i_gt.shape:
        raise ShapeError(f"shape mismatch: {tuple(i_gen.shape)} vs {tuple(i_gt.shape)}")
    if extractor is None:
        raise MissingComponentError("perceptual loss needs a loaded feature extractor")
    l_gen = torch.mean((i_gen - i_gt) ** 2)
    l_per = extractor.distance(i_gen, i_gt)
    l_adv = generator_adv_loss(disc(i_gen))
    l_dec = l_gen + lambda_per * l_per + lambda_adv * l_adv
    return l_gen, l_per, l_adv, l_dec
