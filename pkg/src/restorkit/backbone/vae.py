"""Toy variational autoencoder with a three-tap encoder.

The encoder exposes its per-scale activations (fine to coarse) because the
refinement decoder fuses them back in when decoding restored latents. The
plain decoder here is the unrefined baseline path.
"""

from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..config import Config
from ..checkpoint import module_tensors, save_checkpoint
from ..degrade.dataset import read_manifest
from ..errors import ManifestError, ShapeError
from ..imageio import load_image
from ..nnutil import deterministic_torch, group_norm, to_batch, to_images
from .blocks import Downsample, ResBlock, Upsample

TAP_COUNT = 3


class VAEEncoder(nn.Module):
    """Stem + three residual scales; returns posterior stats and taps."""

    def __init__(self, base: int, z_channels: int):
        super().__init__()
        w = [base, base * 2, base * 2]
        self.stem = nn.Conv2d(3, w[0], 3, padding=1)
        self.block1 = ResBlock(w[0], w[0])
        self.down1 = Downsample(w[0])
        self.block2 = ResBlock(w[0], w[1])
        self.down2 = Downsample(w[1])
        self.block3 = ResBlock(w[1], w[2])
        self.norm_out = group_norm(w[2])
        self.conv_out = nn.Conv2d(w[2], 2 * z_channels, 3, padding=1)
        self.tap_channels = tuple(w)

    def forward(self, x: torch.Tensor):
        h = self.block1(self.stem(x))
        z1 = h
        h = self.block2(self.down1(h))
        z2 = h
        h = self.block3(self.down2(h))
        z3 = h
        stats = self.conv_out(torch.nn.functional.silu(self.norm_out(h)))
        mu, logvar = stats.chunk(2, dim=1)
        return mu, logvar, [z1, z2, z3]


class VAEDecoder(nn.Module):
    """Mirror of the encoder; sigmoid output keeps images in [0,1]."""

    def __init__(self, base: int, z_channels: int):
        super().__init__()
        w = [base, base * 2, base * 2]
        self.conv_in = nn.Conv2d(z_channels, w[2], 3, padding=1)
        self.block3 = ResBlock(w[2], w[2])
        self.up2 = Upsample(w[2])
        self.block2 = ResBlock(w[2], w[1])
        self.up1 = Upsample(w[1])
        self.block1 = ResBlock(w[1], w[0])
        self.norm_out = group_norm(w[0])
        self.conv_out = nn.Conv2d(w[0], 3, 3, padding=1)
        self.stage_channels = tuple(w)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.block3(self.conv_in(z))
        h = self.block2(self.up2(h))
        h = self.block1(self.up1(h))
        return torch.sigmoid(self.conv_out(torch.nn.functional.silu(self.norm_out(h))))


class ToyVAE(nn.Module):
    def __init__(self, base_channels: int = 32, z_channels: int = 4, downs: int = 2):
        super().__init__()
        if downs != 2:
            raise ShapeError(
                f"the three-tap architecture fixes two downsamplings, got downs={downs}"
            )
        self.z_channels = z_channels
        self.factor = 2 ** downs
        self.divisor = self.factor * 2 ** (TAP_COUNT - 1)
        self.encoder = VAEEncoder(base_channels, z_channels)
        self.decoder = VAEDecoder(base_channels, z_channels)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) image batch, got {tuple(x.shape)}")
        if x.shape[2] % self.divisor or x.shape[3] % self.divisor:
            raise ShapeError(
                f"image sides must be divisible by {self.divisor}, got {tuple(x.shape[2:])}"
            )

    def encode(self, x: torch.Tensor):
        """Posterior (mu, logvar) plus fine-to-coarse taps."""
        self._check_input(x)
        return self.encoder(x)

    def encode_latent(self, x: torch.Tensor):
        """Deterministic latent (posterior mean) and taps; inference path."""
        mu, _, taps = self.encode(x)
        return mu, taps

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.z_channels:
            raise ShapeError(
                f"latent must be (B,{self.z_channels},h,w), got {tuple(z.shape)}"
            )
        return self.decoder(z)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None):
        mu, logvar, _ = self.encode(x)
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        z = mu + torch.exp(0.5 * logvar) * eps
        return self.decode(z), mu, logvar


def vae_loss(recon: torch.Tensor, x: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor, kl_weight: float):
    rec = torch.mean((recon - x) ** 2)
    kl = -0.5 * torch.mean(1.0 + logvar - mu**2 - torch.exp(logvar))
    return rec + kl_weight * kl, rec, kl


def _unique_hq_images(manifest_path: Path) -> tuple[list[np.ndarray], list[np.ndarray]]:
    records = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    seen: dict[str, str] = {}
    for rec in records:
        if rec.hq_path not in seen:
            seen[rec.hq_path] = rec.split
    train, val = [], []
    for hq_path, split in seen.items():
        img = load_image(root / hq_path)
        (val if split in ("val", "test") else train).append(img)
    if not train:
        raise ManifestError(f"manifest {manifest_path} has no train-split images")
    if not val:
        # Tiny manifests may lack held-out rows; carve validation from train.
        k = max(1, len(train) // 10)
        val, train = train[:k], train[k:]
    return train, val


def held_out_psnr(vae: ToyVAE, images: list[np.ndarray]) -> float:
    from ..evalkit import psnr

    vae.eval()
    with torch.no_grad():
        scores = []
        for img in images:
            x = to_batch(img)
            mu, _ = vae.encode_latent(x)
            recon = to_images(vae.decode(mu))[0]
            scores.append(psnr(img, recon))
    return float(np.mean(scores))


def pretrain_autoencoder(manifest_path: Path, cfg: Config, out_dir: Path, seed: int = 0) -> Path:
    """Train the VAE on clean images until held-out PSNR meets the target.

    Exit criterion: validation PSNR >= cfg.vae.target_psnr, or the epoch
    budget is exhausted. The checkpoint records the history either way.
    """
    deterministic_torch(seed)
    train_imgs, val_imgs = _unique_hq_images(Path(manifest_path))
    vae = ToyVAE(cfg.vae.base_channels, cfg.vae.z_channels, cfg.vae.downs)
    opt = torch.optim.AdamW(vae.parameters(), lr=cfg.vae.lr)
    gen = torch.Generator().manual_seed(seed)
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 11])))
    data = np.stack(train_imgs)
    history = []
    batch = max(1, cfg.vae.batch_size)
    for epoch in range(cfg.vae.epochs):
        vae.train()
        perm = order_rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), batch):
            x = to_batch(data[perm[start : start + batch]])
            recon, mu, logvar = vae(x, generator=gen)
            loss, _, _ = vae_loss(recon, x, mu, logvar, cfg.vae.kl_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
        score = held_out_psnr(vae, val_imgs)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_psnr": score})
        if score >= cfg.vae.target_psnr:
            break
    from ..config import config_digest

    meta = {
        "stage": "vae",
        "seed": seed,
        "epochs_run": len(history),
        "val_psnr": history[-1]["val_psnr"],
        "target_met": history[-1]["val_psnr"] >= cfg.vae.target_psnr,
        "history": history,
        "latent_scale": 1.0,
        "config": config_digest(cfg),
    }
    return save_checkpoint(out_dir, module_tensors(vae, "vae."), meta)
