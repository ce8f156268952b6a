"""Latent diffusion backbone: VAE, schedule, denoiser, sampler."""

from .blocks import CrossAttention, Downsample, ResBlock, TimestepEmbedding, Upsample
from .sampler import sample_latent
from .schedule import NoiseSchedule, ddim_sample, ddim_timesteps, diffusion_loss, forward_diffuse
from .unet import ConditionalUNet
from .vae import ToyVAE, VAEDecoder, VAEEncoder, held_out_psnr, pretrain_autoencoder, vae_loss

__all__ = [
    "ConditionalUNet",
    "CrossAttention",
    "Downsample",
    "NoiseSchedule",
    "ResBlock",
    "TimestepEmbedding",
    "ToyVAE",
    "Upsample",
    "VAEDecoder",
    "VAEEncoder",
    "ddim_sample",
    "ddim_timesteps",
    "diffusion_loss",
    "forward_diffuse",
    "held_out_psnr",
    "pretrain_autoencoder",
    "sample_latent",
    "vae_loss",
]
