"""Diffusion-based blind image restoration toolkit.

Synthesizes paired degradation datasets, learns a latent denoiser steered by
a degradation-aware control branch, and restores images through a short
deterministic sampling schedule with an optionally refined decoder.
"""

__version__ = "0.1.0"
