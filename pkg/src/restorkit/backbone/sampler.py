"""High-level deterministic sampling with degradation-aware control."""

import torch

from ..errors import MissingComponentError
from .schedule import NoiseSchedule, ddim_sample


def sample_latent(
    unet,
    schedule: NoiseSchedule,
    latent_shape: tuple[int, int, int, int],
    p_s: torch.Tensor,
    steps: int = 20,
    seed: int = 0,
    control=None,
    cond: torch.Tensor | None = None,
) -> torch.Tensor:
    """Run the reverse process from seeded noise; returns the final latent.

    `control` is the control module (or None to sample unconditioned by it);
    `cond` is the control-encoder feature for the degraded input, required
    whenever control is given.
    """
    if unet is None:
        raise MissingComponentError("sampling requires the denoising U-Net")
    if p_s is None:
        raise MissingComponentError("sampling requires the semantic prompt P_S")
    if control is not None and cond is None:
        raise MissingComponentError("control sampling requires the control-encoder feature")

    gen = torch.Generator().manual_seed(int(seed))
    z_init = torch.randn(latent_shape, generator=gen)

    unet.eval()
    if control is not None:
        control.eval()

    def denoise(z, t):
        with torch.no_grad():
            residuals = None
            if control is not None:
                residuals = control.residuals(z, t, p_s, cond)
            return unet(z, t, p_s, control=residuals)

    return ddim_sample(denoise, z_init, schedule, steps)
