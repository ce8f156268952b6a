"""Stage 1: joint training of prompts, denoiser, and degradation control.

The VAE and the vision encoder stay frozen, so clean latents and
embeddings are precomputed once per run. Ledger rows carry every loss
component and the weights, and the logged total is recomputed from those
floats rather than read off the tensor graph, so the ledger is exactly
auditable after the fact.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..backbone.schedule import NoiseSchedule, diffusion_loss, forward_diffuse
from ..backbone.unet import ConditionalUNet
from ..backbone.vae import ToyVAE
from ..checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from ..config import Config, to_dict
from ..control import ControlModule, recon_loss
from ..embeddings import EmbeddingProvider
from ..nnutil import deterministic_torch, freeze, to_batch
from ..prompts import PromptProcessor
from .common import Ledger, batches, load_split, require_checkpoint


@dataclass
class Stage1Models:
    """Everything the stage-1 objective touches; vae/encoder arrive frozen."""

    vae: object
    prompts: PromptProcessor
    unet: ConditionalUNet
    control: ControlModule
    schedule: NoiseSchedule


def stage1_loss_terms(models: Stage1Models, batch: dict, t: torch.Tensor,
                      eps: torch.Tensor) -> dict:
    """Loss components for one batch; pure in (params, batch, t, eps).

    batch needs z0 (clean latents), e (embeddings), lq (degraded pixels),
    hq (clean pixels), labels (kind ids). Keeping the randomness (t, eps)
    as arguments makes the function differentiable end to end for
    finite-difference checks.
    """
    p_s = models.prompts.semantic_branch(batch["e"])
    p_d = models.prompts.degradation_branch(batch["e"])
    z_t = forward_diffuse(batch["z0"], t, eps, models.schedule)
    cond = models.control.encode(batch["lq"], p_d)
    residuals = models.control.residuals(z_t, t, p_s, cond)
    eps_hat = models.unet(z_t, t, p_s, control=residuals)
    terms = {
        "l_diff": diffusion_loss(eps_hat, eps),
        "l_deg": models.prompts.deg_guidance_loss(p_d, batch["labels"]),
    }
    if models.control.decoder_enabled:
        terms["l_rec"] = recon_loss(models.control.decode(cond), batch["hq"])
    else:
        terms["l_rec"] = torch.zeros((), dtype=torch.float32)
    return terms


def combine_stage1(terms: dict, lambda_deg: float, lambda_rec: float):
    """Weighted total as a tensor for backprop; zero-weight terms drop out
    of the graph but still get logged."""
    total = terms["l_diff"]
    if lambda_deg != 0.0:
        total = total + lambda_deg * terms["l_deg"]
    if lambda_rec != 0.0:
        total = total + lambda_rec * terms["l_rec"]
    return total


def ledger_total(row: dict) -> float:
    """The total a ledger row claims, recomputed from its own fields."""
    return float(
        row["l_diff"]
        + row["lambda_deg"] * row["l_deg"]
        + row["lambda_rec"] * row["l_rec"]
    )


def train_stage1(cfg: Config, manifest_path: Path, workdir: Path,
                 seed: int | None = None, log=None) -> Path:
    """Run stage 1 from the vae/encoder checkpoints under workdir.

    Returns the path of the cumulative stage-1 checkpoint. Two runs with
    the same config and seed produce identical ledgers.
    """
    workdir = Path(workdir)
    seed = cfg.stage1.seed if seed is None else int(seed)
    vae_ckpt = require_checkpoint(
        workdir / "vae", "stage 1", "run the autoencoder pretraining first")
    enc_ckpt = require_checkpoint(
        workdir / "encoder", "stage 1", "run the embedding-encoder training first")

    deterministic_torch(seed)
    vae_tensors, _ = load_checkpoint(vae_ckpt)
    vae = ToyVAE(cfg.vae.base_channels, cfg.vae.z_channels, cfg.vae.downs)
    load_module_tensors(vae, vae_tensors, "vae.")
    provider = EmbeddingProvider.load(enc_ckpt, cfg)
    labels = provider.bank.labels
    enc_tensors, _ = load_checkpoint(enc_ckpt)
    prompts = PromptProcessor(
        cfg.embeddings.dim, cfg.prompts.style_dim, cfg.prompts.deg_dim,
        len(labels), cfg.prompts.leaky_slope)
    load_module_tensors(prompts, enc_tensors, "prompts.")
    schedule = NoiseSchedule.linear(
        cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end)

    unet = ConditionalUNet(cfg.unet, cfg.vae.z_channels, cfg.prompts.style_dim)
    control = ControlModule(
        cfg.control, cfg.unet, cfg.vae.z_channels, cfg.prompts.style_dim, cfg.prompts.deg_dim)
    control.init_from_unet(unet)

    freeze(vae)
    freeze(provider.encoder)
    if cfg.stage1.freeze_unet:
        freeze(unet)
    models = Stage1Models(vae=vae, prompts=prompts, unet=unet,
                          control=control, schedule=schedule)

    data = load_split(manifest_path, "train", labels, single_kind_only=True)
    n = len(data.ids)

    # Both producers are frozen, so clean latents and embeddings are fixed
    # for the whole run; cache them instead of re-encoding every epoch.
    with torch.no_grad():
        z0_all = torch.cat([
            vae.encode_latent(to_batch(data.hq[i:i + 16]))[0]
            for i in range(0, n, 16)
        ])
    # The denoiser works in a unit-scale latent space: the autoencoder is
    # only KL-regularized weakly, so its latents come out several times
    # wider than the N(0,1) the noise schedule assumes, and the reverse
    # process diverges when the two scales disagree. One global scalar,
    # measured here and carried in the checkpoint, reconciles them.
    latent_scale = float(z0_all.std())
    z0_all = z0_all / latent_scale
    e_all = torch.from_numpy(provider.encode_batch(data.lq))
    lq_all = to_batch(data.lq)
    hq_all = to_batch(data.hq)
    y_all = torch.from_numpy(data.labels)

    trainable = list(prompts.parameters()) + list(control.parameters())
    if not cfg.stage1.freeze_unet:
        trainable += list(unet.parameters())
    opt = torch.optim.AdamW(trainable, lr=cfg.stage1.lr)

    ledger = Ledger(workdir / "metrics_stage1.jsonl")
    rng = np.random.default_rng(seed)
    g = torch.Generator().manual_seed(seed)
    lam_deg, lam_rec = cfg.stage1.lambda_deg, cfg.stage1.lambda_rec
    step = 0
    first_total = last_total = None
    for epoch in range(cfg.stage1.epochs):
        for idx in batches(n, cfg.stage1.batch_size, rng):
            sel = torch.from_numpy(idx)
            batch = {
                "z0": z0_all[sel], "e": e_all[sel], "lq": lq_all[sel],
                "hq": hq_all[sel], "labels": y_all[sel],
            }
            t = torch.randint(1, schedule.timesteps + 1, (len(idx),), generator=g)
            eps = torch.randn(batch["z0"].shape, generator=g)
            terms = stage1_loss_terms(models, batch, t, eps)
            total = combine_stage1(terms, lam_deg, lam_rec)
            opt.zero_grad(set_to_none=True)
            total.backward()
            torch.nn.utils.clip_grad_norm_(trainable, cfg.stage1.clip_norm)
            opt.step()

            row = {
                "stage": 1, "epoch": epoch, "step": step,
                "l_diff": float(terms["l_diff"].detach()),
                "l_deg": float(terms["l_deg"].detach()),
                "l_rec": float(terms["l_rec"].detach()),
                "lambda_deg": lam_deg, "lambda_rec": lam_rec,
            }
            row["total"] = ledger_total(row)
            ledger.log(row)
            if first_total is None:
                first_total = row["total"]
            last_total = row["total"]
            step += 1
        if log is not None:
            log("stage1_epoch", epoch=epoch, steps=step, total=last_total)

    tensors = {}
    tensors.update(module_tensors(vae, "vae."))
    tensors.update(module_tensors(provider.encoder, "encoder."))
    tensors["prototypes"] = provider.bank.vectors.astype(np.float32)
    tensors.update(module_tensors(prompts, "prompts."))
    tensors.update(module_tensors(unet, "unet."))
    tensors.update(module_tensors(control, "control."))
    out = workdir / "stage1"
    meta = {
        "stage": "stage1",
        "labels": list(labels),
        "config": to_dict(cfg),
        "seed": seed,
        "optimizer": {"name": "adamw", "lr": cfg.stage1.lr,
                      "batch_size": cfg.stage1.batch_size,
                      "epochs": cfg.stage1.epochs,
                      "clip_norm": cfg.stage1.clip_norm},
        "loss_weights": {"lambda_deg": lam_deg, "lambda_rec": lam_rec},
        "latent_scale": latent_scale,
        "frozen": ["vae", "encoder"] + (["unet"] if cfg.stage1.freeze_unet else []),
        "loss_digest": {"steps": step, "first_total": first_total,
                        "last_total": last_total},
    }
    save_checkpoint(out, tensors, meta)
    return out
