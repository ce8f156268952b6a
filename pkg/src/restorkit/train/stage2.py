"""Stage 2: adversarial fine-tuning of the detail-injecting decoder.

Teacher forcing keeps this stage independent of sampling quality: the
latent comes from encoding the clean image, the skip taps from encoding
the degraded one, so the decoder learns detail recovery in isolation.
Only the refined decoder and the discriminator train; everything loaded
from the prior stage is hash-audited before and after.
"""

from pathlib import Path

import numpy as np
import torch

from ..backbone.vae import ToyVAE
from ..checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from ..config import Config, to_dict
from ..embeddings import EmbeddingProvider
from ..errors import RuntimeFailure, StageOrderError
from ..nnutil import deterministic_torch, params_sha256, to_batch
from ..prompts import PromptProcessor
from ..refiner import PatchDiscriminator, PerceptualExtractor, RefinedDecoder, \
    decoder_losses, hinge_d_loss
from .common import Ledger, batches, load_bundle, load_split, require_checkpoint


def ledger_total(row: dict) -> float:
    """The generator total a stage-2 ledger row claims, from its own fields."""
    return float(
        row["l_gen"]
        + row["lambda_per"] * row["l_per"]
        + row["lambda_adv"] * row["l_adv"]
    )


def _combine(l_gen, l_per, l_adv, lam_per: float, lam_adv: float):
    total = l_gen
    if lam_per != 0.0:
        total = total + lam_per * l_per
    if lam_adv != 0.0:
        total = total + lam_adv * l_adv
    return total


def _load_prereqs(cfg: Config, workdir: Path, vae_only: bool):
    """Frozen inputs for stage 2, either the stage-1 stack or just vae+encoder."""
    if vae_only:
        vae_ckpt = require_checkpoint(
            workdir / "vae", "stage 2 (decoder-only mode)",
            "run the autoencoder pretraining first")
        enc_ckpt = require_checkpoint(
            workdir / "encoder", "stage 2 (decoder-only mode)",
            "run the embedding-encoder training first")
        vae_tensors, _ = load_checkpoint(vae_ckpt)
        vae = ToyVAE(cfg.vae.base_channels, cfg.vae.z_channels, cfg.vae.downs)
        load_module_tensors(vae, vae_tensors, "vae.")
        provider = EmbeddingProvider.load(enc_ckpt, cfg)
        enc_tensors, _ = load_checkpoint(enc_ckpt)
        prompts = PromptProcessor(
            cfg.embeddings.dim, cfg.prompts.style_dim, cfg.prompts.deg_dim,
            len(provider.bank.labels), cfg.prompts.leaky_slope)
        load_module_tensors(prompts, enc_tensors, "prompts.")
        return vae, provider, prompts, None, None, provider.bank.labels, 1.0

    ckpt = require_checkpoint(
        workdir / "stage1", "stage 2",
        "run the stage-1 training first (stage 2 builds on its checkpoint)")
    bundle = load_bundle(ckpt)
    if bundle.stage != "stage1":
        raise StageOrderError(
            f"stage 2 needs a stage-1 checkpoint, found stage {bundle.stage!r} "
            f"at {ckpt}; run the stages in order"
        )
    return (bundle.vae, bundle.provider, bundle.prompts, bundle.unet,
            bundle.control, bundle.labels, bundle.latent_scale)


def train_stage2(cfg: Config, manifest_path: Path, workdir: Path,
                 seed: int | None = None, vae_only: bool = False, log=None) -> Path:
    """Adversarial decoder training on top of the stage-1 checkpoint.

    Returns the cumulative stage-2 checkpoint path.
    """
    workdir = Path(workdir)
    seed = cfg.stage2.seed if seed is None else int(seed)
    deterministic_torch(seed)
    (vae, provider, prompts, unet, control, labels,
     latent_scale) = _load_prereqs(cfg, workdir, vae_only)

    frozen = {"vae": vae, "encoder": provider.encoder, "prompts": prompts}
    if unet is not None:
        frozen["unet"] = unet
    if control is not None:
        frozen["control"] = control
    for m in frozen.values():
        for p in m.parameters():
            p.requires_grad_(False)
    hashes_before = {k: params_sha256(m) for k, m in frozen.items()}

    refined = RefinedDecoder(cfg.vae.base_channels, cfg.vae.z_channels, cfg.prompts.deg_dim)
    refined.init_from_vae(vae)
    disc = PatchDiscriminator()
    extractor = PerceptualExtractor(provider.encoder)

    data = load_split(manifest_path, "train", labels, single_kind_only=False)
    n = len(data.ids)
    lq_all = to_batch(data.lq)
    hq_all = to_batch(data.hq)
    with torch.no_grad():
        z0_all = torch.cat([
            vae.encode_latent(hq_all[i:i + 16])[0] for i in range(0, n, 16)
        ])
        p_d_all = prompts.degradation_branch(
            torch.from_numpy(provider.encode_batch(data.lq)))

    opt_g = torch.optim.AdamW(refined.parameters(), lr=cfg.stage2.lr)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=cfg.stage2.lr)
    ledger = Ledger(workdir / "metrics_stage2.jsonl")
    rng = np.random.default_rng(seed)
    lam_per, lam_adv = cfg.stage2.lambda_per, cfg.stage2.lambda_adv
    step = 0
    first_total = last_total = None
    for epoch in range(cfg.stage2.epochs):
        for idx in batches(n, cfg.stage2.batch_size, rng):
            sel = torch.from_numpy(idx)
            hq = hq_all[sel]
            with torch.no_grad():
                _, taps = vae.encode_latent(lq_all[sel])
            i_gen = refined(z0_all[sel], taps, p_d_all[sel])
            l_gen, l_per, l_adv, _ = decoder_losses(
                i_gen, hq, disc, extractor, lam_per, lam_adv)
            total = _combine(l_gen, l_per, l_adv, lam_per, lam_adv)
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            torch.nn.utils.clip_grad_norm_(refined.parameters(), cfg.stage2.clip_norm)
            opt_g.step()

            d_loss = hinge_d_loss(disc(hq), disc(i_gen.detach()))
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.stage2.clip_norm)
            opt_d.step()

            row = {
                "stage": 2, "epoch": epoch, "step": step,
                "l_gen": float(l_gen.detach()),
                "l_per": float(l_per.detach()),
                "l_adv": float(l_adv.detach()),
                "l_disc": float(d_loss.detach()),
                "lambda_per": lam_per, "lambda_adv": lam_adv,
            }
            row["total"] = ledger_total(row)
            ledger.log(row)
            if first_total is None:
                first_total = row["total"]
            last_total = row["total"]
            step += 1
        if log is not None:
            log("stage2_epoch", epoch=epoch, steps=step, total=last_total)

    hashes_after = {k: params_sha256(m) for k, m in frozen.items()}
    changed = sorted(k for k in frozen if hashes_before[k] != hashes_after[k])
    if changed:
        raise RuntimeFailure(
            f"frozen components changed during stage 2: {changed}"
        )

    tensors = {}
    tensors.update(module_tensors(vae, "vae."))
    tensors.update(module_tensors(provider.encoder, "encoder."))
    tensors["prototypes"] = provider.bank.vectors.astype(np.float32)
    tensors.update(module_tensors(prompts, "prompts."))
    if unet is not None:
        tensors.update(module_tensors(unet, "unet."))
    if control is not None:
        tensors.update(module_tensors(control, "control."))
    tensors.update(module_tensors(refined, "refined."))
    tensors.update(module_tensors(disc, "disc."))
    out = workdir / "stage2"
    meta = {
        "stage": "stage2",
        "labels": list(labels),
        "config": to_dict(cfg),
        "seed": seed,
        "vae_only": bool(vae_only),
        "optimizer": {"name": "adamw", "lr": cfg.stage2.lr,
                      "batch_size": cfg.stage2.batch_size,
                      "epochs": cfg.stage2.epochs,
                      "clip_norm": cfg.stage2.clip_norm},
        "loss_weights": {"lambda_per": lam_per, "lambda_adv": lam_adv},
        "latent_scale": latent_scale,
        "freeze_audit": {"before": hashes_before, "after": hashes_after,
                         "unchanged": not changed},
        "loss_digest": {"steps": step, "first_total": first_total,
                        "last_total": last_total},
    }
    save_checkpoint(out, tensors, meta)
    return out
