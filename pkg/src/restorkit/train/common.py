"""Shared training plumbing: in-memory datasets, ledgers, model assembly."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..backbone.schedule import NoiseSchedule
from ..backbone.unet import ConditionalUNet
from ..backbone.vae import ToyVAE
from ..checkpoint import load_checkpoint, load_module_tensors
from ..config import Config, from_dict
from ..control import ControlModule
from ..degrade.dataset import load_pair, read_manifest
from ..embeddings import EmbeddingProvider, PrototypeBank, VisionEncoder
from ..errors import ManifestError, StageOrderError
from ..prompts import PromptProcessor
from ..refiner import PatchDiscriminator, RefinedDecoder


@dataclass
class PairedData:
    """All images of one split, loaded once; label ids follow `labels` order."""

    hq: np.ndarray        # (N,H,W,3) float32
    lq: np.ndarray
    labels: np.ndarray    # (N,) int64
    ids: list[str]


def load_split(manifest_path: Path, split: str, labels: tuple[str, ...],
               single_kind_only: bool = True) -> PairedData:
    records = [r for r in read_manifest(manifest_path) if r.split == split]
    root = Path(manifest_path).parent
    hq, lq, y, ids = [], [], [], []
    for rec in records:
        if single_kind_only and rec.kind == "mix":
            continue
        if rec.kind not in labels:
            raise ManifestError(
                f"row {rec.id!r} has kind {rec.kind!r} not covered by labels {labels}"
            )
        a, b = load_pair(rec, root)
        hq.append(a)
        lq.append(b)
        y.append(labels.index(rec.kind))
        ids.append(rec.id)
    if not hq:
        raise ManifestError(f"manifest {manifest_path} has no usable {split!r} rows")
    return PairedData(np.stack(hq), np.stack(lq), np.array(y, dtype=np.int64), ids)


class Ledger:
    """Append-only JSONL loss log; one file per training run."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def log(self, row: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class ModelBundle:
    """Everything a pipeline stage may need, rebuilt from one checkpoint."""

    cfg: Config
    stage: str
    labels: tuple[str, ...]
    vae: ToyVAE
    provider: EmbeddingProvider
    prompts: PromptProcessor
    schedule: NoiseSchedule
    unet: ConditionalUNet | None = None
    control: ControlModule | None = None
    refined: RefinedDecoder | None = None
    disc: PatchDiscriminator | None = None
    # Ratio between autoencoder latents and the unit-scale space the
    # denoiser was trained in; sampled latents are multiplied by this
    # before any decode.
    latent_scale: float = 1.0
    meta: dict | None = None


def _has_prefix(tensors: dict, prefix: str) -> bool:
    return any(k.startswith(prefix) for k in tensors)


def load_bundle(ckpt_path: Path) -> ModelBundle:
    """Rebuild every model present in a cumulative checkpoint.

    The config snapshot in the metadata fixes all shapes; no external
    context is needed.
    """
    tensors, meta = load_checkpoint(ckpt_path)
    if not isinstance(meta.get("config"), dict) or "labels" not in meta:
        raise StageOrderError(
            f"checkpoint {ckpt_path} lacks the config snapshot and labels of a "
            "pipeline-stage checkpoint; run the stage-1 training first"
        )
    cfg = from_dict(meta["config"])
    labels = tuple(meta["labels"])

    vae = ToyVAE(cfg.vae.base_channels, cfg.vae.z_channels, cfg.vae.downs)
    load_module_tensors(vae, tensors, "vae.")
    for p in vae.parameters():
        p.requires_grad_(False)

    encoder = VisionEncoder(cfg.embeddings.dim, tuple(cfg.embeddings.trunk_channels))
    load_module_tensors(encoder, tensors, "encoder.")
    for p in encoder.parameters():
        p.requires_grad_(False)
    protos = tensors["prototypes"].astype(np.float32)
    bank = PrototypeBank(labels, protos / np.linalg.norm(protos, axis=1, keepdims=True))
    provider = EmbeddingProvider(encoder, bank, image_side=cfg.embeddings.image_side)

    prompts = PromptProcessor(
        cfg.embeddings.dim, cfg.prompts.style_dim, cfg.prompts.deg_dim,
        len(labels), cfg.prompts.leaky_slope,
    )
    load_module_tensors(prompts, tensors, "prompts.")

    schedule = NoiseSchedule.linear(
        cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    bundle = ModelBundle(
        cfg=cfg, stage=str(meta.get("stage", "")), labels=labels, vae=vae,
        provider=provider, prompts=prompts, schedule=schedule,
        latent_scale=float(meta.get("latent_scale", 1.0)), meta=meta,
    )
    if _has_prefix(tensors, "unet."):
        unet = ConditionalUNet(cfg.unet, cfg.vae.z_channels, cfg.prompts.style_dim)
        load_module_tensors(unet, tensors, "unet.")
        bundle.unet = unet
    if _has_prefix(tensors, "control."):
        control = ControlModule(
            cfg.control, cfg.unet, cfg.vae.z_channels, cfg.prompts.style_dim, cfg.prompts.deg_dim
        )
        load_module_tensors(control, tensors, "control.")
        bundle.control = control
    if _has_prefix(tensors, "refined."):
        refined = RefinedDecoder(cfg.vae.base_channels, cfg.vae.z_channels, cfg.prompts.deg_dim)
        load_module_tensors(refined, tensors, "refined.")
        bundle.refined = refined
    if _has_prefix(tensors, "disc."):
        disc = PatchDiscriminator()
        load_module_tensors(disc, tensors, "disc.")
        bundle.disc = disc
    return bundle


def require_checkpoint(path: Path, needed_for: str, hint: str) -> Path:
    path = Path(path)
    if not (path / "meta.json").is_file():
        raise StageOrderError(
            f"{needed_for} needs the checkpoint at {path}, which does not exist; {hint}"
        )
    return path
