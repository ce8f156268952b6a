"""Frozen image-embedding provider, its trainable desk-scale substitute,
and the prototype-similarity probe.

The provider contract: every embedding is unit-norm, deterministic, and
only available once weights are explicitly loaded — an unloaded provider
fails loudly rather than embedding with random weights.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, load_module_tensors, module_tensors, save_checkpoint
from .config import Config, config_digest
from .degrade.dataset import load_pair, read_manifest
from .errors import ManifestError, ProviderNotLoadedError, ShapeError
from .imageio import resize_image, validate_image
from .nnutil import deterministic_torch, group_norm, to_batch


class VisionEncoder(nn.Module):
    """Small conv trunk, mean+std pooling, linear head, L2 norm.

    Pooling keeps per-channel standard deviations alongside the means:
    degradations are largely texture statistics (grain, streaks, block
    edges), which plain average pooling washes out.
    """

    def __init__(self, dim: int = 128, trunk_channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        stages = []
        in_ch = 3
        for ch in trunk_channels:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
                    group_norm(ch),
                    nn.SiLU(),
                    nn.Conv2d(ch, ch, 3, padding=1),
                    group_norm(ch),
                    nn.SiLU(),
                )
            )
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(2 * in_ch, dim)
        self.dim = dim

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-stage activations; the perceptual loss consumes these."""
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)[-1]
        pooled = torch.cat([h.mean(dim=(2, 3)), h.std(dim=(2, 3))], dim=1)
        e = self.head(pooled)
        return torch.nn.functional.normalize(e, dim=-1)


@dataclass(frozen=True)
class PrototypeBank:
    """One unit-norm embedding per degradation kind, label-ordered."""

    labels: tuple[str, ...]
    vectors: np.ndarray  # (n, d_e), rows unit-norm

    def __post_init__(self):
        if len(self.labels) != len(set(self.labels)):
            raise ShapeError(f"prototype labels must be unique, got {self.labels}")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.labels):
            raise ShapeError(
                f"prototype matrix shape {self.vectors.shape} does not match {len(self.labels)} labels"
            )

    @property
    def size(self) -> int:
        return len(self.labels)


def similarity_scores(embedding: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Softmax over cosine similarities to each prototype, temperature 1."""
    if bank.size < 2:
        raise ShapeError("similarity probing needs at least 2 prototypes")
    e = np.asarray(embedding, dtype=np.float64)
    e = e / max(np.linalg.norm(e), 1e-12)
    protos = bank.vectors.astype(np.float64)
    protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    cos = protos @ e
    ex = np.exp(cos - cos.max())
    return ex / ex.sum()


class EmbeddingProvider:
    """Loaded encoder + prototype bank behind the provider contract."""

    def __init__(self, encoder: VisionEncoder | None = None, bank: PrototypeBank | None = None,
                 image_side: int = 64):
        self._encoder = encoder
        self.bank = bank
        self.image_side = image_side
        if encoder is not None:
            encoder.eval()

    @property
    def loaded(self) -> bool:
        return self._encoder is not None

    @property
    def encoder(self) -> VisionEncoder:
        self._require_loaded()
        return self._encoder

    @property
    def dim(self) -> int:
        self._require_loaded()
        return self._encoder.dim

    def _require_loaded(self) -> None:
        if not self.loaded:
            raise ProviderNotLoadedError(
                "embedding provider has no weights loaded; load a checkpoint first"
            )

    def encode_image(self, img: np.ndarray) -> np.ndarray:
        """Unit-norm embedding of one image; resizes internally as needed."""
        self._require_loaded()
        validate_image(img, name="image")
        if img.shape[0] != self.image_side or img.shape[1] != self.image_side:
            img = resize_image(img, self.image_side)
        with torch.no_grad():
            e = self._encoder(to_batch(img))[0].numpy()
        return e.astype(np.float32)

    def encode_batch(self, images: np.ndarray) -> np.ndarray:
        self._require_loaded()
        with torch.no_grad():
            return self._encoder(to_batch(images)).numpy().astype(np.float32)

    def degradation_similarity(self, img: np.ndarray, bank: PrototypeBank | None = None) -> np.ndarray:
        bank = bank or self.bank
        if bank is None:
            raise ProviderNotLoadedError("no prototype bank available for similarity probing")
        return similarity_scores(self.encode_image(img), bank)

    @staticmethod
    def load(ckpt_path: Path, cfg: Config) -> "EmbeddingProvider":
        tensors, meta = load_checkpoint(ckpt_path)
        encoder = VisionEncoder(cfg.embeddings.dim, tuple(cfg.embeddings.trunk_channels))
        load_module_tensors(encoder, tensors, "encoder.")
        labels = tuple(meta["labels"])
        protos = tensors["prototypes"].astype(np.float32)
        protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        bank = PrototypeBank(labels, protos)
        return EmbeddingProvider(encoder, bank, image_side=cfg.embeddings.image_side)


def _manifest_arrays(manifest_path: Path, split: str, labels: tuple[str, ...]):
    records = [r for r in read_manifest(manifest_path) if r.split == split]
    root = Path(manifest_path).parent
    images, y = [], []
    for rec in records:
        if rec.kind not in labels:
            continue
        _, lq = load_pair(rec, root)
        images.append(lq)
        y.append(labels.index(rec.kind))
    return np.stack(images) if images else np.zeros((0,)), np.array(y, dtype=np.int64)


def train_toy_encoder(manifest_path: Path, cfg: Config, out_dir: Path, seed: int = 0) -> Path:
    """Contrastive encoder training plus the degradation-prompt warm start.

    Phase 1 pulls each image's embedding toward its kind's learned prototype
    and away from the others. Phase 2 freezes the encoder and fits the
    degradation branch and classifier on the frozen embeddings, so the
    recognition path works end to end straight from this checkpoint.
    """
    from .prompts import PromptProcessor

    deterministic_torch(seed)
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    labels = tuple(sorted({r.kind for r in records}))
    if len(labels) < 2:
        raise ManifestError(
            f"encoder training needs >= 2 degradation kinds, manifest has {labels}"
        )
    x_train, y_train = _manifest_arrays(manifest_path, "train", labels)
    x_val, y_val = _manifest_arrays(manifest_path, "val", labels)
    if len(x_train) == 0:
        raise ManifestError(f"manifest {manifest_path} has no train rows")

    ecfg = cfg.embeddings
    encoder = VisionEncoder(ecfg.dim, tuple(ecfg.trunk_channels))
    prototypes = nn.Parameter(torch.randn(len(labels), ecfg.dim) * 0.1)
    opt = torch.optim.AdamW(list(encoder.parameters()) + [prototypes], lr=ecfg.lr)
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 21])))
    history = []
    for epoch in range(ecfg.epochs):
        encoder.train()
        perm = order_rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(x_train), ecfg.batch_size):
            idx = perm[start : start + ecfg.batch_size]
            e = encoder(to_batch(x_train[idx]))
            p = torch.nn.functional.normalize(prototypes, dim=-1)
            logits = (e @ p.T) / ecfg.temperature
            loss = torch.nn.functional.cross_entropy(logits, torch.from_numpy(y_train[idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})

    encoder.eval()
    with torch.no_grad():
        protos = torch.nn.functional.normalize(prototypes, dim=-1).numpy().astype(np.float32)
        emb_train = encoder(to_batch(x_train)).numpy() if len(x_train) else None

    # Phase 2: fit the degradation branch + classifier on frozen embeddings.
    prompts = PromptProcessor(
        ecfg.dim, cfg.prompts.style_dim, cfg.prompts.deg_dim, len(labels), cfg.prompts.leaky_slope
    )
    head_params = list(prompts.b_d.parameters()) + list(prompts.classifier.parameters())
    opt2 = torch.optim.AdamW(head_params, lr=1e-3)
    emb_t = torch.from_numpy(emb_train)
    y_t = torch.from_numpy(y_train)
    head_epochs = max(ecfg.epochs * 4, 120)
    for epoch in range(head_epochs):
        perm = order_rng.permutation(len(emb_train))
        for start in range(0, len(emb_train), ecfg.batch_size):
            idx = torch.from_numpy(perm[start : start + ecfg.batch_size])
            p_d = prompts.degradation_branch(emb_t[idx])
            loss = prompts.deg_guidance_loss(p_d, y_t[idx])
            opt2.zero_grad()
            loss.backward()
            opt2.step()

    bank = PrototypeBank(labels, protos)
    provider = EmbeddingProvider(encoder, bank, image_side=ecfg.image_side)
    proto_acc, head_acc = _held_out_accuracy(provider, prompts, x_val, y_val)

    tensors = {
        **module_tensors(encoder, "encoder."),
        **module_tensors(prompts, "prompts."),
        "prototypes": protos,
    }
    meta = {
        "stage": "encoder",
        "seed": seed,
        "labels": list(labels),
        "history": history,
        "val_prototype_accuracy": proto_acc,
        "val_classifier_accuracy": head_acc,
        "config": config_digest(cfg),
    }
    return save_checkpoint(out_dir, tensors, meta)


def _held_out_accuracy(provider: EmbeddingProvider, prompts, x_val, y_val):
    if len(y_val) == 0:
        return None, None
    emb = provider.encode_batch(x_val)
    proto_hits = 0
    for e, y in zip(emb, y_val):
        s = similarity_scores(e, provider.bank)
        proto_hits += int(np.argmax(s) == y)
    with torch.no_grad():
        logits = prompts.classify(prompts.degradation_branch(torch.from_numpy(emb)))
        head_hits = int((logits.argmax(dim=1).numpy() == y_val).sum())
    return proto_hits / len(y_val), head_hits / len(y_val)
