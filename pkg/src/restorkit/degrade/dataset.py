"""Paired dataset synthesis and JSONL manifest handling.

A dataset is a directory with hq/ (clean PNGs), lq/ (degraded PNGs), and a
manifest.jsonl whose rows carry relative paths plus the exact degradation
specs used, so any row can be re-synthesized bit-identically.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import ManifestError
from ..imageio import MIN_SIDE, load_image, save_image
from ..toydata import generate_clean_images
from .ops import KINDS, DegradationSpec, apply_degradation, derive_seed, sample_spec

SPLITS = ("train", "val", "test")
_REQUIRED_FIELDS = {"id", "split", "hq_path", "lq_path", "degradations"}
_OPTIONAL_FIELDS = {"augment"}


@dataclass(frozen=True)
class SampleRecord:
    """One manifest row: a clean/degraded pair and how the pair was made."""

    id: str
    split: str
    hq_path: str
    lq_path: str
    degradations: tuple[DegradationSpec, ...]
    augment: Mapping[str, int] | None = None

    @property
    def kind(self) -> str:
        """Label for classification: the kind, or 'mix' for composites."""
        if len(self.degradations) == 1:
            return self.degradations[0].kind
        return "mix"

    def to_json(self) -> dict:
        row = {
            "id": self.id,
            "split": self.split,
            "hq_path": self.hq_path,
            "lq_path": self.lq_path,
            "degradations": [d.to_json() for d in self.degradations],
        }
        if self.augment is not None:
            row["augment"] = dict(self.augment)
        return row

    @staticmethod
    def from_json(obj: Mapping) -> "SampleRecord":
        if not isinstance(obj, Mapping):
            raise ManifestError(f"manifest row must be an object, got {type(obj).__name__}")
        keys = set(obj)
        missing = _REQUIRED_FIELDS - keys
        if missing:
            raise ManifestError(f"manifest row missing fields {sorted(missing)}: {obj!r}")
        extra = keys - _REQUIRED_FIELDS - _OPTIONAL_FIELDS
        if extra:
            raise ManifestError(f"manifest row has unknown fields {sorted(extra)}")
        if obj["split"] not in SPLITS:
            raise ManifestError(
                f"row {obj['id']!r}: split must be one of {SPLITS}, got {obj['split']!r}"
            )
        degs = obj["degradations"]
        if not isinstance(degs, Sequence) or isinstance(degs, (str, bytes)) or not degs:
            raise ManifestError(f"row {obj['id']!r}: degradations must be a non-empty list")
        specs = tuple(DegradationSpec.from_json(d) for d in degs)
        augment = obj.get("augment")
        if augment is not None:
            augment = _validate_augment(augment, obj["id"])
        return SampleRecord(
            id=str(obj["id"]),
            split=str(obj["split"]),
            hq_path=str(obj["hq_path"]),
            lq_path=str(obj["lq_path"]),
            degradations=specs,
            augment=augment,
        )


def _validate_augment(augment: Mapping, row_id: str) -> dict[str, int]:
    allowed = {"rot90", "hflip", "vflip"}
    if not isinstance(augment, Mapping) or set(augment) - allowed:
        raise ManifestError(
            f"row {row_id!r}: augment must use keys from {sorted(allowed)}, got {augment!r}"
        )
    out = {k: int(augment[k]) for k in sorted(augment)}
    if out.get("rot90", 0) not in (0, 1, 2, 3):
        raise ManifestError(f"row {row_id!r}: rot90 must be 0..3")
    for k in ("hflip", "vflip"):
        if out.get(k, 0) not in (0, 1):
            raise ManifestError(f"row {row_id!r}: {k} must be 0 or 1")
    return out


def apply_augment(img: np.ndarray, augment: Mapping[str, int] | None) -> np.ndarray:
    """Exact geometric augment: rotate by k*90, then flips. No interpolation."""
    if not augment:
        return img
    out = img
    k = int(augment.get("rot90", 0))
    if k:
        out = np.rot90(out, k, axes=(0, 1))
    if augment.get("hflip", 0):
        out = out[:, ::-1]
    if augment.get("vflip", 0):
        out = out[::-1]
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class DatasetRecipe:
    """Everything build_dataset needs; same recipe + seed => same bytes."""

    kinds: tuple[str, ...] = KINDS
    per_kind: int = 8
    side: int = 64
    seed: int = 0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    param_overrides: Mapping[str, Mapping[str, object]] = field(default_factory=dict)

    def validated(self) -> "DatasetRecipe":
        if not self.kinds:
            raise ManifestError("recipe needs at least one degradation kind")
        for k in self.kinds:
            if k not in KINDS:
                raise ManifestError(f"unknown kind {k!r} in recipe; expected one of {sorted(KINDS)}")
        if self.per_kind < 1:
            raise ManifestError(f"per_kind must be >= 1, got {self.per_kind}")
        if self.side < MIN_SIDE:
            raise ManifestError(f"side must be >= {MIN_SIDE}, got {self.side}")
        if len(self.splits) != 3 or any(f < 0 for f in self.splits):
            raise ManifestError(f"splits must be three non-negative fractions, got {self.splits}")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ManifestError(f"split fractions must sum to 1, got {self.splits}")
        for k in self.param_overrides:
            if k not in self.kinds:
                raise ManifestError(f"param_overrides for kind {k!r} not present in recipe kinds")
        return self


def _split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def write_manifest(records: Sequence[SampleRecord], path: Path) -> None:
    path = Path(path)
    lines = [json.dumps(r.to_json(), sort_keys=True) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> list[SampleRecord]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        rec = SampleRecord.from_json(obj)
        if rec.id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    if not records:
        raise ManifestError(f"manifest is empty: {path}")
    return records


def load_pair(record: SampleRecord, manifest_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    """Load (hq, lq) for a row, applying its augment to both images."""
    root = Path(manifest_dir)
    hq = load_image(root / record.hq_path)
    lq = load_image(root / record.lq_path)
    return apply_augment(hq, record.augment), apply_augment(lq, record.augment)


def build_dataset(recipe: DatasetRecipe, out_dir: Path) -> Path:
    """Synthesize a paired dataset; returns the manifest path.

    Each sample gets its own clean image; the degradation spec is sampled
    from the kind's parameter bands and the pixels are drawn from a child
    seed of recipe.seed keyed by the sample index.
    """
    recipe = recipe.validated()
    out_dir = Path(out_dir)
    hq_dir = out_dir / "hq"
    lq_dir = out_dir / "lq"
    lq_dir.mkdir(parents=True, exist_ok=True)

    total = recipe.per_kind * len(recipe.kinds)
    clean_paths = generate_clean_images(hq_dir, total, side=recipe.side, seed=recipe.seed)

    records: list[SampleRecord] = []
    n_train, n_val, _ = _split_counts(recipe.per_kind, recipe.splits)
    for k_idx, kind in enumerate(recipe.kinds):
        overrides = recipe.param_overrides.get(kind)
        for j in range(recipe.per_kind):
            global_idx = k_idx * recipe.per_kind + j
            spec_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([recipe.seed, global_idx, 1]))
            )
            spec = sample_spec(kind, spec_rng, overrides=overrides)
            hq_path = Path(clean_paths[global_idx])
            hq = load_image(hq_path)
            lq = apply_degradation(hq, spec, derive_seed(recipe.seed, global_idx))
            split = "train" if j < n_train else ("val" if j < n_train + n_val else "test")
            rec_id = f"{kind}_{j:05d}"
            lq_path = lq_dir / f"{rec_id}.png"
            save_image(lq, lq_path)
            records.append(
                SampleRecord(
                    id=rec_id,
                    split=split,
                    hq_path=str(hq_path.relative_to(out_dir)),
                    lq_path=str(lq_path.relative_to(out_dir)),
                    degradations=(spec,),
                )
            )
    manifest = out_dir / "manifest.jsonl"
    write_manifest(records, manifest)
    return manifest


def balance_and_augment(
    manifest_path: Path,
    target_per_kind: int | None = None,
    seed: int = 0,
    out_path: Path | None = None,
) -> Path:
    """Top up under-represented kinds with augmented copies of train rows.

    New rows reuse the original image files and carry an explicit augment
    descriptor, so the balancing is fully recorded in the manifest itself.
    Only the train split is balanced; val/test rows pass through untouched.
    """
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    by_kind: dict[str, list[SampleRecord]] = {}
    for rec in records:
        if rec.split == "train":
            by_kind.setdefault(rec.kind, []).append(rec)
    if not by_kind:
        raise ManifestError(f"no train rows to balance in {manifest_path}")
    if target_per_kind is None:
        target_per_kind = max(len(v) for v in by_kind.values())

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    out_records = list(records)
    for kind in sorted(by_kind):
        pool = by_kind[kind]
        copy_idx = 0
        while len(pool) + copy_idx < target_per_kind:
            base = pool[copy_idx % len(pool)]
            augment = {
                "rot90": int(rng.integers(0, 4)),
                "hflip": int(rng.integers(0, 2)),
                "vflip": int(rng.integers(0, 2)),
            }
            if augment == {"rot90": 0, "hflip": 0, "vflip": 0}:
                augment["hflip"] = 1
            out_records.append(
                SampleRecord(
                    id=f"{base.id}_aug{copy_idx:03d}",
                    split="train",
                    hq_path=base.hq_path,
                    lq_path=base.lq_path,
                    degradations=base.degradations,
                    augment=augment,
                )
            )
            copy_idx += 1
    out_path = Path(out_path) if out_path else manifest_path
    write_manifest(out_records, out_path)
    return out_path
