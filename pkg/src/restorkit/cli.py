"""Command-line entry point for the whole pipeline.

Exit codes: 0 success, 1 validation problems (bad flags, bad config, bad
inputs), 2 runtime failures (missing checkpoints or files, stage ordering).
Logs are JSON lines on stderr with level, timestamp, and event fields;
timestamps never reach any artifact, so artifact bytes depend only on
inputs and seeds.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import Config, load_config
from .errors import RuntimeFailure, ValidationError

CONFIG_DIR_ENV = "RESTORKIT_CONFIG_DIR"
_QUIET = False


def _log(event: str, **kv) -> None:
    if _QUIET:
        return
    row = {
        "level": "info",
        "ts": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "event": event,
    }
    row.update(kv)
    print(json.dumps(row, sort_keys=True, default=str), file=sys.stderr)


def _log_error(message: str) -> None:
    row = {
        "level": "error",
        "ts": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "event": "error",
        "message": message,
    }
    print(json.dumps(row, sort_keys=True, default=str), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on bad flags, keeping exit 2 for
    runtime failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_config(args) -> Config:
    path = getattr(args, "config", None)
    if path is None:
        env_dir = os.environ.get(CONFIG_DIR_ENV)
        if env_dir:
            candidate = Path(env_dir) / "config.yaml"
            if candidate.is_file():
                path = candidate
    return load_config(path, list(getattr(args, "set", None) or []))


def _workdir(cfg: Config, args) -> Path:
    out = getattr(args, "out_dir", None)
    return Path(out) if out else Path(cfg.paths.workdir)


def _require_file(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise RuntimeFailure(f"{what} not found: {path}")
    return path


def _resolve_ckpt(cfg: Config, args) -> Path:
    explicit = getattr(args, "ckpt", None)
    if explicit:
        ckpt = Path(explicit)
        if not (ckpt / "meta.json").is_file():
            raise RuntimeFailure(f"checkpoint not found: {ckpt}")
        return ckpt
    workdir = Path(cfg.paths.workdir)
    for name in ("stage2", "stage1"):
        if (workdir / name / "meta.json").is_file():
            return workdir / name
    raise RuntimeFailure(
        f"no stage-1 or stage-2 checkpoint under {workdir}; "
        "train the pipeline or pass --ckpt"
    )


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", default=None,
                     help=f"YAML config file (default: ${CONFIG_DIR_ENV}/config.yaml "
                          "if set, else built-in defaults)")
    sub.add_argument("--set", metavar="SECTION.KEY=VALUE", action="append", default=[],
                     help="override one config entry; repeatable")
    sub.add_argument("--seed", type=int, default=None,
                     help="seed override for this invocation (default: from config)")
    sub.add_argument("--quiet", action="store_true", help="suppress info logs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="restorkit",
        description="Train and run the degradation-aware latent-diffusion restorer.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="synthesize a paired degradation dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out-dir", metavar="DIR", required=True,
                   help="dataset directory (images + manifest.jsonl)")
    _add_common(p)

    p = sub.add_parser("pretrain-vae", help="pretrain the autoencoder on clean images",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", metavar="PATH", required=True, help="dataset manifest")
    p.add_argument("--out-dir", metavar="DIR", default=None,
                   help="working directory (default: paths.workdir from config)")
    _add_common(p)

    p = sub.add_parser("train-encoder", help="train the degradation-aware embedding encoder",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", metavar="PATH", required=True, help="dataset manifest")
    p.add_argument("--out-dir", metavar="DIR", default=None,
                   help="working directory (default: paths.workdir from config)")
    _add_common(p)

    p = sub.add_parser("train-stage1", help="train prompts, denoiser, and control jointly",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", metavar="PATH", required=True, help="dataset manifest")
    p.add_argument("--out-dir", metavar="DIR", default=None,
                   help="working directory with vae/ and encoder/ checkpoints")
    _add_common(p)

    p = sub.add_parser("train-stage2", help="adversarial fine-tuning of the refined decoder",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", metavar="PATH", required=True, help="dataset manifest")
    p.add_argument("--out-dir", metavar="DIR", default=None,
                   help="working directory with the stage1/ checkpoint")
    p.add_argument("--vae-only", action="store_true",
                   help="train the decoder from vae+encoder checkpoints alone "
                        "(ablation; the result cannot sample)")
    _add_common(p)

    p = sub.add_parser("restore", help="restore one degraded image",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--input", metavar="PNG", required=True, help="degraded input image")
    p.add_argument("--output", metavar="PNG", required=True, help="restored output path")
    p.add_argument("--ckpt", metavar="DIR", default=None,
                   help="checkpoint directory (default: newest stage under paths.workdir)")
    p.add_argument("--steps", type=int, default=None,
                   help="sampling steps (default: schedule.sample_steps from config)")
    p.add_argument("--plain-decoder", action="store_true",
                   help="decode with the plain autoencoder decoder instead of the "
                        "refined one")
    _add_common(p)

    p = sub.add_parser("probe", help="print degradation similarity scores for one image",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--input", metavar="PNG", required=True, help="image to probe")
    p.add_argument("--bank", metavar="DIR", required=True,
                   help="checkpoint holding the encoder and prototype bank")
    _add_common(p)

    p = sub.add_parser("eval", help="restore a manifest split and score it",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", metavar="PATH", required=True, help="dataset manifest")
    p.add_argument("--out-dir", metavar="DIR", required=True,
                   help="where results.json and images go")
    p.add_argument("--ckpt", metavar="DIR", default=None,
                   help="checkpoint directory (default: newest stage under paths.workdir)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"),
                   help="manifest split to evaluate")
    p.add_argument("--steps", type=int, default=None, help="sampling steps")
    p.add_argument("--plain-decoder", action="store_true",
                   help="score the plain-decoder output")
    p.add_argument("--compare-decoders", action="store_true",
                   help="also decode each latent through both decoders and "
                        "record the paired PSNR means")
    p.add_argument("--no-images", action="store_true",
                   help="skip writing per-image PNGs (results.json only)")
    _add_common(p)

    p = sub.add_parser("report", help="render report.json/report.csv/grid.png from an eval",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--results", metavar="DIR", required=True,
                   help="eval output directory (holds results.json)")
    p.add_argument("--out-dir", metavar="DIR", required=True, help="report directory")
    _add_common(p)

    return parser


def _cmd_synth(args) -> int:
    from .degrade.dataset import DatasetRecipe, build_dataset

    cfg = _resolve_config(args)
    seed = cfg.data.seed if args.seed is None else args.seed
    recipe = DatasetRecipe(
        kinds=tuple(cfg.data.kinds), per_kind=cfg.data.per_kind,
        side=cfg.data.side, seed=seed, splits=tuple(cfg.data.splits),
    )
    _log("synth_start", out_dir=args.out_dir, kinds=len(recipe.kinds),
         per_kind=recipe.per_kind, seed=seed)
    manifest = build_dataset(recipe, Path(args.out_dir))
    _log("synth_done", manifest=manifest)
    print(manifest)
    return 0


def _cmd_pretrain_vae(args) -> int:
    from .backbone.vae import pretrain_autoencoder

    cfg = _resolve_config(args)
    workdir = _workdir(cfg, args)
    manifest = _require_file(args.manifest, "manifest")
    seed = cfg.stage1.seed if args.seed is None else args.seed
    _log("pretrain_vae_start", manifest=manifest, workdir=workdir, seed=seed)
    ckpt = pretrain_autoencoder(manifest, cfg, workdir / "vae", seed=seed)
    _log("pretrain_vae_done", checkpoint=ckpt)
    print(ckpt)
    return 0


def _cmd_train_encoder(args) -> int:
    from .embeddings import train_toy_encoder

    cfg = _resolve_config(args)
    workdir = _workdir(cfg, args)
    manifest = _require_file(args.manifest, "manifest")
    seed = cfg.data.seed if args.seed is None else args.seed
    _log("train_encoder_start", manifest=manifest, workdir=workdir, seed=seed)
    ckpt = train_toy_encoder(manifest, cfg, workdir / "encoder", seed=seed)
    _log("train_encoder_done", checkpoint=ckpt)
    print(ckpt)
    return 0


def _cmd_train_stage1(args) -> int:
    from .train.stage1 import train_stage1

    cfg = _resolve_config(args)
    workdir = _workdir(cfg, args)
    manifest = _require_file(args.manifest, "manifest")
    _log("train_stage1_start", manifest=manifest, workdir=workdir)
    ckpt = train_stage1(cfg, manifest, workdir, seed=args.seed, log=_log)
    _log("train_stage1_done", checkpoint=ckpt)
    print(ckpt)
    return 0


def _cmd_train_stage2(args) -> int:
    from .train.stage2 import train_stage2

    cfg = _resolve_config(args)
    workdir = _workdir(cfg, args)
    manifest = _require_file(args.manifest, "manifest")
    _log("train_stage2_start", manifest=manifest, workdir=workdir,
         vae_only=bool(args.vae_only))
    ckpt = train_stage2(cfg, manifest, workdir, seed=args.seed,
                        vae_only=args.vae_only, log=_log)
    _log("train_stage2_done", checkpoint=ckpt)
    print(ckpt)
    return 0


def _cmd_restore(args) -> int:
    from .imageio import load_image, save_image
    from .pipeline import Restorer

    cfg = _resolve_config(args)
    ckpt = _resolve_ckpt(cfg, args)
    input_path = _require_file(args.input, "input image")
    seed = 0 if args.seed is None else args.seed
    _log("restore_start", input=input_path, ckpt=ckpt, seed=seed,
         plain_decoder=bool(args.plain_decoder))
    restorer = Restorer.from_checkpoint(ckpt, steps=args.steps)
    out = restorer.restore(load_image(input_path), seed=seed,
                           plain_decoder=args.plain_decoder)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, output)
    _log("restore_done", output=output)
    print(output)
    return 0


def _cmd_probe(args) -> int:
    from .embeddings import EmbeddingProvider
    from .imageio import load_image

    cfg = _resolve_config(args)
    bank_path = Path(args.bank)
    if not (bank_path / "meta.json").is_file():
        raise RuntimeFailure(f"prototype bank checkpoint not found: {bank_path}")
    input_path = _require_file(args.input, "input image")
    provider = EmbeddingProvider.load(bank_path, cfg)
    scores = provider.degradation_similarity(load_image(input_path))
    labels = provider.bank.labels
    best = int(scores.argmax())
    width = max(len(k) for k in labels)
    for i, (kind, s) in enumerate(zip(labels, scores)):
        flag = " *" if i == best else ""
        print(f"{kind:<{width}}  {s:.6f}{flag}")
    return 0


def _cmd_eval(args) -> int:
    from .evalkit import write_report_json
    from .imageio import save_image
    from .pipeline import Restorer, evaluate_manifest

    cfg = _resolve_config(args)
    ckpt = _resolve_ckpt(cfg, args)
    manifest = _require_file(args.manifest, "manifest")
    seed = 0 if args.seed is None else args.seed
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log("eval_start", manifest=manifest, ckpt=ckpt, split=args.split, seed=seed)
    restorer = Restorer.from_checkpoint(ckpt, steps=args.steps)
    report, images = evaluate_manifest(
        restorer, manifest, split=args.split, seed=seed, steps=args.steps,
        plain_decoder=args.plain_decoder, compare_decoders=args.compare_decoders,
        log=_log,
    )
    write_report_json(report, out_dir / "results.json")
    if not args.no_images:
        img_dir = out_dir / "images"
        img_dir.mkdir(exist_ok=True)
        for i, row in enumerate(report.rows):
            for tag in ("lq", "restored", "gt"):
                save_image(images[tag][i], img_dir / f"{row['id']}.{tag}.png")
    _log("eval_done", results=out_dir / "results.json",
         overall_psnr=report.summary["overall"]["psnr_restored"])
    print(out_dir / "results.json")
    return 0


def _cmd_report(args) -> int:
    from .evalkit import make_report, read_report_json
    from .imageio import load_image

    results_dir = Path(args.results)
    report = read_report_json(results_dir / "results.json")
    img_dir = results_dir / "images"
    lq = restored = gt = None
    if img_dir.is_dir():
        ids = [row["id"] for row in report.rows]
        triplets = [
            tuple(img_dir / f"{i}.{tag}.png" for tag in ("lq", "restored", "gt"))
            for i in ids
        ]
        triplets = [t for t in triplets if all(p.is_file() for p in t)]
        if triplets:
            lq = [load_image(t[0]) for t in triplets]
            restored = [load_image(t[1]) for t in triplets]
            gt = [load_image(t[2]) for t in triplets]
    paths = make_report(report, Path(args.out_dir), lq=lq, restored=restored, gt=gt)
    _log("report_done", **{k: str(v) for k, v in paths.items()})
    print(paths["json"])
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "pretrain-vae": _cmd_pretrain_vae,
    "train-encoder": _cmd_train_encoder,
    "train-stage1": _cmd_train_stage1,
    "train-stage2": _cmd_train_stage2,
    "restore": _cmd_restore,
    "probe": _cmd_probe,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    global _QUIET
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    _QUIET = bool(getattr(args, "quiet", False))
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        _log_error(str(exc))
        return 1
    except RuntimeFailure as exc:
        _log_error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
