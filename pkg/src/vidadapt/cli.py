"""Command-line entry point: ``vidadapt <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
Failures print one line ``<error class>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import pipelines as pl
from .adapters import count_params
from .config import RunConfig, dump_config, load_config
from .diffusion import SamplerConfig
from .errors import ConfigError, UsageError, VidAdaptError
from .evalbench import (ClipFeatureExtractor, bench_attention, frame_consistency, frechet_distance,
                        make_report, text_video_similarity, write_report)
from .toyworld import (load_manifest, manifest_record, parse_caption, synth_video, write_clip,
                       write_manifest)

log = logging.getLogger("vidadapt")

SUBCOMMANDS = ("pretrain-base", "train", "generate", "edit", "superres", "bench", "eval")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidadapt", description="Adapter-based text-to-video diffusion toolkit.")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    parser.add_argument("--ckpt", type=Path)
    parser.add_argument("--caption")
    parser.add_argument("--frames", type=int)
    parser.add_argument("--ddim-steps", type=int)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--threads", type=int, default=1)
    return parser


def _train_config(cfg: RunConfig, seed: int, **kw) -> pl.TrainConfig:
    base = dict(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                weight_decay=cfg.weight_decay, seed=seed, frames=cfg.frames, height=cfg.height,
                width=cfg.width, backgrounds=cfg.backgrounds, contrastive_weight=cfg.contrastive_weight,
                cfg_dropout=cfg.cfg_dropout, eval_every=cfg.eval_every, ckpt_every=cfg.ckpt_every)
    base.update(kw)
    return pl.TrainConfig(**base)


def _need_ckpt(args) -> pl.Bundle:
    if args.ckpt is None:
        raise ConfigError(f"--ckpt is required for {args.command}")
    return pl.Bundle.load(args.ckpt)


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def cmd_pretrain_base(args, cfg: RunConfig) -> None:
    tcfg = _train_config(cfg, args.seed, frames=cfg.frames)
    bundle, loss_log = pl.pretrain_base(cfg.denoiser(args.seed), tcfg, (cfg.T, cfg.beta_start, cfg.beta_end),
                                        args.out_dir / "loss.csv")
    bundle.save(args.out_dir / "base.ckpt")
    L = loss_log.losses
    value = {"first100": _mean(L[:100]), "last100": _mean(L[-100:])}
    write_report(args.out_dir / "report.json", make_report("pretrain_loss", value, cfg.to_dict(), args.seed))


def cmd_train(args, cfg: RunConfig) -> None:
    base = _need_ckpt(args)
    dcfg = dataclasses.replace(base.cfg, adapter_ratio=cfg.adapter_ratio, shift_window=cfg.shift_window,
                               temporal_adapter=cfg.temporal_adapter, attn_adapter=cfg.attn_adapter,
                               ffn_adapter=cfg.ffn_adapter, latent_shift=cfg.latent_shift)
    video, loss_log, report = pl.adapt_train_t2v(base, _train_config(cfg, args.seed), dcfg,
                                                 args.out_dir / "loss.csv", args.out_dir / "checkpoints",
                                                 cfg.val_clips)
    video.save(args.out_dir / "video.ckpt")
    L = loss_log.losses
    report.update(first100=_mean(L[:100]), last100=_mean(L[-100:]))
    write_report(args.out_dir / "budget.json", make_report("param_budget", report, cfg.to_dict(), args.seed))


def cmd_generate(args, cfg: RunConfig) -> None:
    bundle = _need_ckpt(args)
    records = []
    for k in range(cfg.n_samples):
        seed = args.seed + k
        pixels = pl.generate_t2v(bundle, cfg.caption, cfg.sampler(seed), cfg.frames, cfg.height, cfg.width,
                                 guidance_scale=cfg.guidance_scale)
        records.append(manifest_record(None, seed, cfg.caption, write_clip(args.out_dir, f"sample_{k:03d}", pixels)))
    write_manifest(args.out_dir, records)


def _source_clip(cfg: RunConfig):
    if cfg.input_manifest:
        rec, pixels = load_manifest(Path(cfg.input_manifest))[0]
        return pixels, rec["caption"]
    spec = parse_caption(cfg.caption, background=cfg.source_background)
    clip = synth_video(spec, cfg.frames, cfg.height, cfg.width, cfg.source_seed)
    return clip.pixels, clip.caption


def cmd_edit(args, cfg: RunConfig) -> None:
    bundle = _need_ckpt(args)
    source, caption = _source_clip(cfg)
    steps = args.steps if args.steps is not None else cfg.tune_steps
    tcfg = _train_config(cfg, args.seed, steps=steps)
    res = pl.one_shot_edit(bundle, source, caption, cfg.edit_caption, tcfg, cfg.sampler(args.seed),
                           args.out_dir / "tune_loss.csv")
    records = []
    for name, pixels, cap in (("source", source, caption), ("reconstruction", res.reconstruction, caption),
                              ("edited", res.edited, cfg.edit_caption)):
        records.append(manifest_record(None, args.seed, cap, write_clip(args.out_dir, name, pixels)))
    write_manifest(args.out_dir, records)
    mae = float(np.abs(res.reconstruction - source).mean())
    write_report(args.out_dir / "report.json",
                 make_report("reconstruction_mae", mae, cfg.to_dict(), args.seed))


def cmd_superres(args, cfg: RunConfig) -> None:
    if cfg.mode == "train":
        base_t = _train_config(cfg, args.seed, steps=cfg.base_steps, batch_size=max(cfg.batch_size, 8))
        video_t = _train_config(cfg, args.seed + 1)
        bundle, _, _ = pl.superres_train(cfg.denoiser(args.seed), base_t, video_t, cfg.scale, cfg.aug_max,
                                         cfg.identity_task, (cfg.T, cfg.beta_start, cfg.beta_end), args.out_dir)
        bundle.save(args.out_dir / "sr.ckpt")
        return
    if cfg.mode != "apply":
        raise ConfigError(f"superres mode must be 'train' or 'apply', got {cfg.mode!r}")
    bundle = _need_ckpt(args)
    if cfg.input_manifest:
        loaded = load_manifest(Path(cfg.input_manifest))
    else:
        spec = parse_caption(cfg.caption)
        clip = synth_video(spec, cfg.frames, cfg.height, cfg.width, cfg.source_seed)
        loaded = [({"caption": clip.caption}, pl.downsample_pixels(clip.pixels, cfg.scale).numpy())]
    records = []
    for k, (rec, low) in enumerate(loaded):
        high = pl.superres_apply(bundle, low, rec["caption"], cfg.sampler(args.seed), cfg.aug_level)
        records.append(manifest_record(None, args.seed, rec["caption"], write_clip(args.out_dir, f"sr_{k:03d}", high)))
    write_manifest(args.out_dir, records)


def cmd_bench(args, cfg: RunConfig) -> None:
    table = bench_attention(cfg.bench_L, cfg.bench_N, cfg.bench_d, cfg.repeats, args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_report(args.out_dir / "bench.json", make_report("attention_cost", table, cfg.to_dict(), args.seed))


def cmd_eval(args, cfg: RunConfig) -> None:
    bundle = _need_ckpt(args)
    rng = np.random.default_rng(args.seed)
    tcfg = _train_config(cfg, args.seed)
    gens, reals, fc, sim = [], [], [], []
    for k in range(cfg.n_samples):
        real, captions = pl.sample_batch(rng, 1, tcfg)
        video = pl.generate_t2v(bundle, captions[0], cfg.sampler(args.seed + k), cfg.frames, cfg.height, cfg.width)
        gens.append(video)
        reals.append(real[0])
        fc.append(frame_consistency(video))
        if bundle.head is not None:
            sim.append(text_video_similarity(captions[0], video, bundle.text, bundle.head))
    value = {"frame_consistency": _mean(fc), "text_video_similarity": _mean(sim),
             "validation_loss": pl.validation_loss(bundle, tcfg, cfg.val_clips)}
    if cfg.n_samples >= 2:
        ext = ClipFeatureExtractor()
        value["frechet_distance"] = frechet_distance(ext.feature_set(reals), ext.feature_set(gens))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_report(args.out_dir / "eval.json", make_report("eval", value, cfg.to_dict(), args.seed))


COMMANDS = {
    "pretrain-base": cmd_pretrain_base,
    "train": cmd_train,
    "generate": cmd_generate,
    "edit": cmd_edit,
    "superres": cmd_superres,
    "bench": cmd_bench,
    "eval": cmd_eval,
}


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    for flag, key in (("caption", "caption"), ("frames", "frames"), ("ddim_steps", "ddim_steps"),
                      ("eta", "eta"), ("steps", "steps")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        torch.set_num_threads(args.threads)
        cfg = _apply_flags(load_config(args.config), args)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "run.cfg").write_text(dump_config(cfg))
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return 3
    except VidAdaptError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
