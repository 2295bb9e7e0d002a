"""Training and inference workflows: base image pre-training, adapter-only video
training, one-shot editing via DDIM inversion, and cascaded super-resolution."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .adapters import ADAPTER_TAG, ParamSet, count_params, partition_params
from .denoiser import DenoiserConfig, Denoiser, build_image_denoiser, inflate_to_video
from .diffusion import (NoiseSchedule, SamplerConfig, ddim_invert, ddim_sample, make_schedule,
                        training_loss)
from .errors import ConfigError, DimensionError, DivergenceError, FreezeViolation, UsageError
from .evalbench import FrameHead, cosine
from .toyworld import (BACKGROUNDS, PATCH, Clip, SceneSpec, caption_ids, caption_text, decode_latent,
                       encode_latent, from_model_space, random_scene, synth_video, to_model_space,
                       tokenize, write_clip, write_manifest, manifest_record, TextEmbedder)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    frames: int = 16
    height: int = 32
    width: int = 32
    backgrounds: tuple[str, ...] = BACKGROUNDS
    contrastive_weight: float = 0.1
    cfg_dropout: float = 0.0
    eval_every: int = 0
    ckpt_every: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.frames < 1:
            raise ConfigError(f"invalid training config: {self}")
        if not 0 <= self.cfg_dropout < 1:
            raise ConfigError("cfg_dropout must lie in [0, 1)")


@dataclass
class Bundle:
    """A denoiser together with its frozen text embedder, frame head and schedule."""

    kind: str  # "image" | "video" | "sr-image" | "sr-video"
    model: Denoiser
    text: TextEmbedder
    head: FrameHead | None
    schedule_args: tuple[int, float, float] = (1000, 1e-4, 0.02)
    extra: dict = field(default_factory=dict)

    @property
    def cfg(self) -> DenoiserConfig:
        return self.model.cfg

    @property
    def schedule(self) -> NoiseSchedule:
        return make_schedule(*self.schedule_args)

    def param_set(self) -> ParamSet:
        return partition_params(self.model, prefix="unet.")

    def entries(self) -> ckpt.Entries:
        meta = {"kind": self.kind, "denoiser": self.cfg.to_dict(), "schedule": list(self.schedule_args),
                "extra": self.extra, "head": self.head is not None}
        out: ckpt.Entries = {"meta.config": (ckpt.encode_meta(meta), False)}
        for name, p in self.model.named_parameters():
            out["unet." + name] = (p, ADAPTER_TAG in name)
        for name, p in self.text.named_parameters():
            out["text." + name] = (p, False)
        if self.head is not None:
            for name, p in self.head.named_parameters():
                out["head." + name] = (p, False)
        return out

    @classmethod
    def from_entries(cls, entries: ckpt.Entries) -> "Bundle":
        if "meta.config" not in entries:
            raise ckpt.CorruptFileError("checkpoint lacks meta.config")
        meta = ckpt.decode_meta(entries["meta.config"][0])
        d = meta["denoiser"]
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        dcfg = DenoiserConfig(**d)
        model = build_image_denoiser(dcfg)
        if meta["kind"] in ("video", "sr-video"):
            model = inflate_to_video(model, dcfg)
        text = TextEmbedder(dcfg.text_dim, dcfg.seed)
        head = (FrameHead(dcfg.text_dim, size=meta["extra"].get("head_size", 32), seed=dcfg.seed)
                if meta["head"] else None)
        bundle = cls(meta["kind"], model, text, head, tuple(meta["schedule"]), meta["extra"])
        expected = bundle.entries()
        if set(expected) != set(entries):
            missing = sorted(set(expected) ^ set(entries))[:5]
            raise ckpt.CorruptFileError(f"checkpoint entries do not match the architecture: {missing}")
        with torch.no_grad():
            for name, (tensor, _) in entries.items():
                if name.startswith(ckpt.META_PREFIX):
                    continue
                target = expected[name][0]
                if target.shape != tensor.shape:
                    raise ckpt.CorruptFileError(f"{name}: shape {tuple(tensor.shape)} != {tuple(target.shape)}")
                target.copy_(tensor)
        bundle.freeze_all()
        return bundle

    def freeze_all(self) -> None:
        for module in (self.model, self.text, self.head):
            if module is not None:
                module.requires_grad_(False)

    def save(self, path: Path) -> None:
        ckpt.save_checkpoint(self.entries(), path)

    @classmethod
    def load(cls, path: Path) -> "Bundle":
        return cls.from_entries(ckpt.load_checkpoint(path))

    def text_embedding(self, captions: list[str]) -> torch.Tensor:
        with torch.no_grad():
            return self.text(caption_ids(captions))

    def copy(self) -> "Bundle":
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# data


def sample_batch(rng: np.random.Generator, n: int, tcfg: TrainConfig,
                 frames: int | None = None) -> tuple[np.ndarray, list[str]]:
    L = tcfg.frames if frames is None else frames
    clips = [synth_video(random_scene(rng, tcfg.backgrounds), L, tcfg.height, tcfg.width,
                         int(rng.integers(2 ** 31))) for _ in range(n)]
    return np.stack([c.pixels for c in clips]), [c.caption for c in clips]


def pixels_to_model(pixels: np.ndarray | torch.Tensor) -> torch.Tensor:
    return to_model_space(encode_latent(torch.as_tensor(np.asarray(pixels), dtype=torch.float32)))


def model_to_pixels(z: torch.Tensor) -> np.ndarray:
    return decode_latent(from_model_space(z)).numpy()


def _drop_captions(captions: list[str], p: float, rng: np.random.Generator) -> list[str]:
    if p <= 0:
        return captions
    return ["" if rng.random() < p else c for c in captions]


# ---------------------------------------------------------------------------
# training loop


class LossLog:
    """CSV ``step,loss,wallclock_ms``; keeps rows in memory as well."""

    def __init__(self, path: Path | None):
        self.rows: list[tuple[int, float, float]] = []
        self.path = Path(path) if path else None
        self.t0 = time.perf_counter()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(["step", "loss", "wallclock_ms"])

    def add(self, step: int, loss: float) -> None:
        ms = (time.perf_counter() - self.t0) * 1e3
        self.rows.append((step, loss, ms))
        if self.path:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([step, repr(loss), f"{ms:.1f}"])

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]


def _optimizer(params: list[torch.Tensor], tcfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=tcfg.lr, betas=tcfg.betas, weight_decay=tcfg.weight_decay)


StepFn = Callable[[int], tuple[torch.Tensor, torch.Tensor]]  # step -> (objective, logged loss)


def _run(params: list[torch.Tensor], step_fn: StepFn, tcfg: TrainConfig, loss_log: LossLog,
         on_checkpoint: Callable[[int], None] | None = None,
         on_eval: Callable[[int], None] | None = None) -> None:
    if tcfg.steps and not params:
        raise UsageError("nothing to train: the parameter set has no trainable tensors")
    opt = _optimizer(params, tcfg) if params else None
    for step in range(1, tcfg.steps + 1):
        opt.zero_grad(set_to_none=True)
        objective, logged = step_fn(step)
        value = float(logged)
        if not (math.isfinite(value) and math.isfinite(float(objective.detach()))):
            raise DivergenceError(f"loss became non-finite ({value}) at step {step}")
        objective.backward()
        opt.step()
        loss_log.add(step, value)
        if on_eval and tcfg.eval_every and step % tcfg.eval_every == 0:
            on_eval(step)
        if on_checkpoint and tcfg.ckpt_every and step % tcfg.ckpt_every == 0:
            on_checkpoint(step)


def info_nce(a: torch.Tensor, b: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    logits = cosine(a.unsqueeze(1), b.unsqueeze(0)) / temperature
    target = torch.arange(a.shape[0])
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


def pretrain_base(dcfg: DenoiserConfig, tcfg: TrainConfig,
                  schedule_args: tuple[int, float, float] = (1000, 1e-4, 0.02),
                  log_path: Path | None = None) -> tuple[Bundle, LossLog]:
    """Train the 2D denoiser, text table and frame head on single frames.

    The frame head is fitted with a symmetric contrastive loss against pooled
    caption embeddings; only the epsilon loss is logged.
    """
    dcfg = DenoiserConfig(**{**dcfg.to_dict(), "schedule": tuple(schedule_args)})
    model = build_image_denoiser(dcfg)
    text = TextEmbedder(dcfg.text_dim, dcfg.seed)
    head = FrameHead(dcfg.text_dim, size=tcfg.height, seed=dcfg.seed)
    sched = make_schedule(*schedule_args)
    rng = np.random.default_rng(tcfg.seed)
    gen = torch.Generator().manual_seed(tcfg.seed)
    params = [*model.parameters(), *text.parameters(), *head.parameters()]
    for p in params:
        p.requires_grad_(True)

    def step_fn(step: int):
        pixels, captions = sample_batch(rng, tcfg.batch_size, tcfg)
        pick = rng.integers(tcfg.frames, size=tcfg.batch_size)
        frames = torch.as_tensor(pixels[np.arange(tcfg.batch_size), pick])
        emb = text(caption_ids(_drop_captions(captions, tcfg.cfg_dropout, rng)))
        loss = training_loss(model, pixels_to_model(frames), emb, sched, gen)
        objective = loss
        if tcfg.contrastive_weight > 0:
            objective = loss + tcfg.contrastive_weight * info_nce(head(frames), text.pooled(caption_ids(captions)))
        return objective, loss.detach()

    loss_log = LossLog(log_path)
    _run(params, step_fn, tcfg, loss_log)
    bundle = Bundle("image", model, text, head, schedule_args, {"head_size": tcfg.height})
    bundle.freeze_all()
    return bundle, loss_log


def _freeze_check(before: dict[str, bytes], pset: ParamSet) -> None:
    after = pset.snapshot_frozen()
    changed = [k for k in before if before[k] != after.get(k)]
    if changed or set(before) != set(after):
        raise FreezeViolation(f"frozen tensors modified: {changed[:5]}")


def _finetune_adapters(bundle: Bundle, batch_fn: Callable[[int], tuple[torch.Tensor, torch.Tensor, dict]],
                       tcfg: TrainConfig, log_path: Path | None = None,
                       ckpt_dir: Path | None = None,
                       on_eval: Callable[[int], None] | None = None) -> tuple[LossLog, dict]:
    """Optimize only the adapter partition of ``bundle.model``; frozen bytes are verified."""
    bundle.freeze_all()
    pset = bundle.param_set()
    before = pset.snapshot_frozen()
    sched = bundle.schedule
    gen = torch.Generator().manual_seed(tcfg.seed + 7)
    model = bundle.model

    def step_fn(step: int):
        x0, emb, kw = batch_fn(step)
        loss = training_loss(lambda x, c, t: model(x, c, t, **kw), x0, emb, sched, gen)
        return loss, loss.detach()

    def on_checkpoint(step: int) -> None:
        _freeze_check(before, pset)
        if ckpt_dir:
            bundle.save(Path(ckpt_dir) / f"step_{step:06d}.ckpt")

    loss_log = LossLog(log_path)
    _run(list(pset.trainable().values()), step_fn, tcfg, loss_log, on_checkpoint, on_eval)
    _freeze_check(before, pset)
    report = count_params(pset)
    bundle.freeze_all()
    return loss_log, report


def adapt_train_t2v(base: Bundle, tcfg: TrainConfig, dcfg: DenoiserConfig | None = None,
                    log_path: Path | None = None, ckpt_dir: Path | None = None,
                    val_clips: int = 0) -> tuple[Bundle, LossLog, dict]:
    """Inflate the image model and train only the adapters on captioned videos.

    Returns the video bundle, the per-step loss log and a parameter-budget
    report (``count_params`` plus any validation losses).
    """
    if base.kind != "image":
        raise UsageError(f"adapter training starts from an image checkpoint, got {base.kind!r}")
    video = inflate_to_video(base.model, dcfg or base.cfg)
    bundle = Bundle("video", video, copy.deepcopy(base.text), copy.deepcopy(base.head), base.schedule_args,
                    dict(base.extra))
    rng = np.random.default_rng(tcfg.seed)
    evals: list[tuple[int, float]] = []

    def batch_fn(step: int):
        pixels, captions = sample_batch(rng, tcfg.batch_size, tcfg)
        emb = bundle.text_embedding(_drop_captions(captions, tcfg.cfg_dropout, rng))
        return pixels_to_model(pixels), emb, {}

    def on_eval(step: int) -> None:
        evals.append((step, validation_loss(bundle, tcfg, max(val_clips, 4))))
        log.info("step %d validation loss %.5f", step, evals[-1][1])

    loss_log, report = _finetune_adapters(bundle, batch_fn, tcfg, log_path, ckpt_dir, on_eval)
    report["validation"] = evals
    return bundle, loss_log, report


@torch.no_grad()
def validation_loss(bundle: Bundle, tcfg: TrainConfig, n_clips: int = 16, seed: int = 12345,
                    batch: int = 4) -> float:
    """Epsilon loss on a fixed held-out clip set with fixed timesteps and noise."""
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    sched = bundle.schedule
    total, count = 0.0, 0
    while count < n_clips:
        n = min(batch, n_clips - count)
        pixels, captions = sample_batch(rng, n, tcfg)
        x0 = pixels_to_model(pixels)
        if bundle.kind == "image":
            x0 = x0.flatten(0, 1)
            captions = [c for c in captions for _ in range(tcfg.frames)]
        emb = bundle.text_embedding(captions)
        total += float(training_loss(bundle.model, x0, emb, sched, gen)) * n
        count += n
    return total / n_clips


# ---------------------------------------------------------------------------
# inference


def eps_model(bundle: Bundle, captions: list[str], guidance_scale: float = 1.0, **kw):
    """Noise predictor closure for the samplers; ``guidance_scale`` > 1 enables guidance."""
    for c in captions:
        tokenize(c)
    emb = bundle.text_embedding(captions)
    model = bundle.model
    if guidance_scale == 1.0:
        return lambda x, c, t: model(x, emb, t, **kw)
    null = bundle.text_embedding([""] * len(captions))

    def guided(x, c, t):
        e_c, e_u = model(x, emb, t, **kw), model(x, null, t, **kw)
        return e_u + guidance_scale * (e_c - e_u)

    return guided


def latent_shape(bundle: Bundle, batch: int, frames: int, height: int, width: int) -> tuple[int, ...]:
    if height % PATCH or width % PATCH:
        raise DimensionError(f"frame extents {height}x{width} must be divisible by {PATCH}")
    cells = (bundle.cfg.latent_channels, height // PATCH, width // PATCH)
    return (batch, frames, *cells) if bundle.model.video else (batch, *cells)


def generate_t2v(bundle: Bundle, caption: str, scfg: SamplerConfig, frames: int = 16,
                 height: int = 32, width: int = 32, out_dir: Path | None = None,
                 guidance_scale: float = 1.0, name: str = "sample") -> np.ndarray:
    """Sample one clip ``[L, 3, H, W]``; optionally write PPM frames and a manifest."""
    fn = eps_model(bundle, [caption], guidance_scale)
    shape = latent_shape(bundle, 1, frames, height, width)
    z = ddim_sample(fn, shape, None, scfg, bundle.schedule)
    pixels = model_to_pixels(z[0])
    if out_dir is not None:
        rel = write_clip(out_dir, name, pixels)
        write_manifest(out_dir, [manifest_record(None, scfg.seed, caption, rel)])
    return pixels


@dataclass
class EditResult:
    tuned: Bundle
    inverted: torch.Tensor
    reconstruction: np.ndarray
    edited: np.ndarray
    loss_log: LossLog


def one_shot_edit(bundle: Bundle, source: np.ndarray, source_caption: str, edited_caption: str,
                  tcfg: TrainConfig, scfg: SamplerConfig, log_path: Path | None = None) -> EditResult:
    """Tune adapters on one clip, invert it under the source caption, resample under the edit."""
    if bundle.kind != "video":
        raise UsageError(f"editing needs a video checkpoint, got {bundle.kind!r}")
    tokenize(source_caption)
    tokenize(edited_caption)
    tuned = bundle.copy()
    x0 = pixels_to_model(source).unsqueeze(0)
    emb = tuned.text_embedding([source_caption])
    B = tcfg.batch_size

    def batch_fn(step: int):
        return x0.expand(B, *x0.shape[1:]), emb.expand(B, *emb.shape[1:]), {}

    loss_log, _ = _finetune_adapters(tuned, batch_fn, tcfg, log_path)
    sched = tuned.schedule
    src_fn = eps_model(tuned, [source_caption])
    inverted = ddim_invert(src_fn, x0, None, SamplerConfig(scfg.num_inference_steps, 0.0, scfg.seed), sched)
    recon = ddim_sample(src_fn, x0.shape, None, scfg, sched, x_T=inverted)
    edited = ddim_sample(eps_model(tuned, [edited_caption]), x0.shape, None, scfg, sched, x_T=inverted)
    return EditResult(tuned, inverted, model_to_pixels(recon[0]), model_to_pixels(edited[0]), loss_log)


def masked_mean_color(pixels: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Mean RGB over all masked pixels of a clip."""
    return pixels.transpose(1, 0, 2, 3)[:, masks].mean(axis=1)


# ---------------------------------------------------------------------------
# super-resolution


def downsample_pixels(high: torch.Tensor | np.ndarray, scale: int) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(high), dtype=torch.float32)
    lead = x.shape[:-3]
    out = F.avg_pool2d(x.reshape(-1, *x.shape[-3:]), scale)
    return out.reshape(*lead, *out.shape[-3:])


def upsample_pixels(low: torch.Tensor | np.ndarray, scale: int) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(low), dtype=torch.float32)
    lead = x.shape[:-3]
    out = F.interpolate(x.reshape(-1, *x.shape[-3:]), scale_factor=scale, mode="nearest")
    return out.reshape(*lead, *out.shape[-3:])


def sr_condition(low: torch.Tensor | np.ndarray, scale: int) -> torch.Tensor:
    """Low-res frames brought to the target latent grid (nearest upsample, then encode)."""
    return pixels_to_model(upsample_pixels(low, scale))


def augment_condition(cond: torch.Tensor, level: torch.Tensor, sched: NoiseSchedule,
                      gen: torch.Generator) -> torch.Tensor:
    """Forward-diffuse the conditioning to per-item level ``level`` (0 leaves it clean)."""
    ab = sched.alpha_bar[level].to(cond.dtype).reshape(-1, *([1] * (cond.ndim - 1)))
    return ab.sqrt() * cond + (1 - ab).sqrt() * torch.randn(cond.shape, generator=gen)


def _sr_pairs(pixels: np.ndarray, scale: int, identity_task: bool) -> tuple[torch.Tensor, torch.Tensor]:
    high = torch.as_tensor(pixels)
    low = downsample_pixels(high, scale)
    if identity_task:
        high = upsample_pixels(low, scale)
    return high, low


def superres_train(dcfg: DenoiserConfig, base_tcfg: TrainConfig, video_tcfg: TrainConfig,
                   scale: int = 4, aug_max: float = 0.3, identity_task: bool = False,
                   schedule_args: tuple[int, float, float] = (1000, 1e-4, 0.02),
                   log_dir: Path | None = None) -> tuple[Bundle, LossLog, LossLog]:
    """Two-stage SR training: a conditioned image denoiser, then adapter-only video tuning.

    The model input is the noisy target latent concatenated with the
    noise-augmented, upsampled low-res latent; the augmentation level is
    drawn uniformly from ``[0, aug_max * T]`` and fed as an extra embedding.
    """
    if base_tcfg.height % scale or base_tcfg.width % scale:
        raise DimensionError(f"training frames not divisible by scale {scale}")
    if not 0 <= aug_max <= 1:
        raise ConfigError("aug_max must lie in [0, 1]")
    dcfg = DenoiserConfig(**{**dcfg.to_dict(), "cond_channels": dcfg.latent_channels,
                             "noise_level_cond": True, "schedule": tuple(schedule_args)})
    sched = make_schedule(*schedule_args)
    max_level = int(aug_max * sched.T)
    model = build_image_denoiser(dcfg)
    text = TextEmbedder(dcfg.text_dim, dcfg.seed)
    rng = np.random.default_rng(base_tcfg.seed)
    gen = torch.Generator().manual_seed(base_tcfg.seed)
    params = [*model.parameters(), *text.parameters()]
    for p in params:
        p.requires_grad_(True)

    def conditioned(pixels: np.ndarray, g: torch.Generator):
        high, low = _sr_pairs(pixels, scale, identity_task)
        B = high.shape[0]
        level = torch.randint(0, max_level + 1, (B,), generator=g)
        cond = sr_condition(low, scale)
        cond = augment_condition(cond.reshape(B, -1, *cond.shape[-2:]), level, sched, g).reshape(cond.shape)
        return pixels_to_model(high), cond, level

    def base_step(step: int):
        pixels, captions = sample_batch(rng, base_tcfg.batch_size, base_tcfg)
        pick = rng.integers(base_tcfg.frames, size=base_tcfg.batch_size)
        x0, cond, level = conditioned(pixels[np.arange(base_tcfg.batch_size), pick], gen)
        emb = text(caption_ids(captions))
        loss = training_loss(lambda x, c, t: model(x, c, t, cond=cond, noise_level=level), x0, emb, sched, gen)
        return loss, loss.detach()

    base_log = LossLog(Path(log_dir) / "sr_base_loss.csv" if log_dir else None)
    _run(params, base_step, base_tcfg, base_log)
    image = Bundle("sr-image", model, text, None, schedule_args, {"scale": scale, "aug_max": aug_max})
    image.freeze_all()

    video = Bundle("sr-video", inflate_to_video(model, dcfg), copy.deepcopy(text), None, schedule_args,
                   dict(image.extra))
    vrng = np.random.default_rng(video_tcfg.seed)
    vgen = torch.Generator().manual_seed(video_tcfg.seed + 3)

    def video_batch(step: int):
        pixels, captions = sample_batch(vrng, video_tcfg.batch_size, video_tcfg)
        x0, cond, level = conditioned(pixels, vgen)
        return x0, video.text_embedding(captions), {"cond": cond, "noise_level": level}

    video_log, _ = _finetune_adapters(video, video_batch, video_tcfg,
                                      Path(log_dir) / "sr_video_loss.csv" if log_dir else None)
    return video, base_log, video_log


def superres_apply(bundle: Bundle, low: np.ndarray, caption: str, scfg: SamplerConfig,
                   aug_level: float = 0.0) -> np.ndarray:
    """Upscale ``[L, 3, h, w]`` pixels by the bundle's scale factor."""
    if not bundle.kind.startswith("sr"):
        raise UsageError(f"not a super-resolution checkpoint: {bundle.kind!r}")
    scale = int(bundle.extra["scale"])
    L, C, h, w = np.asarray(low).shape
    cell = PATCH * 2 ** (len(bundle.cfg.widths) - 1)
    if C != 3 or (h * scale) % cell or (w * scale) % cell:
        raise DimensionError(f"low-res frames {h}x{w} cannot be upscaled x{scale} on a {cell}-pixel grid")
    sched = bundle.schedule
    gen = torch.Generator().manual_seed(scfg.seed + 1)
    level = torch.tensor([round(aug_level * sched.T)])
    cond = sr_condition(low, scale)
    cond = augment_condition(cond.reshape(1, -1, *cond.shape[-2:]), level, sched, gen).reshape(cond.shape)
    shape = latent_shape(bundle, 1, L, h * scale, w * scale)
    if not bundle.model.video:
        raise UsageError("super-resolution checkpoint is not video-inflated")
    fn = eps_model(bundle, [caption], cond=cond.unsqueeze(0), noise_level=level)
    z = ddim_sample(fn, shape, None, scfg, sched)
    return model_to_pixels(z[0])
