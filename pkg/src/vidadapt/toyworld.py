"""Captioned moving-shape clips, the space-to-depth latent codec, and the toy text embedder."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, SpecError, VocabularyError

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "white": (1.0, 1.0, 1.0),
}
MOTIONS = ("left", "right", "up", "down", "static")
BACKGROUNDS = ("black", "white", "noise")
OBJECT_SIZE = 8
PATCH = 4  # space-to-depth factor

PAD = "<pad>"
VOCAB = (PAD, "a", *SHAPES, *COLORS, "moving", *MOTIONS)
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
MAX_TOKENS = 5

_STEP = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1), "static": (0, 0)}


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "circle"
    color: str = "red"
    motion: str = "right"
    speed: int = 1
    background: str = "black"

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise SpecError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise SpecError(f"unknown color {self.color!r}")
        if self.motion not in MOTIONS:
            raise SpecError(f"unknown motion {self.motion!r}")
        if self.background not in BACKGROUNDS:
            raise SpecError(f"unknown background {self.background!r}")
        if self.speed < 0:
            raise SpecError("speed must be non-negative")


def caption_text(spec: SceneSpec) -> str:
    if spec.motion == "static":
        return f"a {spec.color} {spec.shape} static"
    return f"a {spec.color} {spec.shape} moving {spec.motion}"


def tokenize(caption: str) -> list[int]:
    words = caption.split()
    if len(words) > MAX_TOKENS:
        raise VocabularyError(f"caption longer than {MAX_TOKENS} tokens: {caption!r}")
    ids = []
    for w in words:
        if w not in TOKEN_ID or w == PAD:
            raise VocabularyError(f"unknown token {w!r}")
        ids.append(TOKEN_ID[w])
    return ids + [TOKEN_ID[PAD]] * (MAX_TOKENS - len(ids))


def parse_caption(caption: str, speed: int = 1, background: str = "black") -> SceneSpec:
    """Inverse of :func:`caption_text`; speed and background are not captioned."""
    tokenize(caption)
    w = caption.split()
    if len(w) < 4 or w[1] not in COLORS or w[2] not in SHAPES:
        raise VocabularyError(f"caption does not follow the grammar: {caption!r}")
    if len(w) == 4 and w[0] == "a" and w[3] == "static":
        return SceneSpec(w[2], w[1], "static", speed, background)
    if len(w) == 5 and w[0] == "a" and w[3] == "moving" and w[4] != "static":
        return SceneSpec(w[2], w[1], w[4], speed, background)
    raise VocabularyError(f"caption does not follow the grammar: {caption!r}")


def all_captions() -> list[str]:
    return [caption_text(SceneSpec(s, c, m)) for s in SHAPES for c in COLORS for m in MOTIONS]


def random_scene(rng: np.random.Generator, backgrounds: tuple[str, ...] = BACKGROUNDS,
                 speed: int = 1) -> SceneSpec:
    return SceneSpec(
        shape=SHAPES[rng.integers(len(SHAPES))],
        color=list(COLORS)[rng.integers(len(COLORS))],
        motion=MOTIONS[rng.integers(len(MOTIONS))],
        speed=speed,
        background=backgrounds[rng.integers(len(backgrounds))],
    )


def shape_mask(shape: str, size: int = OBJECT_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2
    if shape == "circle":
        return (xx - c) ** 2 + (yy - c) ** 2 <= c ** 2
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    # apex at top center, base along the bottom row
    return np.abs(xx - c) <= yy / 2


def _quantize(v: np.ndarray | float) -> np.ndarray:
    return np.round(np.asarray(v, dtype=np.float64) * 255).astype(np.float32) / np.float32(255)


@dataclass
class Clip:
    pixels: np.ndarray  # [L, 3, H, W] float32 in [0, 1], multiples of 1/255
    masks: np.ndarray   # [L, H, W] bool
    caption: str
    spec: SceneSpec
    seed: int


def start_range(spec: SceneSpec, L: int, extent: int, step: int) -> tuple[int, int]:
    travel = spec.speed * (L - 1)
    if step > 0:
        return 0, extent - OBJECT_SIZE - travel
    if step < 0:
        return travel, extent - OBJECT_SIZE
    return 0, extent - OBJECT_SIZE


def synth_video(spec: SceneSpec, L: int = 16, H: int = 32, W: int = 32, seed: int = 0) -> Clip:
    """Render a clip whose object moves exactly ``speed`` pixels per frame."""
    dx, dy = _STEP[spec.motion]
    xr, yr = start_range(spec, L, W, dx), start_range(spec, L, H, dy)
    if xr[0] > xr[1] or yr[0] > yr[1]:
        raise SpecError(f"{spec} does not fit a {H}x{W} canvas for {L} frames")
    rng = np.random.default_rng(seed)
    x0 = int(rng.integers(xr[0], xr[1] + 1))
    y0 = int(rng.integers(yr[0], yr[1] + 1))
    if spec.background == "black":
        bg = np.zeros((3, H, W), np.float32)
    elif spec.background == "white":
        bg = np.ones((3, H, W), np.float32)
    else:
        bg = rng.integers(0, 256, (3, H, W)).astype(np.float32) / 255
    color = _quantize(COLORS[spec.color])[:, None]
    shape = shape_mask(spec.shape)
    pixels = np.repeat(bg[None], L, axis=0)
    masks = np.zeros((L, H, W), dtype=bool)
    for i in range(L):
        x, y = x0 + dx * spec.speed * i, y0 + dy * spec.speed * i
        masks[i, y:y + OBJECT_SIZE, x:x + OBJECT_SIZE] = shape
        pixels[i][:, masks[i]] = color
    return Clip(pixels, masks, caption_text(spec), spec, seed)


def mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    return float(xs.mean()), float(ys.mean())


def encode_latent(pixels: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Space-to-depth by 4: ``[..., 3, H, W] -> [..., 48, H/4, W/4]``.

    Latent channel ``c*16 + dy*4 + dx`` at cell ``(i, j)`` holds pixel
    ``(c, 4i + dy, 4j + dx)``.
    """
    x = torch.as_tensor(pixels)
    H, W = x.shape[-2:]
    if H % PATCH or W % PATCH:
        raise DimensionError(f"frame extents {H}x{W} must be divisible by {PATCH}")
    lead = x.shape[:-3]
    out = F.pixel_unshuffle(x.reshape(-1, *x.shape[-3:]), PATCH)
    return out.reshape(*lead, *out.shape[-3:])


def decode_latent(latent: torch.Tensor) -> torch.Tensor:
    if latent.shape[-3] % (PATCH * PATCH):
        raise DimensionError(f"latent channels {latent.shape[-3]} not divisible by {PATCH * PATCH}")
    lead = latent.shape[:-3]
    out = F.pixel_shuffle(latent.reshape(-1, *latent.shape[-3:]), PATCH)
    return out.reshape(*lead, *out.shape[-3:])


def to_model_space(latent: torch.Tensor) -> torch.Tensor:
    """Map codec latents in [0, 1] to the [-1, 1] range the denoiser is trained on."""
    return latent * 2 - 1


def from_model_space(z: torch.Tensor) -> torch.Tensor:
    return ((z + 1) / 2).clamp(0, 1)


class TextEmbedder(nn.Module):
    """Token embedding table; the padding row is pinned to zero."""

    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed + 2)
        self.table = nn.Embedding(len(VOCAB), dim, padding_idx=TOKEN_ID[PAD])
        with torch.no_grad():
            self.table.weight.copy_(torch.randn(len(VOCAB), dim, generator=gen))
            self.table.weight[TOKEN_ID[PAD]].zero_()

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.table(ids)

    def pooled(self, ids: torch.Tensor) -> torch.Tensor:
        """Mean over non-padding tokens, ``[B, K] -> [B, e]``."""
        emb = self.table(ids)
        keep = (ids != TOKEN_ID[PAD]).to(emb.dtype).unsqueeze(-1)
        return (emb * keep).sum(-2) / keep.sum(-2).clamp(min=1)


def caption_ids(captions: list[str] | str) -> torch.Tensor:
    if isinstance(captions, str):
        captions = [captions]
    return torch.tensor([tokenize(c) if c else [TOKEN_ID[PAD]] * MAX_TOKENS for c in captions])


def embed_text(caption: str, embedder: TextEmbedder) -> torch.Tensor:
    """``[K, e]`` embedding of one caption (the empty string embeds to all padding)."""
    return embedder(caption_ids(caption))[0]


def write_ppm(path: Path, frame: np.ndarray) -> None:
    """Write a ``[3, H, W]`` frame in [0, 1] as binary P6."""
    data = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    H, W = data.shape[:2]
    Path(path).write_bytes(f"P6\n{W} {H}\n255\n".encode("ascii") + data.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError(f"{path} is not an 8-bit P6 file")
    W, H = int(fields[1]), int(fields[2])
    payload = raw[pos + 1: pos + 1 + H * W * 3]
    if len(payload) != H * W * 3:
        raise ValueError(f"{path} is truncated")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(H, W, 3)
    return data.transpose(2, 0, 1).astype(np.float32) / np.float32(255)


def write_clip(out_dir: Path, name: str, pixels: np.ndarray) -> list[str]:
    """Write frames as ``name/frame_000.ppm`` ...; returns paths relative to ``out_dir``."""
    clip_dir = Path(out_dir) / name
    clip_dir.mkdir(parents=True, exist_ok=True)
    rel = []
    for i, frame in enumerate(pixels):
        write_ppm(clip_dir / f"frame_{i:03d}.ppm", frame)
        rel.append(f"{name}/frame_{i:03d}.ppm")
    return rel


def manifest_record(spec: SceneSpec | None, seed: int, caption: str, frames: list[str]) -> dict:
    rec = asdict(spec) if spec is not None else {}
    rec.update(seed=seed, caption=caption, frames=frames)
    return rec


def write_manifest(out_dir: Path, records: list[dict]) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(records, indent=2, sort_keys=True))
    return path


def write_dataset(out_dir: Path, n_clips: int, seed: int, L: int = 16, H: int = 32, W: int = 32,
                  backgrounds: tuple[str, ...] = BACKGROUNDS) -> Path:
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_clips):
        spec = random_scene(rng, backgrounds)
        clip_seed = int(rng.integers(2 ** 31))
        clip = synth_video(spec, L, H, W, clip_seed)
        frames = write_clip(out_dir, f"clip_{k:05d}", clip.pixels)
        records.append(manifest_record(spec, clip_seed, clip.caption, frames))
    return write_manifest(out_dir, records)


def load_manifest(path: Path) -> list[tuple[dict, np.ndarray]]:
    root = Path(path).parent
    return [(rec, np.stack([read_ppm(root / f) for f in rec["frames"]]))
            for rec in json.loads(Path(path).read_text())]
