"""Distribution and consistency metrics plus the attention cost benchmark."""

from __future__ import annotations

import json
import statistics
import subprocess
import time
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, UsageError
from .lsa import SelfAttention, attention_cost
from .numerics import gelu
from .toyworld import TextEmbedder, caption_ids


@dataclass
class FeatureSet:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureSet":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise UsageError("need at least two feature vectors for a covariance")
        return cls(feats.mean(0), np.cov(feats, rowvar=False, ddof=1).reshape(feats.shape[1], -1),
                   feats.shape[0])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: FeatureSet, b: FeatureSet) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product root is taken as Tr((A^(1/2) S_b A^(1/2))^(1/2)),
    which has the same eigenvalues and stays symmetric.
    """
    if a.mu.shape != b.mu.shape:
        raise DimensionError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    root_a = _psd_sqrt(a.sigma)
    inner = root_a @ b.sigma @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(w, 0, None)).sum()
    value = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2 * tr_cross
    return float(max(value, 0.0))


def _projection(in_dim: int, out_dim: int, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(in_dim, out_dim, generator=gen, dtype=torch.float64) / in_dim ** 0.5


class ClipFeatureExtractor:
    """Frozen random projection + tanh over non-overlapping 4-frame pixel blocks."""

    def __init__(self, dim: int = 64, block: int = 4, pool: int = 4, seed: int = 1234):
        self.dim, self.block, self.pool, self.seed = dim, block, pool, seed
        self._proj: dict[int, torch.Tensor] = {}

    def __call__(self, video: np.ndarray | torch.Tensor) -> np.ndarray:
        v = torch.as_tensor(np.asarray(video), dtype=torch.float64)
        L = v.shape[0]
        if L < self.block:
            raise UsageError(f"need at least {self.block} frames")
        v = F.avg_pool2d(v, self.pool) - 0.5
        blocks = v[: L - L % self.block].reshape(L // self.block, -1)
        proj = self._proj.setdefault(blocks.shape[1], _projection(blocks.shape[1], self.dim, self.seed))
        return torch.tanh(blocks @ proj).numpy()

    def feature_set(self, videos) -> FeatureSet:
        return FeatureSet.from_features(np.concatenate([self(v) for v in videos]))


class FrameFeatureExtractor:
    """Frozen per-frame random features used for frame consistency."""

    def __init__(self, dim: int = 128, pool: int = 2, seed: int = 4321):
        self.dim, self.pool, self.seed = dim, pool, seed
        self._proj: dict[int, torch.Tensor] = {}

    def __call__(self, video: np.ndarray | torch.Tensor) -> np.ndarray:
        v = torch.as_tensor(np.asarray(video), dtype=torch.float64)
        flat = (F.avg_pool2d(v, self.pool) - 0.5).flatten(1)
        proj = self._proj.setdefault(flat.shape[1], _projection(flat.shape[1], self.dim, self.seed))
        return torch.tanh(flat @ proj).numpy()


def mean_pairwise_cosine(feats: np.ndarray) -> float:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] < 2:
        raise UsageError("frame consistency needs at least two frames")
    unit = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    return float(np.mean([unit[i] @ unit[j] for i, j in combinations(range(len(unit)), 2)]))


_FRAME_FEATURES = FrameFeatureExtractor()


def frame_consistency(video, extractor: FrameFeatureExtractor | None = None) -> float:
    """Mean cosine similarity over all unordered pairs of frame features."""
    if len(video) < 2:
        raise UsageError("frame consistency needs at least two frames")
    return mean_pairwise_cosine((extractor or _FRAME_FEATURES)(video))


class FrameHead(nn.Module):
    """Maps a pixel frame to the text embedding space; trained alongside the base model."""

    def __init__(self, text_dim: int, pool: int = 4, hidden: int = 128, size: int = 32, seed: int = 0):
        super().__init__()
        self.cells = size // pool
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 3)
            self.fc1 = nn.Linear(3 * (size // pool) ** 2, hidden)
            self.fc2 = nn.Linear(hidden, text_dim)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        x = F.adaptive_avg_pool2d(frames - 0.5, self.cells)
        return self.fc2(gelu(self.fc1(x.flatten(1))))


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.cosine_similarity(a, b, dim=-1, eps=1e-12)


@torch.no_grad()
def text_video_similarity(caption: str, video, embedder: TextEmbedder, head: FrameHead) -> float:
    """Mean over frames of cos(frame feature, pooled caption embedding)."""
    frames = torch.as_tensor(np.asarray(video), dtype=torch.float32)
    text = embedder.pooled(caption_ids(caption))
    return float(cosine(head(frames), text).mean())


def _time_ms(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


@torch.no_grad()
def bench_attention(L_list, N: int = 64, d: int = 32, repeats: int = 5, seed: int = 0) -> dict:
    """MAC counts and median wall-clock (ms) of global vs latent-shift attention."""
    if min([N, d, repeats, *L_list]) < 1:
        raise UsageError("benchmark sizes must be positive")
    torch.manual_seed(seed)
    attn = SelfAttention(d)
    table: dict[str, list[dict]] = {"global_st": [], "lsa": []}
    gen = torch.Generator().manual_seed(seed)
    for L in L_list:
        x = torch.randn(1, L, N, d, generator=gen)
        for variant in table:
            attn.set_mode(variant)
            ms = _time_ms(lambda: attn(x), repeats)
            table[variant].append({"L": L, "macs": attention_cost(L, N, d, variant), "wallclock_ms": ms})
    return table


def git_commit(root: Path | None = None) -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=root or Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def make_report(metric: str, value, config: dict, seed: int) -> dict:
    return {"metric": metric, "value": value, "config": config, "commit": git_commit(), "seed": seed}


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
