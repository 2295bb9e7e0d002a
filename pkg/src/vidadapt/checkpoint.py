"""Binary checkpoint container.

Layout (little-endian)::

    b"SIMDA001"
    u32 entry_count
    per entry:
        u32 name_len, name (UTF-8), u8 flag (0 frozen, 1 trainable),
        u32 rank, rank x u64 dims, float32 payload (prod(dims) values)

Entries whose name starts with ``meta.`` carry JSON metadata as one byte per
float; they are not model parameters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptFileError

MAGIC = b"SIMDA001"
META_PREFIX = "meta."

Entries = dict[str, tuple[torch.Tensor, bool]]


def encode_meta(obj) -> torch.Tensor:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return torch.tensor(list(raw), dtype=torch.float32)


def decode_meta(t: torch.Tensor):
    return json.loads(bytes(int(v) for v in t.tolist()).decode("utf-8"))


def dumps(entries: Entries) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(entries))]
    for name, (tensor, trainable) in entries.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().to("cpu", torch.float32).contiguous().numpy().astype("<f4", copy=False)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", 1 if trainable else 0, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Entries:
    if data[: len(MAGIC)] != MAGIC:
        raise CorruptFileError("bad magic; not a checkpoint")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CorruptFileError(f"truncated checkpoint at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    entries: Entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFileError("entry name is not UTF-8") from exc
        flag, rank = struct.unpack("<BI", take(5))
        if flag not in (0, 1):
            raise CorruptFileError(f"bad flag byte {flag} for {name!r}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        entries[name] = (torch.from_numpy(arr.copy()), bool(flag))
    if pos != len(data):
        raise CorruptFileError(f"{len(data) - pos} trailing bytes after the last entry")
    return entries


def save_checkpoint(entries: Entries, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(entries))


def load_checkpoint(path: Path) -> Entries:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptFileError(f"cannot read {path}: {exc}") from exc
    return loads(data)
