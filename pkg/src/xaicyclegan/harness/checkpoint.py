"""Binary "XAIC" checkpoints.

Layout (all integers 32-bit little-endian unsigned)::

    b"XAIC" | version | count | count x (name_len | name | rank | dims... | float32 LE data)

Model parameters are stored as ``<model>.<param path>``; optimizer state as
``optim.<group>.{m,v}.<param name>`` plus the rank-0 entries
``optim.<group>.t`` and ``trainer.step``.
"""
from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..training import Models, TrainConfig, Trainer

MAGIC = b"XAIC"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def save_tensors(named: Iterable[tuple[str, np.ndarray]], path) -> None:
    entries = list(named)
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(entries))]
    for name, arr in entries:
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        chunks += [_U32.pack(d) for d in arr.shape]
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    """Parse a checkpoint completely or raise; never returns partial data."""
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated at byte {pos} while reading {what} ({n} bytes needed, "
                                  f"{len(blob) - pos} left)")
        out = blob[pos:pos + n]
        pos += n
        return out

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    magic = take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at byte 0")
    version = u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} at byte 4 (expected {VERSION})")
    count = u32("parameter count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        start = pos
        name_len = u32(f"name length of entry {i}")
        try:
            name = take(name_len, f"name of entry {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: entry {i} name at byte {start + 4} is not UTF-8") from None
        rank = u32(f"rank of {name}")
        dims = tuple(u32(f"dim {k} of {name}") for k in range(rank))
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4").reshape(dims)
        if name in out:
            raise CheckpointError(f"{path}: duplicate entry {name!r} at byte {start}")
        out[name] = data.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after byte {pos}")
    return out


def trainer_entries(trainer: Trainer) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.data) for name, p in trainer.models.named_parameters()]
    for group, opt in trainer.optimizers.items():
        names = [n for n, _ in trainer.models.named_parameters(group)]
        entries += [(f"optim.{group}.m.{n}", a) for n, a in zip(names, opt.state.m)]
        entries += [(f"optim.{group}.v.{n}", a) for n, a in zip(names, opt.state.v)]
        entries.append((f"optim.{group}.t", np.asarray(opt.state.t, dtype=np.float32)))
    entries.append(("trainer.step", np.asarray(trainer.step, dtype=np.float32)))
    return entries


def checkpoint_save(trainer: Trainer | Models | None, path) -> None:
    """Write models (and optimizer state, for a Trainer) to ``path``."""
    if trainer is None:
        entries = []
    elif isinstance(trainer, Models):
        entries = [(name, p.data) for name, p in trainer.named_parameters()]
    else:
        entries = trainer_entries(trainer)
    save_tensors(entries, path)


def infer_architecture(tensors: dict[str, np.ndarray]) -> dict:
    try:
        ngf = tensors["G_AB.initial.weight"].shape[0]
        ndf = tensors["D_A.layers.0.weight"].shape[0]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks {exc.args[0]!r}; cannot infer architecture") from None
    res = {int(m.group(1)) for k in tensors if (m := re.match(r"G_AB\.res\.(\d+)\.", k))}
    return {"ngf": int(ngf), "ndf": int(ndf), "num_resnet": len(res)}


@dataclass
class LoadedCheckpoint:
    trainer: Trainer
    tensors: dict[str, np.ndarray]

    @property
    def models(self) -> Models:
        return self.trainer.models


def checkpoint_load(path, cfg: TrainConfig | None = None) -> LoadedCheckpoint:
    """Rebuild a Trainer from ``path``.

    Architecture fields are inferred from parameter shapes; the remaining
    settings come from ``cfg`` (defaults if omitted).
    """
    tensors = load_tensors(path)
    arch = infer_architecture(tensors)
    image_size = max(16, (cfg.image_size if cfg else 16))
    base = cfg or TrainConfig()
    cfg = base.replace(dtype="float32", image_size=image_size, **arch)
    trainer = Trainer(cfg)
    params = dict(trainer.models.named_parameters())
    missing = [n for n in params if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing[:3]}{'...' if len(missing) > 3 else ''}")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, model expects {p.shape}")
    for name, p in params.items():
        p.data = tensors[name].copy()
    for group, opt in trainer.optimizers.items():
        names = [n for n, _ in trainer.models.named_parameters(group)]
        if f"optim.{group}.t" not in tensors:
            continue
        opt.state.m = [tensors[f"optim.{group}.m.{n}"].copy() for n in names]
        opt.state.v = [tensors[f"optim.{group}.v.{n}"].copy() for n in names]
        opt.state.t = int(tensors[f"optim.{group}.t"])
    if "trainer.step" in tensors:
        trainer.step = int(tensors["trainer.step"])
    return LoadedCheckpoint(trainer, tensors)
