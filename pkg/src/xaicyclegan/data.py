"""Synthetic unpaired domains, PPM/PGM files and the Gaussian soft-mask sampler."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor

KINDS = ("stripes", "tint", "blobs")
NOISE_MEAN = 1.0
NOISE_STD = 0.02


class PPMError(ValueError):
    """Malformed or truncated PNM file."""


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (3, H, W) in [-1, 1]
    domain: str
    id: str

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[1] != p.shape[2] or p.shape[1] % 8:
            raise ValueError(f"sample {self.id}: expected square (C, H, W) with H divisible by 8, got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError(f"sample {self.id}: non-finite pixels")
        if p.size and (p.min() < -1.0 or p.max() > 1.0):
            raise ValueError(f"sample {self.id}: pixels outside [-1, 1] (range {p.min()}..{p.max()})")
        if self.domain not in ("A", "B"):
            raise ValueError(f"sample {self.id}: domain must be 'A' or 'B', got {self.domain!r}")

    @property
    def size(self) -> int:
        return self.pixels.shape[1]


@dataclass
class DomainDataset:
    samples: list[ImageSample]
    domain: str
    seed: int = 0
    _stack: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> ImageSample:
        return self.samples[i]

    def array(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.stack([s.pixels for s in self.samples])
        return self._stack

    def order(self, epoch: int) -> np.ndarray:
        """Deterministic shuffle for ``epoch``."""
        return np.random.default_rng((self.seed, epoch)).permutation(len(self.samples))

    def batch(self, index: int, batch_size: int) -> np.ndarray:
        """The ``index``-th batch of an endless epoch-by-epoch shuffled stream."""
        if not self.samples:
            raise ValueError(f"dataset {self.domain} is empty")
        n = len(self.samples)
        start = index * batch_size
        picks = []
        for pos in range(start, start + batch_size):
            epoch, offset = divmod(pos, n)
            picks.append(self.order(epoch)[offset])
        return self.array()[picks]


# ---------------------------------------------------------------------------
# synthetic domains
# ---------------------------------------------------------------------------

def _stripes(rng, size: int, vertical: bool) -> np.ndarray:
    width = int(rng.integers(2, 5))
    phase = int(rng.integers(0, 2 * width))
    on = ((np.arange(size) + phase) // width) % 2 == 1
    fg, bg = rng.uniform(-0.9, 0.9, size=(2, 3))
    line = np.where(on[None, :], fg[:, None], bg[:, None])  # (3, size)
    if vertical:
        img = np.broadcast_to(line[:, None, :], (3, size, size))
    else:
        img = np.broadcast_to(line[:, :, None], (3, size, size))
    return np.array(img)


def _shapes_mask(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 8, size / 4)
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            h, w = rng.integers(size // 4, size // 2 + 1, 2)
            top, left = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
            mask[top:top + h, left:left + w] = True
    return mask


def _tint(rng, size: int, channel: int) -> np.ndarray:
    mask = _shapes_mask(rng, size)
    base = rng.uniform(-0.6, 0.0)
    img = np.full((3, size, size), base)
    img[:, mask] = base + 0.5
    img[channel] += 0.3
    return img


def _blobs(rng, size: int, ring: bool) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    img = np.full((3, size, size), -0.5)
    color = rng.uniform(0.0, 0.8, 3)
    for _ in range(int(rng.integers(1, 3))):
        r = rng.uniform(size / 8, size / 5)
        cy, cx = rng.uniform(r, size - r, 2)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        if ring:
            # same area as the disc of radius r
            outer = 1.5 * r
            inner = np.sqrt(outer * outer - r * r)
            sel = (d2 <= outer * outer) & (d2 >= inner * inner)
        else:
            sel = d2 <= r * r
        img[:, sel] = color[:, None]
    return img


def gen_synthetic_domains(kind: str, n: int, size: int, seed: int) -> tuple[DomainDataset, DomainDataset]:
    """Two unpaired domains differing in structure but not in mean brightness."""
    if kind not in KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if n < 2:
        raise ValueError(f"need at least 2 samples per domain, got {n}")
    if size % 8 or size < 8:
        raise ValueError(f"size must be a positive multiple of 8, got {size}")
    out = []
    for d, domain in enumerate(("A", "B")):
        rng = np.random.default_rng((seed, d))
        samples = []
        for i in range(n):
            if kind == "stripes":
                img = _stripes(rng, size, vertical=(domain == "B"))
            elif kind == "tint":
                img = _tint(rng, size, channel=0 if domain == "A" else 1)
            else:
                img = _blobs(rng, size, ring=(domain == "B"))
            img = np.clip(img, -1.0, 1.0).astype(np.float32)
            samples.append(ImageSample(img, domain, f"{kind}-{domain}-{i:05d}"))
        out.append(DomainDataset(samples, domain, seed=(seed * 2 + d)))
    return out[0], out[1]


def load_domain_dir(root, domain: str, seed: int = 0) -> DomainDataset:
    """Load ``<root>/train<domain>/*.ppm`` in filename order."""
    folder = Path(root) / f"train{domain}"
    if not folder.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {folder}")
    files = sorted(folder.glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm files in {folder}")
    samples = [load_ppm(f, domain=domain) for f in files]
    return DomainDataset(samples, domain, seed=seed)


# ---------------------------------------------------------------------------
# noise mask
# ---------------------------------------------------------------------------

def sample_noise_mask(h: int, w: int, rng: np.random.Generator, batch: int | None = None,
                      dtype=np.float32) -> Tensor:
    """I.i.d. N(1.0, 0.02) soft mask, shape (1, h, w) or (batch, 1, h, w)."""
    shape = (1, h, w) if batch is None else (batch, 1, h, w)
    return Tensor(rng.normal(NOISE_MEAN, NOISE_STD, size=shape).astype(dtype))


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------

def to_bytes(values: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.round((v + 1.0) * 127.5).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def read_pnm(path) -> np.ndarray:
    """Read binary P5/P6 with maxval 255. Returns (C, H, W) uint8."""
    blob = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(blob):
            c = blob[pos:pos + 1]
            if c == b"#":
                while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PPMError(f"{path}: unexpected end of header at byte {pos}")
        return blob[start:pos]

    magic = token()
    if magic not in (b"P5", b"P6"):
        raise PPMError(f"{path}: bad magic {magic!r} at byte 0 (expected P5 or P6)")
    fields = []
    for name in ("width", "height", "maxval"):
        at = pos
        tok = token()
        if not tok.isdigit():
            raise PPMError(f"{path}: bad {name} {tok!r} at byte {at}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise PPMError(f"{path}: maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise PPMError(f"{path}: empty image {w}x{h}")
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise PPMError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1
    c = 3 if magic == b"P6" else 1
    need = w * h * c
    if len(blob) - pos < need:
        raise PPMError(f"{path}: truncated payload at byte {len(blob)}; expected {need} bytes from byte {pos}")
    data = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w, c).transpose(2, 0, 1).copy()


def write_pnm(raw: np.ndarray, path) -> None:
    """Write (C, H, W) uint8 as P6 (C=3) or P5 (C=1)."""
    raw = np.asarray(raw, dtype=np.uint8)
    if raw.ndim == 2:
        raw = raw[None]
    c, h, w = raw.shape
    if c not in (1, 3):
        raise ValueError(f"can only write 1- or 3-channel images, got {c}")
    header = f"{'P6' if c == 3 else 'P5'}\n{w} {h}\n255\n".encode("ascii")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(raw.transpose(1, 2, 0).tobytes())
    os.replace(tmp, path)


def load_ppm(path, domain: str = "A") -> ImageSample:
    raw = read_pnm(path)
    if raw.shape[0] != 3:
        raise PPMError(f"{path}: expected a P6 color image")
    return ImageSample(from_bytes(raw).astype(np.float32), domain, Path(path).stem)


def save_ppm(obj, path) -> None:
    """Save an image sample / (3,H,W) array as P6, or a map in [0,1] as P5."""
    from .explain import ExplanationMap

    if isinstance(obj, ExplanationMap):
        v = np.asarray(obj.values, dtype=np.float64)
        v = v.reshape(v.shape[-2:])
        write_pnm(np.round(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)[None], path)
        return
    if isinstance(obj, ImageSample):
        pixels = obj.pixels
    elif isinstance(obj, Tensor):
        pixels = obj.data
    else:
        pixels = np.asarray(obj)
    write_pnm(to_bytes(pixels), path)
