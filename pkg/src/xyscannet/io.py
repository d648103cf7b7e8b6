"""PNG image I/O and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"XYSN" | version u32 | config length u32 | config text (UTF-8)
    | tensor count u32 | per tensor: name length u16, name (UTF-8),
      dtype code u8 (0 = f32, 1 = f64), rank u8, dims u32 * rank, raw data
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CheckpointError,
    CorruptImageError,
    KeyMismatchError,
    MagicError,
    MissingImageError,
    ShapeError,
    TruncatedError,
    UnsupportedFormatError,
    VersionError,
)

MAGIC = b"XYSN"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


# ---------------------------------------------------------------- images


def quantize(image) -> np.ndarray:
    """Clamp to [0, 1] and round half up onto 8-bit levels."""
    a = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def png_write(path, image) -> None:
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {a.shape}")
    Image.fromarray(quantize(a), "RGB").save(path, format="PNG")


def png_read(path, dtype=np.float32) -> np.ndarray:
    """Read an 8-bit RGB PNG into an (H, W, 3) array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingImageError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedFormatError(f"{path}: not a PNG ({im.format})")
            if im.mode != "RGB":
                raise UnsupportedFormatError(f"{path}: mode {im.mode} is not 8-bit RGB")
            im.load()
            data = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise CorruptImageError(f"{path}: {e}") from e
    return (data.astype(np.float64) / 255.0).astype(dtype)


# ----------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    version: int
    weights: dict
    config_text: str


def _to_array(v) -> np.ndarray:
    return np.asarray(getattr(v, "data", v))


def checkpoint_write(path, weights: Mapping, config_text: str = "") -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(weights))]
    for name, v in weights.items():
        a = _to_array(v)
        dt = a.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {a.dtype}")
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", DTYPE_CODES[dt], a.ndim)]
        parts += [struct.pack(f"<{a.ndim}I", *a.shape), np.ascontiguousarray(a, dtype=dt).tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_read(path) -> Checkpoint:
    """Parse a checkpoint file completely; nothing is returned on error."""
    r = _Reader(Path(path).read_bytes())
    if len(r.buf) < 4 or r.buf[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {r.buf[:4]!r}")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"{path}: version {version}, this build reads {VERSION}")
    (n_cfg,) = r.unpack("<I")
    try:
        config_text = r.take(n_cfg).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: config blob is not UTF-8") from e
    (count,) = r.unpack("<I")
    weights = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        dt = CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if name in weights:
            raise CheckpointError(f"{path}: duplicate tensor {name}")
        weights[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return Checkpoint(version, weights, config_text)


def check_weights(weights: Mapping, expected: Mapping) -> None:
    """Raise unless ``weights`` has exactly the keys and shapes of ``expected``."""
    missing = set(expected) - set(weights)
    extra = set(weights) - set(expected)
    if missing or extra:
        raise KeyMismatchError(missing, extra)
    for k, v in expected.items():
        if _to_array(weights[k]).shape != _to_array(v).shape:
            raise CheckpointError(f"{k}: shape {_to_array(weights[k]).shape}, expected {_to_array(v).shape}")


def checkpoint_save(path, weights: Mapping, cfg) -> None:
    """Save weights with a model config (or a full run config) snapshot."""
    from . import config as config_mod

    checkpoint_write(path, weights, config_mod.dump_text(cfg))


def checkpoint_load(path, expect=None) -> tuple:
    """Return ``(weights, ModelConfig)``.

    With ``expect`` (a ModelConfig) the stored weights must match the key set
    and shapes that ``expect`` builds, otherwise KeyMismatchError is raised.
    """
    from . import config as config_mod
    from .network import build_model

    ck = checkpoint_read(path)
    cfg = config_mod.model_config_from_text(ck.config_text)
    target = expect if expect is not None else cfg
    reference, _ = build_model(target)
    check_weights(ck.weights, reference)
    return ck.weights, cfg
