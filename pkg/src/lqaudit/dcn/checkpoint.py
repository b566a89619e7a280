"""``LQCK`` checkpoint container: config block plus named float64 tensors."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigMismatch, FormatError
from .model import DcnConfig, DcnModel

MAGIC = b"LQCK"
VERSION = 1

# (field, struct code) in file order
_CONFIG_LAYOUT = (
    ("D", "I"),
    ("d_h", "I"),
    ("N", "I"),
    ("heads", "I"),
    ("ffn_dim", "I"),
    ("dropout_rate", "d"),
    ("mlp_hidden", "I"),
    ("alpha", "d"),
    ("layer_norm_eps", "d"),
)
_CONFIG_FMT = "<" + "".join(code for _, code in _CONFIG_LAYOUT)


def checkpoint_bytes(model: DcnModel) -> bytes:
    cfg = model.config
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack(_CONFIG_FMT, *(getattr(cfg, name) for name, _ in _CONFIG_LAYOUT)))
    chunks.append(struct.pack("<I", len(model.params)))
    for name, arr in model.params.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: DcnModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def model_from_bytes(data: bytes, expected: DcnConfig | None = None, source: str = "<bytes>") -> DcnModel:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{source}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{source}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    values = struct.unpack(_CONFIG_FMT, take(struct.calcsize(_CONFIG_FMT)))
    try:
        config = DcnConfig(**{name: v for (name, _), v in zip(_CONFIG_LAYOUT, values)})
    except ValueError as exc:
        raise FormatError(f"{source}: invalid config block: {exc}") from exc
    if expected is not None and expected != config:
        diffs = [
            f"{name}={getattr(config, name)} (requested {getattr(expected, name)})"
            for name, _ in _CONFIG_LAYOUT
            if getattr(config, name) != getattr(expected, name)
        ]
        raise ConfigMismatch(f"{source}: checkpoint config differs: {', '.join(diffs)}")
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{source}: non-finite values in {name}")
        params[name] = arr
    if pos != len(data):
        raise FormatError(f"{source}: {len(data) - pos} trailing bytes")
    try:
        return DcnModel(config, params)
    except ConfigMismatch as exc:
        raise FormatError(f"{source}: {exc}") from exc


def load_checkpoint(path, expected: DcnConfig | None = None) -> DcnModel:
    """Read a checkpoint; ``expected`` (if given) must equal the stored config."""
    return model_from_bytes(Path(path).read_bytes(), expected, str(path))
