"""Binary checkpoint files.

Layout: magic ``MMCKPT1``, u32 byte length of a UTF-8 key-value config
block (``key=value`` lines, first line carries the format version), u32
tensor count, then per-tensor records ``{u32 name length, name bytes, u32
rank, rank x u32 extents, little-endian float32 payload}``. Tensors are
written in sorted name order so save -> load -> save is byte-identical.

Model weights live under their architecture names; optimizer moments are
stored alongside under ``adam.m.`` / ``adam.v.`` prefixes and training
counters in the config block, which is what makes training resumption
continue bit-identically (training itself runs in float32).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError
from .model import Model, ModelConfig, parameter_shape
from .tensor import Tensor

MAGIC = b"MMCKPT1"
FORMAT_VERSION = "1"


def save_checkpoint(tensors: dict[str, np.ndarray], config: dict[str, str], path) -> None:
    kv = dict(config)
    kv.setdefault("format_version", FORMAT_VERSION)
    block = "".join(f"{k}={kv[k]}\n" for k in sorted(kv)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(block)))
        fh.write(block)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read every tensor (as float32) and the config block."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = raw[off : off + n]
        off += n
        return chunk

    (block_len,) = struct.unpack("<I", take(4))
    config: dict[str, str] = {}
    for line in take(block_len).decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    if config.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{config.get('format_version')!r}")
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        payload = take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return tensors, config


def save_model(model: Model, path, extra_config: dict[str, str] | None = None,
               extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    config = model.config.to_kv()
    if extra_config:
        config.update(extra_config)
    save_checkpoint(tensors, config, path)


def load_model(path, dtype=np.float32) -> tuple[Model, dict[str, np.ndarray], dict[str, str]]:
    """Rebuild a Model from a checkpoint; also returns any non-model tensors
    (optimizer moments) and the raw config block."""
    tensors, config = load_checkpoint(path)
    cfg = ModelConfig.from_kv(config)
    params: dict[str, Tensor] = {}
    extra: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("adam."):
            extra[name] = arr
            continue
        expected = parameter_shape(name, cfg)
        if tuple(arr.shape) != tuple(expected):
            raise ShapeError(f"checkpoint tensor {name} has shape {arr.shape}, "
                             f"config implies {expected}")
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    missing = [n for n in _expected_names(cfg) if n not in params]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:3]}"
                              + ("..." if len(missing) > 3 else ""))
    return Model(config=cfg, params=params), extra, config


def _expected_names(cfg: ModelConfig) -> list[str]:
    from .model import parameter_names

    return parameter_names(cfg)


def transfer_weights(target: Model, source_path) -> list[str]:
    """Initialize `target` from overlapping tensors of a saved model.

    Names absent from the checkpoint keep their fresh initialization (this
    is how a multimodal model warm-starts from a text-only one: video and
    cross-modal tensors stay random). A name that exists on both sides with
    different shapes is an error naming the tensor.
    """
    tensors, _ = load_checkpoint(source_path)
    loaded = []
    for name, p in target.params.items():
        arr = tensors.get(name)
        if arr is None:
            continue
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ShapeError(f"checkpoint tensor {name} has shape {arr.shape}, "
                             f"target expects {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
        loaded.append(name)
    return loaded
