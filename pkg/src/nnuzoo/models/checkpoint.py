"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"NNUZCKPT" | u32 version | u32 len + arch utf-8 | u32 len + config JSON
    u32 record count
    per record: u32 len + name | u8 dtype | u8 rank | u32 dims... | raw data

Records cover every entry of ``state_dict`` in its order, so buffers
(norm statistics, fixed embeddings) round-trip along with parameters.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"NNUZCKPT"
VERSION = 1

DTYPE_CODES = {torch.float32: 0, torch.float64: 1, torch.int64: 2, torch.int32: 3, torch.uint8: 4, torch.bool: 5,
               torch.float16: 6}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_NP = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8", torch.int32: "<i4", torch.uint8: "u1",
       torch.bool: "?", torch.float16: "<f2"}


class CheckpointError(ValueError):
    pass


def _str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_str(f) -> str:
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n).decode("utf-8")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_checkpoint(arch: str, config: dict, state: dict[str, torch.Tensor]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _str(buf, arch)
    _str(buf, canonical_json(config))
    buf.write(struct.pack("<I", len(state)))
    for name, t in state.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {t.dtype}")
        _str(buf, name)
        buf.write(struct.pack("<BB", DTYPE_CODES[t.dtype], t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(t.numpy().astype(_NP[t.dtype], copy=False).tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> tuple[str, dict, dict[str, torch.Tensor]]:
    f = io.BytesIO(data)
    if _read_exact(f, 8) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = _read_str(f)
    config = json.loads(_read_str(f))
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    state: dict[str, torch.Tensor] = {}
    for _ in range(count):
        name = _read_str(f)
        code, rank = struct.unpack("<BB", _read_exact(f, 2))
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
        dt = CODE_DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        itemsize = np.dtype(_NP[dt]).itemsize
        arr = np.frombuffer(_read_exact(f, n * itemsize), dtype=_NP[dt]).reshape(dims)
        state[name] = torch.from_numpy(arr.copy())
    if f.read(1):
        raise CheckpointError("trailing bytes after last record")
    return arch, config, state


def write_checkpoint(path, arch: str, config: dict, state: dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(arch, config, state))
    return path


def read_checkpoint(path) -> tuple[str, dict, dict[str, torch.Tensor]]:
    return decode_checkpoint(Path(path).read_bytes())


def save_checkpoint(model, path) -> Path:
    """Write a built zoo model (it must carry ``model.config``)."""
    cfg = model.config
    return write_checkpoint(path, cfg.arch, cfg.to_dict(), model.state_dict())


def load_checkpoint(path):
    """Rebuild the model described by a checkpoint and load its weights."""
    from .zoo import ModelConfig, build_model

    arch, cfg, state = read_checkpoint(path)
    config = ModelConfig.from_dict(cfg)
    model = build_model(arch, config)
    model.load_state_dict(state)
    return model
