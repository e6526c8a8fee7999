"""Binary parameter container and model checkpoints.

Parameter container (all integers little-endian)::

    magic      8 bytes   b"DKTPARAM"
    version    uint32    1
    count      uint32    number of arrays
    per array, in insertion order:
      name_len uint16
      name     name_len bytes, UTF-8
      ndim     uint8
      dims     ndim x uint64
      values   prod(dims) x float64 (IEEE-754 binary64, row-major)

Checkpoint = UTF-8 text header of ``key = value`` lines, the first line being
``# dynkt checkpoint v1`` and the last ``end_header``, immediately followed
by a parameter container.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelConfig
from .errors import DataError

MAGIC = b"DKTPARAM"
VERSION = 1
HEADER_FIRST = "# dynkt checkpoint v1"
HEADER_END = "end_header"


def dump_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def load_arrays(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise DataError("parameter container: bad magic")
    version, count = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise DataError(f"parameter container: unsupported version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataError(f"parameter container: truncated ({exc})") from None
    if pos != len(blob):
        raise DataError("parameter container: trailing bytes")
    return out


def config_header(config: ModelConfig) -> dict[str, str]:
    return {
        "variant": config.variant,
        "window": str(config.window),
        "embed_dim": str(config.embed_dim),
        "skill_vocab_size": str(config.skill_vocab_size),
        "response_vocab_size": str(config.response_vocab_size),
        "conv_filters": str(config.conv_filters),
        "conv_kernel": str(config.conv_kernel),
        "gru_units": str(config.gru_units),
        "dense_units": ",".join(str(u) for u in config.dense_units),
        "spatial_dropout_rate": repr(config.spatial_dropout_rate),
        "gaussian_dropout_rate": repr(config.gaussian_dropout_rate),
        "seed": str(config.seed),
    }


def config_from_header(header: Mapping[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            variant=header["variant"],
            window=int(header["window"]),
            embed_dim=int(header["embed_dim"]),
            skill_vocab_size=int(header["skill_vocab_size"]),
            response_vocab_size=int(header["response_vocab_size"]),
            conv_filters=int(header["conv_filters"]),
            conv_kernel=int(header["conv_kernel"]),
            gru_units=int(header["gru_units"]),
            dense_units=tuple(int(u) for u in header["dense_units"].split(",")),
            spatial_dropout_rate=float(header["spatial_dropout_rate"]),
            gaussian_dropout_rate=float(header["gaussian_dropout_rate"]),
            seed=int(header["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint header: bad or missing field {exc}") from None


def save_checkpoint(path: str | Path, model, extra: Mapping[str, str] | None = None,
                    vocab_ids: list[str] | None = None) -> None:
    header = config_header(model.config)
    header.update(extra or {})
    if vocab_ids is not None:
        header["vocab_ids"] = json.dumps(vocab_ids)
    for k, v in header.items():
        if "\n" in k or "\n" in v or " = " in k:
            raise ValueError(f"checkpoint header field {k!r} cannot be encoded")
    text = HEADER_FIRST + "\n" + "".join(f"{k} = {v}\n" for k, v in header.items()) + HEADER_END + "\n"
    Path(path).write_bytes(text.encode("utf-8") + dump_arrays(model.state_dict()))


def read_checkpoint(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    marker = ("\n" + HEADER_END + "\n").encode()
    cut = blob.find(marker)
    if not blob.startswith(HEADER_FIRST.encode()) or cut < 0:
        raise DataError(f"{path}: not a dynkt checkpoint")
    header = {}
    for line in blob[:cut].decode("utf-8").split("\n")[1:]:
        key, _, value = line.partition(" = ")
        header[key] = value
    return header, load_arrays(blob[cut + len(marker):])


def load_checkpoint(path: str | Path):
    from .model import KTModel

    header, arrays = read_checkpoint(path)
    model = KTModel(config_from_header(header))
    model.load_state_dict(arrays)
    return model, header
