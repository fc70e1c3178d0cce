"""Binary checkpoint format.

    "SIMN" | version u32 | payload | crc32(payload) u32

All integers are little-endian.  The payload is

    u32 length + UTF-8 JSON config echo (model spec + train config)
    u32 tensor count
    per tensor: u16 name length, name, u8 ndim, ndim x u32 dims,
                float64 LE data (row-major)
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import BadMagic, BadVersion, Corrupt
from .train import ModelSpec, NetworkState, TrainConfig, config_dict

MAGIC = b"SIMN"
VERSION = 1


def encode_state(state: NetworkState) -> bytes:
    echo = {"spec": {"in_channels": state.spec.in_channels, "classes": state.spec.classes,
                     "widths": list(state.spec.widths)},
            "config": config_dict(state.config)}
    cfg = json.dumps(echo, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(cfg)), cfg]
    tensors = state.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        key = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    payload = b"".join(parts)
    return MAGIC + struct.pack("<I", VERSION) + payload + struct.pack("<I", zlib.crc32(payload))


def decode_state(blob: bytes) -> NetworkState:
    if len(blob) < 12:
        raise Corrupt(f"checkpoint is only {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise BadMagic(f"bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise BadVersion(f"checkpoint version {version}, expected {VERSION}")
    payload = blob[8:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc:
        raise Corrupt("checksum mismatch")
    try:
        return _parse_payload(payload)
    except (struct.error, ValueError, KeyError) as exc:
        raise Corrupt(f"malformed payload: {exc}") from exc


def _parse_payload(payload: bytes) -> NetworkState:
    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, payload, pos)
        pos += struct.calcsize(fmt)
        return vals

    (cfg_len,) = take("<I")
    echo = json.loads(payload[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    spec = ModelSpec(echo["spec"]["in_channels"], echo["spec"]["classes"],
                     tuple(echo["spec"]["widths"]))
    config = TrainConfig(**echo["config"])
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (klen,) = take("<H")
        name = payload[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        size = int(np.prod(shape)) * 8
        if pos + size > len(payload):
            raise Corrupt(f"tensor {name} runs past the payload")
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=pos) \
            .reshape(shape).astype(np.float64)
        pos += size
    if pos != len(payload):
        raise Corrupt(f"{len(payload) - pos} trailing bytes in payload")
    model = spec.build(config.binarizer)
    velocity = {k[len("velocity."):]: v for k, v in tensors.items() if k.startswith("velocity.")}
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("velocity.")})
    return NetworkState(model, spec, config, velocity)


def save_checkpoint(state: NetworkState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_state(state))


def load_checkpoint(path) -> NetworkState:
    with open(path, "rb") as fh:
        return decode_state(fh.read())
