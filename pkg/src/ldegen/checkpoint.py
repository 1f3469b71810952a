"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"LDE1"                     magic
    u32 version
    u32 section count
    per section:  u16 name length, utf-8 name, u64 offset, u64 length
    section payloads, in table order
    u32 CRC-32 of every preceding byte

Array payloads are ``u32 rank``, ``rank`` x ``u32 dim``, then float64
values in row-major order. The ``config`` section instead holds UTF-8
JSON (sorted keys) describing what the arrays belong to.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"LDE1"
VERSION = 1
CONFIG_SECTION = "config"


class CheckpointError(ValueError):
    pass


def _encode_array(a: np.ndarray) -> bytes:
    # asarray keeps 0-d arrays 0-d; tobytes() always emits row-major order
    a = np.asarray(a, dtype="<f8")
    head = struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return head + a.tobytes(order="C")


def _decode_array(raw: bytes, name: str) -> np.ndarray:
    if len(raw) < 4:
        raise CheckpointError(f"section {name!r}: missing shape header")
    rank = struct.unpack_from("<I", raw)[0]
    if len(raw) < 4 + 4 * rank:
        raise CheckpointError(f"section {name!r}: truncated shape header")
    dims = struct.unpack_from(f"<{rank}I", raw, 4)
    count = int(np.prod(dims)) if rank else 1
    body = raw[4 + 4 * rank:]
    if len(body) != 8 * count:
        raise CheckpointError(f"section {name!r}: {len(body)} payload bytes for shape {dims}")
    return np.frombuffer(body, dtype="<f8").reshape(dims).astype(np.float64)


def encode_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if CONFIG_SECTION in arrays:
        raise CheckpointError(f"{CONFIG_SECTION!r} is reserved")
    payloads = [(CONFIG_SECTION, json.dumps(config, sort_keys=True).encode())]
    payloads += [(name, _encode_array(a)) for name, a in arrays.items()]
    names = [n.encode() for n, _ in payloads]
    table_size = sum(2 + len(n) + 16 for n in names)
    offset = 12 + table_size
    out = bytearray(MAGIC + struct.pack("<II", VERSION, len(payloads)))
    for name, (_, body) in zip(names, payloads):
        out += struct.pack("<H", len(name)) + name + struct.pack("<QQ", offset, len(body))
        offset += len(body)
    for _, body in payloads:
        out += body
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def decode_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError("not an LDE1 checkpoint")
    if zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise CheckpointError("CRC mismatch: checkpoint is corrupt")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    table = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2:pos + 2 + n].decode()
        offset, length = struct.unpack_from("<QQ", raw, pos + 2 + n)
        pos += 2 + n + 16
        if offset + length > len(raw) - 4:
            raise CheckpointError(f"section {name!r} extends past end of file")
        table.append((name, offset, length))
    names = [t[0] for t in table]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate section names")
    if CONFIG_SECTION not in names:
        raise CheckpointError("missing config section")
    config, arrays = None, {}
    for name, offset, length in table:
        body = raw[offset:offset + length]
        if name == CONFIG_SECTION:
            config = json.loads(body.decode())
        else:
            arrays[name] = _decode_array(body, name)
    return config, arrays


def write_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(config, arrays))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# model (de)serialization


def save_lde(path, model) -> None:
    cfg = model.config
    config = {"kind": "lde", "latent_dim": cfg.latent_dim, "mixtures": cfg.mixtures,
              "filter_size": cfg.filter_size, "sigma_floor": cfg.sigma_floor}
    arrays = dict(model.params)
    arrays["shift"] = model.shift
    arrays["scale"] = model.scale
    write_checkpoint(path, config, arrays)


def load_lde(path):
    from .lde import LdeConfig, LdeModel

    config, arrays = read_checkpoint(path)
    _expect_kind(config, "lde")
    cfg = LdeConfig(config["latent_dim"], config["mixtures"], config["filter_size"], config["sigma_floor"])
    shift, scale = arrays.pop("shift", None), arrays.pop("scale", None)
    try:
        return LdeModel(cfg, arrays, shift, scale)
    except ValueError as exc:
        raise CheckpointError(f"arrays do not match embedded config: {exc}") from exc


def save_ae(path, model) -> None:
    cfg = model.config
    config = {"kind": "autoencoder", "input_dim": cfg.input_dim, "hidden_widths": list(cfg.hidden_widths),
              "latent_dim": cfg.latent_dim, "output_activation": cfg.output_activation, "beta": cfg.beta}
    write_checkpoint(path, config, model.params)


def load_ae(path):
    from .autoencoder import AeConfig, AeModel

    config, arrays = read_checkpoint(path)
    _expect_kind(config, "autoencoder")
    cfg = AeConfig(config["input_dim"], tuple(config["hidden_widths"]), config["latent_dim"],
                   config["output_activation"], config["beta"])
    try:
        return AeModel(cfg, arrays)
    except ValueError as exc:
        raise CheckpointError(f"arrays do not match embedded config: {exc}") from exc


def _expect_kind(config: dict, kind: str) -> None:
    if config.get("kind") != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {config.get('kind')!r}")
