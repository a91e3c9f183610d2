"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"FCDN"
    version u16
    digest  32 bytes sha256 of the embedded config JSON
    cfg_len u32
    config  cfg_len bytes of UTF-8 JSON {"arch": ..., "train": ..., "seed": ...}
    count   u32      number of parameter records
    then per parameter:
        name_len u16, name utf-8, ndim u8, ndim x u32 dims,
        float32 little-endian values

The embedded config makes a checkpoint loadable on its own: ``restore``
rebuilds the network from the stored architecture and loads the weights.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .architecture import ArchConfig, FCDenseNet
from .exceptions import CheckpointError

MAGIC = b"FCDN"
VERSION = 1


def _config_json(arch_config, train_config=None, seed=None):
    payload = {
        "arch": asdict(arch_config),
        "train": asdict(train_config) if train_config is not None else None,
        "seed": seed,
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def save(path, network, train_config=None, seed=None):
    """Write the network's parameters plus its resolved configuration."""
    blob = _config_json(network.config, train_config, seed)
    digest = hashlib.sha256(blob).digest()
    params = list(network.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            shape = p.values.shape
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(p.values, dtype="<f4").tobytes())
    return Path(path)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load(path):
    """Read a checkpoint; returns (config_dict, params dict name -> float32 array)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, expected {VERSION}"
            )
        digest = _read_exact(fh, 32, "digest")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        blob = _read_exact(fh, cfg_len, "config")
        if hashlib.sha256(blob).digest() != digest:
            raise CheckpointError(f"{path}: config digest mismatch")
        config = json.loads(blob.decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "dim"))[0]
                for _ in range(ndim)
            )
            n_values = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * n_values, f"values of {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after last parameter")
    return config, params


def restore(path):
    """Rebuild the stored network and load its weights.

    Returns (network, config_dict) where config_dict also carries the
    training config and seed recorded at save time.
    """
    config, params = load(path)
    arch = ArchConfig(**config["arch"])
    network = FCDenseNet(arch)
    try:
        network.load_state_arrays(params)
    except KeyError as err:
        raise CheckpointError(f"{path}: {err}") from None
    return network, config
