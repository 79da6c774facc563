"""Binary container for networks and pair sets.

Layout::

    b"CFLO"                      magic
    u16 little-endian            format version
    u32 little-endian            metadata length in bytes
    metadata                     UTF-8 JSON, keys sorted
    float64 little-endian data   every tensor of every block, in order

``metadata["blocks"]`` lists ``{"name": ..., "shapes": [[...], ...]}`` so the
payload can be split without further information. Network checkpoints carry a
``"live"`` block and, when EMA is tracked, an ``"ema"`` block.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import net
from .errors import CheckpointError

MAGIC = b"CFLO"
VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_checkpoint(path, meta: dict, blocks):
    """Write ``blocks`` (a list of ``(name, [arrays])``) with ``meta``."""
    meta = dict(meta)
    meta["blocks"] = [{"name": name, "shapes": [list(a.shape) for a in arrs]} for name, arrs in blocks]
    header = canonical_json(meta).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header)))
        fh.write(header)
        for _, arrs in blocks:
            for a in arrs:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path, role=None):
    """Return ``(meta, {block_name: [arrays]})``.

    Raises:
        CheckpointError: unreadable, truncated, wrong magic/version, or a
            role other than ``role`` when one is requested.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a CFLO checkpoint")
    version, mlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        meta = json.loads(raw[10 : 10 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    if role is not None and meta.get("role") != role:
        raise CheckpointError(f"{path}: expected role {role!r}, found {meta.get('role')!r}")
    offset = 10 + mlen
    blocks = {}
    try:
        for block in meta["blocks"]:
            arrs = []
            for shape in block["shapes"]:
                count = int(np.prod(shape, dtype=np.int64))
                end = offset + 8 * count
                if end > len(raw):
                    raise CheckpointError(f"{path}: truncated payload")
                arrs.append(np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape))
                offset = end
            blocks[block["name"]] = arrs
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt block table") from exc
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    return meta, blocks


def network_meta(params: net.NetworkParams, role: str, **extra) -> dict:
    meta = {
        "role": role,
        "layer_sizes": params.layer_sizes,
        "activation": params.activation,
        "n_freqs": params.n_freqs,
    }
    meta.update(extra)
    return meta


def save_network(path, params, role, ema=None, **extra):
    blocks = [("live", params.tensors())]
    if ema is not None:
        blocks.append(("ema", ema.tensors()))
    write_checkpoint(path, network_meta(params, role, has_ema=ema is not None, **extra), blocks)


def load_network(path, role=None, use_ema=True):
    """Load a network checkpoint; returns ``(params, meta)``.

    The EMA block is returned when present and ``use_ema`` is set.
    """
    meta, blocks = read_checkpoint(path, role)
    if "layer_sizes" not in meta or "live" not in blocks:
        raise CheckpointError(f"{path}: not a network checkpoint")
    name = "ema" if use_ema and "ema" in blocks else "live"
    template = net.NetworkParams(
        [np.zeros((o, i)) for i, o in zip(meta["layer_sizes"][:-1], meta["layer_sizes"][1:])],
        [np.zeros(o) for o in meta["layer_sizes"][1:]],
        net.time_frequencies(meta["n_freqs"]),
        meta["activation"],
    )
    tensors = blocks[name]
    if [t.shape for t in tensors] != [t.shape for t in template.tensors()]:
        raise CheckpointError(f"{path}: tensor shapes disagree with layer_sizes")
    return template.with_tensors(tensors), meta
